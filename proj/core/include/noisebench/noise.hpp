#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "noisebench/dataset.hpp"
#include "noisebench/pca.hpp"
#include "noisebench/tensor.hpp"

namespace noisebench {

struct GaborParams {
  double cycles = 0;   // cycles per image
  std::size_t grid_row = 0, grid_col = 0;
  double orientation_deg = 0;  // 0, 45, 90, 135
  double phase_deg = 0;        // 0, 90
};

// Image-shaped Gabor wavelets on an s x s grid per scale, 4 orientations and
// 2 quadrature phases: 8 * sum(s^2) wavelets, truncated at the image borders.
struct GaborBank {
  std::size_t height = 0, width = 0;
  std::vector<double> scales;   // cycles per image
  Tensor wavelets;              // K_w x H x W
  std::vector<GaborParams> params;

  std::size_t count() const { return params.size(); }
};

GaborBank build_gabor_bank(std::size_t h, std::size_t w, const std::vector<double>& scales);

// Gabor bank + per-channel PCA over ridge-fitted wavelet weights. Channels
// are fitted and sampled independently.
struct GaborPcaSampler {
  GaborBank bank;
  std::vector<PcaModel> channel_models;  // one per channel
  std::size_t channels = 0;

  // Mean explained variance ratio summed over kept components, per channel.
  std::vector<double> explained_variance() const;
};

struct GaborFitOptions {
  double alpha = 1.0;        // ridge penalty for wavelet weights
  std::size_t k_components = 250;
  int threads = 0;
};

GaborPcaSampler fit_gabor_pca(const Dataset& dataset, const GaborBank& bank,
                              const GaborFitOptions& opts);

// One structured-noise stimulus: per channel, PC scores drawn uniformly over
// the observed score range, reconstructed to wavelet weights, summed into an
// image, then min-max rescaled to [0,1] over the whole stimulus.
Tensor sample_gabor(const GaborPcaSampler& sampler, std::size_t index, std::uint64_t seed);

// Ridge weights for one image against the bank (used for reconstruction
// checks); per-channel weight matrix C x K_w.
Tensor gabor_weights_for_image(const GaborPcaSampler& sampler, const Tensor& image, double alpha);

void save_sampler(const GaborPcaSampler& sampler, const std::string& path);
GaborPcaSampler load_sampler(const std::string& path);

enum class NoiseKind { WhiteUniform, WhiteGaussian, GaborPca };

NoiseKind noise_kind_from_string(const std::string& s);
std::string to_string(NoiseKind kind);

// White noise stimulus: i.i.d. uniform [0,1] pixels, or Gaussian(0.5, sigma)
// clipped to [0,1]. Pure function of (seed, index).
Tensor gen_white(const Shape& shape, std::size_t index, std::uint64_t seed, NoiseKind dist,
                 double sigma = 0.2);

// Index-addressable stimulus stream; stimulus i is a pure function of the
// stream definition and i, so generation parallelizes freely.
struct StimulusStream {
  NoiseKind source = NoiseKind::WhiteUniform;
  Shape shape;  // C x H x W
  std::size_t count = 0;
  std::uint64_t seed = 0;
  double sigma = 0.2;  // gaussian only
  std::shared_ptr<const GaborPcaSampler> sampler;  // gabor_pca only

  Tensor at(std::size_t i) const;
};

// t = gamma * signal + (1 - gamma) * noise. ConfigError if gamma outside [0,1].
Tensor mix(const Tensor& signal, const Tensor& noise, double gamma);

}  // namespace noisebench
