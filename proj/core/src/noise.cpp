#include <algorithm>
#include <cmath>

#include "noisebench/errors.hpp"
#include "noisebench/noise.hpp"
#include "noisebench/random.hpp"

namespace noisebench {

NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "white_uniform" || s == "white" || s == "uniform01") return NoiseKind::WhiteUniform;
  if (s == "white_gaussian" || s == "gaussian") return NoiseKind::WhiteGaussian;
  if (s == "gabor_pca" || s == "gabor") return NoiseKind::GaborPca;
  throw ConfigError("unknown noise source: " + s);
}

std::string to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::WhiteUniform: return "white_uniform";
    case NoiseKind::WhiteGaussian: return "white_gaussian";
    case NoiseKind::GaborPca: return "gabor_pca";
  }
  return "?";
}

Tensor gen_white(const Shape& shape, std::size_t index, std::uint64_t seed, NoiseKind dist,
                 double sigma) {
  if (dist == NoiseKind::GaborPca) throw ConfigError("gen_white: use sample_gabor for gabor_pca");
  if (dist == NoiseKind::WhiteGaussian && sigma <= 0.0) {
    throw ConfigError("gen_white: sigma must be positive");
  }
  Tensor out(shape);
  RandomStream rs(seed, index);
  if (dist == NoiseKind::WhiteUniform) {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = rs.next_float();
  } else {
    for (std::size_t i = 0; i < out.numel(); ++i) {
      double v = 0.5 + sigma * rs.next_gaussian();
      out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

Tensor StimulusStream::at(std::size_t i) const {
  switch (source) {
    case NoiseKind::WhiteUniform:
    case NoiseKind::WhiteGaussian:
      return gen_white(shape, i, seed, source, sigma);
    case NoiseKind::GaborPca: {
      if (!sampler) throw ConfigError("stimulus stream: gabor source without sampler");
      return sample_gabor(*sampler, i, seed);
    }
  }
  throw ConfigError("stimulus stream: bad source");
}

Tensor mix(const Tensor& signal, const Tensor& noise, double gamma) {
  if (!signal.same_shape(noise)) {
    throw ShapeError("mix: shape mismatch " + shape_str(signal.shape()) + " vs " +
                     shape_str(noise.shape()));
  }
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("mix: gamma outside [0,1]");
  Tensor out(signal.shape());
  float g = static_cast<float>(gamma);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = g * signal[i] + (1.0f - g) * noise[i];
  }
  return out;
}

}  // namespace noisebench
