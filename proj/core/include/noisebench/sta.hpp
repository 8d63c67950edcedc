#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "noisebench/dataset.hpp"
#include "noisebench/linalg.hpp"
#include "noisebench/nn.hpp"
#include "noisebench/noise.hpp"
#include "noisebench/tensor.hpp"

namespace noisebench {

struct UnitAddress {
  std::string layer;  // conv hook name
  std::size_t map = 0;
  long row = -1;  // negative = centered unit
  long col = -1;
};

struct StaResult {
  Tensor mu;        // response-weighted mean stimulus, centered on the stream mean
  double n_sp = 0;  // total response mass
  Tensor rf_crop;   // crop to the unit's receptive field (mu itself in window mode)
  std::optional<Tensor> whitened;
  bool dead = false;  // unit never responded; mu is zero and flagged
  UnitAddress unit;
};

struct StcResult {
  Tensor lambda;  // d x d response-weighted covariance
  std::vector<double> eigenvalues;
  Tensor eigenvectors;  // columns
};

using StimulusFn = std::function<Tensor(std::size_t)>;
using ResponseFn = std::function<double(const Tensor&)>;

// STA over n stimuli: mu = sum(y_i x_i) / sum(y_i) with x centered against
// the empirical stream mean. NoSpikes when the response mass is zero.
StaResult sta(const StimulusFn& stimulus_at, const ResponseFn& response, std::size_t n);

// Whitened STA (N / n_sp) (X^T X)^-1 X^T y; falls back to a ridge with
// alpha = 1e-6 trace/d when the Gram matrix is singular. NoSpikes when
// sum(y) == 0.
Tensor whitened_sta(const Tensor& x_rows, const std::vector<double>& y);

// STC Lambda = sum y_i (x_i - mu)(x_i - mu)^T / n_sp over centered stimuli,
// with its eigendecomposition attached. d is capped at 4096.
StcResult stc(const StimulusFn& stimulus_at, const ResponseFn& response, const Tensor& mu,
              std::size_t n);

struct UnitStaOptions {
  std::size_t n = 100000;
  std::uint64_t seed = 0;
  double sigma = 0.2;       // gaussian window noise around 0.5, clipped to [0,1]
  float background = 0.5f;  // fill outside the stimulated window
  bool full_image = false;  // stimulate the whole image instead of the RF window
  bool whiten = true;
  int threads = 0;
  std::size_t batch = 256;
};

// One centered unit per map of a conv layer.
std::vector<UnitAddress> center_units(const Network& net, const std::string& layer);

// STA filters for single units: Gaussian noise in the unit's RF window, the
// unit's nonnegative post-activation as the response (tanh rectified at 0).
// Dead units are flagged and the run continues.
std::vector<StaResult> unit_sta_filters(const Network& net, const std::vector<UnitAddress>& units,
                                        const UnitStaOptions& opts);

struct ClassActivationStats {
  std::string layer;
  Shape activation_shape;
  std::vector<Tensor> means;  // per class
  std::vector<std::uint64_t> counts;
  std::vector<bool> empty_class;
  Tensor distance;  // K x K pairwise L2 between class means

  double mean_pairwise_distance() const;
};

// Mean layer activation per class: noise stimuli grouped by prediction.
ClassActivationStats mean_layer_activation(const Network& net, const StimulusStream& stream,
                                           std::size_t n, const std::string& layer,
                                           int threads = 0);
// Real data grouped by ground-truth label.
ClassActivationStats mean_layer_activation(const Network& net, const Dataset& ds,
                                           const std::string& layer, int threads = 0);

}  // namespace noisebench
