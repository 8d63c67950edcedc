#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "noisebench/classim.hpp"
#include "noisebench/dataset.hpp"
#include "noisebench/nn.hpp"
#include "noisebench/noise.hpp"
#include "noisebench/tensor.hpp"

namespace noisebench {

enum class PatchShape { X3, C3, H3 };
enum class Corner { TopLeft, TopRight, BottomLeft, BottomRight };

PatchShape patch_shape_from_string(const std::string& s);
Corner corner_from_string(const std::string& s);

struct PatchSpec {
  PatchShape shape = PatchShape::X3;
  Corner corner = Corner::TopLeft;
  float value = 1.0f;  // stamped pixel intensity
  bool additive = false;  // add-and-clip instead of overwrite
  int source_class = 0;
  int target_class = 1;
  double fraction = 0.5;  // of source-class images

  // 3x3 binary mask.
  std::array<std::array<int, 3>, 3> mask() const;
};

// Stamps the patch on a seed-chosen fraction of source-class images and
// relabels them to target_class; everything else is untouched.
Dataset poison(const Dataset& ds, const PatchSpec& patch, std::uint64_t seed);

// Hard-label classifier interface: the attack reads nothing else.
using PredictFn = std::function<std::vector<int>(const Tensor& batch)>;
PredictFn predictor(const Network& net, int threads = 0);

struct AttackReport {
  std::vector<double> gamma_grid;
  std::vector<double> noise_rate;       // fooling rate per gamma, noise inputs
  std::vector<double> signal_rate;      // fooling rate per gamma, signal inputs
  std::vector<double> noise_perturb_l2; // mean L2 perturbation per gamma
  std::vector<double> signal_perturb_l2;
  int target_class = -1;  // -1 = averaged over all targets
};

struct AttackOptions {
  std::size_t n_noise = 2000;        // noise trials per gamma
  std::size_t n_signal = 2000;       // signal inputs per gamma (dataset head)
  std::uint64_t seed = 0;
  bool exclude_own_class = false;    // drop inputs already of the target class
  int threads = 0;
};

// Mixes each input with the target's bias map via t = gamma*map + (1-gamma)*input
// and measures how often the classifier yields the target class.
// target_class = -1 runs every target and averages.
AttackReport bias_attack(const PredictFn& predict, const BiasMaps& maps,
                         const Dataset* signal_inputs, const StimulusStream* noise_inputs,
                         int target_class, const std::vector<double>& gamma_grid,
                         const AttackOptions& opts = {});

struct DetectionReport {
  Tensor heatmap;               // K x H x W anomaly statistic
  std::vector<double> max_z;    // per class robust z-score
  std::vector<std::pair<std::size_t, std::size_t>> peak;  // per class (row, col)
  bool flagged = false;
  int flagged_class = -1;
  std::size_t flagged_row = 0, flagged_col = 0;
  double threshold = 5.0;
};

struct DetectOptions {
  std::size_t window = 3;
  double threshold_z = 5.0;
  std::size_t smooth = 5;  // box filter for the background estimate
};

// Looks for a compact high-frequency anomaly in each class map: residual
// against a box-smoothed background, |residual| pooled over a window, robust
// z-score against the image's median/MAD.
DetectionReport detect_patch(const BiasMaps& maps, const DetectOptions& opts = {});

// Average-gradient baseline: same anomaly statistic on input_gradient maps.
struct GradientBaselineReport {
  Tensor gradients;  // K x C x H x W
  DetectionReport detection;
};
GradientBaselineReport gradient_baseline(const Network& net, const Dataset& ds,
                                         const DetectOptions& opts = {}, int threads = 0);

}  // namespace noisebench
