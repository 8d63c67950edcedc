#include "noisebench/microstim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "noisebench/errors.hpp"
#include "noisebench/random.hpp"

namespace noisebench {

double PsychometricCurve::mean_accuracy(std::size_t gi) const {
  double s = 0.0;
  for (const auto& row : accuracy) s += row[gi];
  return accuracy.empty() ? 0.0 : s / static_cast<double>(accuracy.size());
}

std::string PsychometricCurve::to_csv() const {
  std::ostringstream os;
  os << "gamma,class,accuracy,k,layer\n";
  for (std::size_t c = 0; c < accuracy.size(); ++c) {
    for (std::size_t g = 0; g < gamma_grid.size(); ++g) {
      os << gamma_grid[g] << "," << c << "," << accuracy[c][g] << ","
         << (stimulated ? stim.k : 0.0) << "," << (stimulated ? stim.layer_name : "none") << "\n";
    }
  }
  return os.str();
}

double default_stim_lambda(const Network& net, const std::string& layer) {
  if (layer == "fc" || layer.rfind("fc", 0) == 0) return 0.01;
  std::size_t n_convs = 0;
  for (const auto& l : net.layers()) {
    if (l.spec.kind == LayerKind::Conv2d) n_convs++;
  }
  if (n_convs <= 2) {
    return layer == "conv2" ? 1.0 : 0.1;
  }
  return 0.1;
}

PsychometricCurve psychometric(const Network& net, const Dataset& test_set,
                               const StimulusStream& noise, const std::vector<double>& gamma_grid,
                               const PsychometricOptions& opts) {
  if (gamma_grid.size() < 2 || gamma_grid.front() != 0.0 || gamma_grid.back() != 1.0) {
    throw ConfigError("psychometric: gamma grid must ascend from 0 to 1");
  }
  for (std::size_t i = 1; i < gamma_grid.size(); ++i) {
    if (gamma_grid[i] <= gamma_grid[i - 1]) throw ConfigError("psychometric: grid must ascend");
  }
  if (noise.shape != net.input_shape()) {
    throw ShapeError("psychometric: noise shape does not match network input");
  }

  const std::size_t k = net.num_classes();
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    members[static_cast<std::size_t>(test_set.labels[i])].push_back(i);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (members[c].empty()) throw ConfigError("psychometric: class without exemplars");
  }

  PsychometricCurve curve;
  curve.gamma_grid = gamma_grid;
  curve.n_trials = opts.n_trials;
  curve.accuracy.assign(k, std::vector<double>(gamma_grid.size(), 0.0));
  if (opts.stim) {
    curve.stimulated = true;
    curve.stim = *opts.stim;
  }

  const std::size_t px = shape_numel(net.input_shape());
  const std::size_t kBatch = 256;

  for (std::size_t cls = 0; cls < k; ++cls) {
    for (std::size_t gi = 0; gi < gamma_grid.size(); ++gi) {
      double gamma = gamma_grid[gi];
      std::uint64_t trial_base =
          (static_cast<std::uint64_t>(cls) * gamma_grid.size() + gi) * opts.n_trials;
      std::size_t hits = 0;
      for (std::size_t b0 = 0; b0 < opts.n_trials; b0 += kBatch) {
        std::size_t nb = std::min(opts.n_trials - b0, kBatch);
        Tensor batch({nb, net.input_shape()[0], net.input_shape()[1], net.input_shape()[2]});
        for (std::size_t i = 0; i < nb; ++i) {
          std::uint64_t trial = trial_base + b0 + i;
          RandomStream chooser(opts.seed, trial);
          std::size_t pick = members[cls][chooser.next_below(members[cls].size())];
          Tensor exemplar = test_set.image(pick);
          Tensor n = noise.at(trial);
          Tensor mixed = mix(exemplar, n, gamma);
          std::memcpy(batch.data() + i * px, mixed.data(), px * sizeof(float));
        }
        ForwardOptions fopts;
        fopts.stim = opts.stim;
        fopts.threads = opts.threads;
        Tensor out = net.forward(batch, fopts, nullptr);
        const std::size_t kk = out.numel() / nb;
        for (std::size_t i = 0; i < nb; ++i) {
          const float* row = out.data() + i * kk;
          int best = 0;
          for (std::size_t j = 1; j < kk; ++j) {
            if (row[j] > row[best]) best = static_cast<int>(j);
          }
          if (best == static_cast<int>(cls)) hits++;
        }
      }
      curve.accuracy[cls][gi] = static_cast<double>(hits) / static_cast<double>(opts.n_trials);
    }
  }
  return curve;
}

std::string InjectionSweep::to_csv() const {
  std::ostringstream os;
  os << "gamma,class,misclassification_ratio,layer\n";
  for (std::size_t c = 0; c < misclassification.size(); ++c) {
    for (std::size_t g = 0; g < gamma_grid.size(); ++g) {
      os << gamma_grid[g] << "," << c << "," << misclassification[c][g] << "," << layer << "\n";
    }
  }
  return os.str();
}

InjectionSweep injection_sweep(const Network& net, const std::vector<Tensor>& class_mean_acts,
                               const Dataset& ds, const std::string& layer,
                               const std::vector<double>& gamma_grid,
                               const InjectionSweepOptions& opts) {
  if (class_mean_acts.size() != net.num_classes()) {
    throw ShapeError("injection_sweep: need one mean activation per class");
  }
  const Shape hs = net.hook_shape(layer);
  for (const auto& t : class_mean_acts) {
    if (t.numel() != shape_numel(hs)) {
      throw ShapeError("injection_sweep: activation shape mismatch for layer " + layer);
    }
  }

  Dataset subset = ds.head(std::min(opts.max_images, ds.size()));
  const std::size_t n = subset.size();
  const std::size_t px = shape_numel(net.input_shape());
  Tensor batch({n, net.input_shape()[0], net.input_shape()[1], net.input_shape()[2]});
  std::memcpy(batch.data(), subset.images.data(), n * px * sizeof(float));

  InjectionSweep sweep;
  sweep.layer = layer;
  sweep.gamma_grid = gamma_grid;
  sweep.misclassification.assign(net.num_classes(),
                                 std::vector<double>(gamma_grid.size(), 0.0));

  for (std::size_t cls = 0; cls < net.num_classes(); ++cls) {
    std::size_t non_members = 0;
    for (int l : subset.labels) {
      if (l != static_cast<int>(cls)) non_members++;
    }
    if (non_members == 0) continue;
    for (std::size_t gi = 0; gi < gamma_grid.size(); ++gi) {
      InjectionConfig inject;
      inject.layer_name = layer;
      inject.injected = class_mean_acts[cls];
      inject.gamma = gamma_grid[gi];
      ForwardOptions fopts;
      fopts.inject = &inject;
      fopts.threads = opts.threads;
      Tensor out = net.forward(batch, fopts, nullptr);
      const std::size_t kk = out.numel() / n;
      std::size_t fooled = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (subset.labels[i] == static_cast<int>(cls)) continue;
        const float* row = out.data() + i * kk;
        int best = 0;
        for (std::size_t j = 1; j < kk; ++j) {
          if (row[j] > row[best]) best = static_cast<int>(j);
        }
        if (best == static_cast<int>(cls)) fooled++;
      }
      sweep.misclassification[cls][gi] =
          static_cast<double>(fooled) / static_cast<double>(non_members);
    }
  }
  return sweep;
}

}  // namespace noisebench
