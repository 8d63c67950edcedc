#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "noisebench/dataset.hpp"
#include "noisebench/nn.hpp"
#include "noisebench/noise.hpp"
#include "noisebench/tensor.hpp"

namespace noisebench {

struct PsychometricCurve {
  std::vector<double> gamma_grid;           // ascending, endpoints 0 and 1
  std::vector<std::vector<double>> accuracy;  // [class][gamma]
  bool stimulated = false;
  StimulationConfig stim;
  std::size_t n_trials = 0;

  double class_accuracy(std::size_t cls, std::size_t gi) const { return accuracy[cls][gi]; }
  double mean_accuracy(std::size_t gi) const;
  std::string to_csv() const;  // gamma,class,accuracy,k,layer
};

struct PsychometricOptions {
  std::size_t n_trials = 1000;
  std::uint64_t seed = 0;
  const StimulationConfig* stim = nullptr;
  int threads = 0;
};

// Per-layer stimulation scale: 0.01 for the fc layer, 0.1 for conv1 and
// 1.0 for conv2 on the two-conv architecture; 0.1 for every conv layer of
// the six-conv CIFAR network.
double default_stim_lambda(const Network& net, const std::string& layer);

// Accuracy of classifying gamma*exemplar + (1-gamma)*noise as the exemplar's
// class, per class and grid point. Exemplars are seed-chosen test images of
// the target class with fresh noise every trial.
PsychometricCurve psychometric(const Network& net, const Dataset& test_set,
                               const StimulusStream& noise, const std::vector<double>& gamma_grid,
                               const PsychometricOptions& opts);

struct InjectionSweep {
  std::string layer;
  std::vector<double> gamma_grid;
  std::vector<std::vector<double>> misclassification;  // [class][gamma]
  std::string to_csv() const;  // gamma,class,ratio,layer
};

struct InjectionSweepOptions {
  std::size_t max_images = 1000;
  int threads = 0;
};

// Blends gamma*genuine + (1-gamma)*class-mean activation at the layer and
// measures the misclassification ratio: non-members classified as the class
// over non-members.
InjectionSweep injection_sweep(const Network& net, const std::vector<Tensor>& class_mean_acts,
                               const Dataset& ds, const std::string& layer,
                               const std::vector<double>& gamma_grid,
                               const InjectionSweepOptions& opts = {});

}  // namespace noisebench
