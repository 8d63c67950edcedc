#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "noisebench/dataset.hpp"
#include "noisebench/tensor.hpp"

namespace noisebench {

enum class LayerKind { Conv2d, MaxPool2, Dense, Activation };
enum class ActFn { Relu, Tanh, Softmax };
enum class Padding { Valid, Same };

struct LayerSpec {
  LayerKind kind = LayerKind::Activation;
  // conv2d
  std::size_t out_maps = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  Padding padding = Padding::Valid;
  // dense
  std::size_t out_units = 0;
  // activation
  ActFn fn = ActFn::Relu;

  static LayerSpec conv(std::size_t maps, std::size_t kh, std::size_t kw, Padding pad);
  static LayerSpec pool();
  static LayerSpec dense(std::size_t units);
  static LayerSpec activation(ActFn fn);
};

struct Layer {
  LayerSpec spec;
  std::string name;   // conv1, pool1, fc, softmax, ...
  Shape in_shape;     // per-sample
  Shape out_shape;    // per-sample
  Tensor weights;     // conv: M x (C*KH*KW); dense: In x Out
  std::vector<float> bias;  // conv: one per map (shared across the map); dense: per unit
};

// Bias stimulation: on the target layer, every map m receives a bias delta
//   lambda * k * sum_i(a_mli) / max over the layer's activations,
// computed from an unstimmed pass (two-pass semantics). PerStimulus derives
// the delta from each stimulus' own activations; BatchMean from the batch
// average activation.
struct StimulationConfig {
  std::string layer_name;
  double k = 0.0;
  double lambda = 0.01;
  enum class Mode { PerStimulus, BatchMean };
  Mode mode = Mode::PerStimulus;
};

// Activation injection: the target layer's output becomes
// gamma * genuine + (1 - gamma) * injected.
struct InjectionConfig {
  std::string layer_name;
  Tensor injected;  // per-sample activation shape of the layer
  double gamma = 1.0;
};

struct ForwardTrace {
  std::vector<std::string> names;   // one per captured layer output
  std::vector<Tensor> activations;  // batched N x ...
  Tensor stim_delta;                // N x maps bias deltas actually applied (empty if no stim)
  const Tensor* find(const std::string& name) const;
};

struct ForwardOptions {
  const StimulationConfig* stim = nullptr;
  const InjectionConfig* inject = nullptr;
  // Hook names to capture when a trace is requested; empty = all.
  std::vector<std::string> trace_layers;
  // Stop after the deepest traced layer; the returned output tensor is then
  // empty. Saves the rest of the stack when only activations matter.
  bool stop_at_trace = false;
  int threads = 0;
};

class Network {
 public:
  Network() = default;

  const std::string& arch_id() const { return arch_id_; }
  const Shape& input_shape() const { return input_shape_; }  // C x H x W
  std::size_t num_classes() const { return num_classes_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t parameter_count() const;

  // Named hook points: convN/fcN resolve to the post-activation output of
  // that block, fc to the final dense output (pre-softmax), plus poolN and
  // softmax. hook_maps is the layer's map count (conv) or unit count (dense).
  std::vector<std::string> hook_names() const;
  bool has_hook(const std::string& name) const;
  Shape hook_shape(const std::string& name) const;
  std::size_t hook_maps(const std::string& name) const;
  std::size_t hook_layer_index(const std::string& name) const;
  // The conv/dense layer whose bias feeds the hook (for stimulation).
  std::size_t hook_param_index(const std::string& name) const;

  struct RfInfo {
    std::size_t size = 1;   // receptive field side length
    std::size_t jump = 1;   // input stride between adjacent units
    long offset = 0;        // input row/col of the RF corner for unit (0,0)
  };
  RfInfo receptive_field(const std::string& hook) const;

  // Forward pass; returns the final N x K output (post-softmax when the
  // architecture ends in softmax). Deterministic for any thread count.
  Tensor forward(const Tensor& batch) const;
  Tensor forward(const Tensor& batch, const ForwardOptions& opts, ForwardTrace* trace) const;
  // argmax predictions, ties toward the lowest class index.
  std::vector<int> predict(const Tensor& batch, int threads = 0) const;

  // Construction API used by build_network/load_model.
  void init(std::string arch_id, Shape input_shape, std::size_t num_classes,
            std::vector<LayerSpec> specs, std::uint64_t init_seed);

 private:
  std::string arch_id_;
  Shape input_shape_;
  std::size_t num_classes_ = 0;
  std::vector<Layer> layers_;
};

// Architectures: logreg, mlp_1000, cnn_mnist, cnn_cifar.
Network build_network(const std::string& architecture_id, const Shape& input_shape,
                      std::size_t num_classes, std::uint64_t init_seed);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  int threads = 0;
  bool verbose = false;
};

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Mini-batch SGD with momentum on cross-entropy. Shuffling is driven only by
// cfg.seed; throws TrainingDiverged on NaN loss.
std::vector<EpochStats> train(Network& net, const Dataset& train_set, const TrainConfig& cfg);

struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::uint64_t> counts;  // k x k, rows = truth, cols = prediction

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t k_) : k(k_), counts(k_ * k_, 0) {}
  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * k + pred]; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * k + pred]; }
  std::uint64_t total() const;
  double accuracy() const;  // trace / total
  std::vector<double> per_class_recall() const;
};

struct EvalResult {
  double accuracy = 0.0;
  ConfusionMatrix confusion;
};

EvalResult evaluate(const Network& net, const Dataset& test_set, int threads = 0);

// Mean cross-entropy gradients over a batch w.r.t. every parameter
// (the quantities the SGD step consumes; exposed for gradient checking).
struct Gradients {
  std::vector<Tensor> dw;                // per layer, weight-shaped
  std::vector<std::vector<float>> db;    // per layer
  double loss = 0.0;                     // mean cross-entropy
};
Gradients parameter_gradients(const Network& net, const Tensor& batch,
                              const std::vector<int>& labels);

// Mean gradient of the cross-entropy loss w.r.t. input pixels, grouped by
// ground-truth label: K x C x H x W.
Tensor input_gradient(const Network& net, const Dataset& ds, int threads = 0);

// Model container: magic "WNAM", version u16, arch/shape header, float32 LE
// parameter payload, trailing CRC32.
void save_model(const Network& net, const std::string& path);
Network load_model(const std::string& path);

}  // namespace noisebench
