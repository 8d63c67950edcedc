#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "noisebench/dataset.hpp"
#include "noisebench/nn.hpp"
#include "noisebench/noise.hpp"
#include "noisebench/tensor.hpp"

namespace noisebench {

// Streaming per-(signal, response) sums of noise stimuli. Pixel values are
// quantized to a 2^-20 grid before summing, so every cell sum is an exact
// integer in double precision: merging is exactly associative and
// commutative, and any worker partition reproduces sequential collection
// bit for bit.
class ClassAccumulator {
 public:
  static constexpr int kNoSignal = -1;
  static constexpr double kQuant = 1048576.0;  // 2^20

  ClassAccumulator() = default;
  ClassAccumulator(Shape stimulus_shape, std::size_t num_classes);

  // weight = 1 for unweighted runs; confidence weighting quantizes the
  // weight onto the same grid so sums stay exact.
  void add(int signal, int response, const Tensor& noise, double weight = 1.0);
  void merge(const ClassAccumulator& other);

  const Shape& stimulus_shape() const { return shape_; }
  std::size_t num_classes() const { return num_classes_; }
  std::uint64_t total() const { return total_; }
  std::vector<int> signals_seen() const;

  std::uint64_t cell_count(int signal, int response) const;
  // Response count over all signals.
  std::uint64_t response_count(int response) const;
  // Mean noise of one (signal, response) cell; zero tensor if empty.
  Tensor cell_mean(int signal, int response) const;
  // Mean noise over all stimuli with the given response, n̄^{*u}.
  Tensor response_mean(int response) const;
  // Count-weighted mean over everything.
  Tensor grand_mean() const;

  void save(const std::string& path) const;
  static ClassAccumulator load(const std::string& path);

 private:
  struct Cell {
    std::vector<double> sum;   // exact integers (quantized units)
    double weight = 0.0;       // exact integer in quantized units
    std::uint64_t count = 0;
  };
  const Cell* find_cell(int signal, int response) const;
  Cell& cell(int signal, int response);
  Tensor mean_of(const std::vector<const Cell*>& cells) const;

  Shape shape_;
  std::size_t num_classes_ = 0;
  std::uint64_t total_ = 0;
  std::map<int, std::vector<Cell>> cells_;  // signal -> per-response cells
};

// Signal mixing spec for collect(): stimuli become
// gamma*signal + (1-gamma)*noise with a seed-chosen exemplar per stimulus;
// the accumulator stores the noise component keyed by (signal class,
// response).
struct MixSpec {
  const Dataset* signals = nullptr;
  double gamma = 0.5;
  std::uint64_t seed = 0;
};

struct CollectOptions {
  const MixSpec* mix = nullptr;
  // Weight each noise pattern by the classifier's softmax confidence instead
  // of counting it once (off by default; maps barely change either way).
  bool confidence_weight = false;
  int threads = 0;
  std::size_t batch = 256;
};

// Classifies stimuli [begin, end) of the stream and accumulates the noise
// component per predicted class.
ClassAccumulator collect(const Network& net, const StimulusStream& stream, std::size_t begin,
                         std::size_t end, const CollectOptions& opts = {});

// Binary classification image c = (n̄^{12} + n̄^{22}) - (n̄^{11} + n̄^{21}),
// positive values are evidence for `positive_class`. Falls back to the
// noise-only form n̄^{*pos} - n̄^{*neg} when the accumulator carries no
// signal tags. Empty cells are treated as zero maps and reported in
// `warnings`. InsufficientData when a response has no mass at all.
Tensor binary_classification_image(const ClassAccumulator& acc, int positive_class = 1,
                                   std::vector<std::string>* warnings = nullptr);

// Per-class mean noise maps.
struct BiasMaps {
  Tensor means;  // K x C x H x W
  std::vector<std::uint64_t> counts;
  std::map<std::string, std::string> meta;  // source, n, seed, model hash, ...

  std::size_t num_classes() const { return counts.size(); }
  bool class_empty(std::size_t k) const { return counts[k] == 0; }
  Tensor class_map(std::size_t k) const;
  // Variant with the count-weighted global mean subtracted.
  BiasMaps mean_subtracted() const;

  // Arbitrary template stacks (class means, weight rows) reuse the same
  // classifier machinery.
  static BiasMaps from_templates(Tensor templates, std::string source);
};

BiasMaps bias_maps(const ClassAccumulator& acc);

// Templates from per-class dataset means and from final-layer weight rows.
BiasMaps mean_image_templates(const Dataset& ds);
BiasMaps weight_row_templates(const Network& net);

struct TemplateOptions {
  bool center = false;  // subtract each map's mean before the dot product
  bool cosine = false;  // normalize by |map| |image|
};

// argmax_c <map_c, image>; ties toward the lowest index; empty classes are
// excluded; InsufficientData when all classes are empty.
int template_classify(const BiasMaps& maps, const Tensor& image, const TemplateOptions& opts = {});

EvalResult template_eval(const BiasMaps& maps, const Dataset& ds, const TemplateOptions& opts = {},
                         int threads = 0);

// Export: per-class PGM + raw f32 sidecar + JSON metadata; confusion as CSV.
void write_bias_maps(const BiasMaps& maps, const std::string& dir, const std::string& stem);
BiasMaps read_bias_maps(const std::string& dir, const std::string& stem);
void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm);

}  // namespace noisebench
