#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "noisebench/errors.hpp"

namespace noisebench {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float32 tensor, the numeric carrier for the whole toolkit.
// Value semantics; treat instances as immutable once they cross a module
// boundary. Heavy accumulation happens in double elsewhere and lands here as
// float32 for storage and export.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  static Tensor from_data(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // 2-D/3-D/4-D accessors; bounds are the caller's responsibility.
  float& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  float at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  float& at3(std::size_t a, std::size_t b, std::size_t c) {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }
  float at3(std::size_t a, std::size_t b, std::size_t c) const {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }
  float& at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  float at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
    return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  Tensor reshaped(Shape new_shape) const;

  double sum() const;          // accumulated in double
  float min() const;
  float max() const;
  double mean() const { return numel() ? sum() / static_cast<double>(numel()) : 0.0; }

  bool all_finite() const;
  // Throws ShapeError if any value is NaN/Inf; `what` names the producer.
  void ensure_finite(const char* what) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Elementwise helpers used across modules.
double dot(const Tensor& a, const Tensor& b);      // double accumulation
double l2_distance(const Tensor& a, const Tensor& b);
double cosine_similarity(const Tensor& a, const Tensor& b);
double pearson_correlation(const Tensor& a, const Tensor& b);

}  // namespace noisebench
