#include "noisebench/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace noisebench {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("Tensor: zero dimension in " + shape_str(shape_));
  }
  data_.assign(shape_numel(shape_), fill);
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("Tensor::from_data: " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape));
  }
  Tensor t;
  t.shape_ = std::move(new_shape);
  t.data_ = data_;
  return t;
}

double Tensor::sum() const {
  double s = 0.0;
  for (float v : data_) s += v;
  return s;
}

float Tensor::min() const {
  float m = std::numeric_limits<float>::infinity();
  for (float v : data_) m = std::min(m, v);
  return m;
}

float Tensor::max() const {
  float m = -std::numeric_limits<float>::infinity();
  for (float v : data_) m = std::max(m, v);
  return m;
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::ensure_finite(const char* what) const {
  if (!all_finite()) {
    throw ShapeError(std::string(what) + ": non-finite values in tensor " + shape_str(shape_));
  }
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    throw ShapeError("dot: size mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double s = 0.0;
  const float* pa = a.data();
  const float* pb = b.data();
  for (std::size_t i = 0; i < a.numel(); ++i) s += static_cast<double>(pa[i]) * pb[i];
  return s;
}

double l2_distance(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    throw ShapeError("l2_distance: size mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
  double ab = dot(a, b);
  double aa = dot(a, a);
  double bb = dot(b, b);
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

double pearson_correlation(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel() || a.numel() == 0) {
    throw ShapeError("pearson_correlation: size mismatch");
  }
  const std::size_t n = a.numel();
  double ma = a.mean();
  double mb = b.mean();
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double da = a[i] - ma;
    double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace noisebench
