#pragma once

#include <cstddef>
#include <vector>

#include "noisebench/tensor.hpp"

namespace noisebench {

struct PcaModel {
  Tensor mean;                      // d
  Tensor components;                // k x d, rows orthonormal
  Tensor explained_variance_ratio;  // k, nonincreasing
  std::vector<float> score_min;     // per component, over the fitting rows
  std::vector<float> score_max;

  std::size_t n_components() const { return components.empty() ? 0 : components.dim(0); }
  std::size_t dim() const { return mean.numel(); }
};

// PCA of the sample covariance of `rows` (N x d), keeping the top k
// components. Uses the Gram-matrix trick when d > N so the eigenproblem
// never exceeds min(N, d). Score ranges are the min/max projections of the
// fitting rows onto each component.
PcaModel pca_fit(const Tensor& rows, std::size_t k);

// mean + scores^T * components. scores must have length k.
Tensor pca_reconstruct(const PcaModel& model, const Tensor& scores);

// Projection of a row onto the model's components (length k).
Tensor pca_project(const PcaModel& model, const Tensor& row);

}  // namespace noisebench
