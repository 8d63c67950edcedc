#pragma once

#include <cstddef>
#include <vector>

#include "noisebench/tensor.hpp"

namespace noisebench {

// Ridge regression weights = (G^T G + alpha I)^-1 G^T T.
// design is N x d, targets is N x m, result is d x m. alpha = 0 requires a
// nonsingular normal matrix (SingularSystem otherwise). Internally solved in
// double via Cholesky.
Tensor ridge_fit(const Tensor& design, const Tensor& targets, double alpha);

// Factors (G^T G + alpha I) once so many target blocks can be solved against
// the same design (the Gabor fit solves 60k image columns this way).
class RidgeSolver {
 public:
  RidgeSolver(const Tensor& design, double alpha);
  ~RidgeSolver();
  RidgeSolver(RidgeSolver&&) noexcept;
  RidgeSolver& operator=(RidgeSolver&&) noexcept;

  std::size_t rows() const;  // N
  std::size_t dim() const;   // d
  // targets N x m -> weights d x m
  Tensor solve(const Tensor& targets) const;

 private:
  struct Impl;
  Impl* impl_;
};

struct EigResult {
  std::vector<double> eigenvalues;  // descending
  Tensor eigenvectors;              // d x d, eigenvector i is column i
};

// Symmetric eigendecomposition by cyclic Jacobi. Input must be symmetric
// within 1e-5 (AsymmetricInput otherwise); EigFailure on non-convergence.
EigResult symmetric_eig(const Tensor& m);

// float32 GEMM trio used by the network engine. All row-major, deterministic
// for any thread count (each output element is accumulated sequentially).
// acc=false overwrites C, acc=true adds into it.
void gemm_nn(const float* a, const float* b, float* c, std::size_t n, std::size_t k,
             std::size_t m, bool acc = false, int threads = 0);
// C(n x m) = A^T(n x k as k x n) * B(k x m)
void gemm_tn(const float* a, const float* b, float* c, std::size_t n, std::size_t k,
             std::size_t m, bool acc = false, int threads = 0);
// C(n x m) = A(n x k) * B^T(k x m as m x k)
void gemm_nt(const float* a, const float* b, float* c, std::size_t n, std::size_t k,
             std::size_t m, bool acc = false, int threads = 0);

}  // namespace noisebench
