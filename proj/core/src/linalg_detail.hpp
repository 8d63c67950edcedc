#pragma once

// Internal double-precision kernels shared by linalg.cpp, pca.cpp and sta.cpp.
// Matrices are dense row-major vectors of double.

#include <cstddef>
#include <vector>

namespace noisebench::detail {

using DVec = std::vector<double>;

// C(n x m) = A(n x k) * B(k x m), row-major. Deterministic: each C element is
// accumulated in k order by exactly one thread.
void dgemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
              std::size_t m, bool acc = false, int threads = 0);

// C(n x m) = A^T * B where A is (k x n), B is (k x m).
void dgemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
              std::size_t m, bool acc = false, int threads = 0);

// Cholesky factorization of SPD matrix a (d x d), in place lower triangle.
// Returns false if a pivot is not positive.
bool cholesky(DVec& a, std::size_t d);

// Solves (LL^T) X = B for X given the factor from cholesky(); B is (d x m)
// row-major and is overwritten with the solution.
void cholesky_solve(const DVec& l, std::size_t d, double* b, std::size_t m);

// Cyclic Jacobi eigendecomposition of a symmetric matrix (d x d).
// On return `evals` holds eigenvalues in descending order and `evecs` is
// (d x d) row-major with eigenvector i stored as column i.
// Returns false if the off-diagonal norm fails to converge.
bool jacobi_eig(const DVec& m, std::size_t d, DVec& evals, DVec& evecs, int max_sweeps = 64);

}  // namespace noisebench::detail
