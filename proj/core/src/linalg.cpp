#include "noisebench/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "noisebench/parallel.hpp"
#include "linalg_detail.hpp"

namespace noisebench {

namespace detail {

void dgemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
              std::size_t m, bool acc, int threads) {
  parallel_for(0, n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      double* ci = c + i * m;
      if (!acc) std::fill(ci, ci + m, 0.0);
      const double* ai = a + i * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        double av = ai[kk];
        if (av == 0.0) continue;
        const double* bk = b + kk * m;
        for (std::size_t j = 0; j < m; ++j) ci[j] += av * bk[j];
      }
    }
  }, threads);
}

void dgemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
              std::size_t m, bool acc, int threads) {
  parallel_for(0, n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      double* ci = c + i * m;
      if (!acc) std::fill(ci, ci + m, 0.0);
      for (std::size_t kk = 0; kk < k; ++kk) {
        double av = a[kk * n + i];
        if (av == 0.0) continue;
        const double* bk = b + kk * m;
        for (std::size_t j = 0; j < m; ++j) ci[j] += av * bk[j];
      }
    }
  }, threads);
}

bool cholesky(DVec& a, std::size_t d) {
  // Pivot tolerance relative to the largest diagonal entry: rank-deficient
  // matrices whose tiny pivots survive roundoff still get rejected.
  double max_diag = 0.0;
  for (std::size_t j = 0; j < d; ++j) max_diag = std::max(max_diag, std::abs(a[j * d + j]));
  const double tol = 1e-11 * std::max(max_diag, 1e-300);
  for (std::size_t j = 0; j < d; ++j) {
    double diag = a[j * d + j];
    for (std::size_t kk = 0; kk < j; ++kk) diag -= a[j * d + kk] * a[j * d + kk];
    if (diag <= tol || !std::isfinite(diag)) return false;
    double lk = std::sqrt(diag);
    a[j * d + j] = lk;
    for (std::size_t i = j + 1; i < d; ++i) {
      double s = a[i * d + j];
      for (std::size_t kk = 0; kk < j; ++kk) s -= a[i * d + kk] * a[j * d + kk];
      a[i * d + j] = s / lk;
    }
  }
  return true;
}

void cholesky_solve(const DVec& l, std::size_t d, double* b, std::size_t m) {
  // Forward: L y = b
  for (std::size_t i = 0; i < d; ++i) {
    const double* li = l.data() + i * d;
    double* bi = b + i * m;
    for (std::size_t kk = 0; kk < i; ++kk) {
      double lv = li[kk];
      const double* bk = b + kk * m;
      for (std::size_t j = 0; j < m; ++j) bi[j] -= lv * bk[j];
    }
    double inv = 1.0 / li[i];
    for (std::size_t j = 0; j < m; ++j) bi[j] *= inv;
  }
  // Backward: L^T x = y
  for (std::size_t ii = d; ii-- > 0;) {
    double* bi = b + ii * m;
    for (std::size_t kk = ii + 1; kk < d; ++kk) {
      double lv = l[kk * d + ii];
      const double* bk = b + kk * m;
      for (std::size_t j = 0; j < m; ++j) bi[j] -= lv * bk[j];
    }
    double inv = 1.0 / l[ii * d + ii];
    for (std::size_t j = 0; j < m; ++j) bi[j] *= inv;
  }
}

bool jacobi_eig(const DVec& m_in, std::size_t d, DVec& evals, DVec& evecs, int max_sweeps) {
  DVec a = m_in;
  evecs.assign(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) evecs[i * d + i] = 1.0;

  auto off_norm = [&]() {
    double s = 0.0;
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = p + 1; q < d; ++q) s += a[p * d + q] * a[p * d + q];
    return std::sqrt(2.0 * s);
  };
  double frob = 0.0;
  for (double v : a) frob += v * v;
  frob = std::sqrt(frob);
  const double tol = 1e-12 * std::max(frob, 1.0);

  bool converged = false;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    if (off_norm() <= tol) {
      converged = true;
      break;
    }
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        double apq = a[p * d + q];
        if (std::abs(apq) <= 1e-300) continue;
        double app = a[p * d + p];
        double aqq = a[q * d + q];
        double tau = (aqq - app) / (2.0 * apq);
        double t = (tau >= 0.0) ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                                : 1.0 / (tau - std::sqrt(1.0 + tau * tau));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = t * c;
        // Rotate rows/cols p and q of A.
        for (std::size_t i = 0; i < d; ++i) {
          double aip = a[i * d + p];
          double aiq = a[i * d + q];
          a[i * d + p] = c * aip - s * aiq;
          a[i * d + q] = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < d; ++i) {
          double api = a[p * d + i];
          double aqi = a[q * d + i];
          a[p * d + i] = c * api - s * aqi;
          a[q * d + i] = s * api + c * aqi;
        }
        // Accumulate eigenvectors (columns of evecs).
        for (std::size_t i = 0; i < d; ++i) {
          double vip = evecs[i * d + p];
          double viq = evecs[i * d + q];
          evecs[i * d + p] = c * vip - s * viq;
          evecs[i * d + q] = s * vip + c * viq;
        }
      }
    }
  }
  if (!converged && off_norm() > tol) return false;

  evals.resize(d);
  for (std::size_t i = 0; i < d; ++i) evals[i] = a[i * d + i];
  // Sort descending, permuting eigenvector columns to match.
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return evals[x] > evals[y]; });
  DVec sorted_vals(d);
  DVec sorted_vecs(d * d);
  for (std::size_t j = 0; j < d; ++j) {
    sorted_vals[j] = evals[order[j]];
    for (std::size_t i = 0; i < d; ++i) sorted_vecs[i * d + j] = evecs[i * d + order[j]];
  }
  evals = std::move(sorted_vals);
  evecs = std::move(sorted_vecs);
  return true;
}

}  // namespace detail

using detail::DVec;

struct RidgeSolver::Impl {
  std::size_t n = 0, d = 0;
  DVec design;  // n x d in double
  DVec factor;  // Cholesky factor of G^T G + alpha I
  DVec normal;  // unfactored normal matrix, for the residual spot check
};

RidgeSolver::RidgeSolver(const Tensor& design, double alpha) : impl_(new Impl) {
  if (design.ndim() != 2) throw ShapeError("RidgeSolver: design must be a matrix");
  impl_->n = design.dim(0);
  impl_->d = design.dim(1);
  const std::size_t n = impl_->n, d = impl_->d;
  if (n < 1 || d < 1) throw ShapeError("RidgeSolver: empty system");
  if (alpha < 0.0) throw ConfigError("RidgeSolver: alpha must be nonnegative");

  impl_->design.resize(n * d);
  for (std::size_t i = 0; i < n * d; ++i) impl_->design[i] = design[i];

  impl_->normal.assign(d * d, 0.0);
  detail::dgemm_tn(impl_->design.data(), impl_->design.data(), impl_->normal.data(), d, n, d);
  for (std::size_t i = 0; i < d; ++i) impl_->normal[i * d + i] += alpha;
  impl_->factor = impl_->normal;
  if (!detail::cholesky(impl_->factor, d)) {
    throw SingularSystem("ridge: normal matrix is singular (alpha = " + std::to_string(alpha) +
                         ")");
  }
}

RidgeSolver::~RidgeSolver() { delete impl_; }
RidgeSolver::RidgeSolver(RidgeSolver&& o) noexcept : impl_(o.impl_) { o.impl_ = nullptr; }
RidgeSolver& RidgeSolver::operator=(RidgeSolver&& o) noexcept {
  std::swap(impl_, o.impl_);
  return *this;
}

std::size_t RidgeSolver::rows() const { return impl_->n; }
std::size_t RidgeSolver::dim() const { return impl_->d; }

Tensor RidgeSolver::solve(const Tensor& targets) const {
  const std::size_t n = impl_->n, d = impl_->d;
  if (targets.ndim() != 2 || targets.dim(0) != n) {
    throw ShapeError("ridge: targets must be " + std::to_string(n) + " x m");
  }
  const std::size_t m = targets.dim(1);

  DVec t(n * m);
  for (std::size_t i = 0; i < n * m; ++i) t[i] = targets[i];
  DVec rhs(d * m);
  detail::dgemm_tn(impl_->design.data(), t.data(), rhs.data(), d, n, m);
  DVec rhs_orig;
  const std::size_t check_cols = std::min<std::size_t>(m, 4);
  if (check_cols) rhs_orig = rhs;

  detail::cholesky_solve(impl_->factor, d, rhs.data(), m);

  // Spot-check the normal-equation residual on a few columns.
  {
    const DVec& ntg = impl_->normal;
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < check_cols; ++j) {
      for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t kk = 0; kk < d; ++kk) acc += ntg[i * d + kk] * rhs[kk * m + j];
        double r = acc - rhs_orig[i * m + j];
        num += r * r;
        den += rhs_orig[i * m + j] * rhs_orig[i * m + j];
      }
    }
    if (den > 0.0 && std::sqrt(num / den) > 1e-4) {
      throw SingularSystem("ridge: normal equations residual exceeds 1e-4 relative");
    }
  }

  Tensor w({d, m});
  for (std::size_t i = 0; i < d * m; ++i) w[i] = static_cast<float>(rhs[i]);
  w.ensure_finite("ridge solve");
  return w;
}

Tensor ridge_fit(const Tensor& design, const Tensor& targets, double alpha) {
  RidgeSolver solver(design, alpha);
  return solver.solve(targets);
}

EigResult symmetric_eig(const Tensor& m) {
  if (m.ndim() != 2 || m.dim(0) != m.dim(1)) {
    throw ShapeError("symmetric_eig: square matrix required, got " + shape_str(m.shape()));
  }
  const std::size_t d = m.dim(0);
  if (d > 8192) throw ShapeError("symmetric_eig: dimension above 8192");

  double scale = std::max(1.0, static_cast<double>(std::max(std::abs(m.min()), std::abs(m.max()))));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      if (std::abs(m.at2(i, j) - m.at2(j, i)) > 1e-5 * scale) {
        throw AsymmetricInput("symmetric_eig: input asymmetric at (" + std::to_string(i) + "," +
                              std::to_string(j) + ")");
      }
    }
  }

  DVec a(d * d);
  // Symmetrize to kill float32 round-off before iterating.
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      a[i * d + j] = 0.5 * (static_cast<double>(m.at2(i, j)) + m.at2(j, i));

  DVec evals, evecs;
  if (!detail::jacobi_eig(a, d, evals, evecs)) {
    throw EigFailure("symmetric_eig: Jacobi sweeps failed to converge");
  }

  EigResult res;
  res.eigenvalues = std::move(evals);
  res.eigenvectors = Tensor({d, d});
  for (std::size_t i = 0; i < d * d; ++i) res.eigenvectors[i] = static_cast<float>(evecs[i]);
  return res;
}

namespace {

// 4x16 register-tiled kernel: four A rows broadcast against two 8-wide
// column strips of B, accumulators live in registers across the whole k
// loop. Each C element still accumulates in ascending k order, so results
// are bit-identical to the plain triple loop and to any thread count.
template <bool Acc>
void gemm_nn_tile4x16(const float* a, const float* b, float* c, std::size_t i0, std::size_t k,
                      std::size_t m, std::size_t j0) {
  float acc[4][16];
  for (int r = 0; r < 4; ++r) {
    for (int q = 0; q < 16; ++q) acc[r][q] = 0.0f;
  }
  const float* a0 = a + (i0 + 0) * k;
  const float* a1 = a + (i0 + 1) * k;
  const float* a2 = a + (i0 + 2) * k;
  const float* a3 = a + (i0 + 3) * k;
  for (std::size_t kk = 0; kk < k; ++kk) {
    const float* bk = b + kk * m + j0;
    float av0 = a0[kk], av1 = a1[kk], av2 = a2[kk], av3 = a3[kk];
    for (int q = 0; q < 16; ++q) {
      float bv = bk[q];
      acc[0][q] += av0 * bv;
      acc[1][q] += av1 * bv;
      acc[2][q] += av2 * bv;
      acc[3][q] += av3 * bv;
    }
  }
  for (int r = 0; r < 4; ++r) {
    float* ci = c + (i0 + r) * m + j0;
    for (int q = 0; q < 16; ++q) {
      if (Acc)
        ci[q] += acc[r][q];
      else
        ci[q] = acc[r][q];
    }
  }
}

template <bool Acc>
void gemm_nn_impl(const float* a, const float* b, float* c, std::size_t n, std::size_t k,
                  std::size_t m, int threads) {
  parallel_for(0, n, [&](std::size_t lo, std::size_t hi) {
    std::size_t i = lo;
    for (; i + 4 <= hi; i += 4) {
      std::size_t j = 0;
      for (; j + 16 <= m; j += 16) gemm_nn_tile4x16<Acc>(a, b, c, i, k, m, j);
      if (j < m) {
        for (std::size_t r = i; r < i + 4; ++r) {
          float* ci = c + r * m;
          if (!Acc) std::fill(ci + j, ci + m, 0.0f);
          const float* ai = a + r * k;
          for (std::size_t kk = 0; kk < k; ++kk) {
            float av = ai[kk];
            const float* bk = b + kk * m;
            for (std::size_t jj = j; jj < m; ++jj) ci[jj] += av * bk[jj];
          }
        }
      }
    }
    for (; i < hi; ++i) {
      float* ci = c + i * m;
      if (!Acc) std::fill(ci, ci + m, 0.0f);
      const float* ai = a + i * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        float av = ai[kk];
        const float* bk = b + kk * m;
        for (std::size_t j = 0; j < m; ++j) ci[j] += av * bk[j];
      }
    }
  }, threads);
}

template <bool Acc>
void gemm_tn_impl(const float* a, const float* b, float* c, std::size_t n, std::size_t k,
                  std::size_t m, int threads) {
  parallel_for(0, n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      float* ci = c + i * m;
      if (!Acc) std::fill(ci, ci + m, 0.0f);
      for (std::size_t kk = 0; kk < k; ++kk) {
        float av = a[kk * n + i];
        const float* bk = b + kk * m;
        for (std::size_t j = 0; j < m; ++j) ci[j] += av * bk[j];
      }
    }
  }, threads);
}

template <bool Acc>
void gemm_nt_impl(const float* a, const float* b, float* c, std::size_t n, std::size_t k,
                  std::size_t m, int threads) {
  parallel_for(0, n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const float* ai = a + i * k;
      float* ci = c + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        const float* bj = b + j * k;
        float s = 0.0f;
        for (std::size_t kk = 0; kk < k; ++kk) s += ai[kk] * bj[kk];
        if (Acc)
          ci[j] += s;
        else
          ci[j] = s;
      }
    }
  }, threads);
}

}  // namespace

void gemm_nn(const float* a, const float* b, float* c, std::size_t n, std::size_t k,
             std::size_t m, bool acc, int threads) {
  acc ? gemm_nn_impl<true>(a, b, c, n, k, m, threads)
      : gemm_nn_impl<false>(a, b, c, n, k, m, threads);
}

void gemm_tn(const float* a, const float* b, float* c, std::size_t n, std::size_t k,
             std::size_t m, bool acc, int threads) {
  acc ? gemm_tn_impl<true>(a, b, c, n, k, m, threads)
      : gemm_tn_impl<false>(a, b, c, n, k, m, threads);
}

void gemm_nt(const float* a, const float* b, float* c, std::size_t n, std::size_t k,
             std::size_t m, bool acc, int threads) {
  acc ? gemm_nt_impl<true>(a, b, c, n, k, m, threads)
      : gemm_nt_impl<false>(a, b, c, n, k, m, threads);
}

}  // namespace noisebench
