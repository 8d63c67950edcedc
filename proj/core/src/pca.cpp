#include "noisebench/pca.hpp"

#include <cmath>
#include <limits>
#include <mutex>

#include "noisebench/errors.hpp"
#include "noisebench/parallel.hpp"
#include "linalg_detail.hpp"

namespace noisebench {

using detail::DVec;

namespace {

// Copies rows [r0, r1) of `rows`, mean-centered, into a double buffer.
void stage_block(const Tensor& rows, const DVec& mean, std::size_t r0, std::size_t r1,
                 DVec& out) {
  const std::size_t d = rows.dim(1);
  out.resize((r1 - r0) * d);
  for (std::size_t r = r0; r < r1; ++r) {
    const float* src = rows.data() + r * d;
    double* dst = out.data() + (r - r0) * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] = static_cast<double>(src[j]) - mean[j];
  }
}

}  // namespace

PcaModel pca_fit(const Tensor& rows, std::size_t k) {
  if (rows.ndim() != 2) throw ShapeError("pca_fit: rows must be a matrix");
  const std::size_t n = rows.dim(0);
  const std::size_t d = rows.dim(1);
  if (n < 2) throw ShapeError("pca_fit: need at least 2 rows");
  if (k < 1 || k > std::min(n, d)) {
    throw ShapeError("pca_fit: k = " + std::to_string(k) + " out of range for " +
                     std::to_string(n) + "x" + std::to_string(d));
  }

  DVec mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const float* src = rows.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) mean[j] += src[j];
  }
  for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);

  const double denom = static_cast<double>(n - 1);
  const std::size_t kBlock = 512;

  DVec evals, evecs;  // eigenvectors as columns of the eigenproblem matrix
  DVec comp(k * d);   // final components, rows in d-space
  double total_var = 0.0;

  const bool gram = d > n;
  if (!gram) {
    // Covariance X^T X / (n-1) accumulated block by block; the full centered
    // matrix is never materialized in double.
    DVec cov(d * d, 0.0);
    DVec block;
    for (std::size_t r0 = 0; r0 < n; r0 += kBlock) {
      std::size_t r1 = std::min(n, r0 + kBlock);
      stage_block(rows, mean, r0, r1, block);
      detail::dgemm_tn(block.data(), block.data(), cov.data(), d, r1 - r0, d,
                       /*acc=*/true);
    }
    for (std::size_t j = 0; j < d; ++j) total_var += cov[j * d + j];
    total_var /= denom;
    for (double& v : cov) v /= denom;
    if (!detail::jacobi_eig(cov, d, evals, evecs)) throw EigFailure("pca_fit: eig failed");
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t j = 0; j < d; ++j) comp[c * d + j] = evecs[j * d + c];
  } else {
    // Gram trick: d > n, so n is small and the centered matrix fits.
    DVec x;
    stage_block(rows, mean, 0, n, x);
    for (double v : x) total_var += v * v;
    total_var /= denom;
    DVec xt(d * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) xt[j * n + i] = x[i * d + j];
    DVec gramm(n * n);
    detail::dgemm_nn(x.data(), xt.data(), gramm.data(), n, d, n);
    for (double& v : gramm) v /= denom;
    if (!detail::jacobi_eig(gramm, n, evals, evecs)) throw EigFailure("pca_fit: eig failed");
    for (std::size_t c = 0; c < k; ++c) {
      double norm2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i * d + j] * evecs[i * n + c];
        comp[c * d + j] = s;
        norm2 += s * s;
      }
      double inv = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 0.0;
      for (std::size_t j = 0; j < d; ++j) comp[c * d + j] *= inv;
    }
  }

  PcaModel model;
  model.mean = Tensor({d});
  for (std::size_t j = 0; j < d; ++j) model.mean[j] = static_cast<float>(mean[j]);
  model.components = Tensor({k, d});
  for (std::size_t i = 0; i < k * d; ++i) model.components[i] = static_cast<float>(comp[i]);
  model.explained_variance_ratio = Tensor({k});
  for (std::size_t c = 0; c < k; ++c) {
    double lambda = std::max(evals[c], 0.0);
    model.explained_variance_ratio[c] =
        total_var > 0.0 ? static_cast<float>(lambda / total_var) : 0.0f;
  }

  // Score ranges over the fitting rows, staged the same way.
  std::vector<double> smin(k, std::numeric_limits<double>::infinity());
  std::vector<double> smax(k, -std::numeric_limits<double>::infinity());
  {
    DVec block;
    std::vector<std::vector<double>> wmin, wmax;
    for (std::size_t r0 = 0; r0 < n; r0 += kBlock) {
      std::size_t r1 = std::min(n, r0 + kBlock);
      stage_block(rows, mean, r0, r1, block);
      const std::size_t rows_here = r1 - r0;
      parallel_for(0, rows_here, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> lmin(k, std::numeric_limits<double>::infinity());
        std::vector<double> lmax(k, -std::numeric_limits<double>::infinity());
        for (std::size_t r = lo; r < hi; ++r) {
          const double* xr = block.data() + r * d;
          for (std::size_t c = 0; c < k; ++c) {
            const double* cc = comp.data() + c * d;
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += xr[j] * cc[j];
            lmin[c] = std::min(lmin[c], s);
            lmax[c] = std::max(lmax[c], s);
          }
        }
        static std::mutex mu;
        std::lock_guard<std::mutex> lk(mu);
        for (std::size_t c = 0; c < k; ++c) {
          smin[c] = std::min(smin[c], lmin[c]);
          smax[c] = std::max(smax[c], lmax[c]);
        }
      });
    }
  }
  model.score_min.resize(k);
  model.score_max.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    model.score_min[c] = static_cast<float>(smin[c]);
    model.score_max[c] = static_cast<float>(smax[c]);
  }

  model.components.ensure_finite("pca_fit");
  return model;
}

Tensor pca_reconstruct(const PcaModel& model, const Tensor& scores) {
  const std::size_t k = model.n_components();
  const std::size_t d = model.dim();
  if (scores.numel() != k) {
    throw ShapeError("pca_reconstruct: scores length " + std::to_string(scores.numel()) +
                     " != k " + std::to_string(k));
  }
  Tensor out({d});
  DVec acc(d, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    double s = scores[c];
    const float* row = model.components.data() + c * d;
    for (std::size_t j = 0; j < d; ++j) acc[j] += s * row[j];
  }
  for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>(acc[j] + model.mean[j]);
  return out;
}

Tensor pca_project(const PcaModel& model, const Tensor& row) {
  const std::size_t k = model.n_components();
  const std::size_t d = model.dim();
  if (row.numel() != d) throw ShapeError("pca_project: row length mismatch");
  Tensor scores({k});
  for (std::size_t c = 0; c < k; ++c) {
    double s = 0.0;
    const float* comp = model.components.data() + c * d;
    for (std::size_t j = 0; j < d; ++j) s += (static_cast<double>(row[j]) - model.mean[j]) * comp[j];
    scores[c] = static_cast<float>(s);
  }
  return scores;
}

}  // namespace noisebench
