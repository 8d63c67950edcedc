#include "noisebench/sta.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "noisebench/errors.hpp"
#include "noisebench/parallel.hpp"
#include "noisebench/random.hpp"
#include "linalg_detail.hpp"

namespace noisebench {

using detail::DVec;

StaResult sta(const StimulusFn& stimulus_at, const ResponseFn& response, std::size_t n) {
  if (n < 1) throw ShapeError("sta: n must be >= 1");
  Tensor first = stimulus_at(0);
  const std::size_t d = first.numel();

  DVec syx(d, 0.0), sx(d, 0.0);
  double sy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x = i == 0 ? first : stimulus_at(i);
    double y = response(x);
    if (y < 0.0) throw ShapeError("sta: response must be nonnegative");
    for (std::size_t j = 0; j < d; ++j) {
      sx[j] += x[j];
      if (y != 0.0) syx[j] += y * x[j];
    }
    sy += y;
  }
  if (sy == 0.0) throw NoSpikes("sta: zero total response");

  StaResult res;
  res.n_sp = sy;
  res.mu = Tensor(first.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < d; ++j) {
    res.mu[j] = static_cast<float>(syx[j] / sy - sx[j] * inv_n);
  }
  res.rf_crop = res.mu;
  return res;
}

Tensor whitened_sta(const Tensor& x_rows, const std::vector<double>& y) {
  if (x_rows.ndim() != 2) throw ShapeError("whitened_sta: X must be N x d");
  const std::size_t n = x_rows.dim(0);
  const std::size_t d = x_rows.dim(1);
  if (y.size() != n) throw ShapeError("whitened_sta: y length mismatch");

  double n_sp = 0.0;
  for (double v : y) n_sp += v;
  if (n_sp == 0.0) throw NoSpikes("whitened_sta: zero total response");

  DVec gram(d * d, 0.0), xty(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = x_rows.data() + i * d;
    for (std::size_t a = 0; a < d; ++a) {
      double ra = row[a];
      xty[a] += ra * y[i];
      for (std::size_t b = a; b < d; ++b) gram[a * d + b] += ra * row[b];
    }
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < a; ++b) gram[a * d + b] = gram[b * d + a];
  }

  DVec factor = gram;
  if (!detail::cholesky(factor, d)) {
    double trace = 0.0;
    for (std::size_t a = 0; a < d; ++a) trace += gram[a * d + a];
    double alpha = 1e-6 * trace / static_cast<double>(d);
    factor = gram;
    for (std::size_t a = 0; a < d; ++a) factor[a * d + a] += alpha;
    if (!detail::cholesky(factor, d)) {
      throw SingularSystem("whitened_sta: Gram matrix singular even with ridge fallback");
    }
  }
  DVec sol = xty;
  detail::cholesky_solve(factor, d, sol.data(), 1);

  Tensor out({d});
  const double scale = static_cast<double>(n) / n_sp;
  for (std::size_t a = 0; a < d; ++a) out[a] = static_cast<float>(scale * sol[a]);
  return out;
}

StcResult stc(const StimulusFn& stimulus_at, const ResponseFn& response, const Tensor& mu,
              std::size_t n) {
  Tensor first = stimulus_at(0);
  const std::size_t d = first.numel();
  if (d > 4096) throw ShapeError("stc: dimension above 4096 (crop to the unit RF)");
  if (mu.numel() != d) throw ShapeError("stc: mu shape mismatch");

  // One pass over raw sums; Lambda follows from
  // sum y (x - c)(x - c)^T = M2 - c S1^T - S1 c^T + S0 c c^T with c = xbar + mu.
  DVec m2(d * d, 0.0), s1(d, 0.0), sx(d, 0.0);
  double s0 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x = i == 0 ? first : stimulus_at(i);
    double y = response(x);
    if (y < 0.0) throw ShapeError("stc: response must be nonnegative");
    for (std::size_t a = 0; a < d; ++a) sx[a] += x[a];
    if (y == 0.0) continue;
    for (std::size_t a = 0; a < d; ++a) {
      double xa = x[a];
      s1[a] += y * xa;
      double yxa = y * xa;
      const float* xp = x.data();
      double* row = m2.data() + a * d;
      for (std::size_t b = a; b < d; ++b) row[b] += yxa * xp[b];
    }
    s0 += y;
  }
  if (s0 == 0.0) throw NoSpikes("stc: zero total response");
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < a; ++b) m2[a * d + b] = m2[b * d + a];
  }

  DVec center(d);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t a = 0; a < d; ++a) center[a] = sx[a] * inv_n + mu[a];

  StcResult res;
  res.lambda = Tensor({d, d});
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) {
      double v = m2[a * d + b] - center[a] * s1[b] - s1[a] * center[b] +
                 s0 * center[a] * center[b];
      res.lambda.at2(a, b) = static_cast<float>(v / s0);
    }
  }

  EigResult eig = symmetric_eig(res.lambda);
  res.eigenvalues = std::move(eig.eigenvalues);
  res.eigenvectors = std::move(eig.eigenvectors);
  return res;
}

std::vector<UnitAddress> center_units(const Network& net, const std::string& layer) {
  std::size_t maps = net.hook_maps(layer);
  std::vector<UnitAddress> units(maps);
  for (std::size_t m = 0; m < maps; ++m) {
    units[m].layer = layer;
    units[m].map = m;
  }
  return units;
}

namespace {

struct WindowSpec {
  long row0 = 0, col0 = 0;  // input window corner
  std::size_t size = 0;     // rf side
  std::size_t unit_row = 0, unit_col = 0;
};

WindowSpec resolve_window(const Network& net, const UnitAddress& unit) {
  Network::RfInfo rf = net.receptive_field(unit.layer);
  Shape hshape = net.hook_shape(unit.layer);
  std::size_t oh = hshape[1], ow = hshape[2];
  std::size_t h = net.input_shape()[1];

  WindowSpec wspec;
  wspec.size = rf.size;
  long max_pos_h = static_cast<long>(oh) - 1;
  long max_pos_w = static_cast<long>(ow) - 1;
  auto center_pos = [&](std::size_t extent) {
    // Output position whose window is closest to the image center and, when
    // possible, fully inside the image.
    double want = (static_cast<double>(h) - static_cast<double>(rf.size)) / 2.0;
    long pos = std::lround((want - static_cast<double>(rf.offset)) / static_cast<double>(rf.jump));
    return std::clamp<long>(pos, 0, static_cast<long>(extent) - 1);
  };
  long prow = unit.row >= 0 ? unit.row : center_pos(oh);
  long pcol = unit.col >= 0 ? unit.col : center_pos(ow);
  if (prow > max_pos_h || pcol > max_pos_w) throw ShapeError("unit position outside layer");
  wspec.unit_row = static_cast<std::size_t>(prow);
  wspec.unit_col = static_cast<std::size_t>(pcol);
  wspec.row0 = prow * static_cast<long>(rf.jump) + rf.offset;
  wspec.col0 = pcol * static_cast<long>(rf.jump) + rf.offset;
  return wspec;
}

}  // namespace

std::vector<StaResult> unit_sta_filters(const Network& net, const std::vector<UnitAddress>& units,
                                        const UnitStaOptions& opts) {
  if (units.empty()) return {};
  const Shape in_shape = net.input_shape();
  const std::size_t c_in = in_shape[0], h = in_shape[1], w = in_shape[2];
  const std::string& layer = units.front().layer;
  for (const auto& u : units) {
    if (u.layer != layer) throw ConfigError("unit_sta_filters: units must share one layer");
  }

  std::vector<StaResult> results(units.size());

  for (std::size_t ui = 0; ui < units.size(); ++ui) {
    const UnitAddress& unit = units[ui];
    WindowSpec win = resolve_window(net, unit);
    if (opts.full_image) {
      win.row0 = 0;
      win.col0 = 0;
      win.size = h;
    }
    const std::size_t wd = opts.full_image ? h : win.size;
    const std::size_t wcols = opts.full_image ? w : win.size;
    const std::size_t d = c_in * wd * wcols;

    // Streaming sums: plain STA needs sum(yx), sum(x), sum(y); whitening
    // additionally needs the Gram matrix of centered windows.
    DVec syx(d, 0.0), sx(d, 0.0), xty(d, 0.0);
    DVec gram;
    if (opts.whiten) gram.assign(d * d, 0.0);
    double sy = 0.0;

    const std::uint64_t stream_base = static_cast<std::uint64_t>(ui) << 40;
    const std::size_t batch_sz = opts.batch;

    Tensor batch({batch_sz, c_in, h, w});
    std::vector<float> windows(batch_sz * d);

    for (std::size_t b0 = 0; b0 < opts.n; b0 += batch_sz) {
      std::size_t nb = std::min(opts.n - b0, batch_sz);
      if (batch.dim(0) != nb) batch = Tensor({nb, c_in, h, w});
      for (std::size_t i = 0; i < nb; ++i) {
        RandomStream rs(opts.seed, stream_base + b0 + i);
        float* img = batch.data() + i * c_in * h * w;
        std::fill(img, img + c_in * h * w, opts.background);
        float* wdst = windows.data() + i * d;
        for (std::size_t c = 0; c < c_in; ++c) {
          for (std::size_t r = 0; r < wd; ++r) {
            for (std::size_t cc = 0; cc < wcols; ++cc) {
              double v = 0.5 + opts.sigma * rs.next_gaussian();
              float pixel = static_cast<float>(std::clamp(v, 0.0, 1.0));
              wdst[(c * wd + r) * wcols + cc] = pixel;
              long ir = win.row0 + static_cast<long>(r);
              long ic = win.col0 + static_cast<long>(cc);
              if (ir >= 0 && ir < static_cast<long>(h) && ic >= 0 && ic < static_cast<long>(w)) {
                img[(c * h + static_cast<std::size_t>(ir)) * w + static_cast<std::size_t>(ic)] =
                    pixel;
              }
            }
          }
        }
      }

      ForwardOptions fopts;
      fopts.trace_layers = {layer};
      fopts.stop_at_trace = true;  // only the hook layer matters here
      fopts.threads = opts.threads;
      ForwardTrace trace;
      net.forward(batch, fopts, &trace);
      const Tensor* acts = trace.find(layer);
      const Shape& hs = net.hook_shape(layer);
      const std::size_t per_sample = shape_numel(hs);
      const std::size_t plane = hs[1] * hs[2];

      for (std::size_t i = 0; i < nb; ++i) {
        double y = acts->data()[i * per_sample + unit.map * plane + win.unit_row * hs[2] +
                                win.unit_col];
        y = std::max(y, 0.0);  // rate response; rectifies tanh units
        const float* x = windows.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) sx[j] += x[j];
        if (y != 0.0) {
          for (std::size_t j = 0; j < d; ++j) syx[j] += y * x[j];
          sy += y;
        }
        if (opts.whiten) {
          // Gram and X^T y on raw windows; centering happens afterwards.
          for (std::size_t a = 0; a < d; ++a) {
            double xa = x[a];
            xty[a] += xa * y;
            double* row = gram.data() + a * d;
            for (std::size_t b = a; b < d; ++b) row[b] += xa * x[b];
          }
        }
      }
    }

    StaResult& res = results[ui];
    res.unit = unit;
    res.unit.row = static_cast<long>(win.unit_row);
    res.unit.col = static_cast<long>(win.unit_col);
    res.mu = Tensor({c_in, wd, wcols});
    res.n_sp = sy;
    if (sy == 0.0) {
      res.dead = true;  // NoSpikes for this unit; the sweep continues
      res.rf_crop = res.mu;
      continue;
    }
    const double inv_n = 1.0 / static_cast<double>(opts.n);
    for (std::size_t j = 0; j < d; ++j) {
      res.mu[j] = static_cast<float>(syx[j] / sy - sx[j] * inv_n);
    }
    res.rf_crop = res.mu;

    if (opts.whiten) {
      // Centered Gram: G_c = G - n xbar xbar^T; centered X^T y = X^T y - xbar sum(y).
      for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < a; ++b) gram[a * d + b] = gram[b * d + a];
      }
      DVec xbar(d);
      for (std::size_t a = 0; a < d; ++a) xbar[a] = sx[a] * inv_n;
      DVec gc(d * d);
      for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) {
          gc[a * d + b] = gram[a * d + b] - static_cast<double>(opts.n) * xbar[a] * xbar[b];
        }
      }
      DVec rhs(d);
      for (std::size_t a = 0; a < d; ++a) rhs[a] = xty[a] - xbar[a] * sy;

      DVec factor = gc;
      bool ok = detail::cholesky(factor, d);
      if (!ok) {
        double trace = 0.0;
        for (std::size_t a = 0; a < d; ++a) trace += gc[a * d + a];
        factor = gc;
        for (std::size_t a = 0; a < d; ++a) factor[a * d + a] += 1e-6 * trace / static_cast<double>(d);
        ok = detail::cholesky(factor, d);
      }
      if (ok) {
        detail::cholesky_solve(factor, d, rhs.data(), 1);
        Tensor wsta({c_in, wd, wcols});
        const double scale = static_cast<double>(opts.n) / sy;
        for (std::size_t a = 0; a < d; ++a) wsta[a] = static_cast<float>(scale * rhs[a]);
        res.whitened = std::move(wsta);
      }
    }
  }
  return results;
}

double ClassActivationStats::mean_pairwise_distance() const {
  std::size_t k = counts.size();
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (empty_class[i]) continue;
    for (std::size_t j = i + 1; j < k; ++j) {
      if (empty_class[j]) continue;
      sum += distance.at2(i, j);
      pairs++;
    }
  }
  return pairs ? sum / static_cast<double>(pairs) : 0.0;
}

namespace {

ClassActivationStats activation_stats(const Network& net, const std::string& layer,
                                      std::size_t num_classes,
                                      const std::function<Tensor(std::size_t, std::size_t)>& make_batch,
                                      const std::function<int(std::size_t)>& label_of,
                                      bool group_by_prediction, std::size_t n, int threads) {
  const Shape hs = net.hook_shape(layer);
  const std::size_t per_sample = shape_numel(hs);
  ClassActivationStats stats;
  stats.layer = layer;
  stats.activation_shape = hs;
  stats.counts.assign(num_classes, 0);

  std::vector<DVec> sums(num_classes, DVec(per_sample, 0.0));
  const std::size_t kBatch = 256;

  for (std::size_t b0 = 0; b0 < n; b0 += kBatch) {
    std::size_t nb = std::min(n - b0, kBatch);
    Tensor batch = make_batch(b0, nb);
    ForwardOptions fopts;
    fopts.trace_layers = {layer};
    fopts.stop_at_trace = !group_by_prediction;  // label grouping skips the head
    fopts.threads = threads;
    ForwardTrace trace;
    Tensor out = net.forward(batch, fopts, &trace);
    const Tensor* acts = trace.find(layer);
    const std::size_t k_out = group_by_prediction ? out.numel() / nb : 0;
    for (std::size_t i = 0; i < nb; ++i) {
      int cls;
      if (group_by_prediction) {
        const float* row = out.data() + i * k_out;
        int best = 0;
        for (std::size_t j = 1; j < k_out; ++j) {
          if (row[j] > row[best]) best = static_cast<int>(j);
        }
        cls = best;
      } else {
        cls = label_of(b0 + i);
      }
      const float* a = acts->data() + i * per_sample;
      double* dst = sums[static_cast<std::size_t>(cls)].data();
      for (std::size_t j = 0; j < per_sample; ++j) dst[j] += a[j];
      stats.counts[static_cast<std::size_t>(cls)]++;
    }
  }

  stats.means.resize(num_classes);
  stats.empty_class.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    stats.means[c] = Tensor(hs);
    stats.empty_class[c] = stats.counts[c] == 0;
    if (stats.counts[c]) {
      double inv = 1.0 / static_cast<double>(stats.counts[c]);
      for (std::size_t j = 0; j < per_sample; ++j) {
        stats.means[c][j] = static_cast<float>(sums[c][j] * inv);
      }
    }
  }
  stats.distance = Tensor({num_classes, num_classes});
  for (std::size_t i = 0; i < num_classes; ++i) {
    for (std::size_t j = 0; j < num_classes; ++j) {
      if (i == j || stats.empty_class[i] || stats.empty_class[j]) continue;
      stats.distance.at2(i, j) = static_cast<float>(l2_distance(stats.means[i], stats.means[j]));
    }
  }
  return stats;
}

}  // namespace

ClassActivationStats mean_layer_activation(const Network& net, const StimulusStream& stream,
                                           std::size_t n, const std::string& layer, int threads) {
  const Shape& s = stream.shape;
  return activation_stats(
      net, layer, net.num_classes(),
      [&](std::size_t b0, std::size_t nb) {
        Tensor batch({nb, s[0], s[1], s[2]});
        std::size_t px = shape_numel(s);
        parallel_for(0, nb, [&](std::size_t lo, std::size_t hi) {
          for (std::size_t i = lo; i < hi; ++i) {
            Tensor t = stream.at(b0 + i);
            std::memcpy(batch.data() + i * px, t.data(), px * sizeof(float));
          }
        }, threads);
        return batch;
      },
      [](std::size_t) { return 0; }, /*group_by_prediction=*/true, n, threads);
}

ClassActivationStats mean_layer_activation(const Network& net, const Dataset& ds,
                                           const std::string& layer, int threads) {
  const Shape s = ds.image_shape();
  std::size_t px = shape_numel(s);
  return activation_stats(
      net, layer, ds.num_classes,
      [&](std::size_t b0, std::size_t nb) {
        Tensor batch({nb, s[0], s[1], s[2]});
        std::memcpy(batch.data(), ds.images.data() + b0 * px, nb * px * sizeof(float));
        return batch;
      },
      [&](std::size_t i) { return ds.labels[i]; }, /*group_by_prediction=*/false, ds.size(),
      threads);
}

}  // namespace noisebench
