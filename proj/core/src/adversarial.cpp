#include "noisebench/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "noisebench/errors.hpp"
#include "noisebench/parallel.hpp"
#include "noisebench/random.hpp"

namespace noisebench {

PatchShape patch_shape_from_string(const std::string& s) {
  if (s == "x3" || s == "x") return PatchShape::X3;
  if (s == "c3" || s == "c") return PatchShape::C3;
  if (s == "h3" || s == "h") return PatchShape::H3;
  throw ConfigError("unknown patch shape: " + s);
}

Corner corner_from_string(const std::string& s) {
  if (s == "top_left") return Corner::TopLeft;
  if (s == "top_right") return Corner::TopRight;
  if (s == "bottom_left") return Corner::BottomLeft;
  if (s == "bottom_right") return Corner::BottomRight;
  throw ConfigError("unknown corner: " + s);
}

std::array<std::array<int, 3>, 3> PatchSpec::mask() const {
  switch (shape) {
    case PatchShape::X3:
      // Four diagonal pixels; the shared centre stays clear.
      return {{{1, 0, 1}, {0, 0, 0}, {1, 0, 1}}};
    case PatchShape::C3:
      // Left column plus the top/bottom of the middle column, open right.
      return {{{1, 1, 0}, {1, 0, 0}, {1, 1, 0}}};
    case PatchShape::H3:
      // Both side columns plus the middle row.
      return {{{1, 0, 1}, {1, 1, 1}, {1, 0, 1}}};
  }
  throw ConfigError("bad patch shape");
}

namespace {

void stamp(Tensor& images, std::size_t index, const PatchSpec& patch) {
  std::size_t c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (h < 3 || w < 3) throw ShapeError("poison: image smaller than the patch");
  std::size_t r0 = 0, c0 = 0;
  switch (patch.corner) {
    case Corner::TopLeft: r0 = 0; c0 = 0; break;
    case Corner::TopRight: r0 = 0; c0 = w - 3; break;
    case Corner::BottomLeft: r0 = h - 3; c0 = 0; break;
    case Corner::BottomRight: r0 = h - 3; c0 = w - 3; break;
  }
  auto m = patch.mask();
  float* base = images.data() + index * c * h * w;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t cc = 0; cc < 3; ++cc) {
        if (!m[r][cc]) continue;
        float* px = base + (ch * h + r0 + r) * w + (c0 + cc);
        *px = patch.additive ? std::min(1.0f, *px + patch.value) : patch.value;
      }
    }
  }
}

}  // namespace

Dataset poison(const Dataset& ds, const PatchSpec& patch, std::uint64_t seed) {
  if (patch.source_class < 0 || static_cast<std::size_t>(patch.source_class) >= ds.num_classes ||
      patch.target_class < 0 || static_cast<std::size_t>(patch.target_class) >= ds.num_classes) {
    throw ConfigError("poison: source/target class out of range");
  }
  if (patch.fraction <= 0.0 || patch.fraction > 1.0) {
    throw ConfigError("poison: fraction must be in (0,1]");
  }

  std::vector<std::size_t> sources;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] == patch.source_class) sources.push_back(i);
  }
  if (sources.empty()) throw ConfigError("poison: no source-class images");

  // Seed-chosen subset: shuffle the source indices, stamp the first chunk.
  RandomStream rs(seed, 0);
  for (std::size_t i = sources.size(); i > 1; --i) {
    std::size_t j = rs.next_below(i);
    std::swap(sources[i - 1], sources[j]);
  }
  std::size_t n_poison = static_cast<std::size_t>(
      std::floor(patch.fraction * static_cast<double>(sources.size())));
  if (patch.fraction >= 1.0) n_poison = sources.size();

  Dataset out;
  out.images = ds.images;
  out.labels = ds.labels;
  out.num_classes = ds.num_classes;
  out.name = ds.name + "-poisoned";
  for (std::size_t i = 0; i < n_poison; ++i) {
    stamp(out.images, sources[i], patch);
    out.labels[sources[i]] = patch.target_class;
  }
  return out;
}

PredictFn predictor(const Network& net, int threads) {
  return [&net, threads](const Tensor& batch) { return net.predict(batch, threads); };
}

namespace {

struct RateAccum {
  std::uint64_t hits = 0;
  std::uint64_t n = 0;
  double l2 = 0.0;
  double rate() const { return n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0; }
};

}  // namespace

AttackReport bias_attack(const PredictFn& predict, const BiasMaps& maps,
                         const Dataset* signal_inputs, const StimulusStream* noise_inputs,
                         int target_class, const std::vector<double>& gamma_grid,
                         const AttackOptions& opts) {
  if (gamma_grid.empty()) throw ConfigError("bias_attack: empty gamma grid");
  for (std::size_t i = 1; i < gamma_grid.size(); ++i) {
    if (gamma_grid[i] < gamma_grid[i - 1]) throw ConfigError("bias_attack: grid must ascend");
  }
  std::vector<int> targets;
  if (target_class >= 0) {
    if (static_cast<std::size_t>(target_class) >= maps.num_classes()) {
      throw ConfigError("bias_attack: target class out of range");
    }
    if (maps.class_empty(static_cast<std::size_t>(target_class))) {
      throw InsufficientData("bias_attack: empty target map");
    }
    targets = {target_class};
  } else {
    for (std::size_t c = 0; c < maps.num_classes(); ++c) {
      if (!maps.class_empty(c)) targets.push_back(static_cast<int>(c));
    }
    if (targets.empty()) throw InsufficientData("bias_attack: all maps empty");
  }

  AttackReport report;
  report.gamma_grid = gamma_grid;
  report.target_class = target_class;
  report.noise_rate.assign(gamma_grid.size(), 0.0);
  report.signal_rate.assign(gamma_grid.size(), 0.0);
  report.noise_perturb_l2.assign(gamma_grid.size(), 0.0);
  report.signal_perturb_l2.assign(gamma_grid.size(), 0.0);

  const Shape map_shape{maps.means.dim(1), maps.means.dim(2), maps.means.dim(3)};
  const std::size_t px = shape_numel(map_shape);

  auto run_inputs = [&](std::size_t gi, int target, bool is_signal, RateAccum& acc) {
    const Tensor bias = maps.class_map(static_cast<std::size_t>(target));
    double gamma = gamma_grid[gi];
    std::size_t n = is_signal ? (signal_inputs ? std::min(opts.n_signal, signal_inputs->size()) : 0)
                              : (noise_inputs ? opts.n_noise : 0);
    if (n == 0) return;
    const std::size_t kBatch = 256;
    for (std::size_t b0 = 0; b0 < n; b0 += kBatch) {
      std::size_t nb = std::min(n - b0, kBatch);
      Tensor batch({nb, map_shape[0], map_shape[1], map_shape[2]});
      std::vector<bool> counted(nb, true);
      double l2_batch = 0.0;
      for (std::size_t i = 0; i < nb; ++i) {
        Tensor input = is_signal ? signal_inputs->image(b0 + i)
                                 : noise_inputs->at(b0 + i);
        if (is_signal && opts.exclude_own_class &&
            signal_inputs->labels[b0 + i] == target) {
          counted[i] = false;
        }
        Tensor mixed = mix(bias, input, gamma);  // bias plays the signal role
        l2_batch += l2_distance(mixed, input);
        std::memcpy(batch.data() + i * px, mixed.data(), px * sizeof(float));
      }
      std::vector<int> preds = predict(batch);
      for (std::size_t i = 0; i < nb; ++i) {
        if (!counted[i]) continue;
        acc.n++;
        if (preds[i] == target) acc.hits++;
      }
      acc.l2 += l2_batch;
    }
  };

  for (std::size_t gi = 0; gi < gamma_grid.size(); ++gi) {
    double noise_rate_sum = 0.0, signal_rate_sum = 0.0;
    double noise_l2 = 0.0, signal_l2 = 0.0;
    std::size_t noise_targets = 0, signal_targets = 0;
    for (int target : targets) {
      if (noise_inputs) {
        RateAccum acc;
        run_inputs(gi, target, false, acc);
        if (acc.n) {
          noise_rate_sum += acc.rate();
          noise_l2 += acc.l2 / static_cast<double>(acc.n);
          noise_targets++;
        }
      }
      if (signal_inputs) {
        RateAccum acc;
        run_inputs(gi, target, true, acc);
        if (acc.n) {
          signal_rate_sum += acc.rate();
          signal_l2 += acc.l2 / static_cast<double>(acc.n);
          signal_targets++;
        }
      }
    }
    if (noise_targets) {
      report.noise_rate[gi] = noise_rate_sum / static_cast<double>(noise_targets);
      report.noise_perturb_l2[gi] = noise_l2 / static_cast<double>(noise_targets);
    }
    if (signal_targets) {
      report.signal_rate[gi] = signal_rate_sum / static_cast<double>(signal_targets);
      report.signal_perturb_l2[gi] = signal_l2 / static_cast<double>(signal_targets);
    }
  }
  return report;
}

namespace {

// Mean over the intersection of a (2r+1)-square window with the image.
Tensor box_smooth(const Tensor& plane, std::size_t h, std::size_t w, std::size_t size) {
  std::size_t r = size / 2;
  Tensor out({h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t y0 = y >= r ? y - r : 0;
      std::size_t y1 = std::min(h - 1, y + r);
      std::size_t x0 = x >= r ? x - r : 0;
      std::size_t x1 = std::min(w - 1, x + r);
      double s = 0.0;
      for (std::size_t yy = y0; yy <= y1; ++yy) {
        for (std::size_t xx = x0; xx <= x1; ++xx) s += plane[yy * w + xx];
      }
      out.at2(y, x) = static_cast<float>(s / static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1)));
    }
  }
  return out;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    std::nth_element(v.begin(), v.begin() + mid - 1, v.end());
    m = 0.5 * (m + v[mid - 1]);
  }
  return m;
}

}  // namespace

DetectionReport detect_patch(const BiasMaps& maps, const DetectOptions& opts) {
  const std::size_t k = maps.num_classes();
  const std::size_t c = maps.means.dim(1);
  const std::size_t h = maps.means.dim(2);
  const std::size_t w = maps.means.dim(3);
  const std::size_t wr = opts.window / 2;

  DetectionReport rep;
  rep.threshold = opts.threshold_z;
  rep.heatmap = Tensor({k, h, w});
  rep.max_z.assign(k, 0.0);
  rep.peak.assign(k, {0, 0});

  for (std::size_t cls = 0; cls < k; ++cls) {
    if (maps.class_empty(cls)) continue;
    // Channel-collapsed map.
    Tensor plane({h, w});
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* src = maps.means.data() + (cls * c + ch) * h * w;
      for (std::size_t i = 0; i < h * w; ++i) plane[i] += src[i] / static_cast<float>(c);
    }
    Tensor smooth = box_smooth(plane, h, w, opts.smooth);
    Tensor resid({h, w});
    for (std::size_t i = 0; i < h * w; ++i) resid[i] = std::abs(plane[i] - smooth[i]);

    // |residual| pooled over the detection window.
    Tensor stat({h, w});
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        std::size_t y0 = y >= wr ? y - wr : 0;
        std::size_t y1 = std::min(h - 1, y + wr);
        std::size_t x0 = x >= wr ? x - wr : 0;
        std::size_t x1 = std::min(w - 1, x + wr);
        double s = 0.0;
        for (std::size_t yy = y0; yy <= y1; ++yy) {
          for (std::size_t xx = x0; xx <= x1; ++xx) s += resid[yy * w + xx];
        }
        stat.at2(y, x) = static_cast<float>(s / static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1)));
      }
    }

    std::vector<double> values(stat.data(), stat.data() + h * w);
    double med = median_of(values);
    std::vector<double> dev(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) dev[i] = std::abs(values[i] - med);
    double mad = median_of(dev);
    double scale = 1.4826 * mad + 1e-12;

    double best = -1e300;
    std::size_t best_y = 0, best_x = 0;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double z = (stat.at2(y, x) - med) / scale;
        rep.heatmap[(cls * h + y) * w + x] = static_cast<float>(z);
        if (z > best) {
          best = z;
          best_y = y;
          best_x = x;
        }
      }
    }
    rep.max_z[cls] = best;
    rep.peak[cls] = {best_y, best_x};
    if (best > opts.threshold_z && (!rep.flagged || best > rep.max_z[rep.flagged_class])) {
      rep.flagged = true;
      rep.flagged_class = static_cast<int>(cls);
      rep.flagged_row = best_y;
      rep.flagged_col = best_x;
    }
  }
  return rep;
}

GradientBaselineReport gradient_baseline(const Network& net, const Dataset& ds,
                                         const DetectOptions& opts, int threads) {
  GradientBaselineReport rep;
  rep.gradients = input_gradient(net, ds, threads);
  BiasMaps as_maps = BiasMaps::from_templates(rep.gradients, "input_gradients");
  rep.detection = detect_patch(as_maps, opts);
  return rep;
}

}  // namespace noisebench
