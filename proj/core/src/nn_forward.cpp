#include <algorithm>
#include <cmath>
#include <cstring>

#include "noisebench/errors.hpp"
#include "noisebench/linalg.hpp"
#include "noisebench/nn.hpp"
#include "noisebench/parallel.hpp"
#include "nn_detail.hpp"

namespace noisebench {

namespace detail {

void im2col_t(const float* src, std::size_t c_in, std::size_t h, std::size_t w,
              std::size_t kh, std::size_t kw, std::size_t pad, std::size_t oh, std::size_t ow,
              float* cols) {
  // cols is (c_in*kh*kw) x (oh*ow); row r = (c*kh + i)*kw + j holds the input
  // value at (c, y+i-pad, x+j-pad) for each output cell (y, x).
  std::size_t p_total = oh * ow;
  for (std::size_t c = 0; c < c_in; ++c) {
    const float* plane = src + c * h * w;
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        float* row = cols + ((c * kh + i) * kw + j) * p_total;
        for (std::size_t y = 0; y < oh; ++y) {
          long sy = static_cast<long>(y + i) - static_cast<long>(pad);
          float* dst = row + y * ow;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(dst, dst + ow, 0.0f);
            continue;
          }
          const float* srow = plane + static_cast<std::size_t>(sy) * w;
          long sx0 = -static_cast<long>(pad) + static_cast<long>(j);
          // Valid x range: 0 <= sx0 + x < w
          long x_lo = std::max<long>(0, -sx0);
          long x_hi = std::min<long>(static_cast<long>(ow), static_cast<long>(w) - sx0);
          if (x_lo > 0) std::fill(dst, dst + x_lo, 0.0f);
          if (x_hi > x_lo) {
            std::memcpy(dst + x_lo, srow + sx0 + x_lo,
                        static_cast<std::size_t>(x_hi - x_lo) * sizeof(float));
          }
          if (x_hi < static_cast<long>(ow)) {
            std::fill(dst + std::max<long>(x_hi, 0), dst + ow, 0.0f);
          }
        }
      }
    }
  }
}

void im2col_rm(const float* src, std::size_t c_in, std::size_t h, std::size_t w,
               std::size_t kh, std::size_t kw, std::size_t pad, std::size_t oh, std::size_t ow,
               float* cols) {
  const std::size_t kdim = c_in * kh * kw;
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      float* row = cols + (y * ow + x) * kdim;
      for (std::size_t c = 0; c < c_in; ++c) {
        const float* plane = src + c * h * w;
        for (std::size_t i = 0; i < kh; ++i) {
          long sy = static_cast<long>(y + i) - static_cast<long>(pad);
          float* dst = row + (c * kh + i) * kw;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(dst, dst + kw, 0.0f);
            continue;
          }
          const float* srow = plane + static_cast<std::size_t>(sy) * w;
          long sx0 = static_cast<long>(x) - static_cast<long>(pad);
          long j_lo = std::max<long>(0, -sx0);
          long j_hi = std::min<long>(static_cast<long>(kw), static_cast<long>(w) - sx0);
          if (j_lo > 0) std::fill(dst, dst + j_lo, 0.0f);
          if (j_hi > j_lo) {
            std::memcpy(dst + j_lo, srow + sx0 + j_lo,
                        static_cast<std::size_t>(j_hi - j_lo) * sizeof(float));
          }
          if (j_hi < static_cast<long>(kw)) {
            std::fill(dst + std::max<long>(j_hi, 0), dst + kw, 0.0f);
          }
        }
      }
    }
  }
}

void col2im_t(const float* cols, std::size_t c_in, std::size_t h, std::size_t w,
              std::size_t kh, std::size_t kw, std::size_t pad, std::size_t oh, std::size_t ow,
              float* dst) {
  std::size_t p_total = oh * ow;
  std::fill(dst, dst + c_in * h * w, 0.0f);
  for (std::size_t c = 0; c < c_in; ++c) {
    float* plane = dst + c * h * w;
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const float* row = cols + ((c * kh + i) * kw + j) * p_total;
        for (std::size_t y = 0; y < oh; ++y) {
          long sy = static_cast<long>(y + i) - static_cast<long>(pad);
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          float* drow = plane + static_cast<std::size_t>(sy) * w;
          const float* srow = row + y * ow;
          long sx0 = -static_cast<long>(pad) + static_cast<long>(j);
          long x_lo = std::max<long>(0, -sx0);
          long x_hi = std::min<long>(static_cast<long>(ow), static_cast<long>(w) - sx0);
          for (long x = x_lo; x < x_hi; ++x) drow[sx0 + x] += srow[x];
        }
      }
    }
  }
}

void SampleCtx::prepare(const Network& net) {
  const auto& layers = net.layers();
  acts.resize(layers.size() + 1);
  acts[0].resize(shape_numel(net.input_shape()));
  pool_codes.assign(layers.size(), {});
  std::size_t max_cols = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    acts[i + 1].resize(shape_numel(layers[i].out_shape));
    if (layers[i].spec.kind == LayerKind::MaxPool2) {
      pool_codes[i].resize(shape_numel(layers[i].out_shape));
    } else if (layers[i].spec.kind == LayerKind::Conv2d) {
      std::size_t k = layers[i].in_shape[0] * layers[i].spec.kernel_h * layers[i].spec.kernel_w;
      std::size_t p = layers[i].out_shape[1] * layers[i].out_shape[2];
      max_cols = std::max(max_cols, k * p);
    }
  }
  cols.resize(max_cols);
}

void run_sample(const Network& net, const float* input, SampleCtx& ctx, const RunHooks& hooks) {
  const auto& layers = net.layers();
  std::memcpy(ctx.acts[0].data(), input, ctx.acts[0].size() * sizeof(float));

  for (std::size_t li = 0; li < layers.size(); ++li) {
    const Layer& l = layers[li];
    const float* x = ctx.acts[li].data();
    float* out = ctx.acts[li + 1].data();
    switch (l.spec.kind) {
      case LayerKind::Conv2d: {
        std::size_t c_in = l.in_shape[0], h = l.in_shape[1], w = l.in_shape[2];
        std::size_t oh = l.out_shape[1], ow = l.out_shape[2];
        std::size_t pad = l.spec.padding == Padding::Same ? (l.spec.kernel_h - 1) / 2 : 0;
        std::size_t kdim = c_in * l.spec.kernel_h * l.spec.kernel_w;
        std::size_t p = oh * ow;
        im2col_t(x, c_in, h, w, l.spec.kernel_h, l.spec.kernel_w, pad, oh, ow, ctx.cols.data());
        gemm_nn(l.weights.data(), ctx.cols.data(), out, l.spec.out_maps, kdim, p, false, 1);
        for (std::size_t m = 0; m < l.spec.out_maps; ++m) {
          float b = l.bias[m];
          if (hooks.bias_delta_layer == li) b += hooks.bias_delta[m];
          float* om = out + m * p;
          for (std::size_t q = 0; q < p; ++q) om[q] += b;
        }
        break;
      }
      case LayerKind::MaxPool2: {
        std::size_t c = l.in_shape[0], h = l.in_shape[1], w = l.in_shape[2];
        std::size_t oh = l.out_shape[1], ow = l.out_shape[2];
        std::uint8_t* codes = ctx.pool_codes[li].data();
        for (std::size_t m = 0; m < c; ++m) {
          const float* plane = x + m * h * w;
          float* oplane = out + m * oh * ow;
          std::uint8_t* cplane = codes + m * oh * ow;
          for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xx = 0; xx < ow; ++xx) {
              const float* cell = plane + (2 * y) * w + 2 * xx;
              // Scan order TL, TR, BL, BR; strict > keeps ties at the top-left.
              float best = cell[0];
              std::uint8_t code = 0;
              if (cell[1] > best) { best = cell[1]; code = 1; }
              if (cell[w] > best) { best = cell[w]; code = 2; }
              if (cell[w + 1] > best) { best = cell[w + 1]; code = 3; }
              oplane[y * ow + xx] = best;
              cplane[y * ow + xx] = code;
            }
          }
        }
        break;
      }
      case LayerKind::Dense: {
        std::size_t in_n = l.weights.dim(0), out_n = l.weights.dim(1);
        for (std::size_t j = 0; j < out_n; ++j) {
          out[j] = l.bias[j];
          if (hooks.bias_delta_layer == li) out[j] += hooks.bias_delta[j];
        }
        const float* wp = l.weights.data();
        for (std::size_t i = 0; i < in_n; ++i) {
          float xv = x[i];
          if (xv == 0.0f) continue;
          const float* wrow = wp + i * out_n;
          for (std::size_t j = 0; j < out_n; ++j) out[j] += xv * wrow[j];
        }
        break;
      }
      case LayerKind::Activation: {
        std::size_t n = ctx.acts[li + 1].size();
        switch (l.spec.fn) {
          case ActFn::Relu:
            for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
            break;
          case ActFn::Tanh:
            for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
            break;
          case ActFn::Softmax: {
            float mx = x[0];
            for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              out[i] = std::exp(x[i] - mx);
              sum += out[i];
            }
            float inv = static_cast<float>(1.0 / sum);
            for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
            break;
          }
        }
        break;
      }
    }
    if (hooks.inject_layer == li) {
      float g = static_cast<float>(hooks.inject_gamma);
      const float* inj = hooks.inject_values;
      for (std::size_t i = 0; i < ctx.acts[li + 1].size(); ++i) {
        out[i] = g * out[i] + (1.0f - g) * inj[i];
      }
    }
    if (hooks.stop_after_layer == li) return;
  }
}

}  // namespace detail

const Tensor* ForwardTrace::find(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return &activations[i];
  }
  return nullptr;
}

namespace {

Shape batch_shape(std::size_t n, const Shape& per_sample) {
  Shape s{n};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

// Bias deltas per sample for the stimulation layer, from unstimmed
// activations: delta_m = lambda * k * sum_i(a_mi) / max(a) over the layer,
// zero when the layer is silent (max <= 0).
Tensor stim_deltas(const Network& net, const Tensor& batch, const StimulationConfig& stim,
                   int threads) {
  std::size_t hook_idx = net.hook_layer_index(stim.layer_name);
  std::size_t maps = net.hook_maps(stim.layer_name);
  const Shape& hshape = net.layers()[hook_idx].out_shape;
  std::size_t per_map = shape_numel(hshape) / maps;
  const std::size_t n = batch.dim(0);

  ForwardOptions plain;
  plain.trace_layers = {stim.layer_name};
  plain.threads = threads;
  ForwardTrace trace;
  net.forward(batch, plain, &trace);
  const Tensor* acts = trace.find(stim.layer_name);

  Tensor deltas({n, maps});
  auto fill_row = [&](std::size_t row, const float* a) {
    float mx = a[0];
    for (std::size_t i = 1; i < maps * per_map; ++i) mx = std::max(mx, a[i]);
    if (mx <= 0.0f) return;  // silent layer on this stimulus: no stimulation
    for (std::size_t m = 0; m < maps; ++m) {
      double s = 0.0;
      const float* am = a + m * per_map;
      for (std::size_t i = 0; i < per_map; ++i) s += am[i];
      deltas.at2(row, m) = static_cast<float>(stim.lambda * stim.k * s / mx);
    }
  };

  if (stim.mode == StimulationConfig::Mode::BatchMean) {
    std::vector<double> mean(maps * per_map, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const float* a = acts->data() + r * maps * per_map;
      for (std::size_t i = 0; i < maps * per_map; ++i) mean[i] += a[i];
    }
    std::vector<float> meanf(maps * per_map);
    for (std::size_t i = 0; i < maps * per_map; ++i) {
      meanf[i] = static_cast<float>(mean[i] / static_cast<double>(n));
    }
    fill_row(0, meanf.data());
    for (std::size_t r = 1; r < n; ++r) {
      for (std::size_t m = 0; m < maps; ++m) deltas.at2(r, m) = deltas.at2(0, m);
    }
  } else {
    for (std::size_t r = 0; r < n; ++r) {
      fill_row(r, acts->data() + r * maps * per_map);
    }
  }
  return deltas;
}

}  // namespace

Tensor Network::forward(const Tensor& batch) const {
  ForwardOptions opts;
  return forward(batch, opts, nullptr);
}

Tensor Network::forward(const Tensor& batch, const ForwardOptions& opts,
                        ForwardTrace* trace) const {
  if (batch.ndim() != input_shape_.size() + 1) {
    throw ShapeError("forward: batch must be N x " + shape_str(input_shape_));
  }
  for (std::size_t i = 0; i < input_shape_.size(); ++i) {
    if (batch.dim(i + 1) != input_shape_[i]) {
      throw ShapeError("forward: batch " + shape_str(batch.shape()) + " does not match input " +
                       shape_str(input_shape_));
    }
  }
  const std::size_t n = batch.dim(0);

  std::size_t stim_param = SIZE_MAX, inject_layer = SIZE_MAX;
  Tensor deltas;
  if (opts.stim) {
    stim_param = hook_param_index(opts.stim->layer_name);
    deltas = stim_deltas(*this, batch, *opts.stim, opts.threads);
  }
  if (opts.inject) {
    if (opts.inject->gamma < 0.0 || opts.inject->gamma > 1.0) {
      throw ConfigError("injection gamma must be in [0,1]");
    }
    inject_layer = hook_layer_index(opts.inject->layer_name);
    const Shape& hs = layers_[inject_layer].out_shape;
    if (opts.inject->injected.numel() != shape_numel(hs)) {
      throw ShapeError("injection tensor " + shape_str(opts.inject->injected.shape()) +
                       " does not match layer activation " + shape_str(hs));
    }
    if (opts.stim && hook_param_index(opts.stim->layer_name) ==
                         hook_param_index(opts.inject->layer_name)) {
      throw ConfigError("stimulation and injection cannot target the same layer");
    }
  }

  // Trace allocation.
  std::vector<std::size_t> capture_layer;  // layer index per captured name
  std::size_t stop_after = SIZE_MAX;
  if (trace) {
    trace->names.clear();
    trace->activations.clear();
    std::vector<std::string> wanted =
        opts.trace_layers.empty() ? hook_names() : opts.trace_layers;
    for (const auto& name : wanted) {
      std::size_t li = hook_layer_index(name);
      trace->names.push_back(name);
      trace->activations.emplace_back(batch_shape(n, layers_[li].out_shape));
      capture_layer.push_back(li);
    }
    trace->stim_delta = deltas;
    if (opts.stop_at_trace && !capture_layer.empty()) {
      stop_after = *std::max_element(capture_layer.begin(), capture_layer.end());
    }
  }
  const bool full_run = stop_after == SIZE_MAX;

  Tensor output;
  if (full_run) output = Tensor(batch_shape(n, layers_.back().out_shape));
  const std::size_t out_sz = shape_numel(layers_.back().out_shape);
  const std::size_t in_sz = shape_numel(input_shape_);

  parallel_for(0, n, [&](std::size_t lo, std::size_t hi) {
    detail::SampleCtx ctx;
    ctx.prepare(*this);
    for (std::size_t s = lo; s < hi; ++s) {
      detail::RunHooks hooks;
      hooks.stop_after_layer = stop_after;
      if (stim_param != SIZE_MAX) {
        hooks.bias_delta_layer = stim_param;
        hooks.bias_delta = deltas.data() + s * deltas.dim(1);
      }
      if (inject_layer != SIZE_MAX) {
        hooks.inject_layer = inject_layer;
        hooks.inject_values = opts.inject->injected.data();
        hooks.inject_gamma = opts.inject->gamma;
      }
      detail::run_sample(*this, batch.data() + s * in_sz, ctx, hooks);
      if (full_run) {
        std::memcpy(output.data() + s * out_sz, ctx.acts.back().data(), out_sz * sizeof(float));
      }
      for (std::size_t t = 0; t < capture_layer.size(); ++t) {
        const auto& a = ctx.acts[capture_layer[t] + 1];
        std::memcpy(trace->activations[t].data() + s * a.size(), a.data(),
                    a.size() * sizeof(float));
      }
    }
  }, opts.threads);

  if (full_run) output.ensure_finite("forward");
  return output;
}

std::vector<int> Network::predict(const Tensor& batch, int threads) const {
  ForwardOptions opts;
  opts.threads = threads;
  Tensor out = forward(batch, opts, nullptr);
  const std::size_t n = batch.dim(0);
  const std::size_t k = out.numel() / n;
  std::vector<int> preds(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = out.data() + i * k;
    int best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = static_cast<int>(j);
    }
    preds[i] = best;
  }
  return preds;
}

}  // namespace noisebench
