#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "noisebench/errors.hpp"
#include "noisebench/linalg.hpp"
#include "noisebench/nn.hpp"
#include "noisebench/parallel.hpp"
#include "noisebench/random.hpp"
#include "nn_detail.hpp"

namespace noisebench {

namespace detail {

void GradBuffers::prepare(const Network& net) {
  const auto& layers = net.layers();
  dw.resize(layers.size());
  db.resize(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    dw[i].assign(layers[i].weights.numel(), 0.0f);
    db[i].assign(layers[i].bias.size(), 0.0f);
  }
}

void GradBuffers::clear() {
  for (auto& v : dw) std::fill(v.begin(), v.end(), 0.0f);
  for (auto& v : db) std::fill(v.begin(), v.end(), 0.0f);
}

void backward_sample(const Network& net, SampleCtx& ctx, const std::vector<float>& dlogits,
                     GradBuffers* grads, float* dx) {
  const auto& layers = net.layers();
  std::size_t start = layers.size();
  // Softmax + cross-entropy is fused: dlogits is already the gradient at the
  // softmax input, so the softmax layer itself is skipped.
  if (!layers.empty() && layers.back().spec.kind == LayerKind::Activation &&
      layers.back().spec.fn == ActFn::Softmax) {
    start = layers.size() - 1;
  }

  std::vector<float> g = dlogits;
  std::vector<float> g_next;
  std::vector<float> dcols;

  for (std::size_t li = start; li-- > 0;) {
    const Layer& l = layers[li];
    const float* x = ctx.acts[li].data();
    const float* out = ctx.acts[li + 1].data();
    switch (l.spec.kind) {
      case LayerKind::Activation: {
        std::size_t n = ctx.acts[li + 1].size();
        if (l.spec.fn == ActFn::Relu) {
          for (std::size_t i = 0; i < n; ++i) {
            if (out[i] <= 0.0f) g[i] = 0.0f;
          }
        } else if (l.spec.fn == ActFn::Tanh) {
          for (std::size_t i = 0; i < n; ++i) g[i] *= 1.0f - out[i] * out[i];
        } else {
          // Standalone softmax backward (only reachable when softmax is not
          // the fused head, which build_network does not produce).
          double dot = 0.0;
          for (std::size_t i = 0; i < n; ++i) dot += static_cast<double>(g[i]) * out[i];
          for (std::size_t i = 0; i < n; ++i) {
            g[i] = out[i] * (g[i] - static_cast<float>(dot));
          }
        }
        break;
      }
      case LayerKind::Dense: {
        std::size_t in_n = l.weights.dim(0), out_n = l.weights.dim(1);
        if (grads) {
          float* dwp = grads->dw[li].data();
          for (std::size_t i = 0; i < in_n; ++i) {
            float xv = x[i];
            if (xv == 0.0f) continue;
            float* drow = dwp + i * out_n;
            for (std::size_t j = 0; j < out_n; ++j) drow[j] += xv * g[j];
          }
          float* dbp = grads->db[li].data();
          for (std::size_t j = 0; j < out_n; ++j) dbp[j] += g[j];
        }
        g_next.assign(in_n, 0.0f);
        gemm_nt(g.data(), l.weights.data(), g_next.data(), 1, out_n, in_n, false, 1);
        g.swap(g_next);
        break;
      }
      case LayerKind::MaxPool2: {
        std::size_t c = l.in_shape[0], h = l.in_shape[1], w = l.in_shape[2];
        std::size_t oh = l.out_shape[1], ow = l.out_shape[2];
        g_next.assign(c * h * w, 0.0f);
        const std::uint8_t* codes = ctx.pool_codes[li].data();
        for (std::size_t m = 0; m < c; ++m) {
          float* dplane = g_next.data() + m * h * w;
          const float* gplane = g.data() + m * oh * ow;
          const std::uint8_t* cplane = codes + m * oh * ow;
          for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xx = 0; xx < ow; ++xx) {
              std::uint8_t code = cplane[y * ow + xx];
              std::size_t sy = 2 * y + (code >> 1);
              std::size_t sx = 2 * xx + (code & 1);
              dplane[sy * w + sx] += gplane[y * ow + xx];
            }
          }
        }
        g.swap(g_next);
        break;
      }
      case LayerKind::Conv2d: {
        std::size_t c_in = l.in_shape[0], h = l.in_shape[1], w = l.in_shape[2];
        std::size_t oh = l.out_shape[1], ow = l.out_shape[2];
        std::size_t pad = l.spec.padding == Padding::Same ? (l.spec.kernel_h - 1) / 2 : 0;
        std::size_t kdim = c_in * l.spec.kernel_h * l.spec.kernel_w;
        std::size_t p = oh * ow;
        if (grads) {
          // Rebuild the columns row-major; dW = g * cols then runs on the
          // contiguous-inner gemm path.
          im2col_rm(x, c_in, h, w, l.spec.kernel_h, l.spec.kernel_w, pad, oh, ow,
                    ctx.cols.data());
          gemm_nn(g.data(), ctx.cols.data(), grads->dw[li].data(), l.spec.out_maps, p, kdim,
                  true, 1);
          float* dbp = grads->db[li].data();
          for (std::size_t m = 0; m < l.spec.out_maps; ++m) {
            const float* gm = g.data() + m * p;
            float s = 0.0f;
            for (std::size_t q = 0; q < p; ++q) s += gm[q];
            dbp[m] += s;
          }
        }
        dcols.assign(kdim * p, 0.0f);
        gemm_tn(l.weights.data(), g.data(), dcols.data(), kdim, l.spec.out_maps, p, false, 1);
        g_next.assign(c_in * h * w, 0.0f);
        col2im_t(dcols.data(), c_in, h, w, l.spec.kernel_h, l.spec.kernel_w, pad, oh, ow,
                 g_next.data());
        g.swap(g_next);
        break;
      }
    }
  }
  if (dx) std::memcpy(dx, g.data(), g.size() * sizeof(float));
}

}  // namespace detail

namespace {

constexpr std::size_t kTrainChunks = 8;   // fixed so results are thread-count invariant
constexpr std::size_t kEvalBatch = 512;
constexpr std::uint64_t kShuffleStreamBase = 0x9000000000000000ull;

struct ChunkStats {
  double loss = 0.0;
  std::size_t correct = 0;
};

}  // namespace

std::vector<EpochStats> train(Network& net, const Dataset& train_set, const TrainConfig& cfg) {
  if (train_set.size() == 0) throw ConfigError("train: empty dataset");
  for (int l : train_set.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= net.num_classes()) {
      throw ConfigError("train: label out of range for network");
    }
  }
  const std::size_t n = train_set.size();
  const std::size_t in_sz = shape_numel(net.input_shape());
  const std::size_t k = net.num_classes();
  auto& layers = net.layers();

  // Momentum state.
  std::vector<std::vector<float>> vel_w(layers.size()), vel_b(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    vel_w[i].assign(layers[i].weights.numel(), 0.0f);
    vel_b[i].assign(layers[i].bias.size(), 0.0f);
  }

  std::vector<std::size_t> order(n);
  std::vector<EpochStats> history;

  const std::size_t chunk_sz = std::max<std::size_t>(1, (cfg.batch_size + kTrainChunks - 1) / kTrainChunks);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Seed-driven shuffle, one stream per epoch.
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    RandomStream shuffle_rs(cfg.seed, kShuffleStreamBase + epoch);
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = shuffle_rs.next_below(i);
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss = 0.0;
    std::size_t epoch_correct = 0;

    for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
      std::size_t b1 = std::min(n, b0 + cfg.batch_size);
      std::size_t bs = b1 - b0;
      std::size_t n_chunks = (bs + chunk_sz - 1) / chunk_sz;

      std::vector<detail::GradBuffers> partials(n_chunks);
      std::vector<ChunkStats> stats(n_chunks);

      parallel_for(0, n_chunks, [&](std::size_t clo, std::size_t chi) {
        detail::SampleCtx ctx;
        ctx.prepare(net);
        std::vector<float> dlogits(k);
        for (std::size_t c = clo; c < chi; ++c) {
          partials[c].prepare(net);
          std::size_t lo = b0 + c * chunk_sz;
          std::size_t hi = std::min(b1, lo + chunk_sz);
          for (std::size_t s = lo; s < hi; ++s) {
            std::size_t idx = order[s];
            detail::run_sample(net, train_set.images.data() + idx * in_sz, ctx, {});
            const float* probs = ctx.acts.back().data();
            int label = train_set.labels[idx];
            double p = std::max(static_cast<double>(probs[label]), 1e-12);
            stats[c].loss += -std::log(p);
            int pred = 0;
            for (std::size_t j = 1; j < k; ++j) {
              if (probs[j] > probs[pred]) pred = static_cast<int>(j);
            }
            if (pred == label) stats[c].correct++;
            for (std::size_t j = 0; j < k; ++j) {
              dlogits[j] = probs[j] - (static_cast<int>(j) == label ? 1.0f : 0.0f);
            }
            detail::backward_sample(net, ctx, dlogits, &partials[c], nullptr);
          }
        }
      }, cfg.threads);

      // Fold chunk partials in chunk order, then apply the SGD step.
      double batch_loss = 0.0;
      for (std::size_t c = 0; c < n_chunks; ++c) {
        batch_loss += stats[c].loss;
        epoch_correct += stats[c].correct;
      }
      epoch_loss += batch_loss;
      if (!std::isfinite(batch_loss)) {
        throw TrainingDiverged("train: loss is not finite at epoch " + std::to_string(epoch));
      }

      const float scale = static_cast<float>(cfg.learning_rate / static_cast<double>(bs));
      const float mu = static_cast<float>(cfg.momentum);
      for (std::size_t li = 0; li < layers.size(); ++li) {
        if (layers[li].weights.numel() == 0) continue;
        float* w = layers[li].weights.data();
        float* vw = vel_w[li].data();
        for (std::size_t c = 1; c < n_chunks; ++c) {
          const float* src = partials[c].dw[li].data();
          float* dst = partials[0].dw[li].data();
          for (std::size_t i = 0; i < layers[li].weights.numel(); ++i) dst[i] += src[i];
        }
        const float* dw = partials[0].dw[li].data();
        for (std::size_t i = 0; i < layers[li].weights.numel(); ++i) {
          vw[i] = mu * vw[i] - scale * dw[i];
          w[i] += vw[i];
        }
        float* bias = layers[li].bias.data();
        float* vb = vel_b[li].data();
        for (std::size_t c = 1; c < n_chunks; ++c) {
          const float* src = partials[c].db[li].data();
          float* dst = partials[0].db[li].data();
          for (std::size_t i = 0; i < layers[li].bias.size(); ++i) dst[i] += src[i];
        }
        const float* db = partials[0].db[li].data();
        for (std::size_t i = 0; i < layers[li].bias.size(); ++i) {
          vb[i] = mu * vb[i] - scale * db[i];
          bias[i] += vb[i];
        }
      }
    }

    EpochStats es;
    es.loss = epoch_loss / static_cast<double>(n);
    es.accuracy = static_cast<double>(epoch_correct) / static_cast<double>(n);
    history.push_back(es);
    if (cfg.verbose) {
      std::fprintf(stderr, "epoch %zu  loss %.4f  acc %.4f\n", epoch + 1, es.loss, es.accuracy);
    }
  }
  return history;
}

Gradients parameter_gradients(const Network& net, const Tensor& batch,
                              const std::vector<int>& labels) {
  const std::size_t n = batch.dim(0);
  if (labels.size() != n) throw ShapeError("parameter_gradients: label count mismatch");
  const std::size_t in_sz = shape_numel(net.input_shape());
  const std::size_t k = net.num_classes();

  detail::SampleCtx ctx;
  ctx.prepare(net);
  detail::GradBuffers grads;
  grads.prepare(net);
  std::vector<float> dlogits(k);
  double loss = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    detail::run_sample(net, batch.data() + s * in_sz, ctx, {});
    const float* probs = ctx.acts.back().data();
    int label = labels[s];
    loss += -std::log(std::max(static_cast<double>(probs[label]), 1e-12));
    for (std::size_t j = 0; j < k; ++j) {
      dlogits[j] = probs[j] - (static_cast<int>(j) == label ? 1.0f : 0.0f);
    }
    detail::backward_sample(net, ctx, dlogits, &grads, nullptr);
  }

  Gradients out;
  out.loss = loss / static_cast<double>(n);
  const float inv = 1.0f / static_cast<float>(n);
  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    const Layer& l = net.layers()[li];
    Tensor dw(l.weights.numel() ? l.weights.shape() : Shape{1});
    if (l.weights.numel()) {
      for (std::size_t i = 0; i < l.weights.numel(); ++i) dw[i] = grads.dw[li][i] * inv;
    }
    out.dw.push_back(std::move(dw));
    std::vector<float> db(l.bias.size());
    for (std::size_t i = 0; i < db.size(); ++i) db[i] = grads.db[li][i] * inv;
    out.db.push_back(std::move(db));
  }
  return out;
}

EvalResult evaluate(const Network& net, const Dataset& test_set, int threads) {
  const std::size_t n = test_set.size();
  const std::size_t in_sz = shape_numel(net.input_shape());
  EvalResult res;
  res.confusion = ConfusionMatrix(net.num_classes());
  for (std::size_t b0 = 0; b0 < n; b0 += kEvalBatch) {
    std::size_t b1 = std::min(n, b0 + kEvalBatch);
    Tensor batch({b1 - b0, net.input_shape()[0], net.input_shape()[1], net.input_shape()[2]});
    std::memcpy(batch.data(), test_set.images.data() + b0 * in_sz,
                (b1 - b0) * in_sz * sizeof(float));
    std::vector<int> preds = net.predict(batch, threads);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      res.confusion.at(static_cast<std::size_t>(test_set.labels[b0 + i]),
                       static_cast<std::size_t>(preds[i]))++;
    }
  }
  res.accuracy = res.confusion.accuracy();
  return res;
}

Tensor input_gradient(const Network& net, const Dataset& ds, int threads) {
  const std::size_t n = ds.size();
  const std::size_t in_sz = shape_numel(net.input_shape());
  const std::size_t k = net.num_classes();
  const std::size_t kChunk = 256;  // fixed chunk, fold in chunk order
  const std::size_t n_chunks = (n + kChunk - 1) / kChunk;

  std::vector<std::vector<double>> sums(n_chunks);
  std::vector<std::vector<std::size_t>> counts(n_chunks);

  parallel_for(0, n_chunks, [&](std::size_t clo, std::size_t chi) {
    detail::SampleCtx ctx;
    ctx.prepare(net);
    std::vector<float> dlogits(k), dx(in_sz);
    for (std::size_t c = clo; c < chi; ++c) {
      sums[c].assign(k * in_sz, 0.0);
      counts[c].assign(k, 0);
      std::size_t lo = c * kChunk;
      std::size_t hi = std::min(n, lo + kChunk);
      for (std::size_t s = lo; s < hi; ++s) {
        detail::run_sample(net, ds.images.data() + s * in_sz, ctx, {});
        const float* probs = ctx.acts.back().data();
        int label = ds.labels[s];
        for (std::size_t j = 0; j < k; ++j) {
          dlogits[j] = probs[j] - (static_cast<int>(j) == label ? 1.0f : 0.0f);
        }
        detail::backward_sample(net, ctx, dlogits, nullptr, dx.data());
        double* acc = sums[c].data() + static_cast<std::size_t>(label) * in_sz;
        for (std::size_t i = 0; i < in_sz; ++i) acc[i] += dx[i];
        counts[c][static_cast<std::size_t>(label)]++;
      }
    }
  }, threads);

  std::vector<double> total(k * in_sz, 0.0);
  std::vector<std::size_t> total_counts(k, 0);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    for (std::size_t i = 0; i < k * in_sz; ++i) total[i] += sums[c][i];
    for (std::size_t j = 0; j < k; ++j) total_counts[j] += counts[c][j];
  }

  Tensor out({k, net.input_shape()[0], net.input_shape()[1], net.input_shape()[2]});
  for (std::size_t j = 0; j < k; ++j) {
    double inv = total_counts[j] ? 1.0 / static_cast<double>(total_counts[j]) : 0.0;
    for (std::size_t i = 0; i < in_sz; ++i) {
      out[j * in_sz + i] = static_cast<float>(total[j * in_sz + i] * inv);
    }
  }
  return out;
}

}  // namespace noisebench
