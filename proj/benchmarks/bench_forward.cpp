#include <benchmark/benchmark.h>

#include "noisebench/dataset.hpp"
#include "noisebench/nn.hpp"
#include "noisebench/noise.hpp"

using namespace noisebench;

namespace {

Tensor noise_batch(std::size_t n, const Shape& shape, std::uint64_t seed) {
  Tensor batch({n, shape[0], shape[1], shape[2]});
  std::size_t px = shape_numel(shape);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t = gen_white(shape, i, seed, NoiseKind::WhiteUniform);
    std::copy(t.data(), t.data() + px, batch.data() + i * px);
  }
  return batch;
}

// Probe hot path: batched inference of the MNIST CNN (criterion: the full
// probe sustains >= 2000 stimuli/s including noise generation).
void BM_cnn_mnist_forward(benchmark::State& state) {
  Network net = build_network("cnn_mnist", {1, 28, 28}, 10, 1);
  std::size_t batch_size = static_cast<std::size_t>(state.range(0));
  Tensor batch = noise_batch(batch_size, {1, 28, 28}, 7);
  for (auto _ : state) {
    auto preds = net.predict(batch);
    benchmark::DoNotOptimize(preds.data());
  }
  state.SetItemsProcessed(state.iterations() * batch_size);
}

void BM_cnn_cifar_forward(benchmark::State& state) {
  Network net = build_network("cnn_cifar", {3, 32, 32}, 10, 1);
  std::size_t batch_size = static_cast<std::size_t>(state.range(0));
  Tensor batch = noise_batch(batch_size, {3, 32, 32}, 7);
  for (auto _ : state) {
    auto preds = net.predict(batch);
    benchmark::DoNotOptimize(preds.data());
  }
  state.SetItemsProcessed(state.iterations() * batch_size);
}

// One SGD step at MNIST scale; an epoch is 60000/64 of these.
void BM_cnn_mnist_train_step(benchmark::State& state) {
  Dataset ds;
  ds.images = noise_batch(64, {1, 28, 28}, 9);
  ds.labels.assign(64, 0);
  for (std::size_t i = 0; i < 64; ++i) ds.labels[i] = static_cast<int>(i % 10);
  ds.num_classes = 10;
  ds.name = "bench";
  Network net = build_network("cnn_mnist", {1, 28, 28}, 10, 1);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 64;
  tc.learning_rate = 0.01;
  tc.seed = 1;
  for (auto _ : state) {
    train(net, ds, tc);  // one epoch over one batch = one step
  }
  state.SetItemsProcessed(state.iterations() * 64);
}

}  // namespace

BENCHMARK(BM_cnn_mnist_forward)->Arg(64)->Arg(256)->Arg(1024);
BENCHMARK(BM_cnn_cifar_forward)->Arg(64);
BENCHMARK(BM_cnn_mnist_train_step);
