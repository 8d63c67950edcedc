#include <benchmark/benchmark.h>

#include "noisebench/noise.hpp"
#include "noisebench/random.hpp"

using namespace noisebench;

namespace {

void BM_philox_u32(benchmark::State& state) {
  RandomStream rs(1, 0);
  std::uint32_t acc = 0;
  for (auto _ : state) {
    acc ^= rs.next_u32();
  }
  benchmark::DoNotOptimize(acc);
  state.SetItemsProcessed(state.iterations());
}

void BM_gen_white_28(benchmark::State& state) {
  std::size_t i = 0;
  for (auto _ : state) {
    Tensor t = gen_white({1, 28, 28}, i++, 7, NoiseKind::WhiteUniform);
    benchmark::DoNotOptimize(t.data());
  }
  state.SetItemsProcessed(state.iterations());
}

void BM_gen_gaussian_28(benchmark::State& state) {
  std::size_t i = 0;
  for (auto _ : state) {
    Tensor t = gen_white({1, 28, 28}, i++, 7, NoiseKind::WhiteGaussian, 0.2);
    benchmark::DoNotOptimize(t.data());
  }
  state.SetItemsProcessed(state.iterations());
}

void BM_sample_gabor_28(benchmark::State& state) {
  // Small synthetic fit, full-size bank: dominated by wavelet summation.
  GaborBank bank = build_gabor_bank(28, 28, {2, 4, 10});
  Dataset ds;
  ds.images = Tensor({8, 1, 28, 28});
  RandomStream rs(3, 0);
  for (std::size_t i = 0; i < ds.images.numel(); ++i) ds.images[i] = rs.next_float();
  ds.labels.assign(8, 0);
  ds.num_classes = 1;
  GaborFitOptions opts;
  opts.k_components = 8;
  GaborPcaSampler sampler = fit_gabor_pca(ds, bank, opts);

  std::size_t i = 0;
  for (auto _ : state) {
    Tensor t = sample_gabor(sampler, i++, 11);
    benchmark::DoNotOptimize(t.data());
  }
  state.SetItemsProcessed(state.iterations());
}

}  // namespace

BENCHMARK(BM_philox_u32);
BENCHMARK(BM_gen_white_28);
BENCHMARK(BM_gen_gaussian_28);
BENCHMARK(BM_sample_gabor_28);
