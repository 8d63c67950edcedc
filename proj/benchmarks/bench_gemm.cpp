#include <benchmark/benchmark.h>

#include <vector>

#include "noisebench/linalg.hpp"
#include "noisebench/random.hpp"

using namespace noisebench;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  std::vector<float> v(n);
  RandomStream rs(seed, 0);
  for (auto& x : v) x = rs.next_float();
  return v;
}

// conv2 of the MNIST CNN: per-sample gemm of W(64 x 800) by cols(800 x 64).
void BM_gemm_conv2_shape(benchmark::State& state) {
  auto a = random_vec(64 * 800, 1);
  auto b = random_vec(800 * 64, 2);
  std::vector<float> c(64 * 64);
  for (auto _ : state) {
    gemm_nn(a.data(), b.data(), c.data(), 64, 800, 64, false, 1);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 64 * 800 * 64);
}

// conv1 shape: W(32 x 25) by cols(25 x 576).
void BM_gemm_conv1_shape(benchmark::State& state) {
  auto a = random_vec(32 * 25, 3);
  auto b = random_vec(25 * 576, 4);
  std::vector<float> c(32 * 576);
  for (auto _ : state) {
    gemm_nn(a.data(), b.data(), c.data(), 32, 25, 576, false, 1);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 32 * 25 * 576);
}

void BM_gemm_nt_dw_shape(benchmark::State& state) {
  auto a = random_vec(64 * 64, 5);
  auto b = random_vec(800 * 64, 6);
  std::vector<float> c(64 * 800);
  for (auto _ : state) {
    gemm_nt(a.data(), b.data(), c.data(), 64, 64, 800, true, 1);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 64 * 64 * 800);
}

}  // namespace

BENCHMARK(BM_gemm_conv1_shape);
BENCHMARK(BM_gemm_conv2_shape);
BENCHMARK(BM_gemm_nt_dw_shape);
