#include <benchmark/benchmark.h>

#include "noisebench/classim.hpp"

using namespace noisebench;

namespace {

// End-to-end probe: noise generation + forward + accumulation. Criterion 3
// needs >= 2000 stimuli/s sustained on the MNIST CNN.
void BM_collect_white_cnn_mnist(benchmark::State& state) {
  Network net = build_network("cnn_mnist", {1, 28, 28}, 10, 1);
  StimulusStream stream;
  stream.source = NoiseKind::WhiteUniform;
  stream.shape = {1, 28, 28};
  stream.count = 1u << 30;
  stream.seed = 7;
  std::size_t chunk = 2048;
  std::size_t offset = 0;
  for (auto _ : state) {
    ClassAccumulator acc = collect(net, stream, offset, offset + chunk, {});
    offset += chunk;
    benchmark::DoNotOptimize(acc.total());
  }
  state.SetItemsProcessed(state.iterations() * chunk);
}

}  // namespace

BENCHMARK(BM_collect_white_cnn_mnist)->Unit(benchmark::kMillisecond);
