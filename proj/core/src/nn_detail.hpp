#pragma once

// Internal per-sample execution machinery shared by nn_forward.cpp and
// nn_train.cpp.

#include <cstdint>
#include <vector>

#include "noisebench/nn.hpp"

namespace noisebench::detail {

// cols is (c_in*kh*kw) x (oh*ow) so conv forward is one gemm per sample.
void im2col_t(const float* src, std::size_t c_in, std::size_t h, std::size_t w,
              std::size_t kh, std::size_t kw, std::size_t pad, std::size_t oh, std::size_t ow,
              float* cols);
void col2im_t(const float* cols, std::size_t c_in, std::size_t h, std::size_t w,
              std::size_t kh, std::size_t kw, std::size_t pad, std::size_t oh, std::size_t ow,
              float* dst);
// Row-major variant, (oh*ow) x (c_in*kh*kw): puts the weight-gradient gemm
// on the contiguous-inner-loop fast path.
void im2col_rm(const float* src, std::size_t c_in, std::size_t h, std::size_t w,
               std::size_t kh, std::size_t kw, std::size_t pad, std::size_t oh, std::size_t ow,
               float* cols);

struct SampleCtx {
  std::vector<std::vector<float>> acts;            // acts[0] = input, acts[i+1] = layer i output
  std::vector<std::vector<std::uint8_t>> pool_codes;  // argmax code per pool output cell
  std::vector<float> cols;
  void prepare(const Network& net);
};

struct RunHooks {
  std::size_t bias_delta_layer = SIZE_MAX;
  const float* bias_delta = nullptr;  // per map/unit of that layer
  std::size_t inject_layer = SIZE_MAX;
  const float* inject_values = nullptr;
  double inject_gamma = 1.0;
  std::size_t stop_after_layer = SIZE_MAX;  // run layers [0, stop_after_layer]
};

void run_sample(const Network& net, const float* input, SampleCtx& ctx, const RunHooks& hooks);

// Per-layer gradient buffers for one worker chunk.
struct GradBuffers {
  std::vector<std::vector<float>> dw;
  std::vector<std::vector<float>> db;
  void prepare(const Network& net);
  void clear();
};

// Backpropagates d(loss)/d(logits) through a sample already run via
// run_sample. Accumulates into `grads` when not null; writes the input
// gradient into dx when not null (length = input numel).
void backward_sample(const Network& net, SampleCtx& ctx, const std::vector<float>& dlogits,
                     GradBuffers* grads, float* dx);

}  // namespace noisebench::detail
