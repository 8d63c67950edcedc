#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "noisebench/dataset.hpp"
#include "noisebench/nn.hpp"
#include "noisebench/random.hpp"
#include "test_util.hpp"

using namespace noisebench;
namespace fs = std::filesystem;

namespace {

Tensor random_batch(const Shape& per_sample, std::size_t n, std::uint64_t seed) {
  Shape s{n};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  Tensor t(s);
  RandomStream rs(seed, 0);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rs.next_float();
  return t;
}

std::vector<int> random_labels(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<int> labels(n);
  RandomStream rs(seed, 1);
  for (auto& l : labels) l = static_cast<int>(rs.next_below(k));
  return labels;
}

double batch_loss(const Network& net, const Tensor& batch, const std::vector<int>& labels) {
  Tensor out = net.forward(batch);
  std::size_t k = out.numel() / batch.dim(0);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.dim(0); ++i) {
    double p = std::max<double>(out[i * k + static_cast<std::size_t>(labels[i])], 1e-12);
    loss += -std::log(p);
  }
  return loss / static_cast<double>(batch.dim(0));
}

// Central finite differences vs backprop for every parameter of a small net.
// `floor` absorbs the FD noise from pool/relu argmax flips inside the h
// interval; pool-free smooth nets get checked with a tight floor below.
void check_gradients(Network& net, const Tensor& batch, const std::vector<int>& labels,
                     std::size_t max_checks_per_layer = 24, double floor = 2e-3) {
  Gradients g = parameter_gradients(net, batch, labels);
  const float h = 1e-3f;
  RandomStream pick(123, 9);
  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    Layer& layer = net.layers()[li];
    std::size_t nw = layer.weights.numel();
    for (std::size_t rep = 0; rep < std::min(max_checks_per_layer, nw); ++rep) {
      std::size_t idx = nw <= max_checks_per_layer ? rep : pick.next_below(nw);
      float orig = layer.weights[idx];
      layer.weights[idx] = orig + h;
      double lp = batch_loss(net, batch, labels);
      layer.weights[idx] = orig - h;
      double lm = batch_loss(net, batch, labels);
      layer.weights[idx] = orig;
      double fd = (lp - lm) / (2.0 * h);
      double bp = g.dw[li][idx];
      if (std::abs(fd) < 1e-4 && std::abs(bp) < 1e-4) continue;  // both ~zero
      CHECK(std::abs(fd - bp) < std::max(1e-2 * std::max(std::abs(fd), std::abs(bp)), floor));
    }
    for (std::size_t idx = 0; idx < std::min(max_checks_per_layer, layer.bias.size()); ++idx) {
      float orig = layer.bias[idx];
      layer.bias[idx] = orig + h;
      double lp = batch_loss(net, batch, labels);
      layer.bias[idx] = orig - h;
      double lm = batch_loss(net, batch, labels);
      layer.bias[idx] = orig;
      double fd = (lp - lm) / (2.0 * h);
      double bp = g.db[li][idx];
      if (std::abs(fd) < 1e-4 && std::abs(bp) < 1e-4) continue;
      CHECK(std::abs(fd - bp) < std::max(1e-2 * std::max(std::abs(fd), std::abs(bp)), floor));
    }
  }
}

}  // namespace

TEST_CASE("architecture shapes and receptive fields") {
  Network mnist = build_network("cnn_mnist", {1, 28, 28}, 10, 1);
  CHECK(mnist.receptive_field("conv1").size == 5);
  CHECK(mnist.receptive_field("conv2").size == 14);
  CHECK(mnist.hook_shape("conv1") == Shape{32, 24, 24});
  CHECK(mnist.hook_shape("conv2") == Shape{64, 8, 8});
  CHECK(mnist.hook_shape("fc") == Shape{10});

  Network cifar = build_network("cnn_cifar", {3, 32, 32}, 10, 1);
  CHECK(cifar.receptive_field("conv1").size == 3);
  CHECK(cifar.receptive_field("conv2").size == 5);
  CHECK(cifar.receptive_field("conv4").size == 14);
  CHECK(cifar.receptive_field("conv6").size == 32);

  Network mlp = build_network("mlp_1000", {1, 28, 28}, 10, 1);
  CHECK(mlp.parameter_count() == 784 * 1000 + 1000 + 1000 * 10 + 10);

  CHECK_THROWS_AS(build_network("resnet", {1, 28, 28}, 10, 1), ConfigError);
}

TEST_CASE("softmax rows sum to one") {
  Network net = build_network("cnn_mnist", {1, 16, 16}, 4, 3);
  Tensor batch = random_batch({1, 16, 16}, 8, 5);
  Tensor out = net.forward(batch);
  for (std::size_t i = 0; i < 8; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += out.at2(i, j);
    CHECK(std::abs(s - 1.0) < 1e-5);
  }
}

TEST_CASE("forward is bit-identical across thread counts") {
  Network net = build_network("cnn_mnist", {1, 20, 20}, 5, 7);
  Tensor batch = random_batch({1, 20, 20}, 13, 6);
  ForwardOptions one;
  one.threads = 1;
  ForwardOptions four;
  four.threads = 4;
  Tensor a = net.forward(batch, one, nullptr);
  Tensor b = net.forward(batch, four, nullptr);
  CHECK(testutil::bit_equal(a, b));
}

TEST_CASE("gradient check: smooth stack (same-pad conv + tanh, no pooling) is tight") {
  // Pool-free, so the loss is smooth in every weight: FD and backprop must
  // agree closely. This pins the conv/tanh/dense backward passes exactly.
  Network net;
  net.init("smooth", {2, 6, 6}, 3,
           {LayerSpec::conv(4, 3, 3, Padding::Same), LayerSpec::activation(ActFn::Tanh),
            LayerSpec::conv(4, 3, 3, Padding::Same), LayerSpec::activation(ActFn::Tanh),
            LayerSpec::dense(3), LayerSpec::activation(ActFn::Softmax)},
           5);
  Tensor batch = random_batch({2, 6, 6}, 3, 20);
  auto labels = random_labels(3, 3, 29);
  check_gradients(net, batch, labels, 48, 5e-4);
}

TEST_CASE("gradient check: valid conv + relu + pool + dense") {
  Network net = build_network("cnn_mnist", {1, 16, 16}, 3, 11);
  Tensor batch = random_batch({1, 16, 16}, 4, 21);
  auto labels = random_labels(4, 3, 22);
  check_gradients(net, batch, labels, 24, 4e-3);
}

TEST_CASE("gradient check: same-padded conv + tanh stack") {
  // Three pools deep: argmax flips inside the FD interval dominate the
  // residual, so the absolute floor is wider (the smooth-stack case above
  // carries the strict agreement burden).
  Network net = build_network("cnn_cifar", {3, 8, 8}, 3, 13);
  Tensor batch = random_batch({3, 8, 8}, 3, 23);
  auto labels = random_labels(3, 3, 24);
  check_gradients(net, batch, labels, 12, 8e-3);
}

TEST_CASE("gradient check: mlp and logreg") {
  Network mlp = build_network("mlp_1000", {1, 6, 6}, 4, 17);
  Tensor batch = random_batch({1, 6, 6}, 5, 25);
  auto labels = random_labels(5, 4, 26);
  check_gradients(mlp, batch, labels, 16);

  Network lr = build_network("logreg", {1, 6, 6}, 4, 18);
  check_gradients(lr, batch, labels, 16);
}

TEST_CASE("pooling routes gradients to the argmax with top-left ties") {
  // 4x4 input, one conv-free path: use a tiny custom network via init().
  Network net;
  net.init("custom", {1, 4, 4}, 4,
           {LayerSpec::pool(), LayerSpec::dense(4), LayerSpec::activation(ActFn::Softmax)}, 1);
  Tensor batch({1, 1, 4, 4});
  // Cell (0,0): all equal -> winner must be top-left.
  batch.at4(0, 0, 0, 0) = 0.5f;
  batch.at4(0, 0, 0, 1) = 0.5f;
  batch.at4(0, 0, 1, 0) = 0.5f;
  batch.at4(0, 0, 1, 1) = 0.5f;
  // Cell (0,1): bottom-right wins.
  batch.at4(0, 0, 1, 3) = 0.9f;
  Tensor grads = input_gradient(net, {batch, {1}, 4, "t"});
  // Gradient mass must sit exactly on winners: (0,0) and (1,3) in the first
  // two cells; ties elsewhere default to their top-left corners.
  CHECK(grads.at4(1, 0, 0, 1) == 0.0f);
  CHECK(grads.at4(1, 0, 1, 1) == 0.0f);
  CHECK(grads.at4(1, 0, 0, 3) == 0.0f);
  CHECK(grads.at4(1, 0, 0, 0) != 0.0f);
  CHECK(grads.at4(1, 0, 1, 3) != 0.0f);
}

TEST_CASE("training on the separable fixture reaches train accuracy 1.0") {
  Dataset train_set = synth_two_template(12, 12, 60, 0.1, 3);
  Network net = build_network("logreg", train_set.image_shape(), 2, 5);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 16;
  tc.learning_rate = 0.5;
  tc.seed = 9;
  auto history = train(net, train_set, tc);
  EvalResult ev = evaluate(net, train_set);
  CHECK(ev.accuracy == doctest::Approx(1.0));
  CHECK(history.size() == 2);

  // Hand template oracle: the bar templates themselves classify the fixture
  // perfectly, so a perfect learner matches the oracle's labels.
  Tensor means = class_mean_images(train_set);
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    Tensor img = train_set.image(i);
    double d0 = 0, d1 = 0;
    for (std::size_t p = 0; p < img.numel(); ++p) {
      d0 += static_cast<double>(means[p]) * img[p];
      d1 += static_cast<double>(means[img.numel() + p]) * img[p];
    }
    int oracle = d1 > d0 ? 1 : 0;
    CHECK(oracle == train_set.labels[i]);
  }
}

TEST_CASE("training determinism: same seeds, same parameters") {
  Dataset train_set = synth_two_template(16, 16, 30, 0.15, 4);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.learning_rate = 0.1;
  tc.seed = 13;

  Network a = build_network("cnn_mnist", train_set.image_shape(), 2, 6);
  tc.threads = 1;
  train(a, train_set, tc);
  Network b = build_network("cnn_mnist", train_set.image_shape(), 2, 6);
  tc.threads = 4;
  train(b, train_set, tc);
  for (std::size_t li = 0; li < a.layers().size(); ++li) {
    CHECK(testutil::bit_equal(a.layers()[li].weights, b.layers()[li].weights));
    CHECK(a.layers()[li].bias == b.layers()[li].bias);
  }
}

TEST_CASE("empty dataset and bad labels are rejected; NaN loss diverges") {
  Dataset empty;
  empty.images = Tensor({1, 1, 4, 4});
  empty.labels = {};
  empty.num_classes = 2;
  Network net = build_network("logreg", {1, 4, 4}, 2, 1);
  TrainConfig tc;
  CHECK_THROWS_AS(train(net, empty, tc), ConfigError);

  Dataset bad = synth_two_template(4, 4, 2, 0.0, 1);
  bad.labels[0] = 7;
  CHECK_THROWS_AS(train(net, bad, tc), ConfigError);

  // Absurd learning rate blows the loss up to NaN.
  Dataset ds = synth_two_template(6, 6, 20, 0.2, 2);
  Network vict = build_network("mlp_1000", ds.image_shape(), 2, 2);
  TrainConfig wild;
  wild.epochs = 40;
  wild.learning_rate = 1e30;
  wild.batch_size = 8;
  CHECK_THROWS_AS(train(vict, ds, wild), TrainingDiverged);
}

TEST_CASE("evaluate: constant net on a balanced set scores chance with ties at class 0") {
  Dataset ds = synth_glyphs(4, 8, 8, 25, 0.1, 7);
  Network net = build_network("logreg", ds.image_shape(), 4, 1);
  for (auto& l : net.layers()) {
    for (std::size_t i = 0; i < l.weights.numel(); ++i) l.weights[i] = 0.0f;
  }
  EvalResult ev = evaluate(net, ds);
  CHECK(ev.accuracy == doctest::Approx(0.25));  // everything predicted as class 0
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(ev.confusion.at(r, 0) == 25);
  }
}

TEST_CASE("input_gradient matches the logistic-regression closed form") {
  // For softmax regression, dL/dx = W (p - onehot).
  Network net = build_network("logreg", {1, 3, 3}, 3, 21);
  Tensor batch = random_batch({1, 3, 3}, 1, 31);
  std::vector<int> labels{1};

  Dataset ds;
  ds.images = batch;
  ds.labels = labels;
  ds.num_classes = 3;
  ds.name = "t";
  Tensor grads = input_gradient(net, ds);

  Tensor out = net.forward(batch);
  const Layer& dense = net.layers()[0];
  for (std::size_t i = 0; i < 9; ++i) {
    double want = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      double delta = out[j] - (j == 1 ? 1.0 : 0.0);
      want += static_cast<double>(dense.weights.at2(i, j)) * delta;
    }
    CHECK(std::abs(grads[9 + i] - want) < 1e-5);  // class-1 row of the K x C x H x W output
  }
}

TEST_CASE("input_gradient matches finite differences on a CNN") {
  Network net = build_network("cnn_mnist", {1, 16, 16}, 3, 23);
  Tensor batch = random_batch({1, 16, 16}, 1, 33);
  std::vector<int> labels{2};
  Dataset ds;
  ds.images = batch;
  ds.labels = labels;
  ds.num_classes = 3;
  ds.name = "t";
  Tensor grads = input_gradient(net, ds);

  RandomStream pick(9, 9);
  const float h = 1e-3f;
  for (int rep = 0; rep < 5; ++rep) {
    std::size_t idx = pick.next_below(256);
    Tensor bp = batch;
    bp[idx] += h;
    double lp = batch_loss(net, bp, labels);
    Tensor bm = batch;
    bm[idx] -= h;
    double lm = batch_loss(net, bm, labels);
    double fd = (lp - lm) / (2.0 * h);
    double got = grads[2 * 256 + idx];
    if (std::abs(fd) < 1e-4 && std::abs(got) < 1e-4) continue;
    CHECK(std::abs(fd - got) < std::max(1e-2 * std::max(std::abs(fd), std::abs(got)), 2e-3));
  }
}

TEST_CASE("zero final layer gives uniform softmax") {
  Network net = build_network("logreg", {1, 4, 4}, 5, 1);
  for (auto& l : net.layers()) {
    for (std::size_t i = 0; i < l.weights.numel(); ++i) l.weights[i] = 0.0f;
  }
  Tensor batch = random_batch({1, 4, 4}, 2, 8);
  Tensor out = net.forward(batch);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    CHECK(out[i] == doctest::Approx(0.2).epsilon(1e-5));
  }
}

TEST_CASE("model save/load round trip forwards bit-identically") {
  fs::path dir = fs::temp_directory_path() / ("nn-io-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::string path = (dir / "m.wnam").string();

  Network net = build_network("cnn_mnist", {1, 16, 16}, 4, 77);
  save_model(net, path);
  Network back = load_model(path);
  Tensor batch = random_batch({1, 16, 16}, 7, 55);
  CHECK(testutil::bit_equal(net.forward(batch), back.forward(batch)));
  CHECK(back.arch_id() == "cnn_mnist");

  SUBCASE("corrupting one payload byte fails the checksum") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    char b;
    f.seekg(100);
    f.read(&b, 1);
    b ^= 0x40;
    f.seekp(100);
    f.write(&b, 1);
    f.close();
    CHECK_THROWS_AS(load_model(path), FormatError);
  }

  SUBCASE("future version tag is rejected") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    char v2[2] = {9, 0};
    f.seekp(4);
    f.write(v2, 2);
    f.close();
    CHECK_THROWS_AS(load_model(path), FormatError);
  }

  fs::remove_all(dir);
}

TEST_CASE("stimulation with k=0 reproduces the plain forward bit-exactly") {
  Network net = build_network("cnn_mnist", {1, 16, 16}, 4, 3);
  Tensor batch = random_batch({1, 16, 16}, 6, 16);
  StimulationConfig stim;
  stim.layer_name = "conv1";
  stim.k = 0.0;
  stim.lambda = 0.1;
  ForwardOptions opts;
  opts.stim = &stim;
  Tensor with = net.forward(batch, opts, nullptr);
  Tensor without = net.forward(batch);
  CHECK(testutil::bit_equal(with, without));
}

TEST_CASE("stimulation deltas follow the bias-update formula exactly") {
  Network net = build_network("cnn_mnist", {1, 16, 16}, 4, 3);
  Tensor batch = random_batch({1, 16, 16}, 5, 17);
  StimulationConfig stim;
  stim.layer_name = "conv2";
  stim.k = 2.5;
  stim.lambda = 0.1;
  ForwardOptions opts;
  opts.stim = &stim;
  opts.trace_layers = {"conv2"};
  ForwardTrace trace;
  net.forward(batch, opts, &trace);

  // Recompute from an unstimmed trace: delta_m = lambda k sum_i(a_mi)/max(a).
  ForwardOptions plain;
  plain.trace_layers = {"conv2"};
  ForwardTrace unstim;
  net.forward(batch, plain, &unstim);
  const Tensor* acts = unstim.find("conv2");
  const Shape hs = net.hook_shape("conv2");
  std::size_t maps = hs[0], per_map = hs[1] * hs[2];
  for (std::size_t s = 0; s < 5; ++s) {
    const float* a = acts->data() + s * maps * per_map;
    float mx = a[0];
    for (std::size_t i = 1; i < maps * per_map; ++i) mx = std::max(mx, a[i]);
    for (std::size_t m = 0; m < maps; ++m) {
      double sum = 0.0;
      for (std::size_t i = 0; i < per_map; ++i) sum += a[m * per_map + i];
      float want = mx > 0.0f ? static_cast<float>(stim.lambda * stim.k * sum / mx) : 0.0f;
      CHECK(trace.stim_delta.at2(s, m) == want);
    }
  }
}

TEST_CASE("silent layer receives no stimulation") {
  Network net = build_network("cnn_mnist", {1, 16, 16}, 4, 3);
  // Force conv1 biases very negative: ReLU output all zero.
  for (auto& l : net.layers()) {
    if (l.name == "conv1") {
      for (auto& b : l.bias) b = -100.0f;
    }
  }
  Tensor batch = random_batch({1, 16, 16}, 2, 18);
  StimulationConfig stim;
  stim.layer_name = "conv1";
  stim.k = 5.0;
  stim.lambda = 1.0;
  ForwardOptions opts;
  opts.stim = &stim;
  ForwardTrace trace;
  opts.trace_layers = {"conv1"};
  net.forward(batch, opts, &trace);
  for (std::size_t i = 0; i < trace.stim_delta.numel(); ++i) {
    CHECK(trace.stim_delta[i] == 0.0f);
  }
}

TEST_CASE("injection with gamma=1 is the plain forward; same-layer stim+inject rejected") {
  Network net = build_network("cnn_mnist", {1, 16, 16}, 4, 3);
  Tensor batch = random_batch({1, 16, 16}, 4, 19);
  InjectionConfig inject;
  inject.layer_name = "conv1";
  inject.injected = Tensor(net.hook_shape("conv1"), 0.25f);
  inject.gamma = 1.0;
  ForwardOptions opts;
  opts.inject = &inject;
  CHECK(testutil::bit_equal(net.forward(batch, opts, nullptr), net.forward(batch)));

  StimulationConfig stim;
  stim.layer_name = "conv1";
  stim.k = 1.0;
  ForwardOptions both;
  both.stim = &stim;
  both.inject = &inject;
  CHECK_THROWS_AS(net.forward(batch, both, nullptr), ConfigError);

  InjectionConfig bad = inject;
  bad.injected = Tensor({3, 3});
  ForwardOptions shapes;
  shapes.inject = &bad;
  CHECK_THROWS_AS(net.forward(batch, shapes, nullptr), ShapeError);
  InjectionConfig badg = inject;
  badg.gamma = 1.5;
  ForwardOptions gams;
  gams.inject = &badg;
  CHECK_THROWS_AS(net.forward(batch, gams, nullptr), ConfigError);
}

TEST_CASE("injection with gamma=0 replaces the activation entirely") {
  Network net = build_network("cnn_mnist", {1, 16, 16}, 4, 3);
  Tensor batch = random_batch({1, 16, 16}, 3, 20);

  // Capture genuine conv2 activation of a reference input, inject it into
  // different inputs at gamma=0: the logits must equal the reference's.
  ForwardOptions cap;
  cap.trace_layers = {"conv2"};
  ForwardTrace trace;
  Tensor ref_out = net.forward(batch, cap, &trace);
  const Tensor* acts = trace.find("conv2");
  Shape hs = net.hook_shape("conv2");
  Tensor ref_act(hs);
  std::size_t per = shape_numel(hs);
  for (std::size_t i = 0; i < per; ++i) ref_act[i] = acts->data()[0 * per + i];

  InjectionConfig inject;
  inject.layer_name = "conv2";
  inject.injected = ref_act;
  inject.gamma = 0.0;
  ForwardOptions opts;
  opts.inject = &inject;
  Tensor out = net.forward(batch, opts, nullptr);
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(out.at2(s, j) == doctest::Approx(ref_out.at2(0, j)).epsilon(1e-5));
    }
  }
}

TEST_CASE("batch-mean stimulation applies one shared delta derived from mean activations") {
  Network net = build_network("cnn_mnist", {1, 16, 16}, 4, 3);
  Tensor batch = random_batch({1, 16, 16}, 5, 44);
  StimulationConfig stim;
  stim.layer_name = "conv2";
  stim.k = 3.0;
  stim.lambda = 0.1;
  stim.mode = StimulationConfig::Mode::BatchMean;
  ForwardOptions opts;
  opts.stim = &stim;
  opts.trace_layers = {"conv2"};
  ForwardTrace trace;
  net.forward(batch, opts, &trace);

  // Every row carries the same delta vector.
  for (std::size_t s = 1; s < 5; ++s) {
    for (std::size_t m = 0; m < trace.stim_delta.dim(1); ++m) {
      CHECK(trace.stim_delta.at2(s, m) == trace.stim_delta.at2(0, m));
    }
  }

  // And it matches the formula applied to the batch-mean activation.
  ForwardOptions plain;
  plain.trace_layers = {"conv2"};
  ForwardTrace unstim;
  net.forward(batch, plain, &unstim);
  const Tensor* acts = unstim.find("conv2");
  Shape hs = net.hook_shape("conv2");
  std::size_t maps = hs[0], per_map = hs[1] * hs[2];
  std::vector<float> mean(maps * per_map, 0.0f);
  for (std::size_t s = 0; s < 5; ++s) {
    const float* a = acts->data() + s * maps * per_map;
    for (std::size_t i = 0; i < maps * per_map; ++i) {
      mean[i] += a[i] / 5.0f;
    }
  }
  float mx = mean[0];
  for (float v : mean) mx = std::max(mx, v);
  for (std::size_t m = 0; m < maps; ++m) {
    double sum = 0.0;
    for (std::size_t i = 0; i < per_map; ++i) sum += mean[m * per_map + i];
    float want = mx > 0.0f ? static_cast<float>(stim.lambda * stim.k * sum / mx) : 0.0f;
    CHECK(trace.stim_delta.at2(0, m) == doctest::Approx(want).epsilon(1e-4));
  }
}
