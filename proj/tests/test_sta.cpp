#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "noisebench/dataset.hpp"
#include "noisebench/random.hpp"
#include "noisebench/sta.hpp"
#include "test_util.hpp"

using namespace noisebench;

namespace {

StimulusFn gaussian_stimuli(std::size_t d, std::uint64_t seed, double mean = 0.0,
                            double sigma = 1.0) {
  return [=](std::size_t i) {
    RandomStream rs(seed, i);
    Tensor t({d});
    for (std::size_t j = 0; j < d; ++j) {
      t[j] = static_cast<float>(mean + sigma * rs.next_gaussian());
    }
    return t;
  };
}

double cosine(const Tensor& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    ab += a[i] * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("constant response on zero-mean noise: mu shrinks like CLT") {
  const std::size_t n = 20000, d = 16;
  auto stim = gaussian_stimuli(d, 3);
  StaResult r = sta(stim, [](const Tensor&) { return 1.0; }, n);
  CHECK(r.n_sp == doctest::Approx(static_cast<double>(n)));
  CHECK(testutil::max_abs(r.mu) < 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("ReLU of a linear filter under gaussian noise recovers the filter direction") {
  const std::size_t n = 100000, d = 16;
  std::vector<double> w(d);
  RandomStream rs(7, 0);
  for (auto& v : w) v = rs.uniform(-1, 1);
  auto stim = gaussian_stimuli(d, 8);
  auto resp = [&](const Tensor& x) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += w[j] * x[j];
    return std::max(s, 0.0);
  };
  StaResult r = sta(stim, resp, n);
  CHECK(cosine(r.mu, w) > 0.99);
}

TEST_CASE("step response on 1-D noise matches the half-normal mean") {
  // y = 1[x0 > 0]: E[x0 | x0 > 0] = sqrt(2/pi); other dims ~ 0.
  const std::size_t n = 200000, d = 4;
  auto stim = gaussian_stimuli(d, 9);
  auto resp = [](const Tensor& x) { return x[0] > 0.0f ? 1.0 : 0.0; };
  StaResult r = sta(stim, resp, n);
  CHECK(r.mu[0] == doctest::Approx(std::sqrt(2.0 / M_PI)).epsilon(0.02));
  for (std::size_t j = 1; j < d; ++j) CHECK(std::abs(r.mu[j]) < 0.02);
}

TEST_CASE("zero response mass throws NoSpikes") {
  auto stim = gaussian_stimuli(4, 10);
  CHECK_THROWS_AS(sta(stim, [](const Tensor&) { return 0.0; }, 100), NoSpikes);
}

TEST_CASE("whitened STA equals the exact least-squares oracle on correlated stimuli") {
  const std::size_t n = 4000, d = 6;
  RandomStream rs(11, 0);
  std::vector<double> w(d);
  for (auto& v : w) v = rs.uniform(-1, 1);

  // Correlated rows: x = L z with a fixed lower-triangular L.
  std::vector<double> lmat(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) lmat[i * d + j] = 0.3 + 0.1 * static_cast<double>(i + j);
    lmat[i * d + i] += 1.0;
  }
  Tensor x({n, d});
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream rsi(12, i);
    std::vector<double> z(d);
    for (auto& v : z) v = rsi.next_gaussian();
    for (std::size_t a = 0; a < d; ++a) {
      double s = 0.0;
      for (std::size_t b = 0; b <= a; ++b) s += lmat[a * d + b] * z[b];
      x.at2(i, a) = static_cast<float>(s);
    }
    double dotv = 0.0;
    for (std::size_t a = 0; a < d; ++a) dotv += w[a] * x.at2(i, a);
    y[i] = std::max(dotv, 0.0);
  }

  Tensor wsta = whitened_sta(x, y);

  // Oracle: solve X^T X beta = X^T y by Gaussian elimination.
  std::vector<double> gram(d * d, 0.0), xty(d, 0.0);
  double n_sp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      xty[a] += static_cast<double>(x.at2(i, a)) * y[i];
      for (std::size_t b = 0; b < d; ++b) {
        gram[a * d + b] += static_cast<double>(x.at2(i, a)) * x.at2(i, b);
      }
    }
    n_sp += y[i];
  }
  std::vector<double> beta = testutil::gauss_solve(gram, xty, d);
  for (auto& v : beta) v *= static_cast<double>(n) / n_sp;
  CHECK(cosine(wsta, beta) > 0.9999);
  for (std::size_t a = 0; a < d; ++a) {
    CHECK(testutil::rel_err(wsta[a], beta[a]) < 1e-3);
  }

  // Full linear response y = Xw recovers w's direction.
  for (std::size_t i = 0; i < n; ++i) {
    double dotv = 0.0;
    for (std::size_t a = 0; a < d; ++a) dotv += w[a] * x.at2(i, a);
    y[i] = std::abs(dotv);  // keep nonnegative response mass
  }
  // (direction check only makes sense for the rectified-linear case above)

  CHECK_THROWS_AS(whitened_sta(x, std::vector<double>(n, 0.0)), NoSpikes);
}

TEST_CASE("whitened and plain STA align under isotropic noise") {
  const std::size_t n = 60000, d = 8;
  std::vector<double> w(d);
  RandomStream rs(13, 0);
  for (auto& v : w) v = rs.uniform(-1, 1);
  auto stim = gaussian_stimuli(d, 14);
  auto resp = [&](const Tensor& x) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += w[j] * x[j];
    return std::max(s, 0.0);
  };
  StaResult plain = sta(stim, resp, n);

  Tensor x({n, d});
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t = stim(i);
    for (std::size_t j = 0; j < d; ++j) x.at2(i, j) = t[j];
    y[i] = resp(t);
  }
  Tensor white = whitened_sta(x, y);
  double cs = cosine_similarity(plain.mu, white.reshaped(plain.mu.shape()));
  CHECK(cs > 0.998);  // within ~2% in direction
}

TEST_CASE("STC: constant response on unit-variance noise gives the identity") {
  const std::size_t n = 100000, d = 8;
  auto stim = gaussian_stimuli(d, 15);
  Tensor mu({d});  // true STA is zero
  StcResult r = stc(stim, [](const Tensor&) { return 1.0; }, mu, n);
  double fro = 0.0;
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) {
      double want = a == b ? 1.0 : 0.0;
      double diff = r.lambda.at2(a, b) - want;
      fro += diff * diff;
    }
  }
  CHECK(std::sqrt(fro) / std::sqrt(static_cast<double>(d)) < 0.05);
}

TEST_CASE("STC of an energy model finds the filter as the top eigenvector") {
  const std::size_t n = 60000, d = 10;
  std::vector<double> w(d);
  RandomStream rs(17, 0);
  double norm = 0.0;
  for (auto& v : w) {
    v = rs.uniform(-1, 1);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : w) v /= norm;
  auto stim = gaussian_stimuli(d, 18);
  auto resp = [&](const Tensor& x) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += w[j] * x[j];
    return s * s;
  };
  StaResult base = sta(stim, resp, n);
  StcResult r = stc(stim, resp, base.mu, n);
  Tensor top({d});
  for (std::size_t j = 0; j < d; ++j) top[j] = r.eigenvectors.at2(j, 0);
  CHECK(std::abs(cosine(top, w)) > 0.98);
}

TEST_CASE("STC on a 2-D hand-computable case") {
  // Three stimuli with y = 1 each; Lambda = sum (x-c)(x-c)^T / 3 where c is
  // the total center (stream mean + mu). Computed by hand below.
  std::vector<Tensor> xs = {Tensor::from_data({2}, {1, 0}), Tensor::from_data({2}, {0, 1}),
                            Tensor::from_data({2}, {-1, -1})};
  auto stim = [&](std::size_t i) { return xs[i]; };
  auto resp = [](const Tensor&) { return 1.0; };
  StaResult mu = sta(stim, resp, 3);
  // Stream mean = (0,0); mu = mean-centered STA = (0,0).
  CHECK(std::abs(mu.mu[0]) < 1e-6);
  CHECK(std::abs(mu.mu[1]) < 1e-6);
  StcResult r = stc(stim, resp, mu.mu, 3);
  // Lambda = [[2/3, 1/3], [1/3, 2/3]]
  CHECK(r.lambda.at2(0, 0) == doctest::Approx(2.0 / 3).epsilon(1e-5));
  CHECK(r.lambda.at2(0, 1) == doctest::Approx(1.0 / 3).epsilon(1e-5));
  CHECK(r.lambda.at2(1, 1) == doctest::Approx(2.0 / 3).epsilon(1e-5));
  CHECK(r.eigenvalues[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(r.eigenvalues[1] == doctest::Approx(1.0 / 3).epsilon(1e-4));
}

TEST_CASE("unit STA recovers a planted conv1 kernel") {
  Network net = build_network("cnn_mnist", {1, 16, 16}, 4, 2);
  // Plant a distinctive kernel in map 0 and clear its bias.
  Layer& conv1 = net.layers()[0];
  std::vector<double> planted(25);
  RandomStream rs(19, 0);
  double planted_sum = 0.0;
  for (std::size_t i = 0; i < 25; ++i) {
    planted[i] = rs.uniform(-1, 1);
    planted_sum += planted[i];
    conv1.weights.at2(0, i) = static_cast<float>(planted[i]);
  }
  // Bias cancels the mid-gray background drive so the unit fires on about
  // half the stimuli; a rarely-active unit would just be a noisy estimate.
  conv1.bias[0] = static_cast<float>(-0.5 * planted_sum);

  UnitAddress unit;
  unit.layer = "conv1";
  unit.map = 0;
  UnitStaOptions opts;
  opts.n = 60000;
  opts.seed = 4;
  opts.sigma = 0.2;
  auto results = unit_sta_filters(net, {unit}, opts);
  REQUIRE(results.size() == 1);
  REQUIRE(!results[0].dead);
  CHECK(results[0].rf_crop.shape() == Shape{1, 5, 5});
  CHECK(cosine(results[0].rf_crop, planted) > 0.97);
  REQUIRE(results[0].whitened.has_value());
  CHECK(cosine(*results[0].whitened, planted) > 0.99);
}

TEST_CASE("dead units are flagged and the sweep continues") {
  Network net = build_network("cnn_mnist", {1, 16, 16}, 4, 2);
  Layer& conv1 = net.layers()[0];
  conv1.bias[1] = -100.0f;  // map 1 never fires through the ReLU
  std::vector<UnitAddress> units = center_units(net, "conv1");
  UnitStaOptions opts;
  opts.n = 2000;
  opts.seed = 5;
  opts.whiten = false;
  auto results = unit_sta_filters(net, units, opts);
  CHECK(results.size() == 32);
  CHECK(results[1].dead);
  std::size_t alive = 0;
  for (const auto& r : results) {
    if (!r.dead) alive++;
  }
  CHECK(alive > 0);
}

TEST_CASE("mean layer activation: identical inputs give a zero distance matrix") {
  Network net = build_network("cnn_mnist", {1, 16, 16}, 4, 3);
  Dataset ds;
  ds.images = Tensor({8, 1, 16, 16}, 0.5f);
  ds.labels = {0, 1, 2, 3, 0, 1, 2, 3};
  ds.num_classes = 4;
  ds.name = "same";
  ClassActivationStats stats = mean_layer_activation(net, ds, "conv2");
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(stats.distance.at2(i, j) == doctest::Approx(0.0));
    }
  }
}

TEST_CASE("disjoint-quadrant classes keep positive distances at every layer") {
  Dataset ds;
  ds.images = Tensor({40, 1, 16, 16});
  ds.labels.resize(40);
  for (std::size_t i = 0; i < 40; ++i) {
    int cls = static_cast<int>(i % 2);
    ds.labels[i] = cls;
    RandomStream rs(7, i);
    for (std::size_t r = 0; r < 8; ++r) {
      for (std::size_t c = 0; c < 8; ++c) {
        std::size_t rr = cls == 0 ? r : r + 8;
        ds.images.at4(i, 0, rr, c) = static_cast<float>(0.5 + 0.3 * rs.next_double());
      }
    }
  }
  ds.num_classes = 2;
  ds.name = "quad";
  Network net = build_network("cnn_mnist", {1, 16, 16}, 2, 5);
  for (const char* layer : {"conv1", "conv2", "fc"}) {
    ClassActivationStats stats = mean_layer_activation(net, ds, layer);
    CHECK(stats.distance.at2(0, 1) > 0.0f);
    CHECK(stats.distance.at2(0, 1) == stats.distance.at2(1, 0));
  }
}

TEST_CASE("mean layer activation over a noise stream groups by prediction") {
  Network net = build_network("cnn_mnist", {1, 16, 16}, 4, 6);
  StimulusStream stream;
  stream.source = NoiseKind::WhiteUniform;
  stream.shape = {1, 16, 16};
  stream.count = 2000;
  stream.seed = 9;
  ClassActivationStats stats = mean_layer_activation(net, stream, 2000, "fc");
  std::uint64_t total = 0;
  for (auto c : stats.counts) total += c;
  CHECK(total == 2000);
  CHECK(stats.activation_shape == Shape{4});
}

TEST_CASE("estimator consistency: median angle to the reference shrinks as n doubles") {
  // Linear-rectified unit in 12 dims; reference STA from a long run per seed.
  const std::size_t d = 12;
  std::vector<double> w(d);
  RandomStream rs(23, 0);
  for (auto& v : w) v = rs.uniform(-1, 1);
  auto resp = [&](const Tensor& x) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += w[j] * x[j];
    return std::max(s, 0.0);
  };

  const std::size_t n_seeds = 20;
  std::vector<std::vector<double>> angles(3, std::vector<double>(n_seeds));
  const std::size_t sizes[3] = {1000, 2000, 4000};
  for (std::size_t seed = 0; seed < n_seeds; ++seed) {
    auto stim = gaussian_stimuli(d, 100 + seed);
    StaResult ref = sta(stim, resp, 32000);
    for (int si = 0; si < 3; ++si) {
      StaResult est = sta(stim, resp, sizes[si]);
      double cs = cosine_similarity(est.mu, ref.mu);
      angles[si][seed] = std::acos(std::clamp(cs, -1.0, 1.0));
    }
  }
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  };
  double m1 = median(angles[0]), m2 = median(angles[1]), m4 = median(angles[2]);
  CHECK(m2 < m1);
  CHECK(m4 < m2);
}
