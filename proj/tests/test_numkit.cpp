#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "memtraj/errors.h"
#include "memtraj/numkit.h"
#include "test_util.h"

using namespace memtraj;

namespace {

Mlp linear_1x1(double w, double b) {
  Mlp net = mlp_init(0, {1, 1});
  net.weights[0] = {w};
  net.biases[0] = {b};
  return net;
}

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("mlp_init is deterministic and zero-biased") {
  CHECK(mlp_init(7, {2, 2}) == mlp_init(7, {2, 2}));
  CHECK_FALSE(mlp_init(7, {2, 2}) == mlp_init(8, {2, 2}));
  const Mlp net = mlp_init(123, {3, 4});
  for (double b : net.biases[0]) CHECK(b == 0.0);
}

TEST_CASE("mlp_init weights stay inside the Glorot bound") {
  const Mlp net = mlp_init(7, {2, 8, 2});
  const double bound = std::sqrt(6.0 / 10.0);
  for (const auto& layer : net.weights) {
    for (double w : layer) CHECK(std::abs(w) <= bound);
  }
  CHECK(net.weights[0].size() == 16);
  CHECK(net.parameter_count() == 16 + 8 + 16 + 2);
}

TEST_CASE("mlp_init rejects bad dims") {
  CHECK_THROWS_AS(mlp_init(0, {}), InvalidArgument);
  CHECK_THROWS_AS(mlp_init(0, {4}), InvalidArgument);
  CHECK_THROWS_AS(mlp_init(0, {4, 0, 2}), InvalidArgument);
}

TEST_CASE("mlp_forward basic cases") {
  CHECK(mlp_forward(linear_1x1(2.0, 1.0), std::vector<double>{3.0})[0] == 7.0);

  Mlp zero = mlp_init(1, {3, 5, 2});
  for (auto& w : zero.weights) std::fill(w.begin(), w.end(), 0.0);
  zero.biases[1] = {0.25, -4.0};
  const auto out = mlp_forward(zero, std::vector<double>{9.0, -1.0, 2.0});
  CHECK(out == std::vector<double>{0.25, -4.0});

  Mlp neg = mlp_init(2, {2, 3, 1});
  std::fill(neg.weights[0].begin(), neg.weights[0].end(), -1.0);
  const auto trace = mlp_forward_trace(neg, std::vector<double>{1.0, 2.0});
  for (double h : trace.activations[1]) CHECK(h == 0.0);

  CHECK_THROWS_AS(mlp_forward(neg, std::vector<double>{1.0}), InvalidArgument);
}

TEST_CASE("mlp_backward linear case and zero upstream") {
  const auto g = mlp_backward(linear_1x1(2.0, 1.0), std::vector<double>{3.0}, std::vector<double>{1.0});
  CHECK(g.d_weights[0][0] == 3.0);
  CHECK(g.d_biases[0][0] == 1.0);
  CHECK(g.d_input[0] == 2.0);

  const Mlp net = mlp_init(5, {3, 6, 2}, Activation::Tanh);
  const auto z = mlp_backward(net, std::vector<double>{0.1, 0.2, 0.3}, std::vector<double>{0.0, 0.0});
  for (const auto& l : z.d_weights) for (double x : l) CHECK(x == 0.0);
  for (const auto& l : z.d_biases) for (double x : l) CHECK(x == 0.0);
  for (double x : z.d_input) CHECK(x == 0.0);
  CHECK_THROWS_AS(mlp_backward(net, std::vector<double>{0.1, 0.2, 0.3}, std::vector<double>{1.0}),
                  InvalidArgument);
}

TEST_CASE("finite differences agree with backprop") {
  std::mt19937_64 rng(42);
  CHECK(finite_diff_check(linear_1x1(2.0, 1.0), std::vector<double>{3.0}, 1e-5) < 1e-8);

  const Mlp tanh_net = mlp_init(11, {4, 8, 4}, Activation::Tanh);
  CHECK(finite_diff_check(tanh_net, random_vec(rng, 4), 1e-5) < 1e-4);

  // ReLU: resample until no pre-activation sits near the kink.
  for (std::uint64_t seed = 0;; ++seed) {
    const Mlp relu_net = mlp_init(100 + seed, {4, 8, 4});
    const auto input = random_vec(rng, 4);
    const auto trace = mlp_forward_trace(relu_net, input);
    bool near_kink = false;
    for (double z : trace.pre_activations[0]) near_kink = near_kink || std::abs(z) < 1e-3;
    if (near_kink) continue;
    CHECK(finite_diff_check(relu_net, input, 1e-5) < 1e-4);
    break;
  }
}

TEST_CASE("sgd_step arithmetic") {
  Mlp net = linear_1x1(1.0, 0.0);
  auto g = GradBundle::zeros_like(net);
  g.d_weights[0][0] = 0.5;
  CHECK(sgd_step(net, g, 0.1).weights[0][0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(sgd_step(net, g, 0.0) == net);

  const Mlp big = mlp_init(3, {3, 4, 2});
  auto gb = GradBundle::zeros_like(big);
  std::mt19937_64 rng(1);
  for (auto& l : gb.d_weights) l = random_vec(rng, l.size());
  const Mlp twice = sgd_step(sgd_step(big, gb, 0.01), gb, 0.01);
  for (std::size_t l = 0; l < big.weights.size(); ++l) {
    for (std::size_t i = 0; i < big.weights[l].size(); ++i) {
      CHECK(twice.weights[l][i] == doctest::Approx(big.weights[l][i] - 2 * 0.01 * gb.d_weights[l][i]).epsilon(1e-14));
    }
  }
}

TEST_CASE("sgd_apply rejects non-finite gradients without touching the net") {
  Mlp net = mlp_init(3, {2, 3, 1});
  const Mlp before = net;
  auto g = GradBundle::zeros_like(net);
  g.d_biases[1][0] = std::nan("");
  CHECK_THROWS_AS(sgd_apply(net, g, 0.1), NumericError);
  CHECK(net == before);
  auto wrong = GradBundle::zeros_like(mlp_init(3, {2, 4, 1}));
  CHECK_THROWS_AS(sgd_apply(net, wrong, 0.1), InvalidArgument);
}

TEST_CASE("SGD decreases a fixed regression loss") {
  std::mt19937_64 rng(9);
  std::vector<std::vector<double>> xs, ys;
  for (int i = 0; i < 64; ++i) {
    auto x = random_vec(rng, 3);
    xs.push_back(x);
    ys.push_back({x[0] - 0.5 * x[1] + 0.3 * x[2]});
  }
  Mlp net = mlp_init(4, {3, 16, 1});
  auto mse = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double r = mlp_forward(net, xs[i])[0] - ys[i][0];
      s += r * r;
    }
    return s / static_cast<double>(xs.size());
  };
  const double initial = mse();
  for (int step = 0; step < 100; ++step) {
    auto acc = GradBundle::zeros_like(net);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const auto trace = mlp_forward_trace(net, xs[i]);
      const double r = trace.output()[0] - ys[i][0];
      mlp_backward_accumulate(net, trace, std::vector<double>{2.0 * r / xs.size()}, acc);
    }
    sgd_apply(net, acc, 1e-3);
  }
  CHECK(mse() < initial);
}

TEST_CASE("MTNN round trip and corruption") {
  const Mlp net = mlp_init(21, {5, 7, 3}, Activation::Tanh);
  std::stringstream ss;
  write_mlp(ss, net);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "MTNN");
  std::stringstream in(bytes);
  CHECK(read_mlp(in) == net);

  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream bad_in(bad);
  CHECK_THROWS_AS(read_mlp(bad_in), FormatError);

  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_mlp(cut), FormatError);

  testutil::TempDir dir("mtnn");
  save_mlp(net, dir.path() / "a.mtnn");
  CHECK(load_mlp(dir.path() / "a.mtnn") == net);
  {
    std::ofstream app(dir.path() / "a.mtnn", std::ios::binary | std::ios::app);
    app << "junk";
  }
  CHECK_THROWS_AS(load_mlp(dir.path() / "a.mtnn"), FormatError);
}
