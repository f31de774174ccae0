#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "memtraj/addresser.h"
#include "memtraj/errors.h"
#include "test_util.h"

using namespace memtraj;

namespace {

MemoryBankPair feature_bank(const std::vector<std::vector<double>>& keys) {
  MemoryBankPair bank;
  bank.meta.d_past = static_cast<std::uint32_t>(keys[0].size());
  bank.meta.d_int = 1;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    MemoryEntry e;
    e.k.values = keys[i];
    e.v.values = {0.0};
    e.sample_id = i;
    bank.entries.push_back(e);
  }
  return bank;
}

}  // namespace

TEST_CASE("cosine similarity conventions") {
  const std::vector<double> a{1, 2, 3}, neg{-1, -2, -3}, orth{3, 0, -1}, zero{0, 0, 0};
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(a, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(cosine_similarity(a, orth) == 0.0);
  CHECK(cosine_similarity(a, zero) == 0.0);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> x(5), y(5);
    for (auto& v : x) v = g(rng) * std::pow(10.0, g(rng) * 3);
    for (auto& v : y) v = g(rng);
    const double c = cosine_similarity(x, y);
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
  }
}

TEST_CASE("learned score is scale invariant in the projected space") {
  AddresserShape shape{6, 8, 5, Activation::Identity};
  AddresserNets nets = make_addresser(3, shape);
  const PastFeature q{{0.1, -0.4, 0.9, 0.0, 0.3, 2.0}}, k{{1.0, 0.2, -0.3, 0.5, 0.5, -1.0}};
  const double base = score(nets, q, k);
  for (double c : {0.01, 3.0, 250.0}) {
    AddresserNets scaled = nets;
    for (auto* net : {&scaled.f_q, &scaled.f_k}) {
      for (double& w : net->weights.back()) w *= c;
      for (double& b : net->biases.back()) b *= c;
    }
    CHECK(score(scaled, q, k) == doctest::Approx(base).epsilon(1e-12));
  }
  CHECK(score(fixed_cosine_addresser(), q, q) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("pseudo labels") {
  CHECK(pseudo_label(0.0, 2.0) == 1.0);
  CHECK(pseudo_label(2.0, 2.0) == 0.0);
  CHECK(pseudo_label(1.0, 2.0) == 0.5);
  CHECK(pseudo_label(7.0, 2.0) == 0.0);
  double prev = 1.0;
  for (double d = 0.0; d < 3.0; d += 0.01) {
    CHECK(pseudo_label(d, 2.0) <= prev);
    prev = pseudo_label(d, 2.0);
  }
  CHECK_THROWS_AS(pseudo_label(1.0, 0.0), InvalidArgument);
  CHECK_THROWS_AS(pseudo_label(1.0, -1.0), InvalidArgument);
}

TEST_CASE("addresser loss") {
  CHECK(addresser_loss({{0.2, 0.4}}, std::vector<double>{0.2, 0.4}) == 0.0);
  CHECK(addresser_loss({{1.0, 0.0}}, std::vector<double>{0.0, 0.0}) == 1.0);
  CHECK(addresser_loss({{0.1, 0.7, -0.3}}, std::vector<double>{0.5, 0.0, 1.0}) ==
        doctest::Approx(addresser_loss({{-0.3, 0.1, 0.7}}, std::vector<double>{1.0, 0.5, 0.0})).epsilon(1e-15));
  CHECK_THROWS_AS(addresser_loss({{1.0}}, std::vector<double>{0.0, 0.0}), InvalidArgument);
}

TEST_CASE("top_l ordering and ties") {
  const auto bank = feature_bank({{1, 0}, {0, 1}, {1, 0}, {1, 1}, {-1, 0}});
  const auto cos = fixed_cosine_addresser();
  const PastFeature q{{1, 0}};
  const auto one = top_l(cos, q, bank, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].index == 0);
  const auto all = top_l(cos, q, bank, 5);
  std::vector<std::size_t> idx;
  for (const auto& a : all) idx.push_back(a.index);
  CHECK(idx == std::vector<std::size_t>{0, 2, 3, 1, 4});
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].score >= all[i].score);
  try {
    top_l(cos, q, bank, 6);
    FAIL("expected invalid argument");
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("6") != std::string::npos);
    CHECK(msg.find("5") != std::string::npos);
  }
  CHECK_THROWS_AS(top_l(cos, q, bank, 0), InvalidArgument);
}

TEST_CASE("top_l returns distinct addresses sorted by learned score") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  std::vector<std::vector<double>> keys(40, std::vector<double>(6));
  for (auto& k : keys) for (auto& v : k) v = g(rng);
  const auto bank = feature_bank(keys);
  const auto nets = make_addresser(2, {6, 8, 4, Activation::ReLU});
  const auto index = index_bank(nets, bank);
  PastFeature q{std::vector<double>(6)};
  for (auto& v : q.values) v = g(rng);
  const auto top = top_l(nets, index, q, 40);
  std::set<std::size_t> seen;
  for (const auto& a : top) seen.insert(a.index);
  CHECK(seen.size() == 40);
  const auto all = score_all(nets, index, q);
  for (std::size_t i = 0; i < top.size(); ++i) {
    CHECK(top[i].score == all.scores[top[i].index]);
    if (i > 0) CHECK(top[i - 1].score >= top[i].score);
  }
}

TEST_CASE("train_addresser: zero epochs, fixed cosine, determinism, empty bank") {
  FeatureShape fs;
  fs.d_past = 8;
  fs.d_int = 4;
  fs.embed_dim = 4;
  fs.hidden = 8;
  const auto fnets = make_feature_nets(1, fs);
  const auto data = synth_generate(3, 12, SynthOptions{});
  std::vector<Scene> scenes;
  for (const auto& s : data.scenes) scenes.push_back(normalize_scene(s).first);
  const auto bank = bank_init(fnets, scenes, 12);
  const auto init = make_addresser(5, {8, 8, 8, Activation::ReLU});

  AddresserTrainConfig cfg;
  cfg.sgd.epochs = 0;
  CHECK(train_addresser(init, bank, fnets, scenes, cfg) == init);
  cfg.sgd.epochs = 3;
  cfg.d_threshold = 2.0;
  cfg.sgd.learning_rate = 1e-2;
  const auto a = train_addresser(init, bank, fnets, scenes, cfg);
  CHECK_FALSE(a == init);
  CHECK(a == train_addresser(init, bank, fnets, scenes, cfg));
  CHECK(train_addresser(fixed_cosine_addresser(), bank, fnets, scenes, cfg) == fixed_cosine_addresser());
  CHECK_THROWS_AS(train_addresser(init, MemoryBankPair{}, fnets, scenes, cfg), InvalidArgument);

  // Candidate subsampling path.
  cfg.candidate_cap = 4;
  const auto sub = train_addresser(init, bank, fnets, scenes, cfg);
  CHECK(sub == train_addresser(init, bank, fnets, scenes, cfg));
  CHECK(all_finite(sub.f_q));
}

TEST_CASE("addresser persistence") {
  const auto nets = make_addresser(8, {8, 8, 8, Activation::ReLU});
  testutil::TempDir dir("addr");
  save_addresser(nets, dir.path() / "a", "abc123");
  std::string hash;
  CHECK(load_addresser(dir.path() / "a", &hash) == nets);
  CHECK(hash == "abc123");
  save_addresser(fixed_cosine_addresser(), dir.path() / "c", "x");
  CHECK(load_addresser(dir.path() / "c").fixed_cosine);
}

TEST_CASE("addresser training step follows the loss gradient") {
  FeatureShape fs;
  fs.d_past = 6;
  fs.d_int = 4;
  fs.embed_dim = 4;
  fs.hidden = 6;
  const auto fnets = make_feature_nets(2, fs);
  const auto data = synth_generate(9, 7, SynthOptions{});
  std::vector<Scene> scenes;
  for (const auto& s : data.scenes) scenes.push_back(normalize_scene(s).first);
  const auto bank = bank_init(fnets, scenes, 12);
  const auto decoded = decoded_bank_intentions(fnets, bank);
  AddresserNets init = make_addresser(3, {6, 5, 4, Activation::Tanh});

  AddresserTrainConfig cfg;
  cfg.sgd = {1e-3, scenes.size(), 1, 0};
  cfg.d_threshold = 3.0;
  const auto stepped = train_addresser(init, bank, fnets, scenes, cfg);

  auto total_loss = [&](const AddresserNets& n) {
    double l = 0.0;
    for (const auto& s : scenes) {
      const auto q = social_encode(fnets, s);
      for (std::size_t i = 0; i < bank.size(); ++i) {
        const double r = score(n, q, bank.entries[i].k) - pseudo_label(distance(s.destination(), decoded[i]), 3.0);
        l += r * r;
      }
    }
    return l;
  };
  // One full-batch step: new = old - lr * grad / B.
  const double scale = static_cast<double>(scenes.size()) / cfg.sgd.learning_rate;
  AddresserNets probe = init;
  double worst = 0.0;
  auto check_net = [&](Mlp& p, const Mlp& before, const Mlp& after) {
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      for (std::size_t i = 0; i < p.weights[l].size(); ++i) {
        const double analytic = (before.weights[l][i] - after.weights[l][i]) * scale;
        const double saved = p.weights[l][i];
        p.weights[l][i] = saved + 1e-6;
        const double up = total_loss(probe);
        p.weights[l][i] = saved - 1e-6;
        const double down = total_loss(probe);
        p.weights[l][i] = saved;
        const double numeric = (up - down) / 2e-6;
        worst = std::max(worst, std::abs(analytic - numeric) / std::max(1e-6, std::abs(analytic) + std::abs(numeric)));
      }
    }
  };
  check_net(probe.f_q, init.f_q, stepped.f_q);
  check_net(probe.f_k, init.f_k, stepped.f_k);
  CHECK(worst < 1e-5);
}
