#include <algorithm>
#include <random>

#include "doctest.h"
#include "kmeans_oracle.h"
#include "memtraj/errors.h"
#include "memtraj/intention.h"
#include "test_util.h"

using namespace memtraj;

namespace {

FeatureShape small_shape() {
  FeatureShape s;
  s.d_past = 8;
  s.d_int = 4;
  s.embed_dim = 4;
  s.hidden = 8;
  return s;
}

std::vector<Vec2> random_points(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-5, 5);
  std::vector<Vec2> p(n);
  for (auto& v : p) v = {u(rng), u(rng)};
  return p;
}

}  // namespace

TEST_CASE("kmeans degenerate layouts") {
  const std::vector<Vec2> pts{{0, 0}, {3, 1}, {-2, 5}, {7, 7}};
  const auto singletons = kmeans(pts, 4, 1);
  CHECK(singletons.cost == 0.0);
  auto centers = singletons.clusters.destinations;
  auto sorted_pts = pts;
  auto lex = [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); };
  std::sort(centers.begin(), centers.end(), lex);
  std::sort(sorted_pts.begin(), sorted_pts.end(), lex);
  CHECK(centers == sorted_pts);

  std::vector<Vec2> groups;
  for (int r = 0; r < 4; ++r) {
    groups.push_back({0, 0});
    groups.push_back({10, 0});
    groups.push_back({0, 10});
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto res = kmeans(groups, 3, seed);
    auto c = res.clusters.destinations;
    std::sort(c.begin(), c.end(), lex);
    CHECK(c == std::vector<Vec2>{{0, 0}, {0, 10}, {10, 0}});
    CHECK(res.clusters.member_counts == std::vector<std::size_t>{4, 4, 4});
  }

  CHECK_THROWS_AS(kmeans(pts, 5, 0), InvalidArgument);
  CHECK_THROWS_AS(kmeans(pts, 0, 0), InvalidArgument);
  CHECK_THROWS_AS(kmeans(pts, 2, 0, 0), InvalidArgument);
}

TEST_CASE("kmeans invariants on random inputs") {
  std::mt19937_64 rng(31);
  for (int rep = 0; rep < 50; ++rep) {
    const auto pts = random_points(rng, 30 + rep);
    const std::size_t k = 1 + rep % 7;
    const auto res = kmeans(pts, k, rep);
    REQUIRE(res.clusters.destinations.size() == k);
    REQUIRE(res.clusters.anchor_assignment.size() == pts.size());
    for (std::size_t c = 0; c < k; ++c) CHECK(res.clusters.member_counts[c] > 0);
    for (std::size_t i = 1; i < res.cost_history.size(); ++i) CHECK(res.cost_history[i] <= res.cost_history[i - 1]);
    // Each destination is the centroid of its members and lies in their bounding box.
    for (std::size_t c = 0; c < k; ++c) {
      Vec2 sum{0, 0}, lo{1e9, 1e9}, hi{-1e9, -1e9};
      double n = 0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        if (res.clusters.anchor_assignment[i] != c) continue;
        sum += pts[i];
        n += 1;
        lo = {std::min(lo.x, pts[i].x), std::min(lo.y, pts[i].y)};
        hi = {std::max(hi.x, pts[i].x), std::max(hi.y, pts[i].y)};
      }
      const Vec2 d = res.clusters.destinations[c];
      CHECK(distance(d, (1.0 / n) * sum) < 1e-9);
      CHECK(d.x >= lo.x - 1e-12);
      CHECK(d.x <= hi.x + 1e-12);
      CHECK(d.y >= lo.y - 1e-12);
      CHECK(d.y <= hi.y + 1e-12);
    }
    auto shuffled = pts;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto again = kmeans(shuffled, k, rep);
    auto lex = [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); };
    auto c1 = res.clusters.destinations, c2 = again.clusters.destinations;
    std::sort(c1.begin(), c1.end(), lex);
    std::sort(c2.begin(), c2.end(), lex);
    for (std::size_t c = 0; c < k; ++c) CHECK(distance(c1[c], c2[c]) < 1e-9);
  }
}

TEST_CASE("kmeans best of seeds reaches the exhaustive optimum") {
  std::mt19937_64 rng(77);
  for (int rep = 0; rep < 20; ++rep) {
    const auto pts = random_points(rng, 3 + rep % 6);
    const std::size_t k = 1 + rep % 3;
    double best = 1e300;
    for (std::uint64_t seed = 0; seed < 10; ++seed) best = std::min(best, kmeans(pts, k, seed).cost);
    const double opt = testutil::optimal_partition_cost(pts, k);
    CHECK(std::abs(best - opt) <= 1e-9 * std::max(1.0, opt));
  }
}

TEST_CASE("decode_anchors") {
  const auto nets = make_feature_nets(2, small_shape());
  std::mt19937_64 rng(8);
  std::vector<Scene> scenes;
  for (int i = 0; i < 6; ++i) scenes.push_back(normalize_scene(testutil::random_scene(rng, 8, 12, 1)).first);
  auto bank = bank_init(nets, scenes, 12);
  bank.entries[4].v = bank.entries[1].v;
  const PastFeature q = social_encode(nets, scenes[0]);
  const std::vector<Address> addrs{{4, 0.9}, {1, 0.5}, {2, 0.1}};
  const auto anchors = decode_anchors(q, addrs, bank, nets);
  REQUIRE(anchors.size() == 3);
  CHECK(anchors[0].source_address == 4);
  CHECK(anchors[0].score == 0.9);
  CHECK(anchors[0].position == anchors[1].position);
  CHECK(anchors[2].position == joint_decode(nets, q, bank.entries[2].v).destination);
  const auto stored = decode_anchors(q, addrs, bank, nets, DecodeMode::Stored);
  CHECK(stored[2].position == joint_decode(nets, bank.entries[2].k, bank.entries[2].v).destination);
  const std::vector<Address> bad{{6, 0.0}};
  CHECK_THROWS_AS(decode_anchors(q, bad, bank, nets), InvalidArgument);
}

TEST_CASE("predict_intentions shape and determinism") {
  const auto nets = make_feature_nets(2, small_shape());
  const auto data = synth_generate(4, 30, SynthOptions{});
  std::vector<Scene> scenes;
  for (const auto& s : data.scenes) scenes.push_back(normalize_scene(s).first);
  const auto bank = bank_init(nets, scenes, 12);
  const auto addr = make_addresser(1, {8, 8, 8, Activation::ReLU});
  const auto index = index_bank(addr, bank);
  IntentionOptions o{12, 4, 100, DecodeMode::Query};
  const auto a = predict_intentions(scenes[0], bank, index, addr, nets, o, 5);
  CHECK(a.intentions.destinations.size() == 4);
  CHECK(a.anchors.size() == 12);
  const auto b = predict_intentions(scenes[0], bank, index, addr, nets, o, 5);
  CHECK(a.intentions.destinations == b.intentions.destinations);
  o.anchors = 31;
  CHECK_THROWS_AS(predict_intentions(scenes[0], bank, index, addr, nets, o, 5), InvalidArgument);

  std::string csv = kIntentionsCsvHeader;
  append_intentions_csv(csv, "s0", a.intentions);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(csv.find("s0,3,") != std::string::npos);
}
