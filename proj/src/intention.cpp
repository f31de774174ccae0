#include "memtraj/intention.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "memtraj/errors.h"
#include "text_format.h"

namespace memtraj {

std::vector<IntentionAnchor> decode_anchors(const PastFeature& q, std::span<const Address> addresses,
                                            const MemoryBankPair& bank, const FeatureNets& nets, DecodeMode mode) {
  std::vector<IntentionAnchor> anchors;
  anchors.reserve(addresses.size());
  for (const auto& a : addresses) {
    if (a.index >= bank.size()) {
      throw InvalidArgument("decode_anchors: address " + std::to_string(a.index) + " outside bank of size " +
                            std::to_string(bank.size()));
    }
    const auto& entry = bank.entries[a.index];
    const PastFeature& past = mode == DecodeMode::Query ? q : entry.k;
    anchors.push_back({joint_decode(nets, past, entry.v).destination, a.index, a.score});
  }
  return anchors;
}

namespace {

double sq_dist(Vec2 a, Vec2 b) { return squared_norm(a - b); }

std::size_t nearest_centroid(Vec2 p, const std::vector<Vec2>& centroids) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = sq_dist(p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace

KMeansResult kmeans(std::span<const Vec2> input, std::size_t k, std::uint64_t seed, std::size_t max_iters) {
  const std::size_t n = input.size();
  if (k < 1) throw InvalidArgument("kmeans: K must be >= 1");
  if (k > n) throw InvalidArgument("kmeans: K = " + std::to_string(k) + " exceeds L = " + std::to_string(n));
  if (max_iters < 1) throw InvalidArgument("kmeans: max_iters must be >= 1");
  for (const auto& p : input) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw InvalidArgument("kmeans: non-finite point");
  }

  // Work on the lexicographically sorted points; map back at the end.
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    return input[a].x != input[b].x ? input[a].x < input[b].x : input[a].y < input[b].y;
  });
  std::vector<Vec2> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = input[perm[i]];

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vec2> centroids;
  centroids.reserve(k);
  centroids.push_back(pts[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
  std::vector<double> d2(n);
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) best = std::min(best, sq_dist(pts[i], c));
      d2[i] = best;
      total += best;
    }
    std::size_t chosen = n - 1;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double cum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        cum += d2[i];
        if (d2[i] > 0.0 && target < cum) {
          chosen = i;
          break;
        }
      }
      // Rounding can leave target == cum at the end; take the last positive-weight point.
      if (d2[chosen] == 0.0) {
        for (std::size_t i = n; i-- > 0;) {
          if (d2[i] > 0.0) {
            chosen = i;
            break;
          }
        }
      }
    } else {
      chosen = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    centroids.push_back(pts[chosen]);
  }

  KMeansResult result;
  std::vector<std::size_t> assign(n, std::numeric_limits<std::size_t>::max());
  std::vector<std::size_t> counts(k);
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    std::vector<std::size_t> next(n);
    for (std::size_t i = 0; i < n; ++i) next[i] = nearest_centroid(pts[i], centroids);

    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t a : next) ++counts[a];
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[next[i]] < 2) continue;
        const double d = sq_dist(pts[i], centroids[next[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      --counts[next[far]];
      next[far] = c;
      counts[c] = 1;
      centroids[c] = pts[far];
    }

    const bool changed = next != assign;
    assign = std::move(next);
    std::vector<Vec2> sums(k);
    for (std::size_t i = 0; i < n; ++i) sums[assign[i]] += pts[i];
    for (std::size_t c = 0; c < k; ++c) centroids[c] = (1.0 / static_cast<double>(counts[c])) * sums[c];

    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) cost += sq_dist(pts[i], centroids[assign[i]]);
    result.cost_history.push_back(cost);
    result.iterations = iter + 1;
    if (!changed) break;
  }

  result.cost = result.cost_history.back();
  result.clusters.destinations = centroids;
  result.clusters.member_counts = counts;
  result.clusters.anchor_assignment.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) result.clusters.anchor_assignment[perm[i]] = assign[i];
  return result;
}

IntentionPrediction predict_intentions(const Scene& scene, const MemoryBankPair& bank, const AddressIndex& index,
                                       const AddresserNets& addresser, const FeatureNets& nets,
                                       const IntentionOptions& options, std::uint64_t seed) {
  if (options.modes > options.anchors) {
    throw InvalidArgument("predict_intentions: K = " + std::to_string(options.modes) + " exceeds L = " +
                          std::to_string(options.anchors));
  }
  const PastFeature q = social_encode(nets, scene);
  const auto addresses = top_l(addresser, index, q, options.anchors);
  IntentionPrediction out;
  out.anchors = decode_anchors(q, addresses, bank, nets, options.decode_mode);
  std::vector<Vec2> points;
  points.reserve(out.anchors.size());
  for (const auto& a : out.anchors) points.push_back(a.position);
  out.intentions = kmeans(points, options.modes, seed, options.kmeans_iters).clusters;
  return out;
}

void append_intentions_csv(std::string& out, const std::string& scene_id, const IntentionSet& set) {
  for (std::size_t c = 0; c < set.destinations.size(); ++c) {
    out += scene_id + "," + std::to_string(c) + "," + format_real(set.destinations[c].x) + "," +
           format_real(set.destinations[c].y) + "," + std::to_string(set.member_counts[c]) + "\n";
  }
}

}  // namespace memtraj
