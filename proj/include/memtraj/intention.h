#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "memtraj/addresser.h"
#include "memtraj/feature_learning.h"
#include "memtraj/membank.h"

namespace memtraj {

/// How a retrieved intention feature v_i is decoded into an anchor:
/// `Query` decodes [q; v_i] with the current scene's past feature,
/// `Stored` decodes the entry's own pair [k_i; v_i].
enum class DecodeMode { Query, Stored };

struct IntentionAnchor {
  Vec2 position;
  std::size_t source_address = 0;
  double score = 0.0;
};

struct IntentionSet {
  std::vector<Vec2> destinations;              // K rows
  std::vector<std::size_t> anchor_assignment;  // one cluster index per anchor
  std::vector<std::size_t> member_counts;      // anchors per cluster
};

std::vector<IntentionAnchor> decode_anchors(const PastFeature& q, std::span<const Address> addresses,
                                            const MemoryBankPair& bank, const FeatureNets& nets,
                                            DecodeMode mode = DecodeMode::Query);

struct KMeansResult {
  IntentionSet clusters;
  double cost = 0.0;                 // sum of squared distances to assigned centroids
  std::vector<double> cost_history;  // cost after every Lloyd iteration
  std::size_t iterations = 0;
};

/// k-means++ seeding (over the points in lexicographic order, so the result does
/// not depend on input order) followed by Lloyd iterations until the assignment
/// stops changing or max_iters is reached. An empty cluster takes the point that
/// is farthest from its current centroid.
KMeansResult kmeans(std::span<const Vec2> points, std::size_t k, std::uint64_t seed, std::size_t max_iters = 100);

struct IntentionPrediction {
  IntentionSet intentions;
  std::vector<IntentionAnchor> anchors;
};

struct IntentionOptions {
  std::size_t anchors = 120;  // L
  std::size_t modes = 20;     // K
  std::size_t kmeans_iters = 100;
  DecodeMode decode_mode = DecodeMode::Query;
};

/// Encode, address, decode, cluster, for one normalized scene.
IntentionPrediction predict_intentions(const Scene& scene, const MemoryBankPair& bank, const AddressIndex& index,
                                       const AddresserNets& addresser, const FeatureNets& nets,
                                       const IntentionOptions& options, std::uint64_t seed);

/// CSV rows `scene_id,cluster_index,x,y,member_count`.
void append_intentions_csv(std::string& out, const std::string& scene_id, const IntentionSet& set);
inline constexpr const char* kIntentionsCsvHeader = "scene_id,cluster_index,x,y,member_count\n";

}  // namespace memtraj
