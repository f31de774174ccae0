#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "memtraj/addresser.h"
#include "memtraj/datasets.h"
#include "memtraj/feature_learning.h"
#include "memtraj/fulfillment.h"
#include "memtraj/intention.h"
#include "memtraj/membank.h"

namespace memtraj {

/// Every frozen artifact needed for inference.
struct ModelBundle {
  FeatureNets features;
  MemoryBankPair bank;
  AddresserNets addresser;
  FulfillNets fulfill;
  AddressIndex index;  // f_k projections of `bank`; refresh with reindex()

  void reindex() { index = index_bank(addresser, bank); }
};

struct PredictOptions {
  IntentionOptions intention;
  /// Replace the last predicted future point with the conditioning destination.
  bool snap_to_destination = false;
};

/// K destination-conditioned trajectories for one scene, in world coordinates.
struct ScenePrediction {
  std::vector<Vec2> destinations;
  std::vector<Trajectory> futures;
  IntentionPrediction intention;  // normalized coordinates
};

/// Per-scene seed derived from a run seed and the scene's position in the input.
std::uint64_t scene_seed(std::uint64_t seed, std::size_t scene_index);

/// Normalize, predict K intentions, fulfill each, map back to world coordinates.
ScenePrediction predict_scene(const ModelBundle& model, const Scene& scene, const PredictOptions& options,
                              std::uint64_t seed);

/// Runs `fn(i)` for i in [0, n) across up to `threads` workers (0 reads
/// MEMTRAJ_THREADS, default 1). Work items must be independent.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);
std::size_t configured_threads();

}  // namespace memtraj
