#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "memtraj/feature_learning.h"
#include "memtraj/membank.h"

namespace memtraj {

/// Learned similarity: cosine between f_q(q) and f_k(k_i). With
/// `fixed_cosine` set both projections are the identity and the nets are unused.
struct AddresserNets {
  Mlp f_q;
  Mlp f_k;
  bool fixed_cosine = false;

  friend bool operator==(const AddresserNets&, const AddresserNets&) = default;
};

struct AddresserShape {
  std::size_t d_past = 128;
  std::size_t hidden = 128;
  std::size_t d_addr = 128;
  Activation activation = Activation::ReLU;
};

AddresserNets make_addresser(std::uint64_t seed, const AddresserShape& shape);
AddresserNets fixed_cosine_addresser();

struct ScoreVector {
  std::vector<double> scores;
};

/// Cosine similarity clamped to [-1, 1]; 0 when either norm is below 1e-12.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

double score(const AddresserNets& nets, const PastFeature& q, const PastFeature& k);

/// max(0, (d_T - d) / d_T). Throws InvalidArgument when d_T <= 0.
double pseudo_label(double d, double d_threshold);

/// Sum of squared differences between scores and labels.
double addresser_loss(const ScoreVector& scores, std::span<const double> labels);

/// Projected keys f_k(k_i) for every bank entry, computed once per frozen bank.
struct AddressIndex {
  std::vector<std::vector<double>> keys;
};

AddressIndex index_bank(const AddresserNets& nets, const MemoryBankPair& bank);
ScoreVector score_all(const AddresserNets& nets, const AddressIndex& index, const PastFeature& q);

struct Address {
  std::size_t index = 0;
  double score = 0.0;
};

/// The L best-scoring addresses in descending score order; ties go to the lower
/// address. Throws InvalidArgument unless 1 <= L <= M.
std::vector<Address> top_l(const AddresserNets& nets, const AddressIndex& index, const PastFeature& q,
                           std::size_t l);
std::vector<Address> top_l(const AddresserNets& nets, const PastFeature& q, const MemoryBankPair& bank,
                           std::size_t l);

struct AddresserTrainConfig {
  SgdConfig sgd{1e-4, 32, 10, 0};
  double d_threshold = 0.1;
  /// Banks larger than this are subsampled per batch (plus each query's
  /// oracle-nearest entry).
  std::size_t candidate_cap = 2048;
};

struct AddresserTrainLog {
  TrainLog loss;
  std::size_t degenerate_scores = 0;
};

/// Intention each bank entry decodes to from its own stored pair [k_i; v_i].
std::vector<Vec2> decoded_bank_intentions(const FeatureNets& nets, const MemoryBankPair& bank);

/// Trains f_q and f_k on the pseudo-label regression loss. Queries are the
/// normalized training scenes; bank, encoders and decoder stay frozen.
AddresserNets train_addresser(AddresserNets nets, const MemoryBankPair& bank, const FeatureNets& feature_nets,
                              const std::vector<Scene>& scenes, const AddresserTrainConfig& config,
                              AddresserTrainLog* log = nullptr);

void save_addresser(const AddresserNets& nets, const std::filesystem::path& dir, const std::string& bank_hash);
/// Loads the nets; `bank_hash_out` receives the hash of the bank they were trained against.
AddresserNets load_addresser(const std::filesystem::path& dir, std::string* bank_hash_out = nullptr);

}  // namespace memtraj
