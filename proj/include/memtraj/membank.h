#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "memtraj/datasets.h"
#include "memtraj/feature_learning.h"

namespace memtraj {

/// One memorized instance: aligned past and intention features plus the raw
/// coordinates used by the redundancy test, in normalized scene coordinates.
struct MemoryEntry {
  PastFeature k;
  IntentionFeature v;
  Vec2 start_pos;
  Vec2 destination;
  std::uint64_t sample_id = 0;  // index of the originating training scene

  friend bool operator==(const MemoryEntry&, const MemoryEntry&) = default;
};

struct BankMeta {
  std::uint32_t d_past = 0;
  std::uint32_t d_int = 0;
  std::uint32_t t_past = 0;
  std::uint32_t t_future = 0;
  double theta_past = 0.0;
  double theta_int = 0.0;
  std::uint64_t filter_seed = 0;
  std::uint64_t source_hash = 0;

  friend bool operator==(const BankMeta&, const BankMeta&) = default;
};

/// The past bank and the intention bank share one entry list, so they always
/// have the same size M.
struct MemoryBankPair {
  std::vector<MemoryEntry> entries;
  BankMeta meta;

  std::size_t size() const { return entries.size(); }
  friend bool operator==(const MemoryBankPair&, const MemoryBankPair&) = default;
};

/// One entry per normalized training scene, in dataset order; sample_id is the
/// scene's index.
MemoryBankPair bank_init(const FeatureNets& nets, const std::vector<Scene>& scenes, std::size_t t_future,
                         std::uint64_t source_hash = 0);

bool is_redundant(const MemoryEntry& a, const MemoryEntry& b, double theta_past, double theta_int);

/// Seeded permutation of [0, m) used as the greedy visit order.
std::vector<std::size_t> filter_visit_order(std::size_t m, std::uint64_t seed);

/// Greedy filtering over the seeded visit order: an entry is kept iff it is not
/// redundant with any entry kept before it. Every visited entry leaves the
/// candidate pool whether or not it is kept. Returns the kept addresses of the
/// input bank in visit order.
std::vector<std::size_t> bank_filter_indices(const MemoryBankPair& bank, double theta_past, double theta_int,
                                             std::uint64_t seed);
MemoryBankPair bank_filter(const MemoryBankPair& bank, double theta_past, double theta_int, std::uint64_t seed);

// "MTBK" little-endian binary format.
inline constexpr std::uint32_t kBankFormatVersion = 1;
inline constexpr std::size_t kBankHeaderBytes = 64;
std::size_t bank_record_bytes(std::size_t d_past, std::size_t d_int);

void write_bank(std::ostream& out, const MemoryBankPair& bank);
MemoryBankPair read_bank(std::istream& in);
void bank_save(const MemoryBankPair& bank, const std::filesystem::path& path);
MemoryBankPair bank_load(const std::filesystem::path& path);

}  // namespace memtraj
