#include "memtraj/membank.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "memtraj/binio.h"
#include "memtraj/errors.h"

namespace memtraj {

MemoryBankPair bank_init(const FeatureNets& nets, const std::vector<Scene>& scenes, std::size_t t_future,
                         std::uint64_t source_hash) {
  if (scenes.empty()) throw InvalidArgument("bank_init: empty dataset");
  MemoryBankPair bank;
  bank.meta.d_past = static_cast<std::uint32_t>(nets.d_past());
  bank.meta.d_int = static_cast<std::uint32_t>(nets.d_int());
  bank.meta.t_past = static_cast<std::uint32_t>(nets.t_past());
  bank.meta.t_future = static_cast<std::uint32_t>(t_future);
  bank.meta.source_hash = source_hash;
  bank.entries.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i];
    if (!s.ego_future) throw InvalidArgument("bank_init: scene " + s.scene_id + " has no future");
    validate_scene(s, nets.t_past(), t_future);
    MemoryEntry e;
    e.k = social_encode(nets, s);
    e.v = intention_encode(nets, s.destination());
    e.start_pos = s.start_position();
    e.destination = s.destination();
    e.sample_id = i;
    bank.entries.push_back(std::move(e));
  }
  return bank;
}

bool is_redundant(const MemoryEntry& a, const MemoryEntry& b, double theta_past, double theta_int) {
  return distance(a.start_pos, b.start_pos) <= theta_past && distance(a.destination, b.destination) <= theta_int;
}

std::vector<std::size_t> filter_visit_order(std::size_t m, std::uint64_t seed) {
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<std::size_t> bank_filter_indices(const MemoryBankPair& bank, double theta_past, double theta_int,
                                             std::uint64_t seed) {
  if (!(theta_past >= 0.0) || !(theta_int >= 0.0)) {
    throw InvalidArgument("bank_filter: thresholds must be >= 0");
  }
  std::vector<std::size_t> kept;
  for (std::size_t idx : filter_visit_order(bank.size(), seed)) {
    const auto& candidate = bank.entries[idx];
    const bool redundant = std::any_of(kept.begin(), kept.end(), [&](std::size_t j) {
      return is_redundant(candidate, bank.entries[j], theta_past, theta_int);
    });
    if (!redundant) kept.push_back(idx);
  }
  return kept;
}

MemoryBankPair bank_filter(const MemoryBankPair& bank, double theta_past, double theta_int, std::uint64_t seed) {
  MemoryBankPair out;
  out.meta = bank.meta;
  out.meta.theta_past = theta_past;
  out.meta.theta_int = theta_int;
  out.meta.filter_seed = seed;
  const auto kept = bank_filter_indices(bank, theta_past, theta_int, seed);
  out.entries.reserve(kept.size());
  for (std::size_t idx : kept) out.entries.push_back(bank.entries[idx]);
  return out;
}

std::size_t bank_record_bytes(std::size_t d_past, std::size_t d_int) { return (d_past + d_int + 4) * 8 + 8; }

// Header (64 bytes): "MTBK", version u32, d_past u32, d_int u32, t_past u32,
// t_future u32, theta_past f64, theta_int f64, filter seed u64, source hash u64,
// M u64. Then M records: k f64[d_past], v f64[d_int], start_pos f64[2],
// destination f64[2], sample_id u64.
void write_bank(std::ostream& out, const MemoryBankPair& bank) {
  const auto& m = bank.meta;
  binio::put_magic(out, "MTBK");
  binio::put_u32(out, kBankFormatVersion);
  binio::put_u32(out, m.d_past);
  binio::put_u32(out, m.d_int);
  binio::put_u32(out, m.t_past);
  binio::put_u32(out, m.t_future);
  binio::put_f64(out, m.theta_past);
  binio::put_f64(out, m.theta_int);
  binio::put_u64(out, m.filter_seed);
  binio::put_u64(out, m.source_hash);
  binio::put_u64(out, bank.entries.size());
  for (const auto& e : bank.entries) {
    if (e.k.values.size() != m.d_past || e.v.values.size() != m.d_int) {
      throw InvalidArgument("bank_save: entry feature dims disagree with bank metadata");
    }
    for (double x : e.k.values) binio::put_f64(out, x);
    for (double x : e.v.values) binio::put_f64(out, x);
    binio::put_f64(out, e.start_pos.x);
    binio::put_f64(out, e.start_pos.y);
    binio::put_f64(out, e.destination.x);
    binio::put_f64(out, e.destination.y);
    binio::put_u64(out, e.sample_id);
  }
}

MemoryBankPair read_bank(std::istream& in) {
  binio::Reader r(in);
  r.expect_magic("MTBK");
  const auto version = r.u32("version");
  if (version != kBankFormatVersion) {
    throw FormatError("unsupported MTBK version " + std::to_string(version), r.offset() - 4);
  }
  MemoryBankPair bank;
  auto& m = bank.meta;
  m.d_past = r.u32("d_past");
  m.d_int = r.u32("d_int");
  m.t_past = r.u32("t_past");
  m.t_future = r.u32("t_future");
  if (m.d_past == 0 || m.d_int == 0 || m.d_past > (1u << 20) || m.d_int > (1u << 20)) {
    throw FormatError("invalid feature dims in bank header", r.offset() - 16);
  }
  m.theta_past = r.f64("theta_past");
  m.theta_int = r.f64("theta_int");
  m.filter_seed = r.u64("filter seed");
  m.source_hash = r.u64("source hash");
  const auto count = r.u64("entry count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto record_start = r.offset();
    MemoryEntry e;
    e.k.values.resize(m.d_past);
    for (auto& x : e.k.values) x = r.f64("past feature");
    e.v.values.resize(m.d_int);
    for (auto& x : e.v.values) x = r.f64("intention feature");
    e.start_pos = {r.f64("start_pos"), r.f64("start_pos")};
    e.destination = {r.f64("destination"), r.f64("destination")};
    e.sample_id = r.u64("sample_id");
    if (!std::isfinite(e.start_pos.x) || !std::isfinite(e.start_pos.y) || !std::isfinite(e.destination.x) ||
        !std::isfinite(e.destination.y)) {
      throw FormatError("non-finite coordinates in record " + std::to_string(i), record_start);
    }
    bank.entries.push_back(std::move(e));
  }
  return bank;
}

void bank_save(const MemoryBankPair& bank, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot open " + path.string() + " for writing");
  write_bank(out, bank);
  if (!out) throw InvalidArgument("write failed for " + path.string());
}

MemoryBankPair bank_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  auto bank = read_bank(in);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after MTBK payload", static_cast<std::uint64_t>(in.tellg()));
  }
  return bank;
}

}  // namespace memtraj
