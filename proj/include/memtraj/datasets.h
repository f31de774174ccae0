#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "memtraj/geometry.h"

namespace memtraj {

struct TrackSample {
  std::int64_t frame = 0;
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const TrackSample&, const TrackSample&) = default;
};

/// All samples of one agent, ordered by frame.
struct RawTrack {
  std::int64_t agent_id = 0;
  std::vector<TrackSample> samples;

  friend bool operator==(const RawTrack&, const RawTrack&) = default;
};

/// One prediction case: the ego past, the pasts of its neighbors over the same
/// frames, and (when known) the ego future.
struct Scene {
  std::string scene_id;
  Trajectory ego_past;
  std::vector<Trajectory> neighbor_pasts;
  std::optional<Trajectory> ego_future;

  Vec2 last_observed() const { return ego_past.back(); }
  Vec2 start_position() const { return ego_past.front(); }
  Vec2 destination() const { return ego_future->back(); }

  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Throws InvalidArgument when the scene does not have exactly t_past past rows
/// per agent and, if present, exactly t_future future rows.
void validate_scene(const Scene& scene, std::size_t t_past, std::size_t t_future);

struct NormTransform {
  Vec2 translation;

  Vec2 apply(Vec2 p) const { return p - translation; }
  Vec2 invert(Vec2 p) const { return p + translation; }
  Trajectory invert(const Trajectory& t) const;
};

/// Whitespace separated `frame agent_id x y`, one sample per line.
std::vector<RawTrack> load_tsv(const std::filesystem::path& path);
std::vector<RawTrack> parse_tsv(const std::string& text, const std::string& source = "<memory>");
/// Writes samples ordered by frame then agent, with round-trippable precision.
void save_tsv(const std::vector<RawTrack>& tracks, const std::filesystem::path& path);

/// Reads a split manifest: one TSV path per non-empty line, relative paths are
/// resolved against the manifest's directory.
std::vector<std::filesystem::path> load_manifest(const std::filesystem::path& path);

struct WindowOptions {
  std::size_t t_past = 8;
  std::size_t t_future = 12;
  std::size_t stride = 1;
  std::size_t max_neighbors = 8;
  /// Cut t_past-only windows and leave ego_future empty (inference input).
  bool past_only = false;
};

/// Slides a window of t_past + t_future consecutive frames over every agent.
/// Neighbors are the other agents present on all t_past past frames, capped to
/// the nearest `max_neighbors` by distance at the last observed frame.
std::vector<Scene> build_scenes(const std::vector<RawTrack>& tracks, const WindowOptions& options);

/// Translates the scene so the ego's last observed position is the origin.
std::pair<Scene, NormTransform> normalize_scene(const Scene& scene);

/// Convenience: load every TSV listed in a manifest and window it.
std::vector<Scene> load_split(const std::filesystem::path& manifest, const WindowOptions& options);

// Synthetic multimodal walkers.

struct SynthMode {
  std::string name;
  double turn_radians = 0.0;
  double probability = 0.0;
};

/// Straight, left 90 degrees, right 90 degrees with equal probability.
std::vector<SynthMode> default_modes();

struct SynthOptions {
  std::size_t t_past = 8;
  std::size_t t_future = 12;
  double sigma = 0.02;        // per-point Gaussian jitter
  double speed = 0.4;         // world units per step
  double speed_jitter = 0.0;  // uniform half-width added to speed
  double area = 10.0;         // start positions uniform in [-area, area]^2
  std::size_t max_neighbors = 2;
  double neighbor_offset = 1.0;
  std::vector<SynthMode> modes = default_modes();
};

struct SynthLabel {
  std::size_t mode = 0;
  /// Noise-free endpoint of every mode from this scene's (noise-free) turning point,
  /// in world coordinates. Index matches `SynthOptions::modes`.
  std::vector<Vec2> mode_endpoints;
};

struct SynthDataset {
  std::vector<Scene> scenes;
  std::vector<SynthLabel> labels;
};

SynthDataset synth_generate(std::uint64_t seed, std::size_t n_scenes, const SynthOptions& options);

/// Lays every scene out in its own frame block so that build_scenes with
/// stride 1 recovers exactly the same scenes (neighbors are written for the
/// past frames only).
std::vector<RawTrack> scenes_to_tracks(const std::vector<Scene>& scenes);

}  // namespace memtraj
