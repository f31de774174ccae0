#include "memtraj/datasets.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "memtraj/errors.h"

namespace memtraj {
namespace {

bool parse_double(const std::string& tok, double& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

// Frame and agent columns are integers, but several public dumps store them
// as "780.0"; accept any integral real.
bool parse_integral(const std::string& tok, std::int64_t& out) {
  double v = 0.0;
  if (!parse_double(tok, v) || v != std::floor(v) || std::abs(v) > 9.0e15) return false;
  out = static_cast<std::int64_t>(v);
  return true;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

void validate_scene(const Scene& scene, std::size_t t_past, std::size_t t_future) {
  if (scene.ego_past.size() != t_past) {
    throw InvalidArgument("scene " + scene.scene_id + ": ego past has " +
                          std::to_string(scene.ego_past.size()) + " rows, expected " +
                          std::to_string(t_past));
  }
  for (const auto& n : scene.neighbor_pasts) {
    if (n.size() != t_past) {
      throw InvalidArgument("scene " + scene.scene_id + ": neighbor past has " +
                            std::to_string(n.size()) + " rows, expected " + std::to_string(t_past));
    }
  }
  if (scene.ego_future && scene.ego_future->size() != t_future) {
    throw InvalidArgument("scene " + scene.scene_id + ": ego future has " +
                          std::to_string(scene.ego_future->size()) + " rows, expected " +
                          std::to_string(t_future));
  }
}

Trajectory NormTransform::invert(const Trajectory& t) const {
  Trajectory out;
  out.reserve(t.size());
  for (const auto& p : t) out.push_back(invert(p));
  return out;
}

std::vector<RawTrack> parse_tsv(const std::string& text, const std::string& source) {
  std::map<std::int64_t, std::map<std::int64_t, TrackSample>> by_agent;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::string> toks;
    for (std::string t; fields >> t;) toks.push_back(t);
    if (toks.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": " + why + ": \"" + line + "\"");
    };
    if (toks.size() != 4) fail("expected 4 fields `frame agent_id x y`, got " + std::to_string(toks.size()));
    std::int64_t frame = 0, agent = 0;
    double x = 0.0, y = 0.0;
    if (!parse_integral(toks[0], frame)) fail("bad frame");
    if (!parse_integral(toks[1], agent)) fail("bad agent id");
    if (!parse_double(toks[2], x) || !parse_double(toks[3], y)) fail("bad coordinate");
    auto& track = by_agent[agent];
    if (!track.emplace(frame, TrackSample{frame, x, y}).second) fail("duplicate frame for agent");
  }
  std::vector<RawTrack> out;
  out.reserve(by_agent.size());
  for (auto& [agent, samples] : by_agent) {
    RawTrack t;
    t.agent_id = agent;
    t.samples.reserve(samples.size());
    for (auto& [f, s] : samples) t.samples.push_back(s);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<RawTrack> load_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_tsv(buf.str(), path.string());
}

void save_tsv(const std::vector<RawTrack>& tracks, const std::filesystem::path& path) {
  struct Row {
    std::int64_t frame, agent;
    double x, y;
  };
  std::vector<Row> rows;
  for (const auto& t : tracks) {
    for (const auto& s : t.samples) rows.push_back({s.frame, t.agent_id, s.x, s.y});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.agent < b.agent;
  });
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InvalidArgument("cannot open " + path.string() + " for writing");
  for (const auto& r : rows) {
    out << r.frame << '\t' << r.agent << '\t' << format_double(r.x) << '\t' << format_double(r.y) << '\n';
  }
}

std::vector<std::filesystem::path> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest " + path.string());
  std::vector<std::filesystem::path> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    std::filesystem::path p = line.substr(b, e - b + 1);
    if (p.is_relative()) p = path.parent_path() / p;
    out.push_back(p);
  }
  return out;
}

std::vector<Scene> build_scenes(const std::vector<RawTrack>& input, const WindowOptions& options) {
  if (options.t_past < 1 || options.t_future < 1 || options.stride < 1) {
    throw InvalidArgument("build_scenes: t_past, t_future and stride must be >= 1");
  }
  std::vector<const RawTrack*> tracks;
  for (const auto& t : input) tracks.push_back(&t);
  std::sort(tracks.begin(), tracks.end(),
            [](const RawTrack* a, const RawTrack* b) { return a->agent_id < b->agent_id; });

  // Dataset-wide sampling step: smallest positive gap between consecutive samples.
  std::int64_t step = 0;
  for (const auto* t : tracks) {
    for (std::size_t i = 1; i < t->samples.size(); ++i) {
      const auto gap = t->samples[i].frame - t->samples[i - 1].frame;
      if (gap > 0 && (step == 0 || gap < step)) step = gap;
    }
  }
  if (step == 0) step = 1;

  const std::size_t window = options.t_past + (options.past_only ? 0 : options.t_future);
  auto position_at = [](const RawTrack& t, std::int64_t frame) -> const TrackSample* {
    auto it = std::lower_bound(t.samples.begin(), t.samples.end(), frame,
                               [](const TrackSample& s, std::int64_t f) { return s.frame < f; });
    return it != t.samples.end() && it->frame == frame ? &*it : nullptr;
  };

  std::vector<Scene> scenes;
  for (const auto* ego : tracks) {
    const auto& s = ego->samples;
    if (s.size() < window) continue;
    for (std::size_t start = 0; start + window <= s.size(); start += options.stride) {
      bool consecutive = true;
      for (std::size_t i = 1; i < window && consecutive; ++i) {
        consecutive = s[start + i].frame - s[start + i - 1].frame == step;
      }
      if (!consecutive) continue;

      Scene scene;
      scene.scene_id = std::to_string(ego->agent_id) + ":" + std::to_string(s[start].frame);
      for (std::size_t i = 0; i < options.t_past; ++i) scene.ego_past.push_back({s[start + i].x, s[start + i].y});
      if (!options.past_only) {
        Trajectory future;
        for (std::size_t i = options.t_past; i < window; ++i) future.push_back({s[start + i].x, s[start + i].y});
        scene.ego_future = std::move(future);
      }

      struct Candidate {
        double dist;
        std::int64_t agent;
        Trajectory past;
      };
      std::vector<Candidate> candidates;
      const Vec2 anchor = scene.last_observed();
      for (const auto* other : tracks) {
        if (other == ego) continue;
        Trajectory past;
        for (std::size_t i = 0; i < options.t_past; ++i) {
          const auto* p = position_at(*other, s[start + i].frame);
          if (p == nullptr) break;
          past.push_back({p->x, p->y});
        }
        if (past.size() != options.t_past) continue;
        candidates.push_back({distance(past.back(), anchor), other->agent_id, std::move(past)});
      }
      std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        return a.dist != b.dist ? a.dist < b.dist : a.agent < b.agent;
      });
      if (candidates.size() > options.max_neighbors) candidates.resize(options.max_neighbors);
      for (auto& c : candidates) scene.neighbor_pasts.push_back(std::move(c.past));
      scenes.push_back(std::move(scene));
    }
  }
  return scenes;
}

std::pair<Scene, NormTransform> normalize_scene(const Scene& scene) {
  NormTransform tf{scene.last_observed()};
  Scene out = scene;
  for (auto& p : out.ego_past) p = tf.apply(p);
  for (auto& n : out.neighbor_pasts) for (auto& p : n) p = tf.apply(p);
  if (out.ego_future) for (auto& p : *out.ego_future) p = tf.apply(p);
  return {std::move(out), tf};
}

std::vector<Scene> load_split(const std::filesystem::path& manifest, const WindowOptions& options) {
  std::vector<Scene> out;
  for (const auto& file : load_manifest(manifest)) {
    auto scenes = build_scenes(load_tsv(file), options);
    const std::string prefix = file.stem().string() + "/";
    for (auto& s : scenes) {
      s.scene_id = prefix + s.scene_id;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<SynthMode> default_modes() {
  const double q = std::numbers::pi / 2.0;
  return {{"straight", 0.0, 1.0 / 3.0}, {"left", q, 1.0 / 3.0}, {"right", -q, 1.0 / 3.0}};
}

SynthDataset synth_generate(std::uint64_t seed, std::size_t n_scenes, const SynthOptions& o) {
  if (o.modes.size() < 2) throw InvalidArgument("synth_generate: need at least 2 modes");
  double total = 0.0;
  for (const auto& m : o.modes) {
    if (m.probability < 0.0) throw InvalidArgument("synth_generate: negative mode probability");
    total += m.probability;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw InvalidArgument("synth_generate: mode probabilities sum to " + format_double(total) + ", not 1");
  }
  if (o.t_past < 1 || o.t_future < 1) throw InvalidArgument("synth_generate: empty horizon");
  if (o.sigma < 0.0) throw InvalidArgument("synth_generate: sigma must be >= 0");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto jitter = [&](Vec2 p) {
    if (o.sigma == 0.0) return p;
    const double dx = o.sigma * gauss(rng);
    const double dy = o.sigma * gauss(rng);
    return Vec2{p.x + dx, p.y + dy};
  };

  SynthDataset data;
  data.scenes.reserve(n_scenes);
  data.labels.reserve(n_scenes);
  for (std::size_t n = 0; n < n_scenes; ++n) {
    const double heading = 2.0 * std::numbers::pi * unit(rng);
    const double speed = o.speed + o.speed_jitter * (2.0 * unit(rng) - 1.0);
    const Vec2 start{o.area * (2.0 * unit(rng) - 1.0), o.area * (2.0 * unit(rng) - 1.0)};
    const double u = unit(rng);
    std::size_t mode = o.modes.size() - 1;
    double cum = 0.0;
    for (std::size_t m = 0; m < o.modes.size(); ++m) {
      cum += o.modes[m].probability;
      if (u < cum) {
        mode = m;
        break;
      }
    }
    const Vec2 dir{std::cos(heading), std::sin(heading)};
    const Vec2 side{-dir.y, dir.x};

    Scene scene;
    scene.scene_id = "synth-" + std::to_string(n) + "-" + o.modes[mode].name;
    for (std::size_t t = 0; t < o.t_past; ++t) {
      scene.ego_past.push_back(jitter(start + (static_cast<double>(t) * speed) * dir));
    }
    const Vec2 turn_point = start + (static_cast<double>(o.t_past - 1) * speed) * dir;
    auto endpoint_of = [&](std::size_t m, std::size_t t) {
      const double h = heading + o.modes[m].turn_radians;
      return turn_point + (static_cast<double>(t) * speed) * Vec2{std::cos(h), std::sin(h)};
    };
    Trajectory future;
    for (std::size_t t = 1; t <= o.t_future; ++t) future.push_back(jitter(endpoint_of(mode, t)));
    scene.ego_future = std::move(future);

    const auto n_neighbors = static_cast<std::size_t>(unit(rng) * static_cast<double>(o.max_neighbors + 1));
    for (std::size_t j = 0; j < std::min(n_neighbors, o.max_neighbors); ++j) {
      const double side_sign = (j % 2 == 0) ? 1.0 : -1.0;
      const Vec2 offset = (side_sign * o.neighbor_offset * static_cast<double>(j / 2 + 1)) * side;
      Trajectory past;
      for (std::size_t t = 0; t < o.t_past; ++t) {
        past.push_back(jitter(start + offset + (static_cast<double>(t) * speed) * dir));
      }
      scene.neighbor_pasts.push_back(std::move(past));
    }

    SynthLabel label;
    label.mode = mode;
    for (std::size_t m = 0; m < o.modes.size(); ++m) label.mode_endpoints.push_back(endpoint_of(m, o.t_future));
    data.scenes.push_back(std::move(scene));
    data.labels.push_back(std::move(label));
  }
  return data;
}

std::vector<RawTrack> scenes_to_tracks(const std::vector<Scene>& scenes) {
  std::vector<RawTrack> tracks;
  std::int64_t next_agent = 1;
  std::int64_t frame0 = 0;
  for (const auto& scene : scenes) {
    const std::size_t t_past = scene.ego_past.size();
    const std::size_t t_future = scene.ego_future ? scene.ego_future->size() : 0;
    RawTrack ego{next_agent++, {}};
    for (std::size_t t = 0; t < t_past; ++t) {
      ego.samples.push_back({frame0 + static_cast<std::int64_t>(t), scene.ego_past[t].x, scene.ego_past[t].y});
    }
    for (std::size_t t = 0; t < t_future; ++t) {
      const auto& p = (*scene.ego_future)[t];
      ego.samples.push_back({frame0 + static_cast<std::int64_t>(t_past + t), p.x, p.y});
    }
    tracks.push_back(std::move(ego));
    for (const auto& n : scene.neighbor_pasts) {
      RawTrack nb{next_agent++, {}};
      for (std::size_t t = 0; t < n.size(); ++t) {
        nb.samples.push_back({frame0 + static_cast<std::int64_t>(t), n[t].x, n[t].y});
      }
      tracks.push_back(std::move(nb));
    }
    // A gap of several frames keeps scenes from bleeding into each other.
    frame0 += static_cast<std::int64_t>(t_past + t_future) + 5;
  }
  return tracks;
}

}  // namespace memtraj
