#include "memtraj/evalkit.h"

#include <limits>
#include <sstream>

#include "memtraj/errors.h"
#include "text_format.h"

namespace memtraj {
namespace {

void check_predictions(std::span<const Trajectory> preds, const Trajectory& gt, const char* what) {
  if (preds.empty()) throw InvalidArgument(std::string(what) + ": empty prediction set");
  if (gt.empty()) throw InvalidArgument(std::string(what) + ": empty ground truth");
  for (const auto& p : preds) {
    if (p.size() != gt.size()) {
      throw InvalidArgument(std::string(what) + ": prediction length " + std::to_string(p.size()) +
                            " differs from ground truth length " + std::to_string(gt.size()));
    }
  }
}

}  // namespace

std::size_t best_fde_index(std::span<const Trajectory> preds, const Trajectory& gt) {
  check_predictions(preds, gt, "min_fde");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const double d = distance(preds[k].back(), gt.back());
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

double min_fde(std::span<const Trajectory> preds, const Trajectory& gt) {
  return distance(preds[best_fde_index(preds, gt)].back(), gt.back());
}

double min_ade(std::span<const Trajectory> preds, const Trajectory& gt) {
  check_predictions(preds, gt, "min_ade");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : preds) {
    double sum = 0.0;
    for (std::size_t t = 0; t < gt.size(); ++t) sum += distance(p[t], gt[t]);
    best = std::min(best, sum / static_cast<double>(gt.size()));
  }
  return best;
}

MetricReport aggregate_report(std::vector<MetricRow> rows, std::size_t k, std::string units) {
  if (rows.empty()) throw InvalidArgument("metric report needs at least one scene");
  MetricReport r;
  r.k = k;
  r.units = std::move(units);
  r.n_scenes = rows.size();
  for (const auto& row : rows) {
    r.min_ade_k += row.min_ade;
    r.min_fde_k += row.min_fde;
  }
  r.min_ade_k /= static_cast<double>(rows.size());
  r.min_fde_k /= static_cast<double>(rows.size());
  r.rows = std::move(rows);
  return r;
}

std::string report_csv(const MetricReport& report) {
  std::string out = "scene_id,min_ade,min_fde,best_k_index\n";
  for (const auto& row : report.rows) {
    out += row.scene_id + "," + format_real(row.min_ade) + "," + format_real(row.min_fde) + "," +
           std::to_string(row.best_k_index) + "\n";
  }
  return out;
}

std::vector<MetricRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<MetricRow> rows;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream fields(line);
    for (std::string c; std::getline(fields, c, ',');) cols.push_back(c);
    if (cols.size() != 4) throw ParseError("report csv line " + std::to_string(line_no) + ": expected 4 columns");
    try {
      rows.push_back({cols[0], std::stod(cols[1]), std::stod(cols[2]), std::stoul(cols[3])});
    } catch (const std::exception&) {
      throw ParseError("report csv line " + std::to_string(line_no) + ": bad number");
    }
  }
  return rows;
}

std::string report_summary(const MetricReport& report) {
  std::string out;
  out += "min_ade_" + std::to_string(report.k) + "=" + format_real(report.min_ade_k) + "\n";
  out += "min_fde_" + std::to_string(report.k) + "=" + format_real(report.min_fde_k) + "\n";
  out += "k=" + std::to_string(report.k) + "\n";
  out += "n_scenes=" + std::to_string(report.n_scenes) + "\n";
  out += "units=" + report.units + "\n";
  return out;
}

Trajectory constant_velocity_forecast(const Scene& scene, std::size_t t_future) {
  const auto& past = scene.ego_past;
  Vec2 velocity{};
  if (past.size() >= 2) velocity = (1.0 / static_cast<double>(past.size() - 1)) * (past.back() - past.front());
  Trajectory out;
  for (std::size_t t = 1; t <= t_future; ++t) out.push_back(past.back() + static_cast<double>(t) * velocity);
  return out;
}

MetricReport evaluate(const ModelBundle& model, const std::vector<Scene>& scenes, const PredictOptions& options,
                      std::uint64_t seed, const std::string& units, std::size_t threads) {
  if (scenes.empty()) throw InvalidArgument("evaluate: empty dataset");
  std::vector<MetricRow> rows(scenes.size());
  parallel_for(scenes.size(), threads, [&](std::size_t i) {
    const Scene& s = scenes[i];
    if (!s.ego_future) throw InvalidArgument("evaluate: scene " + s.scene_id + " has no future");
    const auto pred = predict_scene(model, s, options, scene_seed(seed, i));
    rows[i] = {s.scene_id, min_ade(pred.futures, *s.ego_future), min_fde(pred.futures, *s.ego_future),
               best_fde_index(pred.futures, *s.ego_future)};
  });
  return aggregate_report(std::move(rows), options.intention.modes, units);
}

}  // namespace memtraj
