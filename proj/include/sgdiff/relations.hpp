#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sgdiff/graph.hpp"
#include "sgdiff/jsonio.hpp"
#include "sgdiff/scene.hpp"

namespace sgdiff {

// Geometry thresholds for the spatial predicates. Axis convention: x = right,
// y = front, z = up. Predicates evaluate world-frame axis-aligned footprints;
// orientation axes are decode-time metadata only.
struct PredicateConfig {
  double directional_margin = 0.05;  // tau, meters
  double close_by_distance = 1.5;    // centroid distance bound, meters
  double standing_on_gap = 0.05;     // vertical contact tolerance, meters
  double standing_on_overlap = 0.5;  // footprint overlap / smaller footprint

  void validate() const {
    SG_CHECK_CONFIG(directional_margin > 0 && close_by_distance > 0 &&
                        standing_on_gap > 0 && standing_on_overlap > 0,
                    "predicate config: thresholds must be positive");
  }
};

namespace detail {

inline double interval_overlap(double lo_a, double hi_a, double lo_b,
                               double hi_b) {
  return std::max(0.0, std::min(hi_a, hi_b) - std::max(lo_a, lo_b));
}

inline double footprint_area(const LabeledBox& b) {
  return b.size[0] * b.size[1];
}

}  // namespace detail

// Directed spatial predicate between two decoded boxes. The margin excludes
// ties, so no directional relation and its mirror can hold simultaneously.
inline bool eval_predicate(const std::string& relation, const LabeledBox& a,
                           const LabeledBox& b, const PredicateConfig& cfg) {
  const double tau = cfg.directional_margin;
  if (relation == "left") return a.centroid[0] < b.centroid[0] - tau;
  if (relation == "right") return a.centroid[0] > b.centroid[0] + tau;
  if (relation == "behind") return a.centroid[1] < b.centroid[1] - tau;
  if (relation == "front") return a.centroid[1] > b.centroid[1] + tau;
  if (relation == "below") return a.centroid[2] < b.centroid[2] - tau;
  if (relation == "above") return a.centroid[2] > b.centroid[2] + tau;
  if (relation == "close-by") {
    double d2 = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double d = a.centroid[i] - b.centroid[i];
      d2 += d * d;
    }
    return std::sqrt(d2) < cfg.close_by_distance;
  }
  if (relation == "standing-on") {
    const double bottom_a = a.centroid[2] - a.size[2] / 2.0;
    const double top_b = b.centroid[2] + b.size[2] / 2.0;
    if (std::abs(bottom_a - top_b) >= cfg.standing_on_gap) return false;
    const double ox = detail::interval_overlap(
        a.centroid[0] - a.size[0] / 2, a.centroid[0] + a.size[0] / 2,
        b.centroid[0] - b.size[0] / 2, b.centroid[0] + b.size[0] / 2);
    const double oy = detail::interval_overlap(
        a.centroid[1] - a.size[1] / 2, a.centroid[1] + a.size[1] / 2,
        b.centroid[1] - b.size[1] / 2, b.centroid[1] + b.size[1] / 2);
    const double smaller =
        std::min(detail::footprint_area(a), detail::footprint_area(b));
    if (smaller <= 0.0) return false;
    return ox * oy >= cfg.standing_on_overlap * smaller;
  }
  throw std::runtime_error(msg_cat("eval_predicate: unknown relation \"",
                                   relation, "\""));
}

inline LabeledBox box_from_object(const SceneObject& obj) {
  LabeledBox b;
  b.label = obj.label;
  b.centroid = obj.centroid;
  b.axes = obj.axes;
  b.size = obj.size;
  return b;
}

namespace detail {

// per-row decode; empty rows stay disengaged so relations on them score 0
inline std::vector<std::optional<LabeledBox>> boxes_by_row(
    const SceneMatrix& world) {
  std::vector<std::optional<LabeledBox>> out(world.n_max());
  const auto boxes = to_bounding_boxes(world, nullptr);
  std::size_t bi = 0;
  for (std::size_t i = 0; i < world.n_max(); ++i)
    if (!world.row_empty(i)) out[i] = boxes[bi++];
  return out;
}

}  // namespace detail

// Fraction of condition edges whose predicate holds between the boxes at the
// edge's node indices. The scene must be world-space (denormalized).
inline double ras_scene(const SceneMatrix& world, const SceneGraph& graph,
                        const RelationVocab& relations,
                        const PredicateConfig& cfg,
                        std::map<std::string, std::pair<std::size_t, std::size_t>>*
                            breakdown = nullptr) {
  SG_CHECK(!graph.edges.empty(),
           "ras_scene: score undefined for a graph with no relations");
  const auto rows = detail::boxes_by_row(world);
  std::size_t held = 0;
  for (const auto& e : graph.edges) {
    const std::string& rname = relations.name(e.relation);
    bool ok = false;
    if (e.source < rows.size() && e.target < rows.size() && rows[e.source] &&
        rows[e.target])
      ok = eval_predicate(rname, *rows[e.source], *rows[e.target], cfg);
    held += ok ? 1u : 0u;
    if (breakdown) {
      auto& entry = (*breakdown)[rname];
      entry.first += ok ? 1u : 0u;
      entry.second += 1u;
    }
  }
  return static_cast<double>(held) / static_cast<double>(graph.edges.size());
}

// Per-scene and corpus-level relationship alignment.
struct RasReport {
  std::vector<double> per_scene;
  double corpus = 0.0;
  // relation name -> (held count, total count)
  std::map<std::string, std::pair<std::size_t, std::size_t>> breakdown;
};

inline RasReport ras_corpus(
    const std::vector<std::pair<SceneMatrix, SceneGraph>>& pairs,
    const RelationVocab& relations, const PredicateConfig& cfg) {
  SG_CHECK(!pairs.empty(), "ras_corpus: no scenes to score");
  RasReport report;
  double sum = 0.0;
  for (const auto& [scene, graph] : pairs) {
    const double s = ras_scene(scene, graph, relations, cfg, &report.breakdown);
    report.per_scene.push_back(s);
    sum += s;
  }
  report.corpus = sum / static_cast<double>(pairs.size());
  return report;
}

inline json ras_report_to_json(const RasReport& report) {
  json j;
  j["corpus_score"] = report.corpus;
  j["per_scene"] = report.per_scene;
  json br = json::object();
  for (const auto& [name, counts] : report.breakdown)
    br[name] = {{"held", counts.first}, {"total", counts.second}};
  j["breakdown"] = std::move(br);
  return j;
}

inline RasReport ras_report_from_json(const json& j) {
  RasReport r;
  r.corpus = j.at("corpus_score").get<double>();
  r.per_scene = j.at("per_scene").get<std::vector<double>>();
  if (j.contains("breakdown"))
    for (auto it = j.at("breakdown").begin(); it != j.at("breakdown").end();
         ++it)
      r.breakdown[it.key()] = {it.value().at("held").get<std::size_t>(),
                               it.value().at("total").get<std::size_t>()};
  return r;
}

inline void save_ras_report(const std::filesystem::path& path,
                            const RasReport& report) {
  write_json_file(path, ras_report_to_json(report));
}

}  // namespace sgdiff
