#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sgdiff/graph.hpp"
#include "sgdiff/jsonio.hpp"
#include "sgdiff/relations.hpp"
#include "sgdiff/rng.hpp"
#include "sgdiff/scene.hpp"

namespace sgdiff {

// A scan as found on disk: objects with stable ids plus relation triples over
// those ids.
struct RawObject {
  int id = 0;
  SceneObject geometry;  // carries the label
};

struct RawRelation {
  int subject = 0;
  std::string relation;
  int object = 0;
};

struct RawScene {
  std::string id;
  std::vector<RawObject> objects;
  std::vector<RawRelation> relations;
};

struct LoadReport {
  std::vector<RawScene> scenes;
  std::size_t dropped_relations = 0;  // dangling endpoints
};

// Reads objects.json / relationships.json from a dataset directory. An empty
// or missing directory yields no scenes; malformed files raise errors that
// include the parser's line position. Relations whose endpoints do not exist
// are dropped and counted.
inline LoadReport load_raw(const std::filesystem::path& dir) {
  LoadReport report;
  const auto objects_path = dir / "objects.json";
  const auto relations_path = dir / "relationships.json";
  if (!std::filesystem::exists(objects_path)) return report;

  const json objs = read_json_file(objects_path);
  reject_unknown_keys(objs, {"scans"}, objects_path.string());
  std::map<std::string, RawScene> by_id;
  std::vector<std::string> order;
  for (const auto& scan : objs.at("scans")) {
    reject_unknown_keys(scan, {"scan", "objects"}, objects_path.string());
    RawScene scene;
    scene.id = scan.at("scan").get<std::string>();
    for (const auto& o : scan.at("objects")) {
      reject_unknown_keys(o, {"id", "label", "centroid", "axes", "size"},
                          objects_path.string());
      RawObject obj;
      obj.id = o.at("id").get<int>();
      obj.geometry.label = o.at("label").get<std::string>();
      SG_CHECK_CONFIG(obj.geometry.label != kEmptyLabel,
                      objects_path.string(), ": scan ", scene.id,
                      " uses the reserved label \"", kEmptyLabel, "\"");
      const auto& c = o.at("centroid");
      const auto& a = o.at("axes");
      const auto& s = o.at("size");
      SG_CHECK_CONFIG(c.size() == 3 && a.size() == 9 && s.size() == 3,
                      objects_path.string(), ": scan ", scene.id, " object ",
                      obj.id, " needs centroid[3], axes[9], size[3]");
      for (std::size_t d = 0; d < 3; ++d)
        obj.geometry.centroid[d] = c[d].get<double>();
      for (std::size_t d = 0; d < 9; ++d)
        obj.geometry.axes[d] = a[d].get<double>();
      for (std::size_t d = 0; d < 3; ++d)
        obj.geometry.size[d] = s[d].get<double>();
      scene.objects.push_back(std::move(obj));
    }
    SG_CHECK_CONFIG(!by_id.count(scene.id), objects_path.string(),
                    ": duplicate scan id ", scene.id);
    order.push_back(scene.id);
    by_id[scene.id] = std::move(scene);
  }

  if (std::filesystem::exists(relations_path)) {
    const json rels = read_json_file(relations_path);
    reject_unknown_keys(rels, {"scans"}, relations_path.string());
    for (const auto& scan : rels.at("scans")) {
      reject_unknown_keys(scan, {"scan", "relationships"},
                          relations_path.string());
      const std::string id = scan.at("scan").get<std::string>();
      auto it = by_id.find(id);
      SG_CHECK_CONFIG(it != by_id.end(), relations_path.string(),
                      ": relationships for unknown scan ", id);
      std::set<int> ids;
      for (const auto& o : it->second.objects) ids.insert(o.id);
      for (const auto& r : scan.at("relationships")) {
        SG_CHECK_CONFIG(r.is_array() && r.size() == 3,
                        relations_path.string(),
                        ": relationships must be [subject, relation, object]");
        RawRelation rel{r[0].get<int>(), r[1].get<std::string>(),
                        r[2].get<int>()};
        if (!ids.count(rel.subject) || !ids.count(rel.object)) {
          ++report.dropped_relations;
          continue;
        }
        it->second.relations.push_back(std::move(rel));
      }
    }
  }

  for (const auto& id : order) report.scenes.push_back(std::move(by_id[id]));
  return report;
}

// §-style filtering cascade configuration.
struct FilterConfig {
  std::vector<std::string> relation_whitelist;  // spatial relations to keep
  std::size_t category_top_k = 51;
  std::size_t max_objects = 20;
  std::vector<std::string> scene_blocklist;  // ids rejected by inspection

  void validate() const {
    SG_CHECK_CONFIG(!relation_whitelist.empty(),
                    "filter config: relation whitelist is empty");
    SG_CHECK_CONFIG(max_objects >= 1, "filter config: max_objects must be >= 1");
  }
};

// scene-matrix-ready object list plus its condition graph
struct DataPair {
  std::string id;
  std::vector<SceneObject> objects;
  SceneGraph graph;
};

// Applies, in order: blocklist removal, relation whitelist, corpus-frequency
// category ranking (ties broken lexicographically) keeping the top-k labels,
// per-scene truncation to max_objects dropping smallest-volume objects first,
// and removal of scenes left without objects or relations.
inline std::vector<DataPair> filter_dataset(const std::vector<RawScene>& raw,
                                            const FilterConfig& cfg,
                                            const RelationVocab& relations) {
  cfg.validate();
  const std::set<std::string> blocked(cfg.scene_blocklist.begin(),
                                      cfg.scene_blocklist.end());
  const std::set<std::string> whitelist(cfg.relation_whitelist.begin(),
                                        cfg.relation_whitelist.end());
  for (const auto& r : cfg.relation_whitelist)
    SG_CHECK_CONFIG(relations.index_of(r) > 0,
                    "filter config: whitelisted relation \"", r,
                    "\" is not in the relation vocabulary");

  std::vector<RawScene> scenes;
  for (const auto& s : raw)
    if (!blocked.count(s.id)) scenes.push_back(s);

  for (auto& s : scenes) {
    std::vector<RawRelation> kept;
    for (const auto& r : s.relations)
      if (whitelist.count(r.relation)) kept.push_back(r);
    s.relations = std::move(kept);
  }

  // corpus-wide category frequencies over the remaining scenes
  std::map<std::string, std::size_t> freq;
  for (const auto& s : scenes)
    for (const auto& o : s.objects) ++freq[o.geometry.label];
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(),
                                                          freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::set<std::string> kept_labels;
  for (std::size_t i = 0; i < ranked.size() && i < cfg.category_top_k; ++i)
    kept_labels.insert(ranked[i].first);

  std::vector<DataPair> out;
  for (auto& s : scenes) {
    std::vector<RawObject> objs;
    for (const auto& o : s.objects)
      if (kept_labels.count(o.geometry.label)) objs.push_back(o);

    if (objs.size() > cfg.max_objects) {
      // drop smallest-volume objects until the scene fits
      std::vector<std::size_t> order(objs.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&objs](std::size_t a, std::size_t b) {
                         return object_volume(objs[a].geometry) <
                                object_volume(objs[b].geometry);
                       });
      std::set<std::size_t> dropped(order.begin(),
                                    order.begin() +
                                        static_cast<std::ptrdiff_t>(
                                            objs.size() - cfg.max_objects));
      std::vector<RawObject> trimmed;
      for (std::size_t i = 0; i < objs.size(); ++i)
        if (!dropped.count(i)) trimmed.push_back(objs[i]);
      objs = std::move(trimmed);
    }

    std::map<int, std::size_t> index_of;
    for (std::size_t i = 0; i < objs.size(); ++i) index_of[objs[i].id] = i;

    DataPair pair;
    pair.id = s.id;
    for (const auto& o : objs) pair.objects.push_back(o.geometry);
    for (const auto& o : objs)
      pair.graph.node_labels.push_back(o.geometry.label);
    for (const auto& r : s.relations) {
      auto si = index_of.find(r.subject);
      auto oi = index_of.find(r.object);
      if (si == index_of.end() || oi == index_of.end()) continue;
      if (si->second == oi->second) continue;
      pair.graph.edges.push_back(
          {si->second, relations.require(r.relation), oi->second});
    }

    if (pair.objects.empty() || pair.graph.edges.empty()) continue;
    out.push_back(std::move(pair));
  }
  return out;
}

// Deterministic shuffled split. Boundary sizes come from rounding the
// cumulative ratios, so 407 items at 80/10/10 yield 326/40/41.
template <typename T>
std::array<std::vector<T>, 3> split_dataset(const std::vector<T>& items,
                                            const std::array<double, 3>& ratios,
                                            std::uint64_t seed) {
  SG_CHECK(!items.empty(), "split_dataset: empty input");
  const double total = ratios[0] + ratios[1] + ratios[2];
  SG_CHECK(std::abs(total - 1.0) < 1e-9, "split_dataset: ratios sum to ",
           total, ", expected 1");
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(splitmix64(seed ^ 0x5eed000051137ULL));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);

  const double n = static_cast<double>(items.size());
  const auto boundary = [n](double cum) {
    return static_cast<std::size_t>(std::floor(cum * n + 0.5));
  };
  const std::size_t b1 = boundary(ratios[0]);
  const std::size_t b2 = boundary(ratios[0] + ratios[1]);

  std::array<std::vector<T>, 3> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const T& item = items[order[i]];
    if (i < b1)
      out[0].push_back(item);
    else if (i < b2)
      out[1].push_back(item);
    else
      out[2].push_back(item);
  }
  return out;
}

// ---------------------------------------------------------------------------
// synthetic paired scene/graph generator
// ---------------------------------------------------------------------------

struct SynthCategory {
  std::string label;
  std::array<double, 3> mean_size{0.8, 0.8, 0.8};
  double size_jitter = 0.25;  // relative, uniform
};

struct SynthConfig {
  std::vector<SynthCategory> categories;
  std::vector<std::string> relations;  // condition relations to exercise
  std::size_t min_objects = 3;
  std::size_t max_objects = 6;
  std::size_t n_max = 6;  // scene matrix rows
  std::size_t min_relations = 1;
  std::size_t max_relations = 4;
  double room_half_extent = 2.0;  // x/y placement range, meters
  double z_extra = 0.0;           // extra centroid lift above the floor
  double overlap_fraction = 0.10;
  std::size_t max_attempts = 20000;
  PredicateConfig predicates;

  void validate(const RelationVocab& vocab) const {
    SG_CHECK_CONFIG(!categories.empty(), "synth config: no categories");
    SG_CHECK_CONFIG(!relations.empty(), "synth config: no relations");
    for (const auto& r : relations)
      SG_CHECK_CONFIG(vocab.index_of(r) > 0, "synth config: relation \"", r,
                      "\" is not a condition relation in the vocabulary");
    SG_CHECK_CONFIG(min_objects >= 2 && min_objects <= max_objects &&
                        max_objects <= n_max,
                    "synth config: need 2 <= min_objects <= max_objects <= n_max");
    SG_CHECK_CONFIG(min_relations >= 1 && min_relations <= max_relations,
                    "synth config: need 1 <= min_relations <= max_relations");
  }

  static SynthConfig default_indoor() {
    SynthConfig cfg;
    cfg.categories = {
        {"bed", {1.6, 2.0, 0.6}, 0.15},     {"table", {1.2, 0.8, 0.75}, 0.2},
        {"chair", {0.5, 0.5, 0.9}, 0.2},    {"sofa", {1.8, 0.9, 0.8}, 0.15},
        {"shelf", {0.8, 0.3, 1.6}, 0.2},    {"lamp", {0.3, 0.3, 1.4}, 0.2},
        {"desk", {1.4, 0.7, 0.75}, 0.15},   {"cabinet", {0.9, 0.5, 1.2}, 0.2},
    };
    cfg.relations = {"left", "right", "front", "behind", "close-by"};
    return cfg;
  }
};

namespace detail {

inline double overlap_volume(const SceneObject& a, const SceneObject& b) {
  double v = 1.0;
  for (std::size_t d = 0; d < 3; ++d) {
    const double lo_a = a.centroid[d] - a.size[d] / 2;
    const double hi_a = a.centroid[d] + a.size[d] / 2;
    const double lo_b = b.centroid[d] - b.size[d] / 2;
    const double hi_b = b.centroid[d] + b.size[d] / 2;
    v *= interval_overlap(lo_a, hi_a, lo_b, hi_b);
  }
  return v;
}

inline bool placement_ok(const std::vector<SceneObject>& objects,
                         double overlap_fraction) {
  for (std::size_t i = 0; i < objects.size(); ++i)
    for (std::size_t j = i + 1; j < objects.size(); ++j) {
      const double cap = overlap_fraction *
                         std::min(object_volume(objects[i]),
                                  object_volume(objects[j]));
      if (overlap_volume(objects[i], objects[j]) > cap) return false;
    }
  return true;
}

inline void place_objects(std::vector<SceneObject>& objects,
                          const SynthConfig& cfg, Rng& rng) {
  for (auto& o : objects) {
    o.centroid[0] = rng.uniform(-cfg.room_half_extent, cfg.room_half_extent);
    o.centroid[1] = rng.uniform(-cfg.room_half_extent, cfg.room_half_extent);
    o.centroid[2] = o.size[2] / 2.0 +
                    (cfg.z_extra > 0 ? rng.uniform(0.0, cfg.z_extra) : 0.0);
  }
}

}  // namespace detail

// Generates paired (objects, graph) scenes whose graphs hold by construction:
// sizes and labels are sampled, a witness placement proposes a satisfiable
// relation set, and placement is then rejection-sampled until every chosen
// relation holds with bounded box overlap.
inline std::vector<DataPair> synth_generate(std::size_t n_scenes,
                                            const SynthConfig& cfg,
                                            const RelationVocab& vocab,
                                            std::uint64_t seed) {
  cfg.validate(vocab);
  std::vector<DataPair> out;
  for (std::size_t scene_idx = 0; scene_idx < n_scenes; ++scene_idx) {
    Rng rng = Rng::substream(seed, scene_idx);
    const std::size_t k =
        cfg.min_objects + rng.uniform_int(cfg.max_objects - cfg.min_objects + 1);

    std::vector<SceneObject> objects(k);
    for (auto& o : objects) {
      const auto& cat = cfg.categories[rng.uniform_int(cfg.categories.size())];
      std::array<double, 3> size{};
      for (std::size_t d = 0; d < 3; ++d)
        size[d] = cat.mean_size[d] *
                  (1.0 + cat.size_jitter * rng.uniform(-1.0, 1.0));
      o = SceneObject::axis_aligned(cat.label, {0, 0, 0}, size);
    }

    // witness placement proposes relations that are jointly satisfiable
    std::vector<GraphEdge> chosen;
    std::size_t attempts = 0;
    while (chosen.empty()) {
      SG_CHECK(++attempts <= cfg.max_attempts,
               "synth_generate: scene ", scene_idx,
               ": no witness placement found; use fewer relations or larger rooms");
      detail::place_objects(objects, cfg, rng);
      if (!detail::placement_ok(objects, cfg.overlap_fraction)) continue;

      std::vector<GraphEdge> held;
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          if (i == j) continue;
          for (const auto& rname : cfg.relations)
            if (eval_predicate(rname, box_from_object(objects[i]),
                               box_from_object(objects[j]), cfg.predicates))
              held.push_back({i, vocab.require(rname), j});
        }
      if (held.empty()) continue;

      // at most one relation per ordered pair keeps graph fusion lossless
      for (std::size_t i = held.size(); i > 1; --i)
        std::swap(held[i - 1], held[rng.uniform_int(i)]);
      std::set<std::pair<std::size_t, std::size_t>> used_pairs;
      const std::size_t want =
          cfg.min_relations +
          rng.uniform_int(cfg.max_relations - cfg.min_relations + 1);
      for (const auto& e : held) {
        if (chosen.size() >= want) break;
        if (used_pairs.count({e.source, e.target})) continue;
        used_pairs.insert({e.source, e.target});
        chosen.push_back(e);
      }
      if (chosen.size() < cfg.min_relations) chosen.clear();
    }

    // fresh placement until the chosen relations hold again
    bool placed = false;
    for (; attempts <= cfg.max_attempts; ++attempts) {
      detail::place_objects(objects, cfg, rng);
      if (!detail::placement_ok(objects, cfg.overlap_fraction)) continue;
      bool all = true;
      for (const auto& e : chosen)
        if (!eval_predicate(vocab.name(e.relation),
                            box_from_object(objects[e.source]),
                            box_from_object(objects[e.target]),
                            cfg.predicates)) {
          all = false;
          break;
        }
      if (all) {
        placed = true;
        break;
      }
    }
    SG_CHECK(placed, "synth_generate: scene ", scene_idx,
             ": rejection budget exhausted; reduce relations per scene");

    DataPair pair;
    pair.id = msg_cat("synth_", scene_idx);
    pair.objects = std::move(objects);
    for (const auto& o : pair.objects)
      pair.graph.node_labels.push_back(o.label);
    pair.graph.edges = std::move(chosen);
    out.push_back(std::move(pair));
  }
  return out;
}

}  // namespace sgdiff
