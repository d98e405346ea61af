#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sgdiff/jsonio.hpp"
#include "sgdiff/rng.hpp"
#include "sgdiff/scene.hpp"
#include "sgdiff/tensor.hpp"

namespace sgdiff {

inline constexpr std::size_t kLabelEmbedDim = 300;

// Ordered spatial-relation names. Index 0 is always `neutral`, the default
// relation of the fully-connected graph representation; condition edges use
// the remaining indices.
class RelationVocab {
 public:
  RelationVocab() : names_{"neutral"} {}

  explicit RelationVocab(std::vector<std::string> spatial_names)
      : names_{"neutral"} {
    for (auto& n : spatial_names) {
      SG_CHECK_CONFIG(n != "neutral", "RelationVocab: \"neutral\" is reserved");
      SG_CHECK_CONFIG(index_of(n) < 0, "RelationVocab: duplicate relation \"",
                      n, "\"");
      names_.push_back(std::move(n));
    }
  }

  static RelationVocab canonical() {
    return RelationVocab({"left", "right", "front", "behind", "above", "below",
                          "close-by", "standing-on"});
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<int>(i);
    return -1;
  }

  std::size_t require(const std::string& name) const {
    const int i = index_of(name);
    SG_CHECK(i >= 0, "unknown relation \"", name, "\"");
    return static_cast<std::size_t>(i);
  }

 private:
  std::vector<std::string> names_;
};

inline constexpr std::size_t kNeutralRelation = 0;

struct GraphEdge {
  std::size_t source;
  std::size_t relation;  // index into the relation vocabulary
  std::size_t target;

  friend bool operator==(const GraphEdge&, const GraphEdge&) = default;
};

// Directed, typed condition graph. Node i describes the object generated into
// scene-matrix row i.
struct SceneGraph {
  std::vector<std::string> node_labels;
  std::vector<GraphEdge> edges;

  std::size_t size() const { return node_labels.size(); }
};

// Fixed injective label -> R^300 map. The default table is hash-derived
// (deterministic per seed, unit-norm rows); pretrained vectors can be loaded
// from a text table instead. `empty` always maps to the zero vector.
class LabelEmbedder {
 public:
  enum class Provenance { kHashDerived, kLoadedPretrained, kLearned };

  static LabelEmbedder hash_derived(const std::vector<std::string>& labels,
                                    std::uint64_t seed) {
    LabelEmbedder e;
    e.provenance_ = Provenance::kHashDerived;
    e.seed_ = seed;
    for (const auto& label : labels) e.add_hash_row(label);
    e.ensure_empty_row();
    return e;
  }

  // text table: one line per label, the token followed by 300 reals
  static LabelEmbedder load_pretrained(const std::filesystem::path& path) {
    std::ifstream in(path);
    SG_CHECK_CONFIG(in.good(), "cannot open embedding table ", path.string());
    LabelEmbedder e;
    e.provenance_ = Provenance::kLoadedPretrained;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string label;
      ls >> label;
      std::vector<double> vec(kLabelEmbedDim);
      for (std::size_t d = 0; d < kLabelEmbedDim; ++d)
        SG_CHECK_CONFIG(static_cast<bool>(ls >> vec[d]), path.string(),
                        " line ", lineno, ": expected ", kLabelEmbedDim,
                        " values for label \"", label, "\"");
      double extra;
      SG_CHECK_CONFIG(!(ls >> extra), path.string(), " line ", lineno,
                      ": more than ", kLabelEmbedDim, " values");
      SG_CHECK_CONFIG(!e.table_.count(label), path.string(), " line ", lineno,
                      ": duplicate label \"", label, "\"");
      e.table_[label] = std::move(vec);
    }
    e.ensure_empty_row();
    return e;
  }

  Provenance provenance() const { return provenance_; }
  std::uint64_t seed() const { return seed_; }

  bool has(const std::string& label) const { return table_.count(label) > 0; }

  const std::vector<double>& vector_of(const std::string& label) const {
    auto it = table_.find(label);
    SG_CHECK(it != table_.end(), "embed_labels: unknown label \"", label,
             "\"");
    return it->second;
  }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : table_) out.push_back(k);
    return out;
  }

  // grows the table on demand (hash-derived mode only)
  void ensure(const std::vector<std::string>& labels) {
    SG_CHECK(provenance_ == Provenance::kHashDerived,
             "LabelEmbedder: cannot extend a loaded table");
    for (const auto& l : labels)
      if (!table_.count(l)) add_hash_row(l);
  }

  void set_row(const std::string& label, std::vector<double> vec) {
    SG_CHECK(vec.size() == kLabelEmbedDim, "LabelEmbedder: bad row length");
    table_[label] = std::move(vec);
  }
  void set_provenance(Provenance p) { provenance_ = p; }

 private:
  static std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }

  void add_hash_row(const std::string& label) {
    if (label == kEmptyLabel) {
      ensure_empty_row();
      return;
    }
    Rng rng(splitmix64(seed_ ^ fnv1a(label)));
    std::vector<double> v(kLabelEmbedDim);
    double n2 = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      n2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (auto& x : v) x = quantize(x * inv);
    table_[label] = std::move(v);
  }

  void ensure_empty_row() {
    table_[kEmptyLabel] = std::vector<double>(kLabelEmbedDim, 0.0);
  }

  std::map<std::string, std::vector<double>> table_;
  Provenance provenance_ = Provenance::kHashDerived;
  std::uint64_t seed_ = 0;
};

// graph condition padded and fused with the fully-connected neutral digraph
struct FusedGraph {
  Tensor node_features;              // N x D scene rows
  Tensor label_embeddings;           // N x 300
  std::vector<GraphEdge> edges;      // exactly N*(N-1), one per ordered pair
  std::vector<std::string> node_labels;  // padded to N with `empty`
};

// N x 300 embedding matrix for a graph padded to n_max rows
inline Tensor embed_labels(const SceneGraph& graph, const LabelEmbedder& emb,
                           std::size_t n_max) {
  SG_CHECK(graph.size() <= n_max, "embed_labels: graph has ", graph.size(),
           " nodes, scene allows ", n_max);
  Tensor out(Shape{n_max, kLabelEmbedDim});
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const auto& v = emb.vector_of(graph.node_labels[i]);
    for (std::size_t d = 0; d < kLabelEmbedDim; ++d)
      out.data()[i * kLabelEmbedDim + d] = v[d];
  }
  return out;
}

// Fuses the condition into the fully-connected neutral digraph on n_max
// nodes: every ordered pair (i, j), i != j, starts neutral and each condition
// edge replaces the edge for its pair (the last edge for a pair wins). Graphs
// smaller than n_max are padded with `empty` nodes on neutral edges.
inline FusedGraph fuse_condition(const Tensor& scene_rows,
                                 const SceneGraph& graph,
                                 const LabelEmbedder& emb) {
  SG_CHECK(scene_rows.rank() == 2, "fuse_condition: scene rows must be 2-D");
  const std::size_t n = scene_rows.shape()[0];
  SG_CHECK(graph.size() <= n, "fuse_condition: graph has ", graph.size(),
           " nodes, scene matrix has ", n, " rows");

  FusedGraph fused;
  fused.node_features = scene_rows;
  fused.node_labels = graph.node_labels;
  fused.node_labels.resize(n, kEmptyLabel);
  fused.label_embeddings = embed_labels(graph, emb, n);

  // dense (source, target) -> relation map, neutral by default
  std::vector<std::size_t> rel(n * n, kNeutralRelation);
  for (const auto& e : graph.edges) {
    SG_CHECK(e.source < graph.size() && e.target < graph.size(),
             "fuse_condition: edge index out of range (", e.source, " -> ",
             e.target, ", graph size ", graph.size(), ")");
    SG_CHECK(e.source != e.target,
             "fuse_condition: self-edge on node ", e.source,
             " (self-connections are handled by the network)");
    rel[e.source * n + e.target] = e.relation;
  }
  fused.edges.reserve(n * (n - 1));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) fused.edges.push_back({i, rel[i * n + j], j});
  return fused;
}

// Canonical unconditional form: all typed edges reverted to neutral, all
// label embeddings zeroed, node features untouched. Idempotent.
inline FusedGraph mask_condition(const FusedGraph& fused) {
  FusedGraph out = fused;
  for (auto& e : out.edges) e.relation = kNeutralRelation;
  out.label_embeddings = Tensor(fused.label_embeddings.shape());
  const std::size_t n = out.node_labels.size();
  out.node_labels.assign(n, kEmptyLabel);
  return out;
}

// Keeps labels but strips every typed edge back to neutral; the label-only
// conditioning baseline.
inline FusedGraph strip_relational_edges(const FusedGraph& fused) {
  FusedGraph out = fused;
  for (auto& e : out.edges) e.relation = kNeutralRelation;
  return out;
}

// Structural validation; returns one entry per violation and never throws.
inline std::vector<std::string> validate_graph(const SceneGraph& graph,
                                               const RelationVocab& relations,
                                               const std::vector<std::string>& label_vocab,
                                               std::size_t n_max) {
  std::vector<std::string> violations;
  if (graph.size() > n_max)
    violations.push_back(msg_cat("graph has ", graph.size(),
                                 " nodes, limit is ", n_max));
  for (std::size_t i = 0; i < graph.node_labels.size(); ++i) {
    const auto& l = graph.node_labels[i];
    if (std::find(label_vocab.begin(), label_vocab.end(), l) ==
        label_vocab.end())
      violations.push_back(msg_cat("node ", i, ": unknown label \"", l, "\""));
  }
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
  for (const auto& e : graph.edges) {
    if (e.source >= graph.size() || e.target >= graph.size()) {
      violations.push_back(msg_cat("edge (", e.source, ",", e.relation, ",",
                                   e.target, "): node index out of range"));
      continue;
    }
    if (e.source == e.target)
      violations.push_back(msg_cat("edge on node ", e.source,
                                   ": self-edges are not allowed"));
    if (e.relation == kNeutralRelation || e.relation >= relations.size())
      violations.push_back(
          msg_cat("edge (", e.source, "->", e.target,
                  "): relation index ", e.relation,
                  " is not a condition relation"));
    const auto key = std::make_tuple(e.source, e.relation, e.target);
    if (seen.count(key)) {
      const std::string rname = e.relation < relations.size()
                                    ? relations.name(e.relation)
                                    : std::to_string(e.relation);
      violations.push_back(msg_cat("duplicate edge (", e.source, ",", rname,
                                   ",", e.target, ")"));
    }
    seen.insert(key);
  }
  return violations;
}

// ---------------------------------------------------------------------------
// graph file format: {"nodes": [labels...], "edges": [[src, relation, dst]]}
// ---------------------------------------------------------------------------

inline json graph_to_json(const SceneGraph& graph,
                          const RelationVocab& relations) {
  json nodes = json::array();
  for (const auto& l : graph.node_labels) nodes.push_back(l);
  json edges = json::array();
  for (const auto& e : graph.edges)
    edges.push_back({e.source, relations.name(e.relation), e.target});
  json j;
  j["nodes"] = std::move(nodes);
  j["edges"] = std::move(edges);
  return j;
}

inline SceneGraph graph_from_json(const json& j,
                                  const RelationVocab& relations,
                                  const std::string& where) {
  reject_unknown_keys(j, {"nodes", "edges"}, where);
  SG_CHECK_CONFIG(j.contains("nodes") && j.contains("edges"), where,
                  ": graph file needs nodes and edges");
  SceneGraph g;
  for (const auto& n : j.at("nodes")) g.node_labels.push_back(n.get<std::string>());
  for (const auto& e : j.at("edges")) {
    SG_CHECK_CONFIG(e.is_array() && e.size() == 3, where,
                    ": edges must be [source, relation, target] triples");
    const std::string rname = e[1].get<std::string>();
    const int rel = relations.index_of(rname);
    SG_CHECK_CONFIG(rel > 0, where, ": unknown condition relation \"", rname,
                    "\"");
    g.edges.push_back({e[0].get<std::size_t>(),
                       static_cast<std::size_t>(rel),
                       e[2].get<std::size_t>()});
  }
  return g;
}

inline void save_graph(const std::filesystem::path& path,
                       const SceneGraph& graph,
                       const RelationVocab& relations) {
  write_json_file(path, graph_to_json(graph, relations));
}

inline SceneGraph load_graph(const std::filesystem::path& path,
                             const RelationVocab& relations) {
  return graph_from_json(read_json_file(path), relations, path.string());
}

}  // namespace sgdiff
