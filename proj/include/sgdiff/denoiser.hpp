#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sgdiff/common.hpp"
#include "sgdiff/graph.hpp"
#include "sgdiff/rng.hpp"
#include "sgdiff/scene.hpp"
#include "sgdiff/tensor.hpp"

namespace sgdiff {

struct DenoiserConfig {
  std::size_t hidden = 128;          // H
  std::size_t rgcn_layers = 3;
  std::size_t attention_heads = 4;
  std::size_t bases = 4;             // basis-decomposition rank B
  std::size_t timestep_dim = 64;
  bool use_cross_attention = true;
  bool use_self_attention = true;
  bool use_skip_connections = true;
  enum class TimestepMode { kConcat, kAdd };
  TimestepMode timestep_mode = TimestepMode::kConcat;
  // When off, typed condition edges are ignored at both train and sample
  // time and only the neutral relation is parameterized (label-only model).
  bool use_relational_edges = true;

  void validate() const {
    SG_CHECK_CONFIG(hidden >= 1 && attention_heads >= 1 && bases >= 1 &&
                        rgcn_layers >= 1,
                    "denoiser config: sizes must be positive");
    SG_CHECK_CONFIG(hidden % attention_heads == 0,
                    "denoiser config: hidden width ", hidden,
                    " not divisible by ", attention_heads, " heads");
    SG_CHECK_CONFIG(timestep_dim % 2 == 0,
                    "denoiser config: timestep_dim must be even");
  }

  std::size_t head_dim() const { return hidden / attention_heads; }
  std::size_t input_dim() const {
    return timestep_mode == TimestepMode::kConcat ? kSceneDim + timestep_dim
                                                  : kSceneDim;
  }
};

inline DenoiserConfig::TimestepMode parse_timestep_mode(const std::string& s) {
  if (s == "concat") return DenoiserConfig::TimestepMode::kConcat;
  if (s == "add") return DenoiserConfig::TimestepMode::kAdd;
  throw config_error(msg_cat("timestep_mode must be concat or add, got \"", s,
                             "\""));
}

inline std::string timestep_mode_name(DenoiserConfig::TimestepMode m) {
  return m == DenoiserConfig::TimestepMode::kConcat ? "concat" : "add";
}

// Ordered named parameter collection. Iteration order is creation order so
// optimizer state, checkpoints, and gradient sweeps stay deterministic.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    SG_CHECK(!index_.count(name), "ParamStore: duplicate name ", name);
    t.set_requires_grad(true);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor& get(const std::string& name) {
    auto it = index_.find(name);
    SG_CHECK(it != index_.end(), "ParamStore: no parameter named ", name);
    return items_[it->second].second;
  }
  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    SG_CHECK(it != index_.end(), "ParamStore: no parameter named ", name);
    return items_[it->second].second;
  }

  std::size_t size() const { return items_.size(); }
  std::pair<std::string, Tensor>& item(std::size_t i) { return items_[i]; }
  const std::pair<std::string, Tensor>& item(std::size_t i) const {
    return items_[i];
  }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// All learnable tensors of the denoiser. Relation weights use the basis
// decomposition W_r = sum_b a_rb V_b; bases are stored as flattened rows of a
// B x (H*H) matrix.
struct DenoiserParams {
  ParamStore store;
  std::size_t relation_count = 0;  // rows of every rgcn coeff table

  static DenoiserParams init(const DenoiserConfig& config,
                             std::size_t relation_vocab_size, Rng& rng) {
    config.validate();
    SG_CHECK(relation_vocab_size >= 1, "DenoiserParams: empty relation vocab");
    DenoiserParams p;
    p.relation_count = config.use_relational_edges ? relation_vocab_size : 1;
    const std::size_t H = config.hidden;
    const std::size_t dh = config.head_dim();

    auto uniform = [&rng](Shape shape, double bound) {
      return Tensor::rand_uniform(std::move(shape), -bound, bound, rng);
    };
    auto linear = [&](const std::string& name, std::size_t out,
                      std::size_t in) {
      p.store.add(name + ".weight", uniform({out, in}, std::sqrt(1.0 / in)));
      p.store.add(name + ".bias", Tensor(Shape{out}));
    };

    linear("fc_in", H, config.input_dim());
    if (config.timestep_mode == DenoiserConfig::TimestepMode::kAdd)
      linear("temb_proj", kSceneDim, config.timestep_dim);

    for (std::size_t l = 0; l < config.rgcn_layers; ++l) {
      const std::string prefix = "rgcn" + std::to_string(l);
      p.store.add(prefix + ".self_weight",
                  uniform({H, H}, std::sqrt(1.0 / H)));
      p.store.add(prefix + ".bases",
                  uniform({config.bases, H * H}, std::sqrt(1.0 / H)));
      p.store.add(prefix + ".coeffs",
                  uniform({p.relation_count, config.bases},
                          std::sqrt(1.0 / config.bases)));
    }

    p.store.add("label_pool.weight",
                uniform({H, kLabelEmbedDim}, std::sqrt(1.0 / kLabelEmbedDim)));

    if (config.use_cross_attention) {
      for (std::size_t h = 0; h < config.attention_heads; ++h) {
        const std::string prefix = "cross" + std::to_string(h);
        linear(prefix + ".q", dh, H);
        linear(prefix + ".k", dh, kLabelEmbedDim);
        linear(prefix + ".v", dh, kLabelEmbedDim);
      }
      linear("cross_out", H, H);
    }
    if (config.use_self_attention) {
      for (std::size_t h = 0; h < config.attention_heads; ++h) {
        const std::string prefix = "self" + std::to_string(h);
        linear(prefix + ".q", dh, H);
        linear(prefix + ".k", dh, H);
        linear(prefix + ".v", dh, H);
      }
      linear("self_out", H, H);
    }

    linear("fc_out", kSceneDim, H);
    return p;
  }
};

// Sinusoidal embedding: interleaved (sin, cos) pairs of t over geometric
// frequencies spanning periods 1 to 10^4.
inline Tensor timestep_embedding(std::size_t t, std::size_t dim) {
  SG_CHECK(dim % 2 == 0, "timestep_embedding: dim must be even, got ", dim);
  const std::size_t half = dim / 2;
  Tensor out(Shape{dim});
  for (std::size_t k = 0; k < half; ++k) {
    const double expo =
        half > 1 ? static_cast<double>(k) / static_cast<double>(half - 1) : 0.0;
    const double freq = std::pow(10.0, -4.0 * expo);
    const double x = static_cast<double>(t) * freq;
    out.data()[2 * k] = quantize(std::sin(x));
    out.data()[2 * k + 1] = quantize(std::cos(x));
  }
  return out;
}

namespace detail {

// y = x @ W^T + b
inline Tensor linear_fwd(Tape* tape, const Tensor& x, const ParamStore& store,
                         const std::string& name) {
  return broadcast_add_rows(
      tape, matmul(tape, x, store.get(name + ".weight"), false, true),
      store.get(name + ".bias"));
}

// per-relation row-normalized incoming adjacency built from the edge list
inline std::vector<Tensor> incoming_adjacency(const std::vector<GraphEdge>& edges,
                                              std::size_t n,
                                              std::size_t relation_count) {
  std::vector<std::vector<double>> counts(relation_count,
                                          std::vector<double>(n, 0.0));
  for (const auto& e : edges) {
    SG_CHECK(e.relation < relation_count, "rgcn: relation index ", e.relation,
             " outside vocabulary of size ", relation_count);
    SG_CHECK(e.source < n && e.target < n, "rgcn: edge endpoint out of range");
    counts[e.relation][e.target] += 1.0;
  }
  std::vector<Tensor> adj(relation_count);
  for (const auto& e : edges) {
    auto& a = adj[e.relation];
    if (!a.defined()) a = Tensor(Shape{n, n});
    a.data()[e.target * n + e.source] += 1.0;
  }
  for (std::size_t r = 0; r < relation_count; ++r) {
    if (!adj[r].defined()) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = counts[r][i];
      if (c <= 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) adj[r].data()[i * n + j] /= c;
    }
  }
  return adj;
}

}  // namespace detail

// h'_i = relu( W0 h_i + sum_r mean_{j in incoming r-neighbors} W_r h_j )
// with W_r = sum_b a_rb V_b.
inline Tensor rgcn_layer_forward(Tape* tape, const Tensor& node_feats,
                                 const std::vector<GraphEdge>& edges,
                                 const ParamStore& store,
                                 const std::string& prefix,
                                 std::size_t relation_count) {
  SG_CHECK(node_feats.rank() == 2, "rgcn: node features must be 2-D");
  const std::size_t n = node_feats.shape()[0];
  const std::size_t H = node_feats.shape()[1];
  const Tensor& self_w = store.get(prefix + ".self_weight");
  const Tensor& bases = store.get(prefix + ".bases");
  const Tensor& coeffs = store.get(prefix + ".coeffs");
  SG_CHECK(coeffs.shape()[0] == relation_count,
           "rgcn: coefficient table has ", coeffs.shape()[0],
           " relations, expected ", relation_count);

  Tensor out = matmul(tape, node_feats, self_w, false, true);
  const auto adj = detail::incoming_adjacency(edges, n, relation_count);
  for (std::size_t r = 0; r < relation_count; ++r) {
    if (!adj[r].defined()) continue;
    Tensor gathered = matmul(tape, adj[r], node_feats);          // N x H
    Tensor a_row = row_gather(tape, coeffs, {r});                // 1 x B
    Tensor w_flat = matmul(tape, a_row, bases);                  // 1 x H*H
    Tensor w_r = reshape(tape, w_flat, {H, H});
    out = add(tape, out, matmul(tape, gathered, w_r, false, true));
  }
  return relu(tape, out);
}

// Pooled-label injection followed by parallel cross- and self-attention; the
// enabled branch outputs are summed. With both branches disabled the block
// passes features through unchanged (after injection).
inline Tensor attention_block_forward(Tape* tape, const Tensor& node_feats,
                                      const Tensor& label_embs,
                                      const DenoiserParams& params,
                                      const DenoiserConfig& config) {
  const std::size_t n = node_feats.shape()[0];
  SG_CHECK(label_embs.rank() == 2 && label_embs.shape()[0] == n &&
               label_embs.shape()[1] == kLabelEmbedDim,
           "attention: label embeddings must be ", n, "x", kLabelEmbedDim,
           ", got ", shape_str(label_embs.shape()));
  const ParamStore& store = params.store;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(config.head_dim()));

  // non-empty nodes are the ones with a non-zero embedding row; masked
  // conditions therefore inject nothing
  std::vector<std::size_t> nonempty;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < kLabelEmbedDim; ++d)
      if (label_embs.at(i, d) != 0.0) {
        nonempty.push_back(i);
        break;
      }

  Tensor feats = node_feats;
  if (!nonempty.empty()) {
    Tensor pooled_emb = mean_axis(tape, row_gather(tape, label_embs, nonempty), 0);
    Tensor pooled = matmul(tape, reshape(tape, pooled_emb, {1, kLabelEmbedDim}),
                           store.get("label_pool.weight"), false, true);
    feats = broadcast_add_rows(tape, feats, reshape(tape, pooled, {config.hidden}));
  }

  auto run_branch = [&](const std::string& kind, const Tensor& kv_source) {
    std::vector<Tensor> heads;
    for (std::size_t h = 0; h < config.attention_heads; ++h) {
      const std::string prefix = kind + std::to_string(h);
      Tensor q = detail::linear_fwd(tape, feats, store, prefix + ".q");
      Tensor k = detail::linear_fwd(tape, kv_source, store, prefix + ".k");
      Tensor v = detail::linear_fwd(tape, kv_source, store, prefix + ".v");
      Tensor scores = scale(tape, matmul(tape, q, k, false, true), inv_sqrt_dh);
      heads.push_back(matmul(tape, softmax_lastaxis(tape, scores), v));
    }
    Tensor merged = heads.size() == 1 ? heads[0] : concat(tape, heads, 1);
    return detail::linear_fwd(tape, merged, store, kind + "_out");
  };

  Tensor out;
  if (config.use_cross_attention) out = run_branch("cross", label_embs);
  if (config.use_self_attention) {
    Tensor self_out = run_branch("self", feats);
    out = out.defined() ? add(tape, out, self_out) : self_out;
  }
  return out.defined() ? out : feats;
}

namespace detail {

inline void check_finite_stage(const Tensor& t, const char* stage) {
  for (double v : t.cdata())
    SG_CHECK_NUMERIC(std::isfinite(v),
                     "denoiser_forward: non-finite value after ", stage);
}

}  // namespace detail

// Full pipeline: timestep injection -> linear+tanh -> RGCN stack (optional
// residuals) -> attention block -> linear head. Output is the epsilon or X0
// prediction depending on the training target.
inline Tensor denoiser_forward(Tape* tape, const Tensor& xt, std::size_t t,
                               const FusedGraph& fused,
                               const DenoiserParams& params,
                               const DenoiserConfig& config) {
  SG_CHECK(xt.rank() == 2 && xt.shape()[1] == kSceneDim,
           "denoiser_forward: expected Nx", kSceneDim, " input, got ",
           shape_str(xt.shape()));
  const std::size_t n = xt.shape()[0];
  const ParamStore& store = params.store;

  Tensor temb = timestep_embedding(t, config.timestep_dim);
  Tensor x_in;
  if (config.timestep_mode == DenoiserConfig::TimestepMode::kConcat) {
    Tensor temb_rows =
        broadcast_add_rows(tape, Tensor(Shape{n, config.timestep_dim}), temb);
    x_in = concat(tape, {xt, temb_rows}, 1);
  } else {
    Tensor proj = matmul(tape, store.get("temb_proj.weight"),
                         reshape(tape, temb, {config.timestep_dim, 1}));
    Tensor vec = add(tape, reshape(tape, proj, {kSceneDim}),
                     store.get("temb_proj.bias"));
    x_in = broadcast_add_rows(tape, xt, vec);
  }

  Tensor h = tanh_op(tape, detail::linear_fwd(tape, x_in, store, "fc_in"));
  detail::check_finite_stage(h, "input projection");

  const std::vector<GraphEdge>* edges = &fused.edges;
  std::vector<GraphEdge> neutralized;
  if (!config.use_relational_edges) {
    neutralized = fused.edges;
    for (auto& e : neutralized) e.relation = kNeutralRelation;
    edges = &neutralized;
  }

  for (std::size_t l = 0; l < config.rgcn_layers; ++l) {
    Tensor block = rgcn_layer_forward(tape, h, *edges, store,
                                      "rgcn" + std::to_string(l),
                                      params.relation_count);
    h = config.use_skip_connections ? add(tape, block, h) : block;
    detail::check_finite_stage(h, "rgcn block");
  }

  h = attention_block_forward(tape, h, fused.label_embeddings, params, config);
  detail::check_finite_stage(h, "attention block");

  Tensor out = detail::linear_fwd(tape, h, store, "fc_out");
  detail::check_finite_stage(out, "output projection");
  return out;
}

}  // namespace sgdiff
