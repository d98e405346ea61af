#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sgdiff/checkpoint.hpp"
#include "sgdiff/data.hpp"
#include "sgdiff/ddpm.hpp"
#include "sgdiff/denoiser.hpp"
#include "sgdiff/jsonio.hpp"
#include "sgdiff/objectives.hpp"
#include "sgdiff/relations.hpp"

namespace sgdiff {

// Unified run configuration. JSON documents apply on top of defaults (or a
// preset); unknown keys are rejected everywhere. Command-line flags win over
// the file.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string precision = "f32";
  std::size_t n_max = 20;

  std::string schedule_kind = "linear";
  std::size_t schedule_T = 1000;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;

  GuidanceConfig guidance;
  DenoiserConfig denoiser;
  TrainConfig train;
  FilterConfig filter;
  PredicateConfig predicates;
  std::vector<std::string> relations;  // condition relations (neutral implied)
  SynthConfig synth;

  std::string embedder_provenance = "hash-derived";
  std::uint64_t embedder_seed = 1234;
  std::string embedder_table_path;

  std::string data_dir;
  std::string out_dir = "out";

  RunConfig() {
    relations = {"left", "right", "front", "behind",
                 "above", "below", "close-by", "standing-on"};
    filter.relation_whitelist = relations;
    synth = SynthConfig::default_indoor();
  }

  RelationVocab relation_vocab() const { return RelationVocab(relations); }

  NoiseSchedule schedule() const {
    return make_schedule(schedule_kind, schedule_T, beta_start, beta_end);
  }

  void validate() const {
    SG_CHECK_CONFIG(precision == "f32" || precision == "f64",
                    "config: precision must be f32 or f64");
    SG_CHECK_CONFIG(n_max >= 1, "config: n_max must be positive");
    SG_CHECK_CONFIG(guidance.threshold_percentile > 0 &&
                        guidance.threshold_percentile <= 100,
                    "config: threshold_percentile must lie in (0, 100]");
    SG_CHECK_CONFIG(guidance.scale >= 0, "config: guidance scale must be >= 0");
    denoiser.validate();
    train.validate();
    predicates.validate();
    const RelationVocab vocab = relation_vocab();
    for (const auto& r : filter.relation_whitelist)
      SG_CHECK_CONFIG(vocab.index_of(r) > 0,
                      "config: filter whitelist relation \"", r,
                      "\" missing from the relation vocabulary");
    for (const auto& r : synth.relations)
      SG_CHECK_CONFIG(vocab.index_of(r) > 0, "config: synth relation \"", r,
                      "\" missing from the relation vocabulary");
    SG_CHECK_CONFIG(synth.max_objects <= n_max,
                    "config: synth max_objects exceeds n_max");
  }
};

namespace detail {

inline void guidance_from_json(const json& j, GuidanceConfig& g,
                               const std::string& where) {
  reject_unknown_keys(j, {"scale", "threshold_percentile", "prediction_target"},
                      where);
  if (j.contains("scale")) g.scale = j["scale"].get<double>();
  if (j.contains("threshold_percentile"))
    g.threshold_percentile = j["threshold_percentile"].get<double>();
  if (j.contains("prediction_target"))
    g.prediction_target =
        parse_target(j["prediction_target"].get<std::string>());
}

inline void train_from_json(const json& j, TrainConfig& t,
                            const std::string& where) {
  reject_unknown_keys(
      j, {"batch_size", "epochs", "lr", "weight_decay", "plateau_factor",
          "plateau_patience", "condition_drop_prob", "recon_kind",
          "lambda_recon", "lambda_volume", "lambda_ratio", "stop_train_loss"},
      where);
  if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<std::size_t>();
  if (j.contains("epochs")) t.epochs = j["epochs"].get<std::size_t>();
  if (j.contains("lr")) t.lr = j["lr"].get<double>();
  if (j.contains("weight_decay")) t.weight_decay = j["weight_decay"].get<double>();
  if (j.contains("plateau_factor"))
    t.plateau_factor = j["plateau_factor"].get<double>();
  if (j.contains("plateau_patience"))
    t.plateau_patience = j["plateau_patience"].get<std::size_t>();
  if (j.contains("condition_drop_prob"))
    t.condition_drop_prob = j["condition_drop_prob"].get<double>();
  if (j.contains("recon_kind"))
    t.recon_kind = parse_recon_kind(j["recon_kind"].get<std::string>());
  if (j.contains("lambda_recon")) t.weights.recon = j["lambda_recon"].get<double>();
  if (j.contains("lambda_volume"))
    t.weights.volume = j["lambda_volume"].get<double>();
  if (j.contains("lambda_ratio")) t.weights.ratio = j["lambda_ratio"].get<double>();
  if (j.contains("stop_train_loss"))
    t.stop_train_loss = j["stop_train_loss"].get<double>();
}

inline void filter_from_json(const json& j, FilterConfig& f,
                             const std::string& where) {
  reject_unknown_keys(j, {"relation_whitelist", "category_top_k", "max_objects",
                          "scene_blocklist"},
                      where);
  if (j.contains("relation_whitelist"))
    f.relation_whitelist =
        j["relation_whitelist"].get<std::vector<std::string>>();
  if (j.contains("category_top_k"))
    f.category_top_k = j["category_top_k"].get<std::size_t>();
  if (j.contains("max_objects")) f.max_objects = j["max_objects"].get<std::size_t>();
  if (j.contains("scene_blocklist"))
    f.scene_blocklist = j["scene_blocklist"].get<std::vector<std::string>>();
}

inline void predicates_from_json(const json& j, PredicateConfig& p,
                                 const std::string& where) {
  reject_unknown_keys(j, {"directional_margin", "close_by_distance",
                          "standing_on_gap", "standing_on_overlap"},
                      where);
  if (j.contains("directional_margin"))
    p.directional_margin = j["directional_margin"].get<double>();
  if (j.contains("close_by_distance"))
    p.close_by_distance = j["close_by_distance"].get<double>();
  if (j.contains("standing_on_gap"))
    p.standing_on_gap = j["standing_on_gap"].get<double>();
  if (j.contains("standing_on_overlap"))
    p.standing_on_overlap = j["standing_on_overlap"].get<double>();
}

inline void synth_from_json(const json& j, SynthConfig& s,
                            const std::string& where) {
  reject_unknown_keys(
      j, {"categories", "relations", "min_objects", "max_objects",
          "min_relations", "max_relations", "room_half_extent", "z_extra",
          "overlap_fraction", "max_attempts"},
      where);
  if (j.contains("categories")) {
    s.categories.clear();
    for (const auto& c : j["categories"]) {
      reject_unknown_keys(c, {"label", "mean_size", "size_jitter"}, where);
      SynthCategory cat;
      cat.label = c.at("label").get<std::string>();
      const auto& ms = c.at("mean_size");
      SG_CHECK_CONFIG(ms.size() == 3, where, ": mean_size must have 3 entries");
      for (std::size_t d = 0; d < 3; ++d) cat.mean_size[d] = ms[d].get<double>();
      if (c.contains("size_jitter")) cat.size_jitter = c["size_jitter"].get<double>();
      s.categories.push_back(std::move(cat));
    }
  }
  if (j.contains("relations"))
    s.relations = j["relations"].get<std::vector<std::string>>();
  if (j.contains("min_objects")) s.min_objects = j["min_objects"].get<std::size_t>();
  if (j.contains("max_objects")) s.max_objects = j["max_objects"].get<std::size_t>();
  if (j.contains("min_relations"))
    s.min_relations = j["min_relations"].get<std::size_t>();
  if (j.contains("max_relations"))
    s.max_relations = j["max_relations"].get<std::size_t>();
  if (j.contains("room_half_extent"))
    s.room_half_extent = j["room_half_extent"].get<double>();
  if (j.contains("z_extra")) s.z_extra = j["z_extra"].get<double>();
  if (j.contains("overlap_fraction"))
    s.overlap_fraction = j["overlap_fraction"].get<double>();
  if (j.contains("max_attempts")) s.max_attempts = j["max_attempts"].get<std::size_t>();
}

}  // namespace detail

inline void apply_config_json(const json& j, RunConfig& cfg,
                              const std::string& where) {
  reject_unknown_keys(
      j, {"seed", "precision", "n_max", "schedule", "guidance", "denoiser",
          "train", "filter", "predicates", "relations", "synth", "embedding",
          "paths"},
      where);
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("precision")) cfg.precision = j["precision"].get<std::string>();
  if (j.contains("n_max")) cfg.n_max = j["n_max"].get<std::size_t>();
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    reject_unknown_keys(s, {"kind", "T", "beta_start", "beta_end"}, where);
    if (s.contains("kind")) cfg.schedule_kind = s["kind"].get<std::string>();
    if (s.contains("T")) cfg.schedule_T = s["T"].get<std::size_t>();
    if (s.contains("beta_start")) cfg.beta_start = s["beta_start"].get<double>();
    if (s.contains("beta_end")) cfg.beta_end = s["beta_end"].get<double>();
  }
  if (j.contains("guidance"))
    detail::guidance_from_json(j["guidance"], cfg.guidance, where);
  if (j.contains("denoiser"))
    denoiser_config_from_json(j["denoiser"], cfg.denoiser, where);
  if (j.contains("train")) detail::train_from_json(j["train"], cfg.train, where);
  if (j.contains("filter"))
    detail::filter_from_json(j["filter"], cfg.filter, where);
  if (j.contains("predicates"))
    detail::predicates_from_json(j["predicates"], cfg.predicates, where);
  if (j.contains("relations"))
    cfg.relations = j["relations"].get<std::vector<std::string>>();
  if (j.contains("synth")) detail::synth_from_json(j["synth"], cfg.synth, where);
  if (j.contains("embedding")) {
    const auto& e = j["embedding"];
    reject_unknown_keys(e, {"provenance", "seed", "table_path"}, where);
    if (e.contains("provenance"))
      cfg.embedder_provenance = e["provenance"].get<std::string>();
    if (e.contains("seed")) cfg.embedder_seed = e["seed"].get<std::uint64_t>();
    if (e.contains("table_path"))
      cfg.embedder_table_path = e["table_path"].get<std::string>();
  }
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    reject_unknown_keys(p, {"data_dir", "out_dir"}, where);
    if (p.contains("data_dir")) cfg.data_dir = p["data_dir"].get<std::string>();
    if (p.contains("out_dir")) cfg.out_dir = p["out_dir"].get<std::string>();
  }
  cfg.synth.n_max = cfg.n_max;
}

inline json config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["precision"] = cfg.precision;
  j["n_max"] = cfg.n_max;
  j["schedule"] = {{"kind", cfg.schedule_kind},
                   {"T", cfg.schedule_T},
                   {"beta_start", cfg.beta_start},
                   {"beta_end", cfg.beta_end}};
  j["guidance"] = {
      {"scale", cfg.guidance.scale},
      {"threshold_percentile", cfg.guidance.threshold_percentile},
      {"prediction_target", target_name(cfg.guidance.prediction_target)}};
  j["denoiser"] = denoiser_config_to_json(cfg.denoiser);
  j["train"] = {{"batch_size", cfg.train.batch_size},
                {"epochs", cfg.train.epochs},
                {"lr", cfg.train.lr},
                {"weight_decay", cfg.train.weight_decay},
                {"plateau_factor", cfg.train.plateau_factor},
                {"plateau_patience", cfg.train.plateau_patience},
                {"condition_drop_prob", cfg.train.condition_drop_prob},
                {"recon_kind",
                 cfg.train.recon_kind == ReconKind::kL2 ? "l2" : "l1"},
                {"lambda_recon", cfg.train.weights.recon},
                {"lambda_volume", cfg.train.weights.volume},
                {"lambda_ratio", cfg.train.weights.ratio},
                {"stop_train_loss", cfg.train.stop_train_loss}};
  j["filter"] = {{"relation_whitelist", cfg.filter.relation_whitelist},
                 {"category_top_k", cfg.filter.category_top_k},
                 {"max_objects", cfg.filter.max_objects},
                 {"scene_blocklist", cfg.filter.scene_blocklist}};
  j["predicates"] = {{"directional_margin", cfg.predicates.directional_margin},
                     {"close_by_distance", cfg.predicates.close_by_distance},
                     {"standing_on_gap", cfg.predicates.standing_on_gap},
                     {"standing_on_overlap", cfg.predicates.standing_on_overlap}};
  j["relations"] = cfg.relations;
  json cats = json::array();
  for (const auto& c : cfg.synth.categories)
    cats.push_back({{"label", c.label},
                    {"mean_size", c.mean_size},
                    {"size_jitter", c.size_jitter}});
  j["synth"] = {{"categories", std::move(cats)},
                {"relations", cfg.synth.relations},
                {"min_objects", cfg.synth.min_objects},
                {"max_objects", cfg.synth.max_objects},
                {"min_relations", cfg.synth.min_relations},
                {"max_relations", cfg.synth.max_relations},
                {"room_half_extent", cfg.synth.room_half_extent},
                {"z_extra", cfg.synth.z_extra},
                {"overlap_fraction", cfg.synth.overlap_fraction},
                {"max_attempts", cfg.synth.max_attempts}};
  j["embedding"] = {{"provenance", cfg.embedder_provenance},
                    {"seed", cfg.embedder_seed},
                    {"table_path", cfg.embedder_table_path}};
  j["paths"] = {{"data_dir", cfg.data_dir}, {"out_dir", cfg.out_dir}};
  return j;
}

// Built-in experiment presets, sized for CPU runs on synthetic corpora.
inline RunConfig preset_config(const std::string& name) {
  RunConfig cfg;
  if (name == "synth-small") {
    cfg.n_max = 6;
    cfg.relations = {"left", "right", "front", "behind", "close-by"};
    cfg.filter.relation_whitelist = cfg.relations;
    cfg.synth = SynthConfig::default_indoor();
    cfg.synth.n_max = cfg.n_max;
    cfg.schedule_T = 300;
    cfg.beta_start = kDefaultBetaStart * 1000.0 / 300.0;
    cfg.beta_end = kDefaultBetaEnd * 1000.0 / 300.0;
    cfg.denoiser.hidden = 64;
    cfg.denoiser.rgcn_layers = 2;
    cfg.denoiser.attention_heads = 2;
    cfg.denoiser.timestep_dim = 16;
    cfg.train.batch_size = 16;
    cfg.train.epochs = 300;
    cfg.train.lr = 2e-3;
    cfg.train.plateau_patience = 40;
  } else if (name == "synth-overfit") {
    cfg.n_max = 4;
    cfg.relations = {"left", "right", "front", "behind"};
    cfg.filter.relation_whitelist = cfg.relations;
    cfg.synth = SynthConfig::default_indoor();
    cfg.synth.relations = cfg.relations;
    cfg.synth.n_max = cfg.n_max;
    cfg.synth.min_objects = 3;
    cfg.synth.max_objects = 4;
    cfg.synth.min_relations = 2;
    cfg.synth.max_relations = 3;
    cfg.schedule_T = 250;
    cfg.beta_start = kDefaultBetaStart * 4.0;
    cfg.beta_end = kDefaultBetaEnd * 4.0;
    cfg.denoiser.hidden = 64;
    cfg.denoiser.rgcn_layers = 2;
    cfg.denoiser.attention_heads = 2;
    cfg.denoiser.timestep_dim = 16;
    cfg.train.batch_size = 8;
    cfg.train.epochs = 5000;
    cfg.train.lr = 2e-3;
    cfg.train.condition_drop_prob = 0.1;
    cfg.train.plateau_patience = 200;
  } else if (name == "synth-ablation") {
    cfg.n_max = 6;
    cfg.relations = {"left", "right", "front", "behind"};
    cfg.filter.relation_whitelist = cfg.relations;
    cfg.synth = SynthConfig::default_indoor();
    cfg.synth.relations = cfg.relations;
    cfg.synth.n_max = cfg.n_max;
    cfg.synth.min_objects = 3;
    cfg.synth.max_objects = 6;
    cfg.synth.min_relations = 2;
    cfg.synth.max_relations = 4;
    cfg.schedule_T = 300;
    cfg.beta_start = kDefaultBetaStart * 1000.0 / 300.0;
    cfg.beta_end = kDefaultBetaEnd * 1000.0 / 300.0;
    cfg.denoiser.hidden = 64;
    cfg.denoiser.rgcn_layers = 2;
    cfg.denoiser.attention_heads = 2;
    cfg.denoiser.timestep_dim = 16;
    cfg.train.batch_size = 16;
    cfg.train.epochs = 600;
    cfg.train.lr = 2e-3;
    cfg.train.plateau_patience = 60;
  } else if (name == "default") {
    // paper-scale defaults, as constructed
  } else {
    throw config_error(msg_cat("unknown preset \"", name, "\""));
  }
  return cfg;
}

inline LabelEmbedder build_embedder(const RunConfig& cfg,
                                    const std::vector<std::string>& labels) {
  if (cfg.embedder_provenance == "loaded-pretrained") {
    SG_CHECK_CONFIG(!cfg.embedder_table_path.empty(),
                    "config: loaded-pretrained embedder needs table_path");
    LabelEmbedder emb = LabelEmbedder::load_pretrained(cfg.embedder_table_path);
    for (const auto& l : labels)
      SG_CHECK_CONFIG(emb.has(l), "embedding table is missing label \"", l,
                      "\"");
    return emb;
  }
  LabelEmbedder emb = LabelEmbedder::hash_derived(labels, cfg.embedder_seed);
  if (cfg.embedder_provenance == "learned")
    emb.set_provenance(LabelEmbedder::Provenance::kLearned);
  else
    SG_CHECK_CONFIG(cfg.embedder_provenance == "hash-derived",
                    "config: unknown embedder provenance \"",
                    cfg.embedder_provenance, "\"");
  return emb;
}

}  // namespace sgdiff
