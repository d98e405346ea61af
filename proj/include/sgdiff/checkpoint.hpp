#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sgdiff/ddpm.hpp"
#include "sgdiff/denoiser.hpp"
#include "sgdiff/graph.hpp"
#include "sgdiff/jsonio.hpp"
#include "sgdiff/scene.hpp"

namespace sgdiff {

// Everything needed to reproduce sampling: network weights, schedule and
// guidance settings, the normalizer, and both vocabularies (the embedding
// table ships as a payload tensor).
struct Checkpoint {
  DenoiserConfig denoiser;
  std::string schedule_kind = "linear";
  std::size_t schedule_T = 1000;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;
  GuidanceConfig guidance;
  std::size_t n_max = 20;
  Normalizer normalizer;
  RelationVocab relations;
  LabelEmbedder embedder{LabelEmbedder::hash_derived({}, 0)};
  DenoiserParams params;

  NoiseSchedule schedule() const {
    return make_schedule(schedule_kind, schedule_T, beta_start, beta_end);
  }
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'S', 'G', 'D', 'C',
                                             'K', 'P', 'T', '1'};

inline void write_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = (v >> (8 * i)) & 0xFF;
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

inline std::uint64_t read_u64_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[i]) << (8 * i);
  return v;
}

inline void write_f32_le(std::ostream& out, const std::vector<double>& data) {
  for (double d : data) {
    const float f = static_cast<float>(d);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    unsigned char bytes[4];
    for (int i = 0; i < 4; ++i) bytes[i] = (bits >> (8 * i)) & 0xFF;
    out.write(reinterpret_cast<const char*>(bytes), 4);
  }
}

inline void read_f32_le(std::istream& in, std::vector<double>& data) {
  for (auto& d : data) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= std::uint32_t(bytes[i]) << (8 * i);
    float f;
    std::memcpy(&f, &bits, 4);
    d = static_cast<double>(f);
  }
}

inline std::string provenance_name(LabelEmbedder::Provenance p) {
  switch (p) {
    case LabelEmbedder::Provenance::kHashDerived: return "hash-derived";
    case LabelEmbedder::Provenance::kLoadedPretrained: return "loaded-pretrained";
    case LabelEmbedder::Provenance::kLearned: return "learned";
  }
  return "hash-derived";
}

inline LabelEmbedder::Provenance parse_provenance(const std::string& s) {
  if (s == "hash-derived") return LabelEmbedder::Provenance::kHashDerived;
  if (s == "loaded-pretrained") return LabelEmbedder::Provenance::kLoadedPretrained;
  if (s == "learned") return LabelEmbedder::Provenance::kLearned;
  throw config_error(msg_cat("unknown embedder provenance \"", s, "\""));
}

}  // namespace detail

inline json denoiser_config_to_json(const DenoiserConfig& c) {
  json j;
  j["hidden"] = c.hidden;
  j["rgcn_layers"] = c.rgcn_layers;
  j["attention_heads"] = c.attention_heads;
  j["bases"] = c.bases;
  j["timestep_dim"] = c.timestep_dim;
  j["use_cross_attention"] = c.use_cross_attention;
  j["use_self_attention"] = c.use_self_attention;
  j["use_skip_connections"] = c.use_skip_connections;
  j["timestep_mode"] = timestep_mode_name(c.timestep_mode);
  j["use_relational_edges"] = c.use_relational_edges;
  return j;
}

inline void denoiser_config_from_json(const json& j, DenoiserConfig& c,
                                      const std::string& where) {
  reject_unknown_keys(j,
                      {"hidden", "rgcn_layers", "attention_heads", "bases",
                       "timestep_dim", "use_cross_attention",
                       "use_self_attention", "use_skip_connections",
                       "timestep_mode", "use_relational_edges"},
                      where);
  if (j.contains("hidden")) c.hidden = j["hidden"].get<std::size_t>();
  if (j.contains("rgcn_layers")) c.rgcn_layers = j["rgcn_layers"].get<std::size_t>();
  if (j.contains("attention_heads"))
    c.attention_heads = j["attention_heads"].get<std::size_t>();
  if (j.contains("bases")) c.bases = j["bases"].get<std::size_t>();
  if (j.contains("timestep_dim"))
    c.timestep_dim = j["timestep_dim"].get<std::size_t>();
  if (j.contains("use_cross_attention"))
    c.use_cross_attention = j["use_cross_attention"].get<bool>();
  if (j.contains("use_self_attention"))
    c.use_self_attention = j["use_self_attention"].get<bool>();
  if (j.contains("use_skip_connections"))
    c.use_skip_connections = j["use_skip_connections"].get<bool>();
  if (j.contains("timestep_mode"))
    c.timestep_mode = parse_timestep_mode(j["timestep_mode"].get<std::string>());
  if (j.contains("use_relational_edges"))
    c.use_relational_edges = j["use_relational_edges"].get<bool>();
}

inline void save_checkpoint(const std::filesystem::path& path,
                            const Checkpoint& ckpt) {
  json manifest;
  manifest["format"] = "sgdiff-checkpoint/1";
  manifest["denoiser"] = denoiser_config_to_json(ckpt.denoiser);
  manifest["schedule"] = {{"kind", ckpt.schedule_kind},
                          {"T", ckpt.schedule_T},
                          {"beta_start", ckpt.beta_start},
                          {"beta_end", ckpt.beta_end}};
  manifest["guidance"] = {
      {"scale", ckpt.guidance.scale},
      {"threshold_percentile", ckpt.guidance.threshold_percentile},
      {"prediction_target", target_name(ckpt.guidance.prediction_target)}};
  manifest["n_max"] = ckpt.n_max;
  manifest["normalizer"] = {{"lo", ckpt.normalizer.lo()},
                            {"hi", ckpt.normalizer.hi()}};
  manifest["relation_vocab"] = ckpt.relations.names();
  const auto label_vocab = ckpt.embedder.labels();
  manifest["label_vocab"] = label_vocab;
  manifest["embedder"] = {
      {"provenance", detail::provenance_name(ckpt.embedder.provenance())},
      {"seed", ckpt.embedder.seed()}};

  json tensors = json::array();
  std::uint64_t offset = 0;
  auto add_entry = [&tensors, &offset](const std::string& name,
                                       const Shape& shape, std::size_t numel) {
    tensors.push_back({{"name", name},
                       {"shape", shape},
                       {"dtype", "f32"},
                       {"offset", offset}});
    offset += numel * 4;
  };
  for (std::size_t i = 0; i < ckpt.params.store.size(); ++i) {
    const auto& [name, t] = ckpt.params.store.item(i);
    add_entry(name, t.shape(), t.numel());
  }
  add_entry("label_embedder.table", {label_vocab.size(), kLabelEmbedDim},
            label_vocab.size() * kLabelEmbedDim);
  manifest["tensors"] = std::move(tensors);

  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  SG_CHECK_CONFIG(out.good(), "cannot write checkpoint ", path.string());
  out.write(detail::kCheckpointMagic, 8);
  const std::string mstr = manifest.dump();
  detail::write_u64_le(out, mstr.size());
  out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  for (std::size_t i = 0; i < ckpt.params.store.size(); ++i)
    detail::write_f32_le(out, ckpt.params.store.item(i).second.cdata());
  for (const auto& label : label_vocab)
    detail::write_f32_le(out, ckpt.embedder.vector_of(label));
  SG_CHECK(out.good(), "checkpoint write failed: ", path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  SG_CHECK_CONFIG(in.good(), "cannot open checkpoint ", path.string());
  char magic[8];
  in.read(magic, 8);
  SG_CHECK_CONFIG(in.good() && std::memcmp(magic, detail::kCheckpointMagic,
                                           8) == 0,
                  path.string(), ": not a checkpoint file");
  const std::uint64_t mlen = detail::read_u64_le(in);
  std::string mstr(mlen, '\0');
  in.read(mstr.data(), static_cast<std::streamsize>(mlen));
  SG_CHECK_CONFIG(in.good(), path.string(), ": truncated manifest");
  json manifest;
  try {
    manifest = json::parse(mstr);
  } catch (const json::parse_error& e) {
    throw config_error(msg_cat(path.string(), ": manifest: ", e.what()));
  }
  SG_CHECK_CONFIG(manifest.value("format", "") == "sgdiff-checkpoint/1",
                  path.string(), ": unsupported checkpoint format");

  Checkpoint ckpt;
  denoiser_config_from_json(manifest.at("denoiser"), ckpt.denoiser,
                            path.string());
  ckpt.schedule_kind = manifest.at("schedule").at("kind").get<std::string>();
  ckpt.schedule_T = manifest.at("schedule").at("T").get<std::size_t>();
  ckpt.beta_start = manifest.at("schedule").at("beta_start").get<double>();
  ckpt.beta_end = manifest.at("schedule").at("beta_end").get<double>();
  ckpt.guidance.scale = manifest.at("guidance").at("scale").get<double>();
  ckpt.guidance.threshold_percentile =
      manifest.at("guidance").at("threshold_percentile").get<double>();
  ckpt.guidance.prediction_target = parse_target(
      manifest.at("guidance").at("prediction_target").get<std::string>());
  ckpt.n_max = manifest.at("n_max").get<std::size_t>();
  ckpt.normalizer = Normalizer::from_bounds(
      manifest.at("normalizer").at("lo").get<std::vector<double>>(),
      manifest.at("normalizer").at("hi").get<std::vector<double>>());
  auto rel_names = manifest.at("relation_vocab").get<std::vector<std::string>>();
  SG_CHECK_CONFIG(!rel_names.empty() && rel_names[0] == "neutral",
                  path.string(), ": relation vocabulary must start with neutral");
  ckpt.relations = RelationVocab(
      std::vector<std::string>(rel_names.begin() + 1, rel_names.end()));

  const auto label_vocab =
      manifest.at("label_vocab").get<std::vector<std::string>>();
  const std::uint64_t emb_seed = manifest.at("embedder").at("seed").get<std::uint64_t>();
  ckpt.embedder = LabelEmbedder::hash_derived({}, emb_seed);
  ckpt.embedder.set_provenance(detail::parse_provenance(
      manifest.at("embedder").at("provenance").get<std::string>()));

  ckpt.params.relation_count =
      ckpt.denoiser.use_relational_edges ? rel_names.size() : 1;

  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    SG_CHECK_CONFIG(entry.at("dtype").get<std::string>() == "f32",
                    path.string(), ": tensor ", name, ": unsupported dtype");
    std::vector<double> values(shape_numel(shape));
    detail::read_f32_le(in, values);
    SG_CHECK_CONFIG(in.good(), path.string(), ": truncated payload at ", name);
    if (name == "label_embedder.table") {
      SG_CHECK_CONFIG(shape[0] == label_vocab.size() &&
                          shape[1] == kLabelEmbedDim,
                      path.string(), ": embedding table shape mismatch");
      for (std::size_t i = 0; i < label_vocab.size(); ++i)
        ckpt.embedder.set_row(
            label_vocab[i],
            std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(
                                                     i * kLabelEmbedDim),
                                values.begin() + static_cast<std::ptrdiff_t>(
                                                     (i + 1) * kLabelEmbedDim)));
    } else {
      ckpt.params.store.add(name, Tensor::from_data(shape, std::move(values)));
    }
  }
  return ckpt;
}

}  // namespace sgdiff
