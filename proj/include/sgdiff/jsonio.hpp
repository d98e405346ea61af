#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "sgdiff/common.hpp"

namespace sgdiff {

using json = nlohmann::json;

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  SG_CHECK_CONFIG(in.good(), "cannot open ", path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw config_error(msg_cat(path.string(), ": ", e.what()));
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  SG_CHECK_CONFIG(out.good(), "cannot write ", path.string());
  out << j.dump(2) << "\n";
}

// keys are validated strictly so config typos fail loudly
inline void reject_unknown_keys(const json& j,
                                std::initializer_list<const char*> known,
                                const std::string& where) {
  if (!j.is_object()) return;
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) {
        ok = true;
        break;
      }
    SG_CHECK_CONFIG(ok, where, ": unknown key \"", it.key(), "\"");
  }
}

}  // namespace sgdiff
