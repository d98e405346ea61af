#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "sgdiff/data.hpp"

using namespace sgdiff;

namespace {

json object_json(int id, const std::string& label, double x, double y,
                 double z, double sx, double sy, double sz) {
  return {{"id", id},
          {"label", label},
          {"centroid", {x, y, z}},
          {"axes", {1, 0, 0, 0, 1, 0, 0, 0, 1}},
          {"size", {sx, sy, sz}}};
}

// two scans: one clean, one with a dangling relation endpoint
void write_fixture(const std::filesystem::path& dir) {
  json objects;
  objects["scans"] = json::array();
  objects["scans"].push_back(
      {{"scan", "scan-a"},
       {"objects",
        {object_json(1, "bed", -1, 0, 0.3, 1.6, 2.0, 0.6),
         object_json(2, "table", 1, 0.2, 0.4, 1.2, 0.8, 0.8),
         object_json(3, "lamp", 1, 1.2, 0.7, 0.3, 0.3, 1.4)}}});
  objects["scans"].push_back(
      {{"scan", "scan-b"},
       {"objects",
        {object_json(1, "sofa", 0, 0, 0.4, 1.8, 0.9, 0.8),
         object_json(2, "table", 1.8, 0, 0.4, 1.2, 0.8, 0.8)}}});
  write_json_file(dir / "objects.json", objects);

  json rels;
  rels["scans"] = json::array();
  rels["scans"].push_back(
      {{"scan", "scan-a"},
       {"relationships",
        {{1, "left", 2}, {3, "close-by", 2}, {1, "attached-to", 2}}}});
  rels["scans"].push_back(
      {{"scan", "scan-b"},
       {"relationships", {{1, "left", 2}, {1, "left", 99}}}});
  write_json_file(dir / "relationships.json", rels);
}

}  // namespace

TEST_CASE("load_raw") {
  auto dir = std::filesystem::temp_directory_path() / "sgdiff_data_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  SECTION("empty directory gives no scenes") {
    REQUIRE(load_raw(dir).scenes.empty());
  }

  SECTION("fixture parses with known counts") {
    write_fixture(dir);
    LoadReport report = load_raw(dir);
    REQUIRE(report.scenes.size() == 2);
    REQUIRE(report.scenes[0].id == "scan-a");
    REQUIRE(report.scenes[0].objects.size() == 3);
    REQUIRE(report.scenes[0].relations.size() == 3);
    REQUIRE(report.scenes[1].relations.size() == 1);  // dangling one dropped
    REQUIRE(report.dropped_relations == 1);
  }

  SECTION("malformed json reports the line") {
    std::ofstream out(dir / "objects.json");
    out << "{\n  \"scans\": [\n    {broken}\n  ]\n}\n";
    out.close();
    REQUIRE_THROWS_WITH(load_raw(dir),
                        Catch::Matchers::ContainsSubstring("line 3"));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("filter_dataset cascade") {
  auto dir = std::filesystem::temp_directory_path() / "sgdiff_filter_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  write_fixture(dir);
  auto raw = load_raw(dir).scenes;
  RelationVocab vocab = RelationVocab::canonical();

  FilterConfig cfg;
  cfg.relation_whitelist = {"left", "close-by"};
  cfg.category_top_k = 51;
  cfg.max_objects = 20;

  SECTION("fixture counts after the full cascade") {
    auto pairs = filter_dataset(raw, cfg, vocab);
    REQUIRE(pairs.size() == 2);
    REQUIRE(pairs[0].objects.size() == 3);
    REQUIRE(pairs[0].graph.edges.size() == 2);  // attached-to filtered out
    REQUIRE(pairs[1].graph.edges.size() == 1);
  }

  SECTION("non-spatial-only scenes are excluded") {
    cfg.relation_whitelist = {"close-by"};
    auto pairs = filter_dataset(raw, cfg, vocab);
    REQUIRE(pairs.size() == 1);  // scan-b only had `left`
    REQUIRE(pairs[0].id == "scan-a");
  }

  SECTION("blocklist removes scenes up front") {
    cfg.scene_blocklist = {"scan-a"};
    auto pairs = filter_dataset(raw, cfg, vocab);
    REQUIRE(pairs.size() == 1);
    REQUIRE(pairs[0].id == "scan-b");
  }

  SECTION("category ranking cutoff removes the rarest label") {
    // frequencies: table 2, bed 1, lamp 1, sofa 1; top 3 keeps table and the
    // lexicographically first of the tied singletons (bed, lamp)
    cfg.category_top_k = 3;
    auto pairs = filter_dataset(raw, cfg, vocab);
    // scan-b loses sofa, so its left relation dangles and the scene drops
    REQUIRE(pairs.size() == 1);
    REQUIRE(pairs[0].id == "scan-a");
    REQUIRE(pairs[0].objects.size() == 3);
  }

  SECTION("truncation drops smallest-volume objects first") {
    cfg.max_objects = 2;
    auto pairs = filter_dataset(raw, cfg, vocab);
    // scan-a: lamp (0.126 m^3) is smallest and goes; edges to it vanish
    REQUIRE(pairs[0].objects.size() == 2);
    REQUIRE(pairs[0].graph.edges.size() == 1);
    for (const auto& o : pairs[0].objects) REQUIRE(o.label != "lamp");
  }

  SECTION("filter output invariants hold by direct scan") {
    cfg.category_top_k = 3;
    cfg.max_objects = 2;
    auto pairs = filter_dataset(raw, cfg, vocab);
    for (const auto& p : pairs) {
      REQUIRE(!p.objects.empty());
      REQUIRE(!p.graph.edges.empty());
      REQUIRE(p.objects.size() <= cfg.max_objects);
      for (const auto& e : p.graph.edges) {
        const std::string& name = vocab.name(e.relation);
        REQUIRE((name == "left" || name == "close-by"));
        REQUIRE(e.source < p.objects.size());
        REQUIRE(e.target < p.objects.size());
      }
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("split_dataset") {
  std::vector<int> ten(10);
  std::iota(ten.begin(), ten.end(), 0);

  SECTION("10 items at 80/10/10 give 8/1/1") {
    auto s = split_dataset(ten, {0.8, 0.1, 0.1}, 7);
    REQUIRE(s[0].size() == 8);
    REQUIRE(s[1].size() == 1);
    REQUIRE(s[2].size() == 1);
  }

  SECTION("407 items give 326/40/41") {
    std::vector<int> items(407);
    std::iota(items.begin(), items.end(), 0);
    auto s = split_dataset(items, {0.8, 0.1, 0.1}, 7);
    REQUIRE(s[0].size() == 326);
    REQUIRE(s[1].size() == 40);
    REQUIRE(s[2].size() == 41);
  }

  SECTION("same seed gives identical membership") {
    auto a = split_dataset(ten, {0.8, 0.1, 0.1}, 5);
    auto b = split_dataset(ten, {0.8, 0.1, 0.1}, 5);
    REQUIRE(a[0] == b[0]);
    REQUIRE(a[1] == b[1]);
    REQUIRE(a[2] == b[2]);
  }

  SECTION("bad ratios and empty inputs are errors") {
    REQUIRE_THROWS(split_dataset(ten, {0.5, 0.1, 0.1}, 5));
    REQUIRE_THROWS(split_dataset(std::vector<int>{}, {0.8, 0.1, 0.1}, 5));
  }
}

TEST_CASE("synthetic generator") {
  RelationVocab vocab = RelationVocab::canonical();
  SynthConfig cfg = SynthConfig::default_indoor();
  cfg.max_objects = 5;
  cfg.n_max = 6;

  SECTION("every generated pair scores perfect alignment") {
    auto pairs = synth_generate(32, cfg, vocab, 11);
    REQUIRE(pairs.size() == 32);
    for (const auto& p : pairs) {
      REQUIRE(!p.graph.edges.empty());
      SceneMatrix world = pad_scene(p.objects, cfg.n_max);
      REQUIRE(ras_scene(world, p.graph, vocab, cfg.predicates) == 1.0);
    }
  }

  SECTION("same seed regenerates identical corpora") {
    auto a = synth_generate(8, cfg, vocab, 3);
    auto b = synth_generate(8, cfg, vocab, 3);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i].graph.node_labels == b[i].graph.node_labels);
      REQUIRE(a[i].graph.edges.size() == b[i].graph.edges.size());
      for (std::size_t k = 0; k < a[i].objects.size(); ++k)
        for (std::size_t d = 0; d < 3; ++d)
          REQUIRE(a[i].objects[k].centroid[d] == b[i].objects[k].centroid[d]);
    }
  }

  SECTION("scene count and relation floor") {
    auto pairs = synth_generate(64, cfg, vocab, 5);
    REQUIRE(pairs.size() == 64);
    for (const auto& p : pairs) {
      REQUIRE(p.objects.size() >= cfg.min_objects);
      REQUIRE(p.objects.size() <= cfg.max_objects);
      REQUIRE(p.graph.edges.size() >= cfg.min_relations);
    }
  }

  SECTION("box overlap stays below the configured fraction") {
    auto pairs = synth_generate(16, cfg, vocab, 9);
    for (const auto& p : pairs)
      for (std::size_t i = 0; i < p.objects.size(); ++i)
        for (std::size_t j = i + 1; j < p.objects.size(); ++j) {
          const double cap = cfg.overlap_fraction *
                             std::min(object_volume(p.objects[i]),
                                      object_volume(p.objects[j]));
          REQUIRE(detail::overlap_volume(p.objects[i], p.objects[j]) <=
                  cap + 1e-12);
        }
  }
}
