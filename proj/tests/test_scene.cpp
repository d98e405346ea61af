#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "sgdiff/scene.hpp"

using namespace sgdiff;

namespace {

std::vector<SceneObject> sample_objects() {
  return {
      SceneObject::axis_aligned("bed", {1.0, 2.0, 0.3}, {1.6, 2.0, 0.6}),
      SceneObject::axis_aligned("table", {-0.5, 0.2, 0.4}, {1.2, 0.8, 0.8}),
      SceneObject::axis_aligned("chair", {0.4, -1.0, 0.45}, {0.5, 0.5, 0.9}),
  };
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("pad_scene fills with empty rows and rejects oversize lists") {
  auto objs = sample_objects();
  SceneMatrix scene = pad_scene(objs, 20);
  REQUIRE(scene.n_max() == 20);
  REQUIRE(scene.object_count() == 3);
  for (std::size_t i = 3; i < 20; ++i) {
    REQUIRE(scene.row_empty(i));
    for (std::size_t d = 0; d < kSceneDim; ++d)
      REQUIRE(scene.rows.at(i, d) == 0.0);
  }

  SceneMatrix exact = pad_scene(std::vector<SceneObject>(20, objs[0]), 20);
  REQUIRE(exact.object_count() == 20);

  REQUIRE_THROWS_WITH(pad_scene(std::vector<SceneObject>(21, objs[0]), 20),
                      Catch::Matchers::ContainsSubstring("21"));
}

TEST_CASE("object volume") {
  SceneObject o = SceneObject::axis_aligned("box", {0, 0, 0}, {1, 2, 3});
  REQUIRE(object_volume(o) == Catch::Approx(6.0));
  o.size = {0.5, 0.5, 0.5};
  REQUIRE(object_volume(o) == Catch::Approx(0.125));
  REQUIRE_THROWS(object_volume(SceneObject::empty()));
}

TEST_CASE("normalizer maps the fitted range onto [-1, 1]") {
  auto objs = sample_objects();
  std::vector<SceneMatrix> split = {pad_scene(objs, 8)};
  Normalizer norm = Normalizer::fit(split, 0.0);  // no margin for exact ends

  SECTION("endpoints and midpoint") {
    // dimension 0 is centroid x: values {1.0, -0.5, 0.4}
    REQUIRE(norm.to_unit(-0.5, 0) == Catch::Approx(-1.0));
    REQUIRE(norm.to_unit(1.0, 0) == Catch::Approx(1.0));
    REQUIRE(norm.to_unit(0.25, 0) == Catch::Approx(0.0));
  }

  SECTION("round trip is the identity within 1e-6") {
    Normalizer margin_norm = Normalizer::fit(split);
    SceneMatrix scene = pad_scene(objs, 8);
    SceneMatrix back = denormalize(normalize(scene, margin_norm), margin_norm);
    for (std::size_t i = 0; i < scene.n_max(); ++i)
      for (std::size_t d = 0; d < kSceneDim; ++d)
        REQUIRE(back.rows.at(i, d) ==
                Catch::Approx(scene.rows.at(i, d)).margin(1e-6));
  }

  SECTION("out-of-range values are reported, not clamped") {
    SceneMatrix scene = pad_scene(
        {SceneObject::axis_aligned("bed", {100.0, 0, 0}, {1, 1, 1})}, 2);
    int outside = 0;
    SceneMatrix unit = normalize(scene, norm, &outside);
    REQUIRE(outside > 0);
    REQUIRE(unit.rows.at(0, 0) > 1.0);
  }

  SECTION("unfitted normalizer errors") {
    Normalizer unfitted;
    SceneMatrix scene = pad_scene(objs, 8);
    REQUIRE_THROWS_WITH(normalize(scene, unfitted),
                        Catch::Matchers::ContainsSubstring("not fitted"));
  }

  SECTION("normalization is strictly monotone per dimension") {
    Normalizer margin_norm = Normalizer::fit(split);
    for (std::size_t d = 0; d < kSceneDim; ++d)
      REQUIRE(margin_norm.to_unit(0.5, d) < margin_norm.to_unit(0.6, d));
  }
}

TEST_CASE("to_bounding_boxes drops padding and recovers objects") {
  auto objs = sample_objects();
  SceneMatrix scene = pad_scene(objs, 20);

  SECTION("all-empty scene decodes to nothing") {
    SceneMatrix empty = pad_scene({}, 4);
    REQUIRE(to_bounding_boxes(empty, nullptr).empty());
  }

  SECTION("world-space decode preserves order and geometry") {
    auto boxes = to_bounding_boxes(scene, nullptr);
    REQUIRE(boxes.size() == objs.size());
    for (std::size_t i = 0; i < objs.size(); ++i) {
      REQUIRE(boxes[i].label == objs[i].label);
      for (std::size_t d = 0; d < 3; ++d) {
        REQUIRE(boxes[i].centroid[d] ==
                Catch::Approx(objs[i].centroid[d]).margin(1e-6));
        REQUIRE(boxes[i].size[d] ==
                Catch::Approx(objs[i].size[d]).margin(1e-6));
      }
    }
  }

  SECTION("normalize-decode round trip recovers objects") {
    std::vector<SceneMatrix> split = {scene};
    Normalizer norm = Normalizer::fit(split);
    SceneMatrix unit = normalize(scene, norm);
    auto boxes = to_bounding_boxes(unit, &norm);
    REQUIRE(boxes.size() == objs.size());
    for (std::size_t i = 0; i < objs.size(); ++i)
      for (std::size_t d = 0; d < 3; ++d)
        REQUIRE(boxes[i].centroid[d] ==
                Catch::Approx(objs[i].centroid[d]).margin(1e-5));
  }

  SECTION("noisy axes are rescaled to unit norm") {
    SceneMatrix noisy = scene;
    noisy.rows = scene.rows.clone();
    // scramble the first object's axis rows
    for (std::size_t d = 0; d < 9; ++d)
      noisy.rows.data()[0 * kSceneDim + 3 + d] = 0.3 * (1.0 + double(d));
    auto boxes = to_bounding_boxes(noisy, nullptr);
    for (std::size_t a = 0; a < 3; ++a) {
      double n2 = 0.0;
      for (std::size_t d = 0; d < 3; ++d) {
        const double v = boxes[0].axes[a * 3 + d];
        n2 += v * v;
      }
      REQUIRE(std::sqrt(n2) == Catch::Approx(1.0).margin(1e-9));
    }
  }
}

TEST_CASE("scene files round-trip bit-exactly") {
  auto dir = std::filesystem::temp_directory_path() / "sgdiff_scene_test";
  std::filesystem::create_directories(dir);
  auto objs = sample_objects();
  objs[0].centroid = {0.123456789123, -1.9876543210987, 0.5};
  SceneMatrix scene = pad_scene(objs, 20);

  const auto p1 = dir / "scene_a.json";
  const auto p2 = dir / "scene_b.json";
  save_scene(p1, scene);
  SceneMatrix loaded = load_scene(p1);
  save_scene(p2, loaded);

  REQUIRE(slurp(p1) == slurp(p2));
  REQUIRE(loaded.n_max() == scene.n_max());
  for (std::size_t i = 0; i < scene.n_max(); ++i)
    for (std::size_t d = 0; d < kSceneDim; ++d)
      REQUIRE(loaded.rows.at(i, d) == scene.rows.at(i, d));

  SECTION("reserved label is rejected") {
    json j = scene_to_json(scene);
    j["objects"][0]["label"] = "empty";
    REQUIRE_THROWS_AS(scene_from_json(j, "test"), config_error);
  }

  SECTION("unknown keys are rejected") {
    json j = scene_to_json(scene);
    j["mystery"] = 1;
    REQUIRE_THROWS_AS(scene_from_json(j, "test"), config_error);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("property: pad then decode recovers any object list") {
  Rng rng(99);
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t n = 1 + rng.uniform_int(8);
    std::vector<SceneObject> objs;
    for (std::size_t i = 0; i < n; ++i) {
      SceneObject o = SceneObject::axis_aligned(
          "cat" + std::to_string(rng.uniform_int(5)),
          {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 2)},
          {rng.uniform(0.1, 2), rng.uniform(0.1, 2), rng.uniform(0.1, 2)});
      objs.push_back(o);
    }
    auto boxes = to_bounding_boxes(pad_scene(objs, 8), nullptr);
    REQUIRE(boxes.size() == objs.size());
    for (std::size_t i = 0; i < n; ++i) {
      REQUIRE(boxes[i].label == objs[i].label);
      for (std::size_t d = 0; d < 3; ++d) {
        REQUIRE(boxes[i].centroid[d] ==
                Catch::Approx(objs[i].centroid[d]).margin(1e-6));
        REQUIRE(boxes[i].size[d] ==
                Catch::Approx(objs[i].size[d]).margin(1e-6));
      }
    }
  }
}
