#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "sgdiff/jsonio.hpp"
#include "sgdiff/tensor.hpp"

namespace sgdiff {

inline constexpr std::size_t kSceneDim = 15;  // centroid 3 + axes 9 + size 3
inline const std::string kEmptyLabel = "empty";

// One object row: centroid p (m), three row-stacked axis vectors, box extents
// s (m). The reserved `empty` label marks padding rows whose 15 values are the
// normalized-space zero.
struct SceneObject {
  std::string label;
  std::array<double, 3> centroid{};
  std::array<double, 9> axes{};
  std::array<double, 3> size{};

  bool is_empty() const { return label == kEmptyLabel; }

  static SceneObject empty() {
    SceneObject o;
    o.label = kEmptyLabel;
    return o;
  }

  static SceneObject axis_aligned(std::string label,
                                  std::array<double, 3> centroid,
                                  std::array<double, 3> size) {
    SceneObject o;
    o.label = std::move(label);
    o.centroid = centroid;
    o.size = size;
    o.axes = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return o;
  }

  std::array<double, kSceneDim> row() const {
    std::array<double, kSceneDim> r{};
    for (std::size_t i = 0; i < 3; ++i) r[i] = centroid[i];
    for (std::size_t i = 0; i < 9; ++i) r[3 + i] = axes[i];
    for (std::size_t i = 0; i < 3; ++i) r[12 + i] = size[i];
    return r;
  }
};

// volume of the axis-aligned box extents, cubic meters
inline double object_volume(const SceneObject& obj) {
  SG_CHECK(!obj.is_empty(), "object_volume: undefined for the empty object");
  return obj.size[0] * obj.size[1] * obj.size[2];
}

// Fixed-size scene: n_max rows of kSceneDim values plus aligned labels. Row i
// corresponds to node i of the condition graph.
struct SceneMatrix {
  Tensor rows;                      // n_max x kSceneDim
  std::vector<std::string> labels;  // n_max entries, `empty` for padding

  std::size_t n_max() const { return labels.size(); }

  bool row_empty(std::size_t i) const { return labels[i] == kEmptyLabel; }

  std::size_t object_count() const {
    std::size_t n = 0;
    for (const auto& l : labels) n += (l != kEmptyLabel) ? 1u : 0u;
    return n;
  }
};

// Pads a (≤ n_max)-object list into a fixed n_max-row matrix; padding rows are
// all-zero `empty` rows. Oversized lists are rejected, filtering happens
// upstream.
inline SceneMatrix pad_scene(const std::vector<SceneObject>& objects,
                             std::size_t n_max) {
  SG_CHECK(objects.size() <= n_max, "pad_scene: ", objects.size(),
           " objects exceed the ", n_max, "-row scene matrix");
  SceneMatrix scene;
  scene.rows = Tensor(Shape{n_max, kSceneDim});
  scene.labels.assign(n_max, kEmptyLabel);
  for (std::size_t i = 0; i < objects.size(); ++i) {
    scene.labels[i] = objects[i].label;
    const auto row = objects[i].row();
    for (std::size_t d = 0; d < kSceneDim; ++d)
      scene.rows.data()[i * kSceneDim + d] = quantize(row[d]);
  }
  return scene;
}

// Per-dimension affine map from the training-split [min, max] (inflated by a
// 1% margin) onto [-1, 1]. Values outside the fitted range are left
// unclamped; callers may count them via the out_of_range parameter.
class Normalizer {
 public:
  Normalizer() = default;

  static Normalizer fit(const std::vector<SceneMatrix>& scenes,
                        double margin = 0.01) {
    Normalizer norm;
    norm.lo_.assign(kSceneDim, std::numeric_limits<double>::infinity());
    norm.hi_.assign(kSceneDim, -std::numeric_limits<double>::infinity());
    bool any = false;
    for (const auto& s : scenes)
      for (std::size_t i = 0; i < s.n_max(); ++i) {
        if (s.row_empty(i)) continue;
        any = true;
        for (std::size_t d = 0; d < kSceneDim; ++d) {
          const double v = s.rows.at(i, d);
          norm.lo_[d] = std::min(norm.lo_[d], v);
          norm.hi_[d] = std::max(norm.hi_[d], v);
        }
      }
    SG_CHECK(any, "Normalizer::fit: no non-empty objects in the split");
    for (std::size_t d = 0; d < kSceneDim; ++d) {
      const double range = norm.hi_[d] - norm.lo_[d];
      if (range < 1e-9) {
        // constant dimension: unit half-width keeps the map invertible and
        // sends the constant to 0
        norm.lo_[d] -= 1.0;
        norm.hi_[d] += 1.0;
      } else {
        norm.lo_[d] -= margin * range;
        norm.hi_[d] += margin * range;
      }
    }
    norm.fitted_ = true;
    return norm;
  }

  static Normalizer from_bounds(std::vector<double> lo,
                                std::vector<double> hi) {
    SG_CHECK(lo.size() == kSceneDim && hi.size() == kSceneDim,
             "Normalizer: bounds must have ", kSceneDim, " entries");
    Normalizer norm;
    norm.lo_ = std::move(lo);
    norm.hi_ = std::move(hi);
    for (std::size_t d = 0; d < kSceneDim; ++d)
      SG_CHECK(norm.lo_[d] < norm.hi_[d], "Normalizer: min >= max at dim ", d);
    norm.fitted_ = true;
    return norm;
  }

  bool fitted() const { return fitted_; }
  const std::vector<double>& lo() const { return lo_; }
  const std::vector<double>& hi() const { return hi_; }

  double to_unit(double v, std::size_t d) const {
    return 2.0 * (v - lo_[d]) / (hi_[d] - lo_[d]) - 1.0;
  }
  double from_unit(double u, std::size_t d) const {
    return lo_[d] + (u + 1.0) * 0.5 * (hi_[d] - lo_[d]);
  }

 private:
  std::vector<double> lo_, hi_;
  bool fitted_ = false;
};

inline SceneMatrix normalize(const SceneMatrix& scene, const Normalizer& norm,
                             int* out_of_range = nullptr) {
  SG_CHECK(norm.fitted(), "normalize: normalizer is not fitted");
  SceneMatrix out = scene;
  out.rows = scene.rows.clone();
  for (std::size_t i = 0; i < scene.n_max(); ++i) {
    if (scene.row_empty(i)) {
      for (std::size_t d = 0; d < kSceneDim; ++d)
        out.rows.data()[i * kSceneDim + d] = 0.0;
      continue;
    }
    for (std::size_t d = 0; d < kSceneDim; ++d) {
      const double u = norm.to_unit(scene.rows.at(i, d), d);
      if (out_of_range && (u < -1.0 || u > 1.0)) ++*out_of_range;
      out.rows.data()[i * kSceneDim + d] = quantize(u);
    }
  }
  return out;
}

inline SceneMatrix denormalize(const SceneMatrix& scene,
                               const Normalizer& norm) {
  SG_CHECK(norm.fitted(), "denormalize: normalizer is not fitted");
  SceneMatrix out = scene;
  out.rows = scene.rows.clone();
  for (std::size_t i = 0; i < scene.n_max(); ++i) {
    if (scene.row_empty(i)) {
      for (std::size_t d = 0; d < kSceneDim; ++d)
        out.rows.data()[i * kSceneDim + d] = 0.0;
      continue;
    }
    for (std::size_t d = 0; d < kSceneDim; ++d)
      out.rows.data()[i * kSceneDim + d] =
          quantize(norm.from_unit(scene.rows.at(i, d), d));
  }
  return out;
}

struct LabeledBox {
  std::string label;
  std::array<double, 3> centroid{};
  std::array<double, 9> axes{};  // unit row vectors after decoding
  std::array<double, 3> size{};
};

// Decodes a scene matrix into world-space labeled boxes. Empty rows are
// dropped; axis rows are rescaled to unit norm (sampled matrices carry
// unconstrained values). Pass norm=nullptr when the rows are already
// world-space.
inline std::vector<LabeledBox> to_bounding_boxes(
    const SceneMatrix& scene, const Normalizer* norm = nullptr) {
  SceneMatrix world = norm ? denormalize(scene, *norm) : scene;
  std::vector<LabeledBox> boxes;
  for (std::size_t i = 0; i < world.n_max(); ++i) {
    if (world.row_empty(i)) continue;
    LabeledBox b;
    b.label = world.labels[i];
    for (std::size_t d = 0; d < 3; ++d) b.centroid[d] = world.rows.at(i, d);
    for (std::size_t a = 0; a < 3; ++a) {
      double n2 = 0.0;
      for (std::size_t d = 0; d < 3; ++d) {
        const double v = world.rows.at(i, 3 + a * 3 + d);
        n2 += v * v;
      }
      if (n2 < 1e-24) {
        // degenerate axis: fall back to the canonical basis vector
        b.axes[a * 3 + a] = 1.0;
      } else {
        const double inv = 1.0 / std::sqrt(n2);
        for (std::size_t d = 0; d < 3; ++d)
          b.axes[a * 3 + d] = world.rows.at(i, 3 + a * 3 + d) * inv;
      }
    }
    for (std::size_t d = 0; d < 3; ++d) b.size[d] = world.rows.at(i, 12 + d);
    boxes.push_back(std::move(b));
  }
  return boxes;
}

inline double box_volume(const LabeledBox& b) {
  return b.size[0] * b.size[1] * b.size[2];
}

// ---------------------------------------------------------------------------
// scene file format: {"n_max": N, "objects": [{label, centroid, axes, size}]}
// ---------------------------------------------------------------------------

inline json scene_to_json(const SceneMatrix& scene) {
  json objs = json::array();
  for (std::size_t i = 0; i < scene.n_max(); ++i) {
    if (scene.row_empty(i)) continue;
    json o;
    o["label"] = scene.labels[i];
    o["centroid"] = {scene.rows.at(i, 0), scene.rows.at(i, 1),
                     scene.rows.at(i, 2)};
    json axes = json::array();
    for (std::size_t d = 0; d < 9; ++d) axes.push_back(scene.rows.at(i, 3 + d));
    o["axes"] = axes;
    o["size"] = {scene.rows.at(i, 12), scene.rows.at(i, 13),
                 scene.rows.at(i, 14)};
    objs.push_back(std::move(o));
  }
  json j;
  j["n_max"] = scene.n_max();
  j["objects"] = std::move(objs);
  return j;
}

inline SceneMatrix scene_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"n_max", "objects"}, where);
  SG_CHECK_CONFIG(j.contains("n_max") && j.contains("objects"), where,
                  ": scene file needs n_max and objects");
  const std::size_t n_max = j.at("n_max").get<std::size_t>();
  std::vector<SceneObject> objects;
  for (const auto& o : j.at("objects")) {
    reject_unknown_keys(o, {"label", "centroid", "axes", "size"}, where);
    SceneObject obj;
    obj.label = o.at("label").get<std::string>();
    SG_CHECK_CONFIG(!obj.label.empty() && obj.label != kEmptyLabel, where,
                    ": object label must be non-empty and not the reserved \"",
                    kEmptyLabel, "\"");
    const auto& c = o.at("centroid");
    const auto& a = o.at("axes");
    const auto& s = o.at("size");
    SG_CHECK_CONFIG(c.size() == 3 && a.size() == 9 && s.size() == 3, where,
                    ": object fields must be centroid[3], axes[9], size[3]");
    for (std::size_t d = 0; d < 3; ++d) obj.centroid[d] = c[d].get<double>();
    for (std::size_t d = 0; d < 9; ++d) obj.axes[d] = a[d].get<double>();
    for (std::size_t d = 0; d < 3; ++d) obj.size[d] = s[d].get<double>();
    objects.push_back(std::move(obj));
  }
  SG_CHECK_CONFIG(objects.size() <= n_max, where, ": ", objects.size(),
                  " objects exceed n_max=", n_max);
  return pad_scene(objects, n_max);
}

inline void save_scene(const std::filesystem::path& path,
                       const SceneMatrix& scene) {
  write_json_file(path, scene_to_json(scene));
}

inline SceneMatrix load_scene(const std::filesystem::path& path) {
  return scene_from_json(read_json_file(path), path.string());
}

}  // namespace sgdiff
