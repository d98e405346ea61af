#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sgdiff/scene.hpp"

namespace sgdiff {

namespace detail {

inline std::string fmt_coord(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

// stable per-label color from a small palette indexed by name hash
inline std::string label_color(const std::string& label) {
  static const char* kPalette[] = {
      "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948",
      "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac", "#86bcb6", "#d37295"};
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return kPalette[h % (sizeof(kPalette) / sizeof(kPalette[0]))];
}

}  // namespace detail

// Orthographic top view (x right, y up) of a world-space scene: one rectangle
// per box footprint, label text at the centroid, and a legend. Output is
// deterministic byte-for-byte.
inline std::string render_scene_svg(const SceneMatrix& world) {
  const auto boxes = to_bounding_boxes(world, nullptr);

  double lo_x = -1, hi_x = 1, lo_y = -1, hi_y = 1;
  for (const auto& b : boxes) {
    lo_x = std::min(lo_x, b.centroid[0] - b.size[0] / 2);
    hi_x = std::max(hi_x, b.centroid[0] + b.size[0] / 2);
    lo_y = std::min(lo_y, b.centroid[1] - b.size[1] / 2);
    hi_y = std::max(hi_y, b.centroid[1] + b.size[1] / 2);
  }
  const double margin = 0.5;
  lo_x -= margin, hi_x += margin, lo_y -= margin, hi_y += margin;
  const double scale = 120.0;  // pixels per meter
  const double width = (hi_x - lo_x) * scale;
  const double height = (hi_y - lo_y) * scale;
  auto px = [&](double x) { return (x - lo_x) * scale; };
  auto py = [&](double y) { return (hi_y - y) * scale; };  // y grows upward

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         detail::fmt_coord(width) + "\" height=\"" + detail::fmt_coord(height) +
         "\" viewBox=\"0 0 " + detail::fmt_coord(width) + " " +
         detail::fmt_coord(height) + "\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"" + detail::fmt_coord(width) +
         "\" height=\"" + detail::fmt_coord(height) +
         "\" fill=\"#ffffff\"/>\n";

  // axes through the world origin
  svg += "<line x1=\"" + detail::fmt_coord(px(lo_x)) + "\" y1=\"" +
         detail::fmt_coord(py(0)) + "\" x2=\"" + detail::fmt_coord(px(hi_x)) +
         "\" y2=\"" + detail::fmt_coord(py(0)) +
         "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
  svg += "<line x1=\"" + detail::fmt_coord(px(0)) + "\" y1=\"" +
         detail::fmt_coord(py(lo_y)) + "\" x2=\"" + detail::fmt_coord(px(0)) +
         "\" y2=\"" + detail::fmt_coord(py(hi_y)) +
         "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";

  for (const auto& b : boxes) {
    const double x = px(b.centroid[0] - b.size[0] / 2);
    const double y = py(b.centroid[1] + b.size[1] / 2);
    svg += "<rect x=\"" + detail::fmt_coord(x) + "\" y=\"" +
           detail::fmt_coord(y) + "\" width=\"" +
           detail::fmt_coord(b.size[0] * scale) + "\" height=\"" +
           detail::fmt_coord(b.size[1] * scale) + "\" fill=\"" +
           detail::label_color(b.label) +
           "\" fill-opacity=\"0.55\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + detail::fmt_coord(px(b.centroid[0])) + "\" y=\"" +
           detail::fmt_coord(py(b.centroid[1])) +
           "\" font-size=\"12\" font-family=\"sans-serif\" "
           "text-anchor=\"middle\">" +
           b.label + "</text>\n";
  }

  // legend: unique labels in sorted order
  std::map<std::string, std::string> legend;
  for (const auto& b : boxes) legend[b.label] = detail::label_color(b.label);
  double ly = 16.0;
  for (const auto& [label, color] : legend) {
    svg += "<rect x=\"8\" y=\"" + detail::fmt_coord(ly - 10) +
           "\" width=\"12\" height=\"12\" fill=\"" + color +
           "\" stroke=\"#333333\"/>\n";
    svg += "<text x=\"26\" y=\"" + detail::fmt_coord(ly) +
           "\" font-size=\"12\" font-family=\"sans-serif\">" + label +
           "</text>\n";
    ly += 16.0;
  }
  svg += "</svg>\n";
  return svg;
}

inline void render_scene_to_file(const std::filesystem::path& path,
                                 const SceneMatrix& world) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  SG_CHECK_CONFIG(out.good(), "cannot write ", path.string());
  out << render_scene_svg(world);
}

}  // namespace sgdiff
