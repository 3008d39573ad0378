#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "opckit/errors.hpp"
#include "opckit/grid.hpp"

namespace opckit {

/// Axis-aligned rectangle in layout pixels.
struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
};

/// Rectangle-based design layer. Shapes live on an integer pixel grid;
/// units_nm_per_px converts pixel lengths to nanometres.
struct LayoutSpec {
  double units_nm_per_px = 1.0;
  int width_px = 0;
  int height_px = 0;
  std::vector<Rect> shapes;
};

/// Square slicing window. Sides are restricted to powers of two so every
/// downstream transform works without padding decisions.
struct Window {
  int origin_x = 0;
  int origin_y = 0;
  int size = 0;
};

namespace detail {

template <typename T>
T require_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw schema_error(std::string("layout: missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw schema_error(std::string("layout: field '") + key + "' has the wrong type");
  }
}

}  // namespace detail

inline LayoutSpec parse_layout_json(const nlohmann::json& j) {
  LayoutSpec spec;
  spec.units_nm_per_px = detail::require_field<double>(j, "units_nm_per_px");
  spec.width_px = detail::require_field<int>(j, "width_px");
  spec.height_px = detail::require_field<int>(j, "height_px");
  if (spec.units_nm_per_px <= 0) throw schema_error("layout: units_nm_per_px must be positive");
  if (spec.width_px <= 0 || spec.height_px <= 0) throw schema_error("layout: extents must be positive");
  const auto shapes = detail::require_field<nlohmann::json>(j, "shapes");
  if (!shapes.is_array()) throw schema_error("layout: 'shapes' must be an array");
  spec.shapes.reserve(shapes.size());
  for (const auto& s : shapes) {
    Rect r;
    r.x = detail::require_field<int>(s, "x");
    r.y = detail::require_field<int>(s, "y");
    r.w = detail::require_field<int>(s, "w");
    r.h = detail::require_field<int>(s, "h");
    if (r.w <= 0 || r.h <= 0) throw schema_error("layout: rectangle sides must be positive");
    if (r.x < 0 || r.y < 0) throw bounds_error("layout: rectangle origin outside extents");
    if (r.x + r.w > spec.width_px || r.y + r.h > spec.height_px)
      throw bounds_error("layout: rectangle exceeds extents");
    spec.shapes.push_back(r);
  }
  return spec;
}

inline LayoutSpec parse_layout(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("parse_layout: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw schema_error(std::string("parse_layout: invalid JSON: ") + e.what());
  }
  return parse_layout_json(j);
}

inline nlohmann::json layout_to_json(const LayoutSpec& spec) {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& r : spec.shapes) shapes.push_back({{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}});
  return {{"units_nm_per_px", spec.units_nm_per_px},
          {"width_px", spec.width_px},
          {"height_px", spec.height_px},
          {"shapes", shapes}};
}

/// Rasterize one window of the layout. A cell is 1 iff its pixel centre
/// lies in some rectangle [x, x+w) × [y, y+h); pixels outside the layout
/// extents are 0, so partially overlapping windows clip cleanly.
inline PatternGrid rasterize_window(const LayoutSpec& layout, const Window& win) {
  if (!is_power_of_two(win.size)) throw invalid_param("rasterize_window: window size must be a power of two");
  PatternGrid grid(win.size);
  for (const auto& r : layout.shapes) {
    // Clip the rectangle against the window in layout coordinates.
    const int x0 = std::max(r.x, win.origin_x);
    const int y0 = std::max(r.y, win.origin_y);
    const int x1 = std::min(r.x + r.w, win.origin_x + win.size);
    const int y1 = std::min(r.y + r.h, win.origin_y + win.size);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) grid(x - win.origin_x, y - win.origin_y) = 1;
  }
  return grid;
}

}  // namespace opckit
