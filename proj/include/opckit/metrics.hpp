#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "opckit/errors.hpp"
#include "opckit/grid.hpp"
#include "opckit/litho.hpp"

namespace opckit {

/// EPE measurement parameters. Distances are in nanometres; sampling
/// geometry is in pixels along target edge segments.
struct EpeConfig {
  double th_epe_nm = 15.0;
  int sample_interval_px = 40;
  int corner_exclusion_px = 10;
  int max_probe_px = 64;
};

/// Direction pointing from a target edge into the shape interior.
enum class EdgeNormal : std::uint8_t { pos_x, neg_x, pos_y, neg_y };

struct EpeSample {
  int x = 0;  // inside pixel adjacent to the edge
  int y = 0;
  EdgeNormal inward = EdgeNormal::pos_x;
  double d_nm = 0.0;
  bool measured = false;
  bool violation = false;
};

struct EpeReport {
  std::vector<EpeSample> samples;
  int violations = 0;
};

namespace detail {

struct EdgeSegment {
  int x = 0;  // first inside pixel of the run
  int y = 0;
  int length = 0;    // pixels along the run
  bool vertical = false;  // run extends along y (edge is vertical)
  EdgeNormal inward = EdgeNormal::pos_x;
};

inline std::uint8_t cell_or_zero(const PatternGrid& g, int x, int y) {
  if (x < 0 || y < 0 || x >= g.size() || y >= g.size()) return 0;
  return g(x, y);
}

/// Maximal runs of boundary cells. A vertical left edge at column x is a
/// run (in y) of cells that are inside while (x-1, y) is outside; the
/// other three orientations are symmetric. Beyond-grid cells count as
/// outside.
inline std::vector<EdgeSegment> edge_segments(const PatternGrid& target) {
  std::vector<EdgeSegment> segments;
  const int n = target.size();
  auto flush = [&](EdgeSegment& seg) {
    if (seg.length > 0) segments.push_back(seg);
    seg.length = 0;
  };
  // Vertical edges: scan each column, runs along y.
  for (int x = 0; x < n; ++x) {
    EdgeSegment left{0, 0, 0, true, EdgeNormal::pos_x};
    EdgeSegment right{0, 0, 0, true, EdgeNormal::neg_x};
    for (int y = 0; y < n; ++y) {
      const bool inside = target(x, y) != 0;
      const bool left_edge = inside && cell_or_zero(target, x - 1, y) == 0;
      const bool right_edge = inside && cell_or_zero(target, x + 1, y) == 0;
      if (left_edge) {
        if (left.length == 0) { left.x = x; left.y = y; }
        ++left.length;
      } else flush(left);
      if (right_edge) {
        if (right.length == 0) { right.x = x; right.y = y; }
        ++right.length;
      } else flush(right);
    }
    flush(left);
    flush(right);
  }
  // Horizontal edges: scan each row, runs along x.
  for (int y = 0; y < n; ++y) {
    EdgeSegment top{0, 0, 0, false, EdgeNormal::pos_y};
    EdgeSegment bottom{0, 0, 0, false, EdgeNormal::neg_y};
    for (int x = 0; x < n; ++x) {
      const bool inside = target(x, y) != 0;
      const bool top_edge = inside && cell_or_zero(target, x, y - 1) == 0;
      const bool bottom_edge = inside && cell_or_zero(target, x, y + 1) == 0;
      if (top_edge) {
        if (top.length == 0) { top.x = x; top.y = y; }
        ++top.length;
      } else flush(top);
      if (bottom_edge) {
        if (bottom.length == 0) { bottom.x = x; bottom.y = y; }
        ++bottom.length;
      } else flush(bottom);
    }
    flush(top);
    flush(bottom);
  }
  return segments;
}

inline std::pair<int, int> normal_step(EdgeNormal inward) {
  switch (inward) {
    case EdgeNormal::pos_x: return {1, 0};
    case EdgeNormal::neg_x: return {-1, 0};
    case EdgeNormal::pos_y: return {0, 1};
    default: return {0, -1};
  }
}

}  // namespace detail

/// Measuring points along target edges: on every segment, offsets
/// corner_exclusion, corner_exclusion + interval, ... as long as they
/// stay corner_exclusion pixels away from the far end. Segments shorter
/// than the exclusion window produce no points.
inline std::vector<EpeSample> epe_sample_points(const PatternGrid& target, const EpeConfig& cfg) {
  if (cfg.sample_interval_px < 1) throw invalid_param("epe: sample interval must be >= 1");
  if (cfg.corner_exclusion_px < 0) throw invalid_param("epe: corner exclusion must be >= 0");
  std::vector<EpeSample> points;
  for (const auto& seg : detail::edge_segments(target)) {
    for (int o = cfg.corner_exclusion_px; o <= seg.length - 1 - cfg.corner_exclusion_px; o += cfg.sample_interval_px) {
      EpeSample s;
      s.x = seg.vertical ? seg.x : seg.x + o;
      s.y = seg.vertical ? seg.y + o : seg.y;
      s.inward = seg.inward;
      points.push_back(s);
    }
  }
  return points;
}

/// Distance from each target edge sample to the nearest printed-contour
/// crossing along the edge normal (probing both ways, toroidal indexing),
/// as nanometres. A sample violates when the distance reaches th_epe_nm
/// or no crossing exists within max_probe_px.
inline EpeReport epe_violations(const PrintedImage& printed, const PatternGrid& target, const EpeConfig& cfg,
                                double units_nm_per_px = 1.0) {
  if (printed.size() != target.size()) throw size_mismatch("epe_violations: printed/target size mismatch");
  EpeReport report;
  report.samples = epe_sample_points(target, cfg);
  for (auto& s : report.samples) {
    const auto [sx, sy] = detail::normal_step(s.inward);
    auto probe = [&](int offset) -> std::uint8_t {
      return printed.at_wrapped(s.x + sx * offset, s.y + sy * offset);
    };
    s.measured = false;
    for (int d = 0; d <= cfg.max_probe_px; ++d) {
      // The target edge sits between offsets -1 and 0; a printed
      // transition between offsets d-1 and d (or -d-1 and -d) is a
      // contour crossing at distance d.
      if (probe(d - 1) != probe(d) || probe(-d - 1) != probe(-d)) {
        s.measured = true;
        s.d_nm = d * units_nm_per_px;
        break;
      }
    }
    s.violation = !s.measured || s.d_nm >= cfg.th_epe_nm;
    if (s.violation) ++report.violations;
  }
  return report;
}

struct PvBand {
  long long area_nm2 = 0;
  PrintedImage z_in;
  PrintedImage z_out;
};

/// Process-variation band: XOR area between the prints at the inner and
/// outer corners, in nm^2.
inline PvBand pvband(const MaskGrid& mask, const LithoModel& model) {
  PvBand pv;
  pv.z_out = litho(mask, model, model.corners.outer);
  pv.z_in = litho(mask, model, model.corners.inner);
  long long pixels = 0;
  for (std::size_t i = 0; i < pv.z_in.cell_count(); ++i) pixels += pv.z_in.data()[i] != pv.z_out.data()[i];
  const double unit_area = model.units_nm_per_px * model.units_nm_per_px;
  pv.area_nm2 = static_cast<long long>(pixels * unit_area + 0.5);
  return pv;
}

}  // namespace opckit
