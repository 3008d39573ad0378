#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "opckit/errors.hpp"

namespace opckit {

inline constexpr bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

/// Wrap an index onto [0, n) (toroidal addressing).
inline constexpr int wrap(int i, int n) {
  int r = i % n;
  return r < 0 ? r + n : r;
}

/// Square raster, row-major, origin at the top-left. (x, y) addresses
/// column x of row y. All pattern, mask and intensity grids in the
/// library share this container.
template <typename T>
class Grid {
 public:
  Grid() = default;
  explicit Grid(int size, T fill = T{}) : size_(size), data_(static_cast<std::size_t>(size) * size, fill) {
    if (size <= 0) throw invalid_param("Grid: size must be positive");
  }

  int size() const { return size_; }
  bool empty() const { return size_ == 0; }
  std::size_t cell_count() const { return data_.size(); }

  T& operator()(int x, int y) { return data_[static_cast<std::size_t>(y) * size_ + x]; }
  const T& operator()(int x, int y) const { return data_[static_cast<std::size_t>(y) * size_ + x]; }

  /// Toroidal access: indices wrap modulo the grid size.
  const T& at_wrapped(int x, int y) const { return (*this)(wrap(x, size_), wrap(y, size_)); }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  void fill(T v) { data_.assign(data_.size(), v); }

  bool operator==(const Grid&) const = default;

 private:
  int size_ = 0;
  std::vector<T> data_;
};

/// Design-target raster with cells in {0,1}.
using PatternGrid = Grid<std::uint8_t>;
/// Mask raster; relaxed masks hold values in (0,1), binarized ones {0,1}.
using MaskGrid = Grid<double>;
/// Aerial-image intensity (non-negative).
using AerialImage = Grid<double>;
/// Resist output, cells in {0,1}.
using PrintedImage = Grid<std::uint8_t>;

/// Cyclic shift: out(x, y) = in(x - dx, y - dy) with wrap-around, so
/// positive (dx, dy) moves content toward larger coordinates.
template <typename T>
Grid<T> roll(const Grid<T>& g, int dx, int dy) {
  const int n = g.size();
  Grid<T> out(n);
  dx = wrap(dx, n);
  dy = wrap(dy, n);
  for (int y = 0; y < n; ++y) {
    const int sy = wrap(y - dy, n);
    for (int x = 0; x < n; ++x) out(x, y) = g(wrap(x - dx, n), sy);
  }
  return out;
}

inline std::size_t count_ones(const PatternGrid& g) {
  std::size_t c = 0;
  for (auto v : g.data()) c += (v != 0);
  return c;
}

template <typename T>
PatternGrid binarize(const Grid<T>& g, T threshold) {
  PatternGrid out(g.size());
  for (std::size_t i = 0; i < g.data().size(); ++i) out.data()[i] = g.data()[i] >= threshold ? 1 : 0;
  return out;
}

inline MaskGrid to_mask(const PatternGrid& g) {
  MaskGrid out(g.size());
  for (std::size_t i = 0; i < g.data().size(); ++i) out.data()[i] = g.data()[i] ? 1.0 : 0.0;
  return out;
}

}  // namespace opckit
