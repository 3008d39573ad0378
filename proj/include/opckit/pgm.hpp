#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "opckit/errors.hpp"
#include "opckit/grid.hpp"

namespace opckit {

// Raster files are binary PGM ("P5", maxval 255): 0 = background,
// 255 = shape, row-major from the top-left corner. Binary grids
// round-trip bit-exactly; continuous masks are quantized to 8 bits.

namespace detail {

inline void write_pgm_bytes(const Grid<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("write_pgm: cannot open " + path.string());
  out << "P5\n" << bytes.size() << ' ' << bytes.size() << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data().data()), static_cast<std::streamsize>(bytes.cell_count()));
  if (!out) throw io_error("write_pgm: short write to " + path.string());
}

inline int next_pgm_token(std::istream& in) {
  // Skips whitespace and '#' comment lines, returns a non-negative integer.
  int c = in.peek();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') in.ignore(1 << 20, '\n');
    else in.get();
    c = in.peek();
  }
  int value = -1;
  in >> value;
  return value;
}

}  // namespace detail

inline void write_pgm(const PatternGrid& grid, const std::filesystem::path& path) {
  Grid<std::uint8_t> bytes(grid.size());
  for (std::size_t i = 0; i < grid.cell_count(); ++i) bytes.data()[i] = grid.data()[i] ? 255 : 0;
  detail::write_pgm_bytes(bytes, path);
}

inline void write_pgm(const MaskGrid& grid, const std::filesystem::path& path) {
  Grid<std::uint8_t> bytes(grid.size());
  for (std::size_t i = 0; i < grid.cell_count(); ++i) {
    const double v = std::clamp(grid.data()[i], 0.0, 1.0);
    bytes.data()[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  detail::write_pgm_bytes(bytes, path);
}

/// Raw 8-bit read. Throws format_error on bad magic, maxval != 255 or a
/// non-square raster (grids in this library are square by construction).
inline Grid<std::uint8_t> read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("read_pgm: cannot open " + path.string());
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '5') throw format_error("read_pgm: bad magic in " + path.string());
  const int w = detail::next_pgm_token(in);
  const int h = detail::next_pgm_token(in);
  const int maxval = detail::next_pgm_token(in);
  if (!in || w <= 0 || h <= 0) throw format_error("read_pgm: bad header in " + path.string());
  if (w != h) throw format_error("read_pgm: raster is not square in " + path.string());
  if (maxval != 255) throw format_error("read_pgm: maxval must be 255 in " + path.string());
  in.get();  // single whitespace byte after maxval
  Grid<std::uint8_t> bytes(w);
  in.read(reinterpret_cast<char*>(bytes.data().data()), static_cast<std::streamsize>(bytes.cell_count()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.cell_count()))
    throw format_error("read_pgm: raster dimension mismatch in " + path.string());
  return bytes;
}

inline PatternGrid read_pgm_binary(const std::filesystem::path& path) {
  auto bytes = read_pgm(path);
  PatternGrid out(bytes.size());
  for (std::size_t i = 0; i < bytes.cell_count(); ++i) out.data()[i] = bytes.data()[i] >= 128 ? 1 : 0;
  return out;
}

inline MaskGrid read_pgm_mask(const std::filesystem::path& path) {
  auto bytes = read_pgm(path);
  MaskGrid out(bytes.size());
  for (std::size_t i = 0; i < bytes.cell_count(); ++i) out.data()[i] = bytes.data()[i] / 255.0;
  return out;
}

}  // namespace opckit
