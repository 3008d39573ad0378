#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "test_support.hpp"

using namespace opckit;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "opckit_layout_tests";
  fs::create_directories(dir);
  return dir;
}

nlohmann::json basic_layout() {
  return {{"units_nm_per_px", 1.0},
          {"width_px", 64},
          {"height_px", 64},
          {"shapes", nlohmann::json::array()}};
}

}  // namespace

TEST_CASE("parse_layout accepts an empty shape list", "[layout]") {
  const auto spec = parse_layout_json(basic_layout());
  CHECK(spec.shapes.empty());
  CHECK(spec.width_px == 64);
}

TEST_CASE("parse_layout keeps a valid rectangle", "[layout]") {
  auto j = basic_layout();
  j["shapes"].push_back({{"x", 4}, {"y", 8}, {"w", 10}, {"h", 12}});
  const auto spec = parse_layout_json(j);
  REQUIRE(spec.shapes.size() == 1);
  CHECK(spec.shapes[0].x == 4);
  CHECK(spec.shapes[0].h == 12);
}

TEST_CASE("parse_layout rejects schema and bounds problems", "[layout]") {
  auto missing = basic_layout();
  missing.erase("width_px");
  CHECK_THROWS_AS(parse_layout_json(missing), schema_error);

  auto bad_type = basic_layout();
  bad_type["width_px"] = "wide";
  CHECK_THROWS_AS(parse_layout_json(bad_type), schema_error);

  auto oob = basic_layout();
  oob["shapes"].push_back({{"x", 60}, {"y", 0}, {"w", 10}, {"h", 4}});  // x+w > width
  CHECK_THROWS_AS(parse_layout_json(oob), bounds_error);

  auto degenerate = basic_layout();
  degenerate["shapes"].push_back({{"x", 0}, {"y", 0}, {"w", 0}, {"h", 4}});
  CHECK_THROWS_AS(parse_layout_json(degenerate), schema_error);

  CHECK_THROWS_AS(parse_layout("/nonexistent/path/layout.json"), io_error);
}

TEST_CASE("rasterize_window matches the per-pixel union oracle", "[layout]") {
  LayoutSpec spec;
  spec.units_nm_per_px = 1.0;
  spec.width_px = spec.height_px = 32;
  // Two 4x4 rects sharing a 2x4 strip.
  spec.shapes = {{4, 4, 4, 4}, {6, 4, 4, 4}};
  const auto grid = rasterize_window(spec, Window{0, 0, 32});

  std::size_t oracle_area = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      bool covered = false;
      for (const auto& r : spec.shapes)
        if (x >= r.x && x < r.x + r.w && y >= r.y && y < r.y + r.h) covered = true;
      oracle_area += covered;
      CHECK(grid(x, y) == (covered ? 1 : 0));
    }
  CHECK(count_ones(grid) == oracle_area);
  CHECK(oracle_area == 24);  // union of two 16s sharing 8
}

TEST_CASE("rasterize of an empty layout is all zero", "[layout]") {
  LayoutSpec spec;
  spec.width_px = spec.height_px = 16;
  CHECK(count_ones(rasterize_window(spec, Window{0, 0, 16})) == 0);
}

TEST_CASE("rasterize is monotone in added shapes", "[layout]") {
  LayoutSpec spec;
  spec.width_px = spec.height_px = 64;
  spec.shapes = {{10, 10, 8, 8}};
  const auto before = rasterize_window(spec, Window{0, 0, 64});
  spec.shapes.push_back({20, 30, 12, 6});
  const auto after = rasterize_window(spec, Window{0, 0, 64});
  for (std::size_t i = 0; i < before.cell_count(); ++i)
    if (before.data()[i]) CHECK(after.data()[i] == 1);
}

TEST_CASE("rasterize commutes with window translation inside the layout", "[layout]") {
  LayoutSpec spec;
  spec.width_px = spec.height_px = 128;
  spec.shapes = {{20, 24, 10, 14}, {60, 50, 8, 8}, {40, 90, 16, 4}};
  const auto big = rasterize_window(spec, Window{0, 0, 128});
  for (auto [ox, oy] : {std::pair{8, 16}, {32, 4}, {48, 48}}) {
    const auto win = rasterize_window(spec, Window{ox, oy, 32});
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) CHECK(win(x, y) == big(x + ox, y + oy));
  }
}

TEST_CASE("window size must be a power of two", "[layout]") {
  LayoutSpec spec;
  spec.width_px = spec.height_px = 32;
  CHECK_THROWS_AS(rasterize_window(spec, Window{0, 0, 24}), invalid_param);
}

TEST_CASE("pgm round trip is exact on binary grids", "[pgm]") {
  std::mt19937_64 rng(11);
  const auto grid = testsupport::random_binary(64, 0.35, rng);
  const auto path = temp_dir() / "roundtrip.pgm";
  write_pgm(grid, path);
  CHECK(read_pgm_binary(path) == grid);
}

TEST_CASE("pgm single-pixel file places the byte at the row-major offset", "[pgm]") {
  PatternGrid grid(8);
  grid(3, 2) = 1;  // offset 2*8+3 = 19
  const auto path = temp_dir() / "pixel.pgm";
  write_pgm(grid, path);
  std::ifstream in(path, std::ios::binary);
  std::string header;
  // P5, dims, maxval, then single whitespace.
  in >> header;
  int w, h, maxval;
  in >> w >> h >> maxval;
  in.get();
  std::vector<unsigned char> body(64);
  in.read(reinterpret_cast<char*>(body.data()), 64);
  for (int i = 0; i < 64; ++i) CHECK(body[i] == (i == 19 ? 255 : 0));
}

TEST_CASE("pgm all-zero body for an empty grid", "[pgm]") {
  PatternGrid grid(8);
  const auto path = temp_dir() / "zeros.pgm";
  write_pgm(grid, path);
  const auto bytes = read_pgm(path);
  for (auto b : bytes.data()) CHECK(b == 0);
  CHECK(bytes.cell_count() == 64);
}

TEST_CASE("pgm reader rejects malformed files", "[pgm]") {
  const auto dir = temp_dir();
  {
    std::ofstream out(dir / "bad_magic.pgm", std::ios::binary);
    out << "P6\n4 4\n255\n" << std::string(48, '\0');
  }
  CHECK_THROWS_AS(read_pgm(dir / "bad_magic.pgm"), format_error);
  {
    std::ofstream out(dir / "bad_maxval.pgm", std::ios::binary);
    out << "P5\n4 4\n65535\n" << std::string(32, '\0');
  }
  CHECK_THROWS_AS(read_pgm(dir / "bad_maxval.pgm"), format_error);
  {
    std::ofstream out(dir / "short.pgm", std::ios::binary);
    out << "P5\n4 4\n255\n" << std::string(7, '\0');
  }
  CHECK_THROWS_AS(read_pgm(dir / "short.pgm"), format_error);
  CHECK_THROWS_AS(read_pgm(dir / "missing.pgm"), io_error);
}

TEST_CASE("mask quantization writes 8-bit levels", "[pgm]") {
  MaskGrid mask(4);
  mask(0, 0) = 0.5;
  mask(1, 0) = 1.0;
  mask(2, 0) = -0.3;  // clamps to 0
  mask(3, 0) = 2.0;   // clamps to 1
  const auto path = temp_dir() / "mask.pgm";
  write_pgm(mask, path);
  const auto bytes = read_pgm(path);
  CHECK(static_cast<int>(bytes(0, 0)) == 128);
  CHECK(static_cast<int>(bytes(1, 0)) == 255);
  CHECK(static_cast<int>(bytes(2, 0)) == 0);
  CHECK(static_cast<int>(bytes(3, 0)) == 255);
}
