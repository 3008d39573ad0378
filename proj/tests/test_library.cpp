#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "test_support.hpp"

using namespace opckit;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "opckit_lib_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

LibraryGraph small_library(int n, int dim, std::uint64_t seed, HnswParams params = {}) {
  params.level_seed = seed;
  LibraryGraph lib(params);
  std::mt19937_64 rng(seed);
  MaskGrid stub(8, 0.0);
  for (int i = 0; i < n; ++i) lib.insert(testsupport::random_unit_vector(dim, rng), stub);
  return lib;
}

}  // namespace

TEST_CASE("single-node graph answers its own query", "[library]") {
  LibraryGraph lib;
  std::mt19937_64 rng(71);
  const auto v = testsupport::random_unit_vector(16, rng);
  const auto id = lib.insert(v, MaskGrid(8, 0.0));
  CHECK(lib.entry_point() == id);

  const auto direct = lib.search_layer(v, {id}, 4, 0);
  REQUIRE(direct.size() == 1);
  CHECK(direct.front().id == id);
  CHECK(direct.front().distance == Catch::Approx(0.0).margin(1e-12));

  const auto match = lib.query(v);
  CHECK(match.outcome == MatchResult::Outcome::matched);
  CHECK(match.matched_id == id);
  CHECK(match.nearest_distance == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("search_layer equals linear scan on a fully connected level", "[library]") {
  // Force every node to level 0 only and connect all pairs by using a
  // degree bound above the node count.
  HnswParams params;
  params.max_degree = 32;
  params.ef_search = 32;
  params.ef_construction = 32;
  params.max_levels = 1;
  auto lib = small_library(10, 12, 72, params);
  std::mt19937_64 rng(99);
  const auto query = testsupport::random_unit_vector(12, rng);
  const auto got = lib.search_layer(query, {*lib.entry_point()}, 10, 0);

  std::vector<Candidate> scan;
  for (std::uint64_t i = 0; i < lib.size(); ++i)
    scan.push_back({i, d_euclid(query, lib.node(i).vector)});
  std::sort(scan.begin(), scan.end(), [](auto& a, auto& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  });
  REQUIRE(got.size() == scan.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].id == scan[i].id);
    CHECK(got[i].distance == Catch::Approx(scan[i].distance));
  }
}

TEST_CASE("search_layer rejects bad starts", "[library]") {
  LibraryGraph empty;
  std::mt19937_64 rng(73);
  const auto q = testsupport::random_unit_vector(8, rng);
  CHECK_THROWS_AS(empty.search_layer(q, {}, 4, 0), empty_graph);
}

TEST_CASE("query on an empty library reports a new pattern", "[library]") {
  LibraryGraph lib;
  std::mt19937_64 rng(74);
  const auto match = lib.query(testsupport::random_unit_vector(8, rng));
  CHECK(match.outcome == MatchResult::Outcome::new_pattern);
  CHECK(match.candidates.empty());
  CHECK(std::isinf(match.nearest_distance));
}

TEST_CASE("sigma rule is consistent and exclusive", "[library]") {
  auto lib = small_library(200, 32, 75);
  std::mt19937_64 rng(76);
  for (int q = 0; q < 50; ++q) {
    const auto query = testsupport::random_unit_vector(32, rng);
    const auto match = lib.query(query);
    REQUIRE_FALSE(match.candidates.empty());
    // Candidates ascend.
    for (std::size_t i = 1; i < match.candidates.size(); ++i)
      CHECK(match.candidates[i - 1].distance <= match.candidates[i].distance);
    if (match.outcome == MatchResult::Outcome::matched) {
      CHECK(match.nearest_distance < lib.params().sigma);
      CHECK(match.matched_id == match.candidates.front().id);
    } else {
      CHECK(match.nearest_distance >= lib.params().sigma);
    }
  }
  // A duplicate of a stored vector always matches at distance 0.
  const auto& stored = lib.node(17).vector;
  const auto dup = lib.query(stored);
  CHECK(dup.outcome == MatchResult::Outcome::matched);
  CHECK(dup.matched_id == 17);
  CHECK(dup.nearest_distance == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("insert validates normalization", "[library]") {
  LibraryGraph lib;
  EmbeddingVector bad{{2.0, 0.0}, true};
  CHECK_THROWS_AS(lib.insert(bad, MaskGrid(8, 0.0)), invalid_param);
  EmbeddingVector unflagged{{1.0, 0.0}, false};
  CHECK_THROWS_AS(lib.insert(unflagged, MaskGrid(8, 0.0)), invalid_param);
}

TEST_CASE("graph audit passes after 1000 random insertions", "[library][slow]") {
  auto lib = small_library(1000, 64, 77);
  const auto report = lib.audit();
  CHECK(report.ok);
  CHECK(report.nodes == 1000);
  CHECK(report.max_observed_degree <= lib.params().max_degree);
  for (const auto& v : report.violations) INFO(v);
  CHECK(report.violations.empty());
}

TEST_CASE("recall@1 against linear scan stays high", "[library][slow]") {
  const int n = 2000, dim = 256, queries = 200;
  HnswParams params;
  params.level_seed = 123;
  LibraryGraph lib(params);
  std::mt19937_64 rng(123);
  std::vector<EmbeddingVector> data;
  MaskGrid stub(8, 0.0);
  for (int i = 0; i < n; ++i) data.push_back(testsupport::random_unit_vector(dim, rng));
  for (int i = 0; i < n; ++i) lib.insert(data[i], stub);
  int hits = 0;
  for (int q = 0; q < queries; ++q) {
    const auto query = testsupport::random_unit_vector(dim, rng);
    const auto res = lib.query(query);
    std::uint64_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      const double d = d_euclid(query, data[i]);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    if (!res.candidates.empty() && res.candidates.front().id == best) ++hits;
  }
  CHECK(static_cast<double>(hits) / queries >= 0.95);
}

TEST_CASE("seeded construction is bit-identical", "[library]") {
  auto a = small_library(300, 32, 78);
  auto b = small_library(300, 32, 78);
  REQUIRE(a.size() == b.size());
  CHECK(a.max_level() == b.max_level());
  CHECK(a.entry_point() == b.entry_point());
  for (std::uint64_t i = 0; i < a.size(); ++i) {
    CHECK(a.node(i).top_level == b.node(i).top_level);
    CHECK(a.node(i).vector.values == b.node(i).vector.values);
  }
}

TEST_CASE("persistence round trip", "[library]") {
  const auto dir = fresh_dir("roundtrip");

  SECTION("empty library") {
    LibraryGraph lib;
    lib.persist(dir);
    const auto loaded = LibraryGraph::load(dir);
    CHECK(loaded.size() == 0);
    CHECK_FALSE(loaded.entry_point().has_value());
  }

  SECTION("500 nodes, bit-identical vector bytes and adjacency") {
    HnswParams params;
    params.level_seed = 79;
    LibraryGraph lib(params);
    std::mt19937_64 rng(79);
    std::mt19937_64 mask_rng(80);
    for (int i = 0; i < 500; ++i) {
      MaskGrid mask = to_mask(testsupport::random_binary(16, 0.4, mask_rng));
      lib.insert(testsupport::random_unit_vector(32, rng), std::move(mask));
    }
    lib.persist(dir);
    const auto loaded = LibraryGraph::load(dir);
    REQUIRE(loaded.size() == lib.size());
    CHECK(loaded.entry_point() == lib.entry_point());
    CHECK(loaded.max_level() == lib.max_level());
    CHECK(loaded.audit().ok);

    // Adjacency equality via a second persist: byte-identical files.
    const auto dir2 = fresh_dir("roundtrip2");
    loaded.persist(dir2);
    auto slurp = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(dir / "vectors.bin") == slurp(dir2 / "vectors.bin"));
    CHECK(slurp(dir / "manifest.json") == slurp(dir2 / "manifest.json"));
    // Masks survive exactly (binary-valued, so 8-bit quantization is lossless).
    for (std::uint64_t i = 0; i < lib.size(); ++i) CHECK(loaded.mask_for(i) == lib.mask_for(i));
  }

  SECTION("insertions after load continue the level-draw stream") {
    HnswParams params;
    params.level_seed = 81;
    LibraryGraph continuous(params);
    std::mt19937_64 rng(81);
    std::vector<EmbeddingVector> vecs;
    for (int i = 0; i < 60; ++i) vecs.push_back(testsupport::random_unit_vector(16, rng));
    MaskGrid stub(8, 0.0);
    for (int i = 0; i < 60; ++i) continuous.insert(vecs[i], stub);

    LibraryGraph staged(params);
    for (int i = 0; i < 30; ++i) staged.insert(vecs[i], stub);
    const auto dir3 = fresh_dir("staged");
    staged.persist(dir3);
    auto resumed = LibraryGraph::load(dir3);
    for (int i = 30; i < 60; ++i) resumed.insert(vecs[i], stub);

    REQUIRE(resumed.size() == continuous.size());
    for (std::uint64_t i = 0; i < resumed.size(); ++i)
      CHECK(resumed.node(i).top_level == continuous.node(i).top_level);
  }
}

TEST_CASE("load rejects bad libraries", "[library]") {
  SECTION("unknown version") {
    const auto dir = fresh_dir("badversion");
    LibraryGraph lib;
    lib.persist(dir);
    auto manifest = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
    manifest["version"] = 999;
    std::ofstream(dir / "manifest.json") << manifest.dump();
    CHECK_THROWS_AS(LibraryGraph::load(dir), version_error);
  }
  SECTION("adjacency referencing an unknown id") {
    const auto dir = fresh_dir("badadj");
    auto lib = small_library(5, 8, 82);
    lib.persist(dir);
    auto manifest = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
    manifest["nodes"][0]["levels"][0].push_back(4242);
    std::ofstream(dir / "manifest.json") << manifest.dump();
    CHECK_THROWS_AS(LibraryGraph::load(dir), corrupt_data);
  }
  SECTION("truncated vectors.bin") {
    const auto dir = fresh_dir("badvec");
    auto lib = small_library(5, 8, 83);
    lib.persist(dir);
    fs::resize_file(dir / "vectors.bin", 7);
    CHECK_THROWS_AS(LibraryGraph::load(dir), corrupt_data);
  }
  SECTION("missing directory") { CHECK_THROWS_AS(LibraryGraph::load("/no/such/dir"), io_error); }
}

TEST_CASE("mask store resolves stored ids and rejects unknown ones", "[library]") {
  LibraryGraph lib;
  std::mt19937_64 rng(84);
  MaskGrid mask(8, 0.0);
  mask(3, 3) = 1.0;
  const auto id = lib.insert(testsupport::random_unit_vector(8, rng), mask);
  CHECK(lib.mask_for(id) == mask);
  CHECK_THROWS_AS(lib.mask_for(id + 1), mask_missing);
}

TEST_CASE("concurrent readers share the graph safely", "[library]") {
  auto lib = small_library(400, 32, 85);
  std::atomic<int> matched{0};
  std::vector<std::thread> readers;
  for (int t = 0; t < 4; ++t)
    readers.emplace_back([&lib, &matched, t] {
      std::mt19937_64 rng(900 + t);
      for (int q = 0; q < 50; ++q) {
        const auto res = lib.query(testsupport::random_unit_vector(32, rng));
        matched += res.outcome == MatchResult::Outcome::matched;
        (void)lib.audit();
      }
    });
  for (auto& r : readers) r.join();
  CHECK(lib.total_distance_computations() > 0);
}
