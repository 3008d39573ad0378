#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <queue>
#include <random>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "opckit/embedding.hpp"
#include "opckit/errors.hpp"
#include "opckit/grid.hpp"
#include "opckit/pgm.hpp"

namespace opckit {

/// Hierarchical proximity-graph parameters.
///   max_degree      cap on edges per node per level after insertion
///   k_return        candidates returned by a query
///   ef_search       beam width at the bottom level (and for insertion)
///   level_multiplier m_L for the exponential level draw; 0 = 1/ln(M)
///   sigma           match threshold: best distance below it is a match
struct HnswParams {
  int max_degree = 24;
  int k_return = 8;
  int ef_search = 128;
  int ef_construction = 0;  // insertion beam width; 0 = max(2*ef_search, 128)
  double level_multiplier = 0.0;
  int max_levels = 8;
  double sigma = 0.05;
  Metric metric = Metric::euclid;
  std::uint64_t level_seed = 42;
  bool preserve_connectivity = false;
  // Optionally spread edges across directions (keep a candidate only
  // when it is closer to the new node than to any already-kept
  // neighbor) instead of plain nearest-M linking.
  bool select_diverse = false;

  double effective_level_multiplier() const {
    return level_multiplier > 0 ? level_multiplier : 1.0 / std::log(static_cast<double>(max_degree));
  }

  int effective_ef_construction() const {
    return ef_construction > 0 ? ef_construction : std::max(2 * ef_search, 128);
  }

  void validate() const {
    if (max_degree < 2) throw invalid_param("HnswParams: max_degree must be >= 2");
    if (k_return < 1 || ef_search < k_return) throw invalid_param("HnswParams: need 1 <= k_return <= ef_search");
    if (max_levels < 1) throw invalid_param("HnswParams: max_levels must be >= 1");
    if (!(sigma > 0)) throw invalid_param("HnswParams: sigma must be positive");
  }
};

struct LibraryNode {
  std::uint64_t id = 0;
  EmbeddingVector vector;
  std::uint64_t mask_key = 0;
  int top_level = 0;
};

struct Candidate {
  std::uint64_t id = 0;
  double distance = 0.0;
};

struct MatchResult {
  enum class Outcome { matched, new_pattern };
  Outcome outcome = Outcome::new_pattern;
  std::uint64_t matched_id = 0;
  double nearest_distance = std::numeric_limits<double>::infinity();
  std::vector<Candidate> candidates;  // ascending by distance
  std::uint64_t distance_computations = 0;
};

struct AuditReport {
  bool ok = true;
  std::size_t nodes = 0;
  std::size_t edges_level0 = 0;
  int max_observed_degree = 0;
  std::vector<std::string> violations;
};

/// Dynamic pattern library: a degree-bounded hierarchical proximity
/// graph over <embedding, mask> pairs with greedy beam search, online
/// insertion and on-disk persistence.
///
/// Concurrency contract: any number of concurrent readers (query,
/// search_layer, mask_for) OR one exclusive writer (insert, persist is
/// a reader of graph state but takes the write lock to freeze it).
class LibraryGraph {
 public:
  explicit LibraryGraph(HnswParams params = {}) : params_(params), rng_(params.level_seed) {
    params_.validate();
  }

  LibraryGraph(LibraryGraph&& other) noexcept { move_from(std::move(other)); }
  LibraryGraph& operator=(LibraryGraph&& other) noexcept {
    if (this != &other) move_from(std::move(other));
    return *this;
  }

  const HnswParams& params() const { return params_; }
  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return nodes_.size();
  }
  std::optional<std::uint64_t> entry_point() const {
    std::shared_lock lock(mutex_);
    return entry_;
  }
  int max_level() const {
    std::shared_lock lock(mutex_);
    return max_level_;
  }
  std::uint64_t total_distance_computations() const { return dist_total_.load(std::memory_order_relaxed); }

  const LibraryNode& node(std::uint64_t id) const {
    std::shared_lock lock(mutex_);
    if (id >= nodes_.size()) throw corrupt_data("LibraryGraph: unknown node id");
    return nodes_[id];
  }

  const MaskGrid& mask_for(std::uint64_t node_id) const {
    std::shared_lock lock(mutex_);
    auto it = masks_.find(node_id);
    if (it == masks_.end()) throw mask_missing("LibraryGraph: no mask stored for node");
    return it->second;
  }

  /// Greedy beam search at one level (the per-layer matching search).
  /// Starts seed the visited set, the frontier and the result list; the
  /// loop expands the nearest frontier node until it is farther than the
  /// worst retained result.
  std::vector<Candidate> search_layer(const EmbeddingVector& query, const std::vector<std::uint64_t>& starts,
                                      int width, int level) const {
    std::shared_lock lock(mutex_);
    if (nodes_.empty()) throw empty_graph("search_layer: library is empty");
    if (starts.empty()) throw empty_graph("search_layer: no start nodes");
    for (auto s : starts) {
      if (s >= nodes_.size()) throw invalid_param("search_layer: unknown start node");
      if (nodes_[s].top_level < level) throw invalid_param("search_layer: start absent at level");
    }
    std::uint64_t counter = 0;
    auto result = search_layer_impl(query, starts, width, level, counter);
    dist_total_.fetch_add(counter, std::memory_order_relaxed);
    return result;
  }

  /// Top-down match: width-1 greedy descent through the upper levels,
  /// beam search of width ef_search at level 0, then the sigma rule.
  MatchResult query(const EmbeddingVector& q) const {
    std::shared_lock lock(mutex_);
    MatchResult out;
    if (nodes_.empty()) return out;  // callers treat an empty library as "new pattern"
    std::uint64_t counter = 0;
    std::uint64_t start = *entry_;
    for (int level = max_level_; level >= 1; --level) {
      auto c = search_layer_impl(q, {start}, 1, level, counter);
      start = c.front().id;
    }
    auto c0 = search_layer_impl(q, {start}, params_.ef_search, 0, counter);
    if (c0.size() > static_cast<std::size_t>(params_.k_return)) c0.resize(params_.k_return);
    out.candidates = std::move(c0);
    out.nearest_distance = out.candidates.front().distance;
    if (out.nearest_distance < params_.sigma) {
      out.outcome = MatchResult::Outcome::matched;
      out.matched_id = out.candidates.front().id;
    }
    out.distance_computations = counter;
    dist_total_.fetch_add(counter, std::memory_order_relaxed);
    return out;
  }

  /// Insert a <vector, mask> pair. The node's top level is drawn as
  /// floor(-ln(U) * m_L) capped at max_levels-1; edges are made
  /// bidirectional and overfull neighbors keep only their max_degree
  /// nearest edges.
  std::uint64_t insert(const EmbeddingVector& vector, MaskGrid mask) {
    if (!vector.normalized || std::abs(vector.norm() - 1.0) > 1e-6)
      throw invalid_param("insert: vector must be normalized");
    std::unique_lock lock(mutex_);
    if (!nodes_.empty() && vector.values.size() != nodes_.front().vector.values.size())
      throw invalid_param("insert: dimension differs from library");

    const std::uint64_t id = nodes_.size();
    const int level = draw_level();
    nodes_.push_back(LibraryNode{id, vector, id, level});
    neighbors_.emplace_back(static_cast<std::size_t>(level) + 1);
    masks_.emplace(id, std::move(mask));

    if (nodes_.size() == 1) {
      entry_ = id;
      max_level_ = level;
      return id;
    }

    std::uint64_t counter = 0;
    std::uint64_t start = *entry_;
    for (int lc = max_level_; lc > level; --lc)
      start = search_layer_impl(nodes_[id].vector, {start}, 1, lc, counter).front().id;

    for (int lc = std::min(level, max_level_); lc >= 0; --lc) {
      auto candidates =
          search_layer_impl(nodes_[id].vector, {start}, params_.effective_ef_construction(), lc, counter);
      for (auto e : select_neighbors(nodes_[id].vector, candidates, params_.max_degree)) {
        neighbors_[id][lc].push_back(e);
        neighbors_[e][lc].push_back(id);
        if (neighbors_[e][lc].size() > static_cast<std::size_t>(params_.max_degree)) prune(e, lc);
      }
      start = candidates.front().id;
    }

    if (level > max_level_) {
      max_level_ = level;
      entry_ = id;
    }
    dist_total_.fetch_add(counter, std::memory_order_relaxed);
    return id;
  }

  /// Structural invariant checks: degree bound, edge symmetry, entry
  /// node maximality, contiguous level occupancy and level-0
  /// reachability from the entry point.
  AuditReport audit() const {
    std::shared_lock lock(mutex_);
    AuditReport report;
    report.nodes = nodes_.size();
    if (nodes_.empty()) return report;
    auto complain = [&](std::string msg) {
      report.ok = false;
      if (report.violations.size() < 32) report.violations.push_back(std::move(msg));
    };
    for (const auto& n : nodes_) {
      if (n.top_level + 1 != static_cast<int>(neighbors_[n.id].size()))
        complain("node " + std::to_string(n.id) + ": adjacency levels != top_level+1");
      for (int l = 0; l <= n.top_level; ++l) {
        const auto& adj = neighbors_[n.id][l];
        report.max_observed_degree = std::max(report.max_observed_degree, static_cast<int>(adj.size()));
        if (!params_.preserve_connectivity && adj.size() > static_cast<std::size_t>(params_.max_degree))
          complain("node " + std::to_string(n.id) + " level " + std::to_string(l) + ": degree exceeds bound");
        if (l == 0) report.edges_level0 += adj.size();
        for (auto e : adj) {
          if (e >= nodes_.size()) {
            complain("node " + std::to_string(n.id) + ": edge to unknown node");
            continue;
          }
          if (nodes_[e].top_level < l) complain("edge endpoint below its level");
          const auto& back = neighbors_[e][l];
          if (std::find(back.begin(), back.end(), n.id) == back.end())
            complain("edge " + std::to_string(n.id) + "->" + std::to_string(e) + " not symmetric at level " +
                     std::to_string(l));
        }
      }
      if (n.top_level > nodes_[*entry_].top_level) complain("entry point is not at the maximal level");
    }
    // Level-0 reachability from the entry point.
    std::vector<char> seen(nodes_.size(), 0);
    std::vector<std::uint64_t> stack{*entry_};
    seen[*entry_] = 1;
    std::size_t reached = 0;
    while (!stack.empty()) {
      const auto v = stack.back();
      stack.pop_back();
      ++reached;
      for (auto e : neighbors_[v][0])
        if (e < nodes_.size() && !seen[e]) {
          seen[e] = 1;
          stack.push_back(e);
        }
    }
    if (reached != nodes_.size())
      complain("level 0 reachability: " + std::to_string(reached) + "/" + std::to_string(nodes_.size()));
    return report;
  }

  // --- Persistence -----------------------------------------------------------
  // Directory layout: manifest.json, vectors.bin (row-major little-endian
  // IEEE-754 f32, k_dim per row, row index = node id), masks/<id>.pgm.

  static constexpr int kManifestVersion = 1;

  void persist(const std::filesystem::path& dir) const {
    std::unique_lock lock(mutex_);
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "masks", ec);
    if (ec) throw io_error("persist: cannot create " + dir.string());

    nlohmann::json manifest;
    manifest["version"] = kManifestVersion;
    manifest["params"] = {{"max_degree", params_.max_degree},
                          {"k_return", params_.k_return},
                          {"ef_search", params_.ef_search},
                          {"ef_construction", params_.ef_construction},
                          {"level_multiplier", params_.level_multiplier},
                          {"max_levels", params_.max_levels},
                          {"sigma", params_.sigma},
                          {"metric", metric_name(params_.metric)},
                          {"level_seed", params_.level_seed},
                          {"preserve_connectivity", params_.preserve_connectivity},
                          {"select_diverse", params_.select_diverse}};
    manifest["node_count"] = nodes_.size();
    manifest["k_dim"] = nodes_.empty() ? 0 : nodes_.front().vector.values.size();
    manifest["level_draws"] = level_draws_;
    if (entry_) manifest["entry_point"] = *entry_;
    else manifest["entry_point"] = nullptr;
    manifest["max_level"] = max_level_;
    nlohmann::json njson = nlohmann::json::array();
    for (const auto& n : nodes_) {
      nlohmann::json levels = nlohmann::json::array();
      for (int l = 0; l <= n.top_level; ++l) levels.push_back(neighbors_[n.id][l]);
      njson.push_back({{"id", n.id}, {"top_level", n.top_level}, {"mask_key", n.mask_key}, {"levels", levels}});
    }
    manifest["nodes"] = njson;

    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw io_error("persist: cannot write manifest");
    mf << manifest.dump(1) << '\n';

    std::ofstream vf(dir / "vectors.bin", std::ios::binary);
    if (!vf) throw io_error("persist: cannot write vectors.bin");
    for (const auto& n : nodes_) {
      for (double v : n.vector.values) {
        const float f = static_cast<float>(v);
        const auto bits = std::bit_cast<std::uint32_t>(f);
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
        vf.write(b, 4);
      }
    }
    if (!vf) throw io_error("persist: short write to vectors.bin");

    for (const auto& [id, mask] : masks_) write_pgm(mask, dir / "masks" / (std::to_string(id) + ".pgm"));
  }

  static LibraryGraph load(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw io_error("load: cannot open manifest in " + dir.string());
    nlohmann::json manifest;
    try {
      mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
      throw corrupt_data(std::string("load: invalid manifest: ") + e.what());
    }
    if (!manifest.contains("version") || manifest["version"].get<int>() != kManifestVersion)
      throw version_error("load: unsupported library version");

    HnswParams params;
    const auto& pj = manifest.at("params");
    params.max_degree = pj.at("max_degree").get<int>();
    params.k_return = pj.at("k_return").get<int>();
    params.ef_search = pj.at("ef_search").get<int>();
    params.ef_construction = pj.value("ef_construction", 0);
    params.level_multiplier = pj.at("level_multiplier").get<double>();
    params.max_levels = pj.at("max_levels").get<int>();
    params.sigma = pj.at("sigma").get<double>();
    params.metric = metric_from_name(pj.at("metric").get<std::string>());
    params.level_seed = pj.at("level_seed").get<std::uint64_t>();
    params.preserve_connectivity = pj.at("preserve_connectivity").get<bool>();
    params.select_diverse = pj.value("select_diverse", false);

    LibraryGraph lib(params);
    const auto node_count = manifest.at("node_count").get<std::size_t>();
    const auto k_dim = manifest.at("k_dim").get<std::size_t>();
    lib.max_level_ = manifest.at("max_level").get<int>();
    if (!manifest.at("entry_point").is_null()) lib.entry_ = manifest.at("entry_point").get<std::uint64_t>();

    // Replay consumed level draws so later inserts continue the stream.
    const auto draws = manifest.value("level_draws", std::uint64_t{0});
    for (std::uint64_t i = 0; i < draws; ++i) lib.draw_level();

    std::ifstream vf(dir / "vectors.bin", std::ios::binary);
    if (!vf) throw io_error("load: cannot open vectors.bin");
    std::vector<char> raw((std::istreambuf_iterator<char>(vf)), std::istreambuf_iterator<char>());
    if (raw.size() != node_count * k_dim * 4) throw corrupt_data("load: vectors.bin size mismatch");

    lib.nodes_.reserve(node_count);
    lib.neighbors_.reserve(node_count);
    std::size_t row = 0;
    for (const auto& nj : manifest.at("nodes")) {
      LibraryNode n;
      n.id = nj.at("id").get<std::uint64_t>();
      n.top_level = nj.at("top_level").get<int>();
      n.mask_key = nj.at("mask_key").get<std::uint64_t>();
      if (n.id != lib.nodes_.size()) throw corrupt_data("load: node ids must be dense and ordered");
      n.vector.values.resize(k_dim);
      for (std::size_t i = 0; i < k_dim; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
          bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[(row * k_dim + i) * 4 + b])) << (8 * b);
        n.vector.values[i] = static_cast<double>(std::bit_cast<float>(bits));
      }
      n.vector.normalized = true;
      ++row;
      const auto& levels = nj.at("levels");
      if (static_cast<int>(levels.size()) != n.top_level + 1) throw corrupt_data("load: level count mismatch");
      std::vector<std::vector<std::uint64_t>> adj;
      for (const auto& lj : levels) {
        std::vector<std::uint64_t> edges;
        for (const auto& e : lj) {
          const auto id = e.get<std::uint64_t>();
          if (id >= node_count) throw corrupt_data("load: adjacency references unknown id");
          edges.push_back(id);
        }
        adj.push_back(std::move(edges));
      }
      lib.nodes_.push_back(std::move(n));
      lib.neighbors_.push_back(std::move(adj));
    }
    if (lib.nodes_.size() != node_count) throw corrupt_data("load: node count mismatch");

    for (const auto& n : lib.nodes_) {
      const auto path = dir / "masks" / (std::to_string(n.mask_key) + ".pgm");
      if (!fs::exists(path)) throw corrupt_data("load: missing mask file for node " + std::to_string(n.id));
      lib.masks_.emplace(n.mask_key, read_pgm_mask(path));
    }
    return lib;
  }

 private:
  void move_from(LibraryGraph&& other) {
    std::unique_lock lock(other.mutex_);
    params_ = other.params_;
    nodes_ = std::move(other.nodes_);
    neighbors_ = std::move(other.neighbors_);
    masks_ = std::move(other.masks_);
    entry_ = other.entry_;
    max_level_ = other.max_level_;
    rng_ = other.rng_;
    level_draws_ = other.level_draws_;
    dist_total_.store(other.dist_total_.load());
  }

  int draw_level() {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double u = 1.0 - uni(rng_);  // (0, 1]
    ++level_draws_;
    const int level = static_cast<int>(std::floor(-std::log(u) * params_.effective_level_multiplier()));
    return std::min(level, params_.max_levels - 1);
  }

  double distance(const EmbeddingVector& q, std::uint64_t id, std::uint64_t& counter) const {
    ++counter;
    return metric_distance(params_.metric, q, nodes_[id].vector);
  }

  struct HeapEntry {
    double dist;
    std::uint64_t id;
  };
  struct NearestFirst {
    bool operator()(const HeapEntry& a, const HeapEntry& b) const {
      return a.dist != b.dist ? a.dist > b.dist : a.id > b.id;
    }
  };
  struct FurthestFirst {
    bool operator()(const HeapEntry& a, const HeapEntry& b) const {
      return a.dist != b.dist ? a.dist < b.dist : a.id < b.id;
    }
  };

  std::vector<Candidate> search_layer_impl(const EmbeddingVector& q, const std::vector<std::uint64_t>& starts,
                                           int width, int level, std::uint64_t& counter) const {
    std::priority_queue<HeapEntry, std::vector<HeapEntry>, NearestFirst> frontier;
    std::priority_queue<HeapEntry, std::vector<HeapEntry>, FurthestFirst> results;
    std::vector<char> visited(nodes_.size(), 0);

    for (auto s : starts) {
      if (visited[s]) continue;
      visited[s] = 1;
      const double d = distance(q, s, counter);
      frontier.push({d, s});
      results.push({d, s});
      if (results.size() > static_cast<std::size_t>(width)) results.pop();
    }

    while (!frontier.empty()) {
      const HeapEntry nearest = frontier.top();
      frontier.pop();
      if (nearest.dist > results.top().dist) break;
      for (auto e : neighbors_[nearest.id][level]) {
        if (visited[e]) continue;
        visited[e] = 1;
        const double d = distance(q, e, counter);
        if (results.size() < static_cast<std::size_t>(width) || d < results.top().dist) {
          frontier.push({d, e});
          results.push({d, e});
          if (results.size() > static_cast<std::size_t>(width)) results.pop();
        }
      }
    }

    std::vector<Candidate> out;
    out.reserve(results.size());
    while (!results.empty()) {
      out.push_back({results.top().id, results.top().dist});
      results.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  /// Pick up to `limit` edges from ascending-sorted candidates. With
  /// select_diverse, a candidate is kept only when it sits closer to the
  /// query than to every neighbor already kept, which spreads edges over
  /// directions; otherwise plain nearest-first.
  std::vector<std::uint64_t> select_neighbors(const EmbeddingVector& q, const std::vector<Candidate>& candidates,
                                              int limit) const {
    std::vector<std::uint64_t> kept;
    if (!params_.select_diverse) {
      for (const auto& c : candidates) {
        if (kept.size() == static_cast<std::size_t>(limit)) break;
        kept.push_back(c.id);
      }
      return kept;
    }
    std::uint64_t counter = 0;
    for (const auto& c : candidates) {
      if (kept.size() == static_cast<std::size_t>(limit)) break;
      bool keep = true;
      for (auto s : kept) {
        ++counter;
        if (metric_distance(params_.metric, nodes_[c.id].vector, nodes_[s].vector) < c.distance) {
          keep = false;
          break;
        }
      }
      if (keep) kept.push_back(c.id);
    }
    // Backfill with the nearest skipped candidates so sparse frontiers
    // still reach the degree budget.
    for (const auto& c : candidates) {
      if (kept.size() == static_cast<std::size_t>(limit)) break;
      if (std::find(kept.begin(), kept.end(), c.id) == kept.end()) kept.push_back(c.id);
    }
    return kept;
  }

  /// Re-select the edges of an overfull node among its current
  /// neighbors, removing reverse edges of everything dropped. With
  /// preserve_connectivity set, an edge that is its endpoint's last one
  /// at this level survives (the degree bound may then be exceeded).
  void prune(std::uint64_t node, int level) {
    auto& adj = neighbors_[node][level];
    std::vector<Candidate> ranked;
    ranked.reserve(adj.size());
    std::uint64_t counter = 0;
    for (auto e : adj) ranked.push_back({e, distance(nodes_[node].vector, e, counter)});
    std::sort(ranked.begin(), ranked.end(), [](const Candidate& a, const Candidate& b) {
      return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
    });
    auto selected = select_neighbors(nodes_[node].vector, ranked, params_.max_degree);
    std::vector<std::uint64_t> kept;
    std::vector<std::uint64_t> dropped;
    for (const auto& c : ranked) {
      const bool chosen = std::find(selected.begin(), selected.end(), c.id) != selected.end();
      if (chosen) {
        kept.push_back(c.id);
      } else if (params_.preserve_connectivity && neighbors_[c.id][level].size() <= 1) {
        kept.push_back(c.id);
      } else {
        dropped.push_back(c.id);
      }
    }
    adj = kept;
    for (auto e : dropped) {
      auto& back = neighbors_[e][level];
      back.erase(std::remove(back.begin(), back.end(), node), back.end());
    }
  }

  HnswParams params_;
  std::vector<LibraryNode> nodes_;
  std::vector<std::vector<std::vector<std::uint64_t>>> neighbors_;  // [node][level] -> ids
  std::unordered_map<std::uint64_t, MaskGrid> masks_;
  std::optional<std::uint64_t> entry_;
  int max_level_ = -1;
  std::mt19937_64 rng_;
  std::uint64_t level_draws_ = 0;
  mutable std::shared_mutex mutex_;
  mutable std::atomic<std::uint64_t> dist_total_{0};
};

}  // namespace opckit
