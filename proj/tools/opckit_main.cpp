// Command-line front end: slicing, simulation, verification, the full
// OPC pipeline, library maintenance and the matching benchmark.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include <opckit/opckit.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

opckit::LithoModel model_from_flags(const std::string& kernel_file, double i_th, double units) {
  opckit::LithoModel model;
  auto [kernels, weights] = opckit::load_kernels(kernel_file);
  model.kernels = std::move(kernels);
  model.weights = std::move(weights);
  model.resist_threshold = i_th;
  model.units_nm_per_px = units;
  model.validate();
  return model;
}

opckit::EmbeddingVector random_unit_vector(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  opckit::EmbeddingVector v;
  v.values.resize(dim);
  for (auto& x : v.values) x = nd(rng);
  const double n = v.norm();
  for (auto& x : v.values) x /= n;
  v.normalized = true;
  return v;
}

json audit_to_json(const opckit::AuditReport& report) {
  return {{"ok", report.ok},
          {"nodes", report.nodes},
          {"edges_level0", report.edges_level0},
          {"max_observed_degree", report.max_observed_degree},
          {"violations", report.violations}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"opckit - inverse-lithography OPC with a reusable-mask pattern library"};
  app.require_subcommand(1);

  // --- slice ---
  std::string slice_layout, slice_out;
  int slice_window = 2048, slice_stride = 0;
  auto* slice = app.add_subcommand("slice", "Rasterize layout windows to PGM patterns");
  slice->add_option("--layout", slice_layout, "Layout JSON")->required();
  slice->add_option("--window", slice_window, "Window side (power of two)");
  slice->add_option("--stride", slice_stride, "Slicing stride (default: window)");
  slice->add_option("--out", slice_out, "Output directory")->required();

  // --- kernels ---
  std::string kern_out;
  int kern_k = 4, kern_size = 49;
  double kern_sigma = 8.0, kern_decay = 0.35;
  auto* kernels_cmd = app.add_subcommand("kernels", "Kernel file utilities");
  auto* kern_synth = kernels_cmd->add_subcommand("synth", "Write a synthetic kernel stack");
  kern_synth->add_option("--k", kern_k, "Number of kernels");
  kern_synth->add_option("--sigma", kern_sigma, "Base width in pixels");
  kern_synth->add_option("--decay", kern_decay, "Weight decay in (0,1)");
  kern_synth->add_option("--size", kern_size, "Odd kernel side");
  kern_synth->add_option("--out", kern_out, "Output kernel file")->required();

  // --- litho ---
  std::string litho_mask, litho_model, litho_out;
  double litho_dose = 1.0, litho_defocus = 0.0, litho_ith = 0.055, litho_units = 1.0;
  auto* litho_cmd = app.add_subcommand("litho", "Print a mask through the imaging model");
  litho_cmd->add_option("--mask", litho_mask, "Mask PGM")->required();
  litho_cmd->add_option("--model", litho_model, "Kernel file")->required();
  litho_cmd->add_option("--dose", litho_dose, "Dose multiplier");
  litho_cmd->add_option("--defocus", litho_defocus, "Defocus in nm");
  litho_cmd->add_option("--i-th", litho_ith, "Resist threshold");
  litho_cmd->add_option("--units", litho_units, "nm per pixel");
  litho_cmd->add_option("--out", litho_out, "Printed-image PGM")->required();

  // --- verify ---
  std::string ver_mask, ver_target, ver_model;
  double ver_ith = 0.055, ver_units = 1.0;
  opckit::EpeConfig ver_epe;
  auto* verify_cmd = app.add_subcommand("verify", "EPE/PV-band report for a mask against a target");
  verify_cmd->add_option("--mask", ver_mask, "Mask PGM")->required();
  verify_cmd->add_option("--target", ver_target, "Target PGM")->required();
  verify_cmd->add_option("--model", ver_model, "Kernel file")->required();
  verify_cmd->add_option("--i-th", ver_ith, "Resist threshold");
  verify_cmd->add_option("--units", ver_units, "nm per pixel");
  verify_cmd->add_option("--th-epe", ver_epe.th_epe_nm, "EPE violation threshold in nm");
  verify_cmd->add_option("--interval", ver_epe.sample_interval_px, "Sample interval in px");
  verify_cmd->add_option("--exclusion", ver_epe.corner_exclusion_px, "Corner exclusion in px");

  // --- opc ---
  std::string opc_config, opc_report;
  auto* opc_cmd = app.add_subcommand("opc", "Run the full pipeline from a config file");
  opc_cmd->add_option("--config", opc_config, "Pipeline config JSON")->required();
  opc_cmd->add_option("--report", opc_report, "Report output (JSON lines)")->required();

  // --- lib ---
  auto* lib_cmd = app.add_subcommand("lib", "Pattern library maintenance");
  std::string lib_path;
  opckit::HnswParams lib_params;
  std::string lib_metric = "euclid";
  auto* lib_init = lib_cmd->add_subcommand("init", "Create an empty library");
  lib_init->add_option("--path", lib_path, "Library directory")->required();
  lib_init->add_option("--max-degree", lib_params.max_degree, "Degree bound M");
  lib_init->add_option("--k-return", lib_params.k_return, "Candidates returned per query");
  lib_init->add_option("--ef-search", lib_params.ef_search, "Query beam width");
  lib_init->add_option("--ef-construction", lib_params.ef_construction, "Insertion beam width");
  lib_init->add_option("--sigma", lib_params.sigma, "Match threshold");
  lib_init->add_option("--metric", lib_metric, "inner|cosine|euclid");
  lib_init->add_option("--seed", lib_params.level_seed, "Level-draw seed");

  std::string lib_pattern, lib_mask;
  opckit::EmbedderConfig lib_embed;
  auto* lib_insert = lib_cmd->add_subcommand("insert", "Embed a pattern and store it with its mask");
  lib_insert->add_option("--path", lib_path, "Library directory")->required();
  lib_insert->add_option("--pattern", lib_pattern, "Pattern PGM")->required();
  lib_insert->add_option("--mask", lib_mask, "Mask PGM")->required();
  lib_insert->add_option("--k-dim", lib_embed.k_dim, "Embedding dimension");
  lib_insert->add_option("--pool-to", lib_embed.pool_to, "Pooled raster side");

  auto* lib_query = lib_cmd->add_subcommand("query", "Match a pattern against the library");
  lib_query->add_option("--path", lib_path, "Library directory")->required();
  lib_query->add_option("--pattern", lib_pattern, "Pattern PGM")->required();
  lib_query->add_option("--k-dim", lib_embed.k_dim, "Embedding dimension");
  lib_query->add_option("--pool-to", lib_embed.pool_to, "Pooled raster side");

  auto* lib_stats = lib_cmd->add_subcommand("stats", "Library summary");
  lib_stats->add_option("--path", lib_path, "Library directory")->required();

  auto* lib_audit = lib_cmd->add_subcommand("audit", "Run the graph invariant checks");
  lib_audit->add_option("--path", lib_path, "Library directory")->required();

  // --- bench ---
  auto* bench_cmd = app.add_subcommand("bench", "Benchmarks");
  int bench_n = 2000, bench_dim = 256, bench_q = 200;
  std::uint64_t bench_seed = 123;
  auto* bench_matching = bench_cmd->add_subcommand("matching", "Recall and distance-computation counts");
  bench_matching->add_option("--n", bench_n, "Library size");
  bench_matching->add_option("--dim", bench_dim, "Vector dimension");
  bench_matching->add_option("--queries", bench_q, "Held-out query count");
  bench_matching->add_option("--seed", bench_seed, "RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << json{{"error", e.what()}, {"type", "usage"}}.dump() << "\n";
    return 2;
  }

  try {
    if (slice->parsed()) {
      const auto layout = opckit::parse_layout(slice_layout);
      const int stride = slice_stride > 0 ? slice_stride : slice_window;
      fs::create_directories(slice_out);
      int count = 0;
      for (int wy = 0; wy < layout.height_px; wy += stride)
        for (int wx = 0; wx < layout.width_px; wx += stride) {
          const auto grid = opckit::rasterize_window(layout, opckit::Window{wx, wy, slice_window});
          opckit::write_pgm(grid, fs::path(slice_out) /
                                      ("pattern_" + std::to_string(wx) + "_" + std::to_string(wy) + ".pgm"));
          ++count;
        }
      std::cout << json{{"patterns", count}, {"window", slice_window}, {"stride", stride}}.dump() << "\n";
    } else if (kern_synth->parsed()) {
      auto [kernels, weights] = opckit::synth_kernels(kern_k, kern_sigma, kern_decay, kern_size);
      opckit::save_kernels(kernels, weights, kern_out);
      std::cout << json{{"kernels", kern_k}, {"size", kern_size}, {"out", kern_out}}.dump() << "\n";
    } else if (litho_cmd->parsed()) {
      const auto model = model_from_flags(litho_model, litho_ith, litho_units);
      const auto mask = opckit::read_pgm_mask(litho_mask);
      const auto printed = opckit::litho(mask, model, opckit::ProcessCondition{litho_dose, litho_defocus});
      opckit::write_pgm(printed, litho_out);
      std::cout << json{{"out", litho_out}, {"printed_pixels", opckit::count_ones(printed)}}.dump() << "\n";
    } else if (verify_cmd->parsed()) {
      const auto model = model_from_flags(ver_model, ver_ith, ver_units);
      const auto mask = opckit::read_pgm_mask(ver_mask);
      const auto target = opckit::read_pgm_binary(ver_target);
      const auto printed = opckit::litho(mask, model);
      const auto epe = opckit::epe_violations(printed, target, ver_epe, model.units_nm_per_px);
      const auto pv = opckit::pvband(mask, model);
      std::cout << json{{"epe_violations", epe.violations},
                        {"sample_points", epe.samples.size()},
                        {"pvband_nm2", pv.area_nm2},
                        {"th_epe_nm", ver_epe.th_epe_nm}}
                       .dump()
                << "\n";
    } else if (opc_cmd->parsed()) {
      const auto cfg = opckit::load_pipeline_config(opc_config);
      const auto report = opckit::run_pipeline(cfg);
      opckit::write_report_jsonl(report, opc_report);
      std::cout << opckit::aggregates_to_json(report.agg).dump() << "\n";
    } else if (lib_init->parsed()) {
      lib_params.metric = opckit::metric_from_name(lib_metric);
      opckit::LibraryGraph lib(lib_params);
      lib.persist(lib_path);
      std::cout << json{{"path", lib_path}, {"nodes", 0}}.dump() << "\n";
    } else if (lib_insert->parsed()) {
      auto lib = opckit::LibraryGraph::load(lib_path);
      const auto pattern = opckit::read_pgm_binary(lib_pattern);
      const auto id = lib.insert(opckit::embed(pattern, lib_embed), opckit::read_pgm_mask(lib_mask));
      lib.persist(lib_path);
      std::cout << json{{"id", id}, {"nodes", lib.size()}}.dump() << "\n";
    } else if (lib_query->parsed()) {
      const auto lib = opckit::LibraryGraph::load(lib_path);
      const auto pattern = opckit::read_pgm_binary(lib_pattern);
      const auto match = lib.query(opckit::embed(pattern, lib_embed));
      json cands = json::array();
      for (const auto& c : match.candidates) cands.push_back({{"id", c.id}, {"distance", c.distance}});
      json out{{"outcome", match.outcome == opckit::MatchResult::Outcome::matched ? "matched" : "new_pattern"},
               {"candidates", cands},
               {"distance_computations", match.distance_computations}};
      if (match.outcome == opckit::MatchResult::Outcome::matched) out["matched_id"] = match.matched_id;
      if (!match.candidates.empty()) out["nearest_distance"] = match.nearest_distance;
      std::cout << out.dump() << "\n";
    } else if (lib_stats->parsed()) {
      const auto lib = opckit::LibraryGraph::load(lib_path);
      const auto audit = lib.audit();
      json out{{"nodes", lib.size()},
               {"max_level", lib.max_level()},
               {"edges_level0", audit.edges_level0},
               {"max_observed_degree", audit.max_observed_degree},
               {"sigma", lib.params().sigma},
               {"metric", opckit::metric_name(lib.params().metric)}};
      if (lib.entry_point()) out["entry_point"] = *lib.entry_point();
      std::cout << out.dump() << "\n";
    } else if (lib_audit->parsed()) {
      const auto lib = opckit::LibraryGraph::load(lib_path);
      const auto audit = lib.audit();
      std::cout << audit_to_json(audit).dump() << "\n";
      if (!audit.ok) return 3;
    } else if (bench_matching->parsed()) {
      std::mt19937_64 rng(bench_seed);
      opckit::HnswParams params;
      opckit::LibraryGraph lib(params);
      std::vector<opckit::EmbeddingVector> data;
      data.reserve(bench_n);
      opckit::MaskGrid stub(8);
      for (int i = 0; i < bench_n; ++i) data.push_back(random_unit_vector(bench_dim, rng));
      for (int i = 0; i < bench_n; ++i) lib.insert(data[i], stub);
      int hits = 0;
      double comps = 0.0;
      const auto t0 = std::chrono::steady_clock::now();
      for (int q = 0; q < bench_q; ++q) {
        const auto query = random_unit_vector(bench_dim, rng);
        const auto res = lib.query(query);
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int i = 0; i < bench_n; ++i) {
          const double d = opckit::d_euclid(query, data[i]);
          if (d < best_d) {
            best_d = d;
            best = i;
          }
        }
        if (!res.candidates.empty() && res.candidates.front().id == best) ++hits;
        comps += static_cast<double>(res.distance_computations);
      }
      const double q_ms =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / bench_q * 1e3;
      std::cout << json{{"n", bench_n},
                        {"dim", bench_dim},
                        {"queries", bench_q},
                        {"recall_at_1", static_cast<double>(hits) / bench_q},
                        {"mean_distance_computations", comps / bench_q},
                        {"comps_fraction_of_n", comps / bench_q / bench_n},
                        {"mean_query_ms_incl_scan", q_ms}}
                       .dump()
                << "\n";
    }
  } catch (const opckit::config_error& e) {
    std::cerr << json{{"error", e.what()}, {"type", "config"}}.dump() << "\n";
    return 2;
  } catch (const opckit::error& e) {
    std::cerr << json{{"error", e.what()}, {"type", "runtime"}}.dump() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}, {"type", "runtime"}}.dump() << "\n";
    return 3;
  }
  return 0;
}
