#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "opckit/embedding.hpp"
#include "opckit/errors.hpp"
#include "opckit/ilt.hpp"
#include "opckit/layout.hpp"
#include "opckit/litho.hpp"
#include "opckit/metrics.hpp"
#include "opckit/pattern_library.hpp"
#include "opckit/pgm.hpp"
#include "opckit/shift_calibration.hpp"
#include "opckit/solver_select.hpp"

namespace opckit {

struct LithoConfig {
  std::filesystem::path kernel_file;  // empty -> synthesize
  int k = 4;
  double base_sigma_px = 16.0;
  double decay = 0.5;
  int kernel_size = 97;
  double i_th = 0.055;
  double dose_band = 0.02;
  double defocus_band_nm = 25.0;
};

struct PipelineConfig {
  std::filesystem::path layout_path;
  int window = 2048;  // full production scale; desk runs pass 256 or 512
  int stride = 0;     // 0 -> window (non-overlapping)
  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 42;
  LithoConfig litho;
  EpeConfig epe;
  IltConfig ilt;
  EmbedderConfig embedder;
  HnswParams library;
  std::filesystem::path library_path;   // empty -> in-memory only
  bool library_enabled = true;
  std::filesystem::path selector_model; // empty -> every pattern is critical
  int fast_bias_px = 8;
  RefinePolicy refine;
};

struct PatternRecord {
  int window_x = 0;
  int window_y = 0;
  std::string route;            // "critical" | "non-critical" | "failed"
  std::string library_outcome;  // "matched" | "new" | "skipped"
  std::optional<Shift> shift;
  int iters_used = 0;
  int epe_violations = 0;
  long long pvband_nm2 = 0;
  std::map<std::string, double> stage_seconds;
  std::string error;
};

struct RunReport {
  std::vector<PatternRecord> records;
  struct Aggregates {
    double mean_epe = 0.0;
    double mean_pvband_nm2 = 0.0;
    double total_runtime_s = 0.0;
    std::map<std::string, double> stage_fraction;
    int critical = 0;
    int non_critical = 0;
    int matched = 0;
    int new_patterns = 0;
    int failed = 0;
    int total_ilt_iters = 0;
  } agg;
};

/// Recompute the aggregate block from the per-pattern records. The run
/// report's own aggregates must always equal this (audited in tests).
inline RunReport::Aggregates aggregate_records(const std::vector<PatternRecord>& records) {
  RunReport::Aggregates agg;
  double epe_sum = 0, pvb_sum = 0;
  int measured = 0;
  std::map<std::string, double> stage_sum;
  double stage_total = 0;
  for (const auto& r : records) {
    if (r.route == "critical") ++agg.critical;
    else if (r.route == "non-critical") ++agg.non_critical;
    else if (r.route == "failed") ++agg.failed;
    if (r.library_outcome == "matched") ++agg.matched;
    else if (r.library_outcome == "new") ++agg.new_patterns;
    if (r.route != "failed") {
      epe_sum += r.epe_violations;
      pvb_sum += static_cast<double>(r.pvband_nm2);
      ++measured;
    }
    agg.total_ilt_iters += r.iters_used;
    for (const auto& [stage, sec] : r.stage_seconds) {
      stage_sum[stage] += sec;
      stage_total += sec;
    }
  }
  if (measured > 0) {
    agg.mean_epe = epe_sum / measured;
    agg.mean_pvband_nm2 = pvb_sum / measured;
  }
  if (stage_total > 0)
    for (const auto& [stage, sec] : stage_sum) agg.stage_fraction[stage] = sec / stage_total;
  return agg;
}

// --- Config JSON --------------------------------------------------------------

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j,
                                                const std::filesystem::path& base_dir = {}) {
  PipelineConfig cfg;
  auto path_of = [&](const std::string& s) -> std::filesystem::path {
    if (s.empty()) return {};
    std::filesystem::path p(s);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };
  try {
    cfg.layout_path = path_of(j.at("layout").get<std::string>());
    cfg.window = j.value("window", cfg.window);
    cfg.stride = j.value("stride", cfg.stride);
    cfg.out_dir = path_of(j.value("out_dir", std::string("out")));
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("litho")) {
      const auto& l = j["litho"];
      cfg.litho.kernel_file = path_of(l.value("kernel_file", std::string()));
      cfg.litho.k = l.value("k", cfg.litho.k);
      cfg.litho.base_sigma_px = l.value("base_sigma_px", cfg.litho.base_sigma_px);
      cfg.litho.decay = l.value("decay", cfg.litho.decay);
      cfg.litho.kernel_size = l.value("kernel_size", cfg.litho.kernel_size);
      cfg.litho.i_th = l.value("i_th", cfg.litho.i_th);
      cfg.litho.dose_band = l.value("dose_band", cfg.litho.dose_band);
      cfg.litho.defocus_band_nm = l.value("defocus_band_nm", cfg.litho.defocus_band_nm);
    }
    if (j.contains("epe")) {
      const auto& e = j["epe"];
      cfg.epe.th_epe_nm = e.value("th_epe_nm", cfg.epe.th_epe_nm);
      cfg.epe.sample_interval_px = e.value("sample_interval_px", cfg.epe.sample_interval_px);
      cfg.epe.corner_exclusion_px = e.value("corner_exclusion_px", cfg.epe.corner_exclusion_px);
      cfg.epe.max_probe_px = e.value("max_probe_px", cfg.epe.max_probe_px);
    }
    if (j.contains("ilt")) {
      const auto& i = j["ilt"];
      cfg.ilt.mask_steepness = i.value("mask_steepness", cfg.ilt.mask_steepness);
      cfg.ilt.resist_steepness = i.value("resist_steepness", cfg.ilt.resist_steepness);
      cfg.ilt.step_size = i.value("step_size", cfg.ilt.step_size);
      cfg.ilt.max_iters = i.value("max_iters", cfg.ilt.max_iters);
      cfg.ilt.patience = i.value("patience", cfg.ilt.patience);
      cfg.ilt.loss_rel_tol = i.value("loss_rel_tol", cfg.ilt.loss_rel_tol);
    }
    if (j.contains("embedder")) {
      const auto& e = j["embedder"];
      cfg.embedder.k_dim = e.value("k_dim", cfg.embedder.k_dim);
      cfg.embedder.pool_to = e.value("pool_to", cfg.embedder.pool_to);
    }
    if (j.contains("library")) {
      const auto& l = j["library"];
      cfg.library_path = path_of(l.value("path", std::string()));
      cfg.library_enabled = l.value("enabled", true);
      cfg.library.max_degree = l.value("max_degree", cfg.library.max_degree);
      cfg.library.k_return = l.value("k_return", cfg.library.k_return);
      cfg.library.ef_search = l.value("ef_search", cfg.library.ef_search);
      cfg.library.ef_construction = l.value("ef_construction", cfg.library.ef_construction);
      cfg.library.max_levels = l.value("max_levels", cfg.library.max_levels);
      cfg.library.sigma = l.value("sigma", cfg.library.sigma);
      if (l.contains("metric")) cfg.library.metric = metric_from_name(l["metric"].get<std::string>());
      cfg.library.level_seed = l.value("level_seed", cfg.seed);
      cfg.library.preserve_connectivity = l.value("preserve_connectivity", cfg.library.preserve_connectivity);
      cfg.library.select_diverse = l.value("select_diverse", cfg.library.select_diverse);
    } else {
      cfg.library.level_seed = cfg.seed;
    }
    if (j.contains("selector")) cfg.selector_model = path_of(j["selector"].value("model", std::string()));
    cfg.fast_bias_px = j.value("fast_bias_px", cfg.fast_bias_px);
    if (j.contains("refine")) {
      const auto& r = j["refine"];
      cfg.refine.max_refine_iters = r.value("max_iters", cfg.refine.max_refine_iters);
      cfg.refine.verified_max_violations = r.value("verified_max_violations", cfg.refine.verified_max_violations);
    }
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("pipeline config: ") + e.what());
  }
  if (cfg.stride <= 0) cfg.stride = cfg.window;
  if (!is_power_of_two(cfg.window)) throw config_error("pipeline config: window must be a power of two");
  return cfg;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("invalid config JSON: ") + e.what());
  }
  return pipeline_config_from_json(j, path.parent_path());
}

inline LithoModel build_litho_model(const LithoConfig& cfg, double units_nm_per_px) {
  LithoModel model;
  if (!cfg.kernel_file.empty()) {
    auto [kernels, weights] = load_kernels(cfg.kernel_file);
    model.kernels = std::move(kernels);
    model.weights = std::move(weights);
  } else {
    auto [kernels, weights] = synth_kernels(cfg.k, cfg.base_sigma_px, cfg.decay, cfg.kernel_size);
    model.kernels = std::move(kernels);
    model.weights = std::move(weights);
  }
  model.resist_threshold = cfg.i_th;
  model.units_nm_per_px = units_nm_per_px;
  model.corners.nominal = {1.0, 0.0};
  model.corners.inner = {1.0 - cfg.dose_band, cfg.defocus_band_nm};
  model.corners.outer = {1.0 + cfg.dose_band, 0.0};
  model.validate();
  return model;
}

// --- Report JSON ---------------------------------------------------------------

inline nlohmann::json record_to_json(const PatternRecord& r, bool include_timings = true) {
  nlohmann::json j{{"window", {r.window_x, r.window_y}},
                   {"route", r.route},
                   {"library_outcome", r.library_outcome},
                   {"iters_used", r.iters_used},
                   {"epe_violations", r.epe_violations},
                   {"pvband_nm2", r.pvband_nm2}};
  if (r.shift) j["shift"] = {r.shift->dx, r.shift->dy};
  if (!r.error.empty()) j["error"] = r.error;
  if (include_timings) j["stage_seconds"] = r.stage_seconds;
  return j;
}

inline nlohmann::json aggregates_to_json(const RunReport::Aggregates& a, bool include_timings = true) {
  nlohmann::json j{{"mean_epe", a.mean_epe},
                   {"mean_pvband_nm2", a.mean_pvband_nm2},
                   {"critical", a.critical},
                   {"non_critical", a.non_critical},
                   {"matched", a.matched},
                   {"new_patterns", a.new_patterns},
                   {"failed", a.failed},
                   {"total_ilt_iters", a.total_ilt_iters}};
  if (include_timings) {
    j["total_runtime_s"] = a.total_runtime_s;
    j["stage_fraction"] = a.stage_fraction;
  }
  return j;
}

/// JSON-lines: one record per pattern, then one aggregate object.
inline void write_report_jsonl(const RunReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw io_error("write_report: cannot open " + path.string());
  for (const auto& r : report.records) out << record_to_json(r).dump() << '\n';
  nlohmann::json agg = aggregates_to_json(report.agg);
  agg["kind"] = "aggregate";
  out << agg.dump() << '\n';
}

/// Canonical non-timing content of a run, used for determinism checks.
inline nlohmann::json report_fingerprint(const RunReport& report) {
  nlohmann::json lines = nlohmann::json::array();
  for (const auto& r : report.records) lines.push_back(record_to_json(r, false));
  lines.push_back(aggregates_to_json(report.agg, false));
  return lines;
}

// --- Orchestration --------------------------------------------------------------

/// Full windowed OPC run: classify each sliced pattern, reuse the
/// library for critical repeats (shift-calibrating the stored mask),
/// optimize cold otherwise, and record one JSON-serializable record per
/// pattern. Library updates happen online in window order.
inline RunReport run_pipeline(const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  const auto t_run0 = std::chrono::steady_clock::now();
  if (cfg.window <= 0) throw config_error("run_pipeline: window must be positive");
  const int stride = cfg.stride > 0 ? cfg.stride : cfg.window;

  const LayoutSpec layout = parse_layout(cfg.layout_path);
  const LithoModel model = build_litho_model(cfg.litho, layout.units_nm_per_px);

  std::optional<SelectorModel> selector;
  if (!cfg.selector_model.empty()) selector = load_selector(cfg.selector_model);

  LibraryGraph library = [&] {
    if (!cfg.library_path.empty() && fs::exists(cfg.library_path / "manifest.json"))
      return LibraryGraph::load(cfg.library_path);
    return LibraryGraph(cfg.library);
  }();

  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw config_error("run_pipeline: cannot create out_dir " + cfg.out_dir.string());

  RunReport report;
  for (int wy = 0; wy < layout.height_px; wy += stride)
    for (int wx = 0; wx < layout.width_px; wx += stride) {
      PatternRecord rec;
      rec.window_x = wx;
      rec.window_y = wy;
      auto stage_clock = std::chrono::steady_clock::now();
      auto lap = [&](const char* stage) {
        const auto now = std::chrono::steady_clock::now();
        rec.stage_seconds[stage] += std::chrono::duration<double>(now - stage_clock).count();
        stage_clock = now;
      };
      try {
        const PatternGrid pattern = rasterize_window(layout, Window{wx, wy, cfg.window});
        lap("slice");

        bool critical = true;
        if (count_ones(pattern) == 0) {
          critical = false;  // nothing to embed or optimize
        } else if (selector) {
          critical = predict(*selector, extract_features(pattern)).first == 1;
        }
        lap("classify");

        SolverResult solved;
        if (!critical) {
          rec.route = "non-critical";
          rec.library_outcome = "skipped";
          solved = fast_solver(pattern, model, cfg.fast_bias_px, cfg.epe);
          lap("fast_solver");
        } else {
          rec.route = "critical";
          MatchResult match;
          EmbeddingVector z;
          if (cfg.library_enabled) {
            z = embed(pattern, cfg.embedder);
            lap("embed");
            match = library.query(z);
            lap("match");
          }
          if (cfg.library_enabled && match.outcome == MatchResult::Outcome::matched) {
            rec.library_outcome = "matched";
            const MaskGrid& stored = library.mask_for(match.matched_id);
            IltConfig refine_cfg = cfg.ilt;
            refine_cfg.epe = cfg.epe;
            CalibrationResult cal = calibrate_and_verify(pattern, stored, model, refine_cfg, cfg.epe, cfg.refine);
            rec.shift = cal.shift;
            solved.mask = std::move(cal.corrected_mask);
            solved.epe = std::move(cal.epe_after);
            solved.pvband_nm2 = cal.pvband_nm2;
            solved.iters_used = cal.refinement_iters;
            lap("calibrate");
          } else {
            rec.library_outcome = cfg.library_enabled ? "new" : "skipped";
            IltConfig ilt_cfg = cfg.ilt;
            ilt_cfg.epe = cfg.epe;
            solved = optimize(pattern, std::nullopt, model, ilt_cfg);
            lap("ilt");
            if (cfg.library_enabled) {
              library.insert(z, solved.mask);
              lap("library_insert");
            }
          }
        }
        rec.iters_used = solved.iters_used;
        rec.epe_violations = solved.epe.violations;
        rec.pvband_nm2 = solved.pvband_nm2;
        write_pgm(solved.mask, cfg.out_dir / ("mask_" + std::to_string(wx) + "_" + std::to_string(wy) + ".pgm"));
        lap("write");
      } catch (const std::exception& e) {
        rec.route = "failed";
        rec.library_outcome = "skipped";
        rec.error = e.what();
      }
      report.records.push_back(std::move(rec));
    }

  if (!cfg.library_path.empty() && cfg.library_enabled) library.persist(cfg.library_path);

  report.agg = aggregate_records(report.records);
  report.agg.total_runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_run0).count();
  return report;
}

}  // namespace opckit
