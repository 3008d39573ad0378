#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "opckit/errors.hpp"
#include "opckit/grid.hpp"
#include "opckit/ilt.hpp"
#include "opckit/litho.hpp"
#include "opckit/metrics.hpp"

namespace opckit {

/// Handcrafted geometric complexity features of one pattern. When fewer
/// than two shapes exist, spacings use the grid side as a "no neighbor
/// in frame" sentinel.
struct FeatureVector {
  double density = 0.0;              // fraction of 1-cells
  double shape_count = 0.0;          // 4-connected components
  double min_pair_spacing_px = 0.0;  // min pairwise centroid distance
  double mean_nn_spacing_px = 0.0;   // mean nearest-neighbor centroid distance
  double edge_length_px = 0.0;       // total boundary edge count

  static constexpr int dim = 5;
  std::array<double, dim> as_array() const {
    return {density, shape_count, min_pair_spacing_px, mean_nn_spacing_px, edge_length_px};
  }
};

inline FeatureVector extract_features(const PatternGrid& pattern) {
  const int n = pattern.size();
  FeatureVector f;
  f.density = static_cast<double>(count_ones(pattern)) / pattern.cell_count();

  // Connected components (4-connectivity) and their centroids.
  std::vector<int> label(pattern.cell_count(), -1);
  std::vector<std::pair<double, double>> centroids;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      if (!pattern(x, y) || label[static_cast<std::size_t>(y) * n + x] >= 0) continue;
      const int id = static_cast<int>(centroids.size());
      double sx = 0, sy = 0, cnt = 0;
      std::queue<std::pair<int, int>> frontier;
      frontier.push({x, y});
      label[static_cast<std::size_t>(y) * n + x] = id;
      while (!frontier.empty()) {
        auto [cx, cy] = frontier.front();
        frontier.pop();
        sx += cx;
        sy += cy;
        cnt += 1;
        constexpr int steps[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
        for (auto [dx, dy] : steps) {
          const int nx = cx + dx, ny = cy + dy;
          if (nx < 0 || ny < 0 || nx >= n || ny >= n) continue;
          auto& l = label[static_cast<std::size_t>(ny) * n + nx];
          if (pattern(nx, ny) && l < 0) {
            l = id;
            frontier.push({nx, ny});
          }
        }
      }
      centroids.push_back({sx / cnt, sy / cnt});
    }
  f.shape_count = static_cast<double>(centroids.size());

  const double sentinel = static_cast<double>(n);
  if (centroids.size() < 2) {
    f.min_pair_spacing_px = sentinel;
    f.mean_nn_spacing_px = sentinel;
  } else {
    double min_pair = std::numeric_limits<double>::infinity();
    double nn_sum = 0.0;
    for (std::size_t i = 0; i < centroids.size(); ++i) {
      double nn = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < centroids.size(); ++j) {
        if (i == j) continue;
        const double dx = centroids[i].first - centroids[j].first;
        const double dy = centroids[i].second - centroids[j].second;
        nn = std::min(nn, std::sqrt(dx * dx + dy * dy));
      }
      nn_sum += nn;
      min_pair = std::min(min_pair, nn);
    }
    f.min_pair_spacing_px = min_pair;
    f.mean_nn_spacing_px = nn_sum / centroids.size();
  }

  std::size_t edges = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      if (!pattern(x, y)) continue;
      if (x == 0 || !pattern(x - 1, y)) ++edges;
      if (x == n - 1 || !pattern(x + 1, y)) ++edges;
      if (y == 0 || !pattern(x, y - 1)) ++edges;
      if (y == n - 1 || !pattern(x, y + 1)) ++edges;
    }
  f.edge_length_px = static_cast<double>(edges);
  return f;
}

struct FeatureStats {
  std::array<double, FeatureVector::dim> mean{};
  std::array<double, FeatureVector::dim> stdev{};
};

/// Linear classifier over standardized features. classes == 2 stores a
/// single logistic row; otherwise one row per class with softmax output.
struct SelectorModel {
  int classes = 2;
  std::vector<double> weights;  // classes==2: dim values; else classes*dim
  std::vector<double> biases;   // classes==2: single value; else classes
  FeatureStats stats;
  int label_epe_threshold = 10;

  std::array<double, FeatureVector::dim> standardize(const FeatureVector& f) const {
    auto raw = f.as_array();
    for (int i = 0; i < FeatureVector::dim; ++i) raw[i] = (raw[i] - stats.mean[i]) / stats.stdev[i];
    return raw;
  }
};

struct TrainReport {
  double final_loss = 0.0;
  double accuracy = 0.0;
  std::vector<double> loss_per_epoch;
};

using LabeledFeatures = std::vector<std::pair<FeatureVector, int>>;

namespace detail {

inline FeatureStats feature_stats(const LabeledFeatures& samples) {
  FeatureStats stats;
  for (const auto& [f, y] : samples) {
    auto row = f.as_array();
    for (int i = 0; i < FeatureVector::dim; ++i) stats.mean[i] += row[i];
  }
  for (auto& m : stats.mean) m /= static_cast<double>(samples.size());
  for (const auto& [f, y] : samples) {
    auto row = f.as_array();
    for (int i = 0; i < FeatureVector::dim; ++i) {
      const double d = row[i] - stats.mean[i];
      stats.stdev[i] += d * d;
    }
  }
  for (auto& s : stats.stdev) {
    s = std::sqrt(s / static_cast<double>(samples.size()));
    if (s < 1e-12) s = 1.0;  // constant feature
  }
  return stats;
}

}  // namespace detail

/// Mean binary cross-entropy of a logistic model on standardized rows.
inline double logistic_loss(const std::vector<double>& w, double b,
                            const std::vector<std::array<double, FeatureVector::dim>>& rows,
                            const std::vector<int>& labels) {
  double loss = 0.0;
  for (std::size_t s = 0; s < rows.size(); ++s) {
    double logit = b;
    for (int i = 0; i < FeatureVector::dim; ++i) logit += w[i] * rows[s][i];
    const double p = 1.0 / (1.0 + std::exp(-logit));
    const double eps = 1e-12;
    loss -= labels[s] ? std::log(std::max(p, eps)) : std::log(std::max(1.0 - p, eps));
  }
  return loss / static_cast<double>(rows.size());
}

/// dLoss/d(w, b) for the mean binary cross-entropy above.
inline std::pair<std::vector<double>, double> logistic_gradient(
    const std::vector<double>& w, double b, const std::vector<std::array<double, FeatureVector::dim>>& rows,
    const std::vector<int>& labels) {
  std::vector<double> gw(FeatureVector::dim, 0.0);
  double gb = 0.0;
  for (std::size_t s = 0; s < rows.size(); ++s) {
    double logit = b;
    for (int i = 0; i < FeatureVector::dim; ++i) logit += w[i] * rows[s][i];
    const double p = 1.0 / (1.0 + std::exp(-logit));
    const double err = p - labels[s];
    for (int i = 0; i < FeatureVector::dim; ++i) gw[i] += err * rows[s][i];
    gb += err;
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (auto& g : gw) g *= inv;
  gb *= inv;
  return {std::move(gw), gb};
}

/// Mean softmax cross-entropy; weights laid out row-major, classes x dim.
inline double softmax_loss(const std::vector<double>& w, const std::vector<double>& biases, int classes,
                           const std::vector<std::array<double, FeatureVector::dim>>& rows,
                           const std::vector<int>& labels) {
  double loss = 0.0;
  for (std::size_t s = 0; s < rows.size(); ++s) {
    std::vector<double> logits(classes);
    for (int c = 0; c < classes; ++c) {
      double z = biases[c];
      for (int i = 0; i < FeatureVector::dim; ++i) z += w[c * FeatureVector::dim + i] * rows[s][i];
      logits[c] = z;
    }
    const double zmax = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double z : logits) denom += std::exp(z - zmax);
    loss -= logits[labels[s]] - zmax - std::log(denom);
  }
  return loss / static_cast<double>(rows.size());
}

inline std::pair<std::vector<double>, std::vector<double>> softmax_gradient(
    const std::vector<double>& w, const std::vector<double>& biases, int classes,
    const std::vector<std::array<double, FeatureVector::dim>>& rows, const std::vector<int>& labels) {
  std::vector<double> gw(w.size(), 0.0), gb(classes, 0.0);
  for (std::size_t s = 0; s < rows.size(); ++s) {
    std::vector<double> logits(classes);
    for (int c = 0; c < classes; ++c) {
      double z = biases[c];
      for (int i = 0; i < FeatureVector::dim; ++i) z += w[c * FeatureVector::dim + i] * rows[s][i];
      logits[c] = z;
    }
    const double zmax = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double& z : logits) {
      z = std::exp(z - zmax);
      denom += z;
    }
    for (int c = 0; c < classes; ++c) {
      const double p = logits[c] / denom;
      const double err = p - (labels[s] == c ? 1.0 : 0.0);
      for (int i = 0; i < FeatureVector::dim; ++i) gw[c * FeatureVector::dim + i] += err * rows[s][i];
      gb[c] += err;
    }
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (auto& g : gw) g *= inv;
  for (auto& g : gb) g *= inv;
  return {std::move(gw), std::move(gb)};
}

/// Fit the binary selector by plain gradient descent on the stated
/// cross-entropy. Deterministic: weights start at zero.
inline SelectorModel train(const LabeledFeatures& samples, int epochs = 500, double lr = 0.5,
                           TrainReport* report = nullptr) {
  if (samples.size() < 2) throw degenerate_data("train: need at least two samples");
  bool has0 = false, has1 = false;
  for (const auto& [f, y] : samples) {
    if (y == 0) has0 = true;
    else if (y == 1) has1 = true;
    else throw invalid_param("train: binary labels must be 0 or 1");
  }
  if (!has0 || !has1) throw degenerate_data("train: both labels must be present");

  SelectorModel model;
  model.classes = 2;
  model.stats = detail::feature_stats(samples);
  std::vector<std::array<double, FeatureVector::dim>> rows;
  std::vector<int> labels;
  for (const auto& [f, y] : samples) {
    rows.push_back(model.standardize(f));
    labels.push_back(y);
  }
  std::vector<double> w(FeatureVector::dim, 0.0);
  double b = 0.0;
  if (report) report->loss_per_epoch.reserve(epochs);
  for (int e = 0; e < epochs; ++e) {
    auto [gw, gb] = logistic_gradient(w, b, rows, labels);
    for (int i = 0; i < FeatureVector::dim; ++i) w[i] -= lr * gw[i];
    b -= lr * gb;
    if (report) report->loss_per_epoch.push_back(logistic_loss(w, b, rows, labels));
  }
  model.weights = std::move(w);
  model.biases = {b};
  if (report) {
    report->final_loss = logistic_loss(model.weights, model.biases[0], rows, labels);
    int correct = 0;
    for (std::size_t s = 0; s < rows.size(); ++s) {
      double logit = model.biases[0];
      for (int i = 0; i < FeatureVector::dim; ++i) logit += model.weights[i] * rows[s][i];
      const int label = (1.0 / (1.0 + std::exp(-logit))) >= 0.5 ? 1 : 0;
      correct += label == labels[s];
    }
    report->accuracy = static_cast<double>(correct) / rows.size();
  }
  return model;
}

inline SelectorModel train_multiclass(const LabeledFeatures& samples, int classes, int epochs = 500,
                                      double lr = 0.5, TrainReport* report = nullptr) {
  if (classes < 2) throw invalid_param("train_multiclass: need at least two classes");
  std::vector<int> counts(classes, 0);
  for (const auto& [f, y] : samples) {
    if (y < 0 || y >= classes) throw invalid_param("train_multiclass: label out of range");
    ++counts[y];
  }
  int present = 0;
  for (int c : counts) present += c > 0;
  if (present < 2) throw degenerate_data("train_multiclass: need samples from at least two classes");

  SelectorModel model;
  model.classes = classes;
  model.stats = detail::feature_stats(samples);
  std::vector<std::array<double, FeatureVector::dim>> rows;
  std::vector<int> labels;
  for (const auto& [f, y] : samples) {
    rows.push_back(model.standardize(f));
    labels.push_back(y);
  }
  std::vector<double> w(static_cast<std::size_t>(classes) * FeatureVector::dim, 0.0);
  std::vector<double> b(classes, 0.0);
  if (report) report->loss_per_epoch.reserve(epochs);
  for (int e = 0; e < epochs; ++e) {
    auto [gw, gb] = softmax_gradient(w, b, classes, rows, labels);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i];
    for (int c = 0; c < classes; ++c) b[c] -= lr * gb[c];
    if (report) report->loss_per_epoch.push_back(softmax_loss(w, b, classes, rows, labels));
  }
  model.weights = std::move(w);
  model.biases = std::move(b);
  if (report) {
    report->final_loss = softmax_loss(model.weights, model.biases, classes, rows, labels);
    int correct = 0;
    for (std::size_t s = 0; s < rows.size(); ++s) {
      int best = 0;
      double best_z = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < classes; ++c) {
        double z = model.biases[c];
        for (int i = 0; i < FeatureVector::dim; ++i) z += model.weights[c * FeatureVector::dim + i] * rows[s][i];
        if (z > best_z) {
          best_z = z;
          best = c;
        }
      }
      correct += best == labels[s];
    }
    report->accuracy = static_cast<double>(correct) / rows.size();
  }
  return model;
}

/// Class probabilities; a softmax row for multiclass models, (1-p, p)
/// for the binary one.
inline std::vector<double> predict_proba(const SelectorModel& model, const FeatureVector& f) {
  const auto row = model.standardize(f);
  if (model.classes == 2 && model.weights.size() == FeatureVector::dim) {
    double logit = model.biases.at(0);
    for (int i = 0; i < FeatureVector::dim; ++i) logit += model.weights[i] * row[i];
    const double p = 1.0 / (1.0 + std::exp(-logit));
    return {1.0 - p, p};
  }
  std::vector<double> logits(model.classes);
  for (int c = 0; c < model.classes; ++c) {
    double z = model.biases.at(c);
    for (int i = 0; i < FeatureVector::dim; ++i) z += model.weights[c * FeatureVector::dim + i] * row[i];
    logits[c] = z;
  }
  const double zmax = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double& z : logits) {
    z = std::exp(z - zmax);
    denom += z;
  }
  for (double& z : logits) z /= denom;
  return logits;
}

/// (label, p). Binary: label 1 = critical, with p >= 0.5 routed to the
/// rigorous solver (ties are conservative).
inline std::pair<int, double> predict(const SelectorModel& model, const FeatureVector& f) {
  const auto proba = predict_proba(model, f);
  if (model.classes == 2) {
    const double p = proba[1];
    return {p >= 0.5 ? 1 : 0, p};
  }
  int best = 0;
  for (int c = 1; c < model.classes; ++c)
    if (proba[c] > proba[best]) best = c;
  return {best, proba[best]};
}

/// Training label for one pattern: run litho on the raw target and call
/// it critical when the EPE violation count reaches the threshold.
inline int label_by_epe(const PatternGrid& target, const LithoModel& model, const EpeConfig& epe_cfg,
                        int threshold) {
  const auto report = epe_violations(litho(to_mask(target), model), target, epe_cfg, model.units_nm_per_px);
  return report.violations >= threshold ? 1 : 0;
}

// --- Model file (JSON) -------------------------------------------------------

inline void save_selector(const SelectorModel& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["classes"] = model.classes;
  j["weights"] = model.weights;
  j["bias"] = model.biases;
  j["feature_stats"] = {{"mean", model.stats.mean}, {"stdev", model.stats.stdev}};
  j["label_threshold"] = model.label_epe_threshold;
  std::ofstream out(path);
  if (!out) throw io_error("save_selector: cannot open " + path.string());
  out << j.dump(1) << '\n';
}

inline SelectorModel load_selector(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("load_selector: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("load_selector: invalid JSON: ") + e.what());
  }
  SelectorModel model;
  model.classes = j.at("classes").get<int>();
  model.weights = j.at("weights").get<std::vector<double>>();
  model.biases = j.at("bias").get<std::vector<double>>();
  const auto& stats = j.at("feature_stats");
  const auto mean = stats.at("mean").get<std::vector<double>>();
  const auto stdev = stats.at("stdev").get<std::vector<double>>();
  if (mean.size() != FeatureVector::dim || stdev.size() != FeatureVector::dim)
    throw format_error("load_selector: feature_stats dimension mismatch");
  std::copy(mean.begin(), mean.end(), model.stats.mean.begin());
  std::copy(stdev.begin(), stdev.end(), model.stats.stdev.begin());
  model.label_epe_threshold = j.value("label_threshold", 10);
  const std::size_t expect = model.classes == 2 ? FeatureVector::dim
                                                : static_cast<std::size_t>(model.classes) * FeatureVector::dim;
  if (model.weights.size() != expect) throw format_error("load_selector: weight count mismatch");
  return model;
}

// --- Solver pool --------------------------------------------------------------

using SolverFn = std::function<SolverResult(const PatternGrid&, const LithoModel&)>;

/// Registry of OPC solvers, one per classifier label. Third-party
/// solvers register under new labels; routing always yields exactly one
/// solver.
class SolverPool {
 public:
  int register_solver(std::string name, SolverFn fn) {
    solvers_.emplace_back(std::move(name), std::move(fn));
    return static_cast<int>(solvers_.size()) - 1;
  }
  std::size_t size() const { return solvers_.size(); }
  const std::string& name(int label) const { return solvers_.at(label).first; }
  SolverResult run(int label, const PatternGrid& target, const LithoModel& model) const {
    if (label < 0 || label >= static_cast<int>(solvers_.size()))
      throw invalid_param("SolverPool: no solver registered for label " + std::to_string(label));
    return solvers_[static_cast<std::size_t>(label)].second(target, model);
  }

 private:
  std::vector<std::pair<std::string, SolverFn>> solvers_;
};

}  // namespace opckit
