#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <vector>

#include "opckit/errors.hpp"
#include "opckit/fft.hpp"
#include "opckit/grid.hpp"
#include "opckit/litho.hpp"
#include "opckit/metrics.hpp"

namespace opckit {

struct IltConfig {
  double mask_steepness = 4.0;    // alpha: latent -> mask sigmoid
  double resist_steepness = 50.0; // beta: intensity -> soft print sigmoid
  double step_size = 1.0;
  int max_iters = 40;
  int patience = 3;           // stop after this many iterations with a stable EPE count
  double loss_rel_tol = 1e-4; // ... or when the relative loss decrease falls below this
  int max_backtracks = 20;
  EpeConfig epe;              // used by the convergence check and the final report
};

struct SolverResult {
  MaskGrid mask;  // binarized
  EpeReport epe;
  long long pvband_nm2 = 0;
  int iters_used = 0;
  double wall_time_s = 0.0;
  std::vector<double> loss_history;
};

/// Sigmoid relaxation of the latent parameters: M = 1 / (1 + exp(-alpha * theta)).
inline MaskGrid relax(const Grid<double>& theta, double alpha) {
  if (!(alpha > 0)) throw invalid_param("relax: alpha must be positive");
  MaskGrid mask(theta.size());
  for (std::size_t i = 0; i < theta.cell_count(); ++i)
    mask.data()[i] = 1.0 / (1.0 + std::exp(-alpha * theta.data()[i]));
  return mask;
}

namespace detail {

/// Shared forward/adjoint state for one optimization run: kernel spectra
/// under the nominal condition are computed once and reused by every
/// loss/gradient evaluation. Purely local, so concurrent optimizations
/// never share state.
class IltWorkspace {
 public:
  IltWorkspace(const PatternGrid& target, const LithoModel& model, const IltConfig& cfg)
      : target_(&target), model_(&model), cfg_(&cfg), n_(target.size()) {
    model.validate();
    if (n_ <= 0) throw invalid_param("optimize: empty target");
    const auto& cond = model.corners.nominal;
    dose_ = cond.dose;
    for (const auto& k : model.kernels)
      spectra_.push_back(kernel_spectrum(k, n_, cond, model.units_nm_per_px));
  }

  double loss(const Grid<double>& theta) const {
    double value = 0.0;
    forward(theta, nullptr, &value);
    return value;
  }

  double loss_and_gradient(const Grid<double>& theta, Grid<double>& grad) const {
    double value = 0.0;
    forward(theta, &grad, &value);
    return value;
  }

 private:
  // L = sum (Ztilde - target)^2 with Ztilde = sigmoid(beta (I - I_th)),
  // I = dose * sum_k w_k |A_k|^2, A_k = relax(theta) (*) h_k.
  //
  // dL/dM(y) = sum_k w_k dose * 2 Re[ sum_x (G A_k)(x) conj(h_k(x-y)) ]
  // with G = 2 (Ztilde - target) * beta Ztilde (1 - Ztilde); the inner sum is a
  // cross-correlation, evaluated as IFFT(FFT(G .* A_k) .* conj(H_k)).
  void forward(const Grid<double>& theta, Grid<double>* grad, double* loss_out) const {
    const double alpha = cfg_->mask_steepness;
    const double beta = cfg_->resist_steepness;
    const std::size_t cells = theta.cell_count();

    MaskGrid mask = relax(theta, alpha);
    auto mask_fft = fft::to_complex(mask);
    fft::fft2_inplace(mask_fft, n_, false);

    std::vector<std::vector<fft::cd>> fields(spectra_.size());
    std::vector<double> intensity(cells, 0.0);
    for (std::size_t k = 0; k < spectra_.size(); ++k) {
      auto& field = fields[k];
      field.resize(cells);
      for (std::size_t i = 0; i < cells; ++i) field[i] = mask_fft[i] * spectra_[k][i];
      fft::fft2_inplace(field, n_, true);
      const double w = model_->weights[k];
      for (std::size_t i = 0; i < cells; ++i) intensity[i] += w * std::norm(field[i]);
    }

    double loss = 0.0;
    std::vector<double> g(grad ? cells : 0);
    const double i_th = model_->resist_threshold;
    for (std::size_t i = 0; i < cells; ++i) {
      const double I = dose_ * intensity[i];
      const double z = 1.0 / (1.0 + std::exp(-beta * (I - i_th)));
      const double err = z - (*target_).data()[i];
      loss += err * err;
      if (grad) g[i] = 2.0 * err * beta * z * (1.0 - z) * dose_;
    }
    *loss_out = loss;
    if (!grad) return;

    std::vector<double> dL_dmask(cells, 0.0);
    std::vector<fft::cd> buf(cells);
    for (std::size_t k = 0; k < spectra_.size(); ++k) {
      for (std::size_t i = 0; i < cells; ++i) buf[i] = g[i] * fields[k][i];
      fft::fft2_inplace(buf, n_, false);
      for (std::size_t i = 0; i < cells; ++i) buf[i] *= std::conj(spectra_[k][i]);
      fft::fft2_inplace(buf, n_, true);
      const double w = model_->weights[k];
      for (std::size_t i = 0; i < cells; ++i) dL_dmask[i] += w * 2.0 * buf[i].real();
    }

    if (grad->size() != n_) *grad = Grid<double>(n_);
    for (std::size_t i = 0; i < cells; ++i) {
      const double m = mask.data()[i];
      grad->data()[i] = dL_dmask[i] * alpha * m * (1.0 - m);
    }
  }

  const PatternGrid* target_;
  const LithoModel* model_;
  const IltConfig* cfg_;
  int n_;
  double dose_ = 1.0;
  std::vector<std::vector<fft::cd>> spectra_;
};

inline Grid<double> theta_from_mask(const MaskGrid& mask, double alpha) {
  constexpr double eps = 1e-3;
  Grid<double> theta(mask.size());
  for (std::size_t i = 0; i < mask.cell_count(); ++i) {
    const double m = std::clamp(mask.data()[i], eps, 1.0 - eps);
    theta.data()[i] = std::log(m / (1.0 - m)) / alpha;
  }
  return theta;
}

}  // namespace detail

/// Image-fidelity objective for the current latent mask (nominal condition).
inline double ilt_loss(const Grid<double>& theta, const PatternGrid& target, const LithoModel& model,
                       const IltConfig& cfg = {}) {
  if (theta.size() != target.size()) throw size_mismatch("ilt_loss: theta/target size mismatch");
  return detail::IltWorkspace(target, model, cfg).loss(theta);
}

/// Analytic dL/dtheta via the adjoint of the imaging chain.
inline Grid<double> ilt_gradient(const Grid<double>& theta, const PatternGrid& target, const LithoModel& model,
                                 const IltConfig& cfg = {}) {
  if (theta.size() != target.size()) throw size_mismatch("ilt_gradient: theta/target size mismatch");
  Grid<double> grad(theta.size());
  detail::IltWorkspace(target, model, cfg).loss_and_gradient(theta, grad);
  return grad;
}

/// Gradient descent with backtracking halving on the relaxed-mask
/// objective. The latent grid starts from init_mask when given, else from
/// the target itself. Non-convergence within max_iters is not an error;
/// the result simply reports iters_used = max_iters.
inline SolverResult optimize(const PatternGrid& target, const std::optional<MaskGrid>& init_mask,
                             const LithoModel& model, const IltConfig& cfg = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  if (init_mask && init_mask->size() != target.size())
    throw size_mismatch("optimize: init mask size mismatch");

  const detail::IltWorkspace ws(target, model, cfg);
  Grid<double> theta = detail::theta_from_mask(init_mask ? *init_mask : to_mask(target), cfg.mask_steepness);

  auto verify = [&](const Grid<double>& th) {
    MaskGrid bin = to_mask(binarize(relax(th, cfg.mask_steepness), 0.5));
    EpeReport epe = epe_violations(litho(bin, model), target, cfg.epe, model.units_nm_per_px);
    return std::pair<MaskGrid, EpeReport>(std::move(bin), std::move(epe));
  };

  SolverResult result;
  Grid<double> grad(theta.size());
  double loss = ws.loss_and_gradient(theta, grad);
  result.loss_history.push_back(loss);

  auto [mask, epe] = verify(theta);
  int prev_violations = epe.violations;
  int stable = 0;

  if (epe.violations > 0) {
    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
      double step = cfg.step_size;
      Grid<double> candidate(theta.size());
      double cand_loss = loss;
      bool accepted = false;
      for (int bt = 0; bt <= cfg.max_backtracks; ++bt) {
        for (std::size_t i = 0; i < theta.cell_count(); ++i)
          candidate.data()[i] = theta.data()[i] - step * grad.data()[i];
        cand_loss = ws.loss(candidate);
        if (cand_loss <= loss) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      result.iters_used = iter;
      if (accepted) theta = std::move(candidate);
      const double decrease = loss - (accepted ? cand_loss : loss);
      const double rel_decrease = decrease / std::max(loss, 1e-300);
      if (accepted) loss = cand_loss;
      result.loss_history.push_back(loss);

      std::tie(mask, epe) = verify(theta);
      stable = (epe.violations == prev_violations) ? stable + 1 : 0;
      prev_violations = epe.violations;
      if (stable >= cfg.patience || rel_decrease < cfg.loss_rel_tol) break;
      if (iter < cfg.max_iters) loss = ws.loss_and_gradient(theta, grad);
    }
  }

  result.mask = std::move(mask);
  result.epe = std::move(epe);
  result.pvband_nm2 = pvband(result.mask, model).area_nm2;
  result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

/// Dilate a binary pattern by `radius` in the Chebyshev metric (two-pass
/// running max). Used by the rule-based fast solver.
inline PatternGrid dilate(const PatternGrid& g, int radius) {
  if (radius < 0) throw invalid_param("dilate: radius must be >= 0");
  const int n = g.size();
  PatternGrid tmp(n), out(n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      std::uint8_t v = 0;
      for (int d = -radius; d <= radius && !v; ++d) {
        const int xx = x + d;
        if (xx >= 0 && xx < n && g(xx, y)) v = 1;
      }
      tmp(x, y) = v;
    }
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      std::uint8_t v = 0;
      for (int d = -radius; d <= radius && !v; ++d) {
        const int yy = y + d;
        if (yy >= 0 && yy < n && tmp(x, yy)) v = 1;
      }
      out(x, y) = v;
    }
  return out;
}

/// Rule-based solver for easy patterns: bias the target outward by a
/// fixed amount, verify once through litho, report. No iterations.
inline SolverResult fast_solver(const PatternGrid& target, const LithoModel& model, int bias_px = 8,
                                const EpeConfig& epe_cfg = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  SolverResult result;
  result.mask = to_mask(dilate(target, bias_px));
  result.epe = epe_violations(litho(result.mask, model), target, epe_cfg, model.units_nm_per_px);
  result.pvband_nm2 = pvband(result.mask, model).area_nm2;
  result.iters_used = 0;
  result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace opckit
