#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "opckit/errors.hpp"
#include "opckit/fft.hpp"
#include "opckit/grid.hpp"
#include "opckit/ilt.hpp"
#include "opckit/litho.hpp"
#include "opckit/metrics.hpp"

namespace opckit {

struct Shift {
  int dx = 0;
  int dy = 0;
  double peak_value = 0.0;
};

/// Circular cross-correlation map of two same-size patterns, evaluated
/// spectrally as Re(IFFT(FFT(p) .* conj(FFT(p_prime)))); identical to
/// convolving p with the 180-degree rotation of p_prime under circular
/// semantics. Both inputs are real, so they share one forward transform
/// (packed as p + i*p_prime and unpacked through Hermitian symmetry).
inline Grid<double> cross_correlate(const PatternGrid& p, const PatternGrid& p_prime) {
  if (p.size() != p_prime.size()) throw size_mismatch("cross_correlate: size mismatch");
  const int n = p.size();
  const std::size_t cells = p.cell_count();
  std::vector<fft::cd> z(cells);
  for (std::size_t i = 0; i < cells; ++i)
    z[i] = fft::cd(static_cast<double>(p.data()[i]), static_cast<double>(p_prime.data()[i]));
  fft::fft2_inplace(z, n, false);

  // With Z = FFT(p) + i FFT(p'), the two spectra separate through the
  // mirrored bin Zm = Z(-k):  FFT(p) = (Z + conj(Zm))/2 and
  // FFT(p') = (Z - conj(Zm))/(2i).
  std::vector<fft::cd> s(cells);
  for (int ky = 0; ky < n; ++ky) {
    const int my = ky == 0 ? 0 : n - ky;
    for (int kx = 0; kx < n; ++kx) {
      const int mx = kx == 0 ? 0 : n - kx;
      const fft::cd zk = z[static_cast<std::size_t>(ky) * n + kx];
      const fft::cd zm = std::conj(z[static_cast<std::size_t>(my) * n + mx]);
      const fft::cd fp = 0.5 * (zk + zm);
      const fft::cd fq = fft::cd(0.0, -0.5) * (zk - zm);
      s[static_cast<std::size_t>(ky) * n + kx] = fp * std::conj(fq);
    }
  }
  fft::fft2_inplace(s, n, true);
  return fft::real_part(s, n);
}

/// Estimated shift (dx, dy) such that p_prime == roll(p, dx, dy) for an
/// exact cyclic copy; positive values mean the stored pattern must roll
/// by (-dx, -dy) to align with the query. Offsets land in the signed
/// range (-N/2, N/2]; near-equal peaks (within 1e-9 relative) are tied
/// and broken by smallest norm, then lexicographically.
inline Shift estimate_shift(const PatternGrid& p, const PatternGrid& p_prime) {
  if (count_ones(p) == 0 || count_ones(p_prime) == 0)
    throw degenerate_input("estimate_shift: patterns must be nonzero");
  const Grid<double> corr = cross_correlate(p, p_prime);
  const int n = corr.size();

  double peak = corr.data()[0];
  for (double v : corr.data()) peak = std::max(peak, v);
  const double tol = 1e-9 * std::max(std::abs(peak), 1.0);

  // The correlation map indexes the displacement of p relative to
  // p_prime, so the shift of p_prime relative to p is its negation.
  Shift best;
  bool first = true;
  long best_norm = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      if (corr(x, y) < peak - tol) continue;
      const int sx = wrap(-x, n), sy = wrap(-y, n);
      const int dx = sx <= n / 2 ? sx : sx - n;
      const int dy = sy <= n / 2 ? sy : sy - n;
      const long norm = static_cast<long>(dx) * dx + static_cast<long>(dy) * dy;
      const bool better =
          first || norm < best_norm || (norm == best_norm && (dx < best.dx || (dx == best.dx && dy < best.dy)));
      if (better) {
        best = Shift{dx, dy, corr(x, y)};
        best_norm = norm;
        first = false;
      }
    }
  return best;
}

/// Cyclic re-location of a stored raster; apply_shift(g, a, b) then
/// apply_shift(., -a, -b) is the identity.
template <typename T>
Grid<T> apply_shift(const Grid<T>& g, int dx, int dy) {
  return roll(g, dx, dy);
}

struct RefinePolicy {
  int max_refine_iters = 2;
  int verified_max_violations = 0;
};

struct CalibrationResult {
  Shift shift;
  MaskGrid corrected_mask;
  bool verified = false;
  EpeReport epe_after;
  long long pvband_nm2 = 0;
  int refinement_iters = 0;
};

/// Reuse a stored mask for a relocated pattern: recover the shift by
/// cross-correlating the query with the stored mask's print (the print
/// carries the stored pattern's location), roll the mask accordingly,
/// verify through litho, and give the optimizer at most a couple of
/// clean-up iterations when violations remain.
inline CalibrationResult calibrate_and_verify(const PatternGrid& pattern, const MaskGrid& matched_mask,
                                              const LithoModel& model, const IltConfig& ilt_cfg,
                                              const EpeConfig& epe_cfg, const RefinePolicy& policy = {}) {
  if (pattern.size() != matched_mask.size()) throw size_mismatch("calibrate_and_verify: size mismatch");
  CalibrationResult result;

  const PrintedImage reference = litho(matched_mask, model);
  result.shift = estimate_shift(pattern, reference);
  result.corrected_mask = apply_shift(matched_mask, -result.shift.dx, -result.shift.dy);

  result.epe_after = epe_violations(litho(result.corrected_mask, model), pattern, epe_cfg, model.units_nm_per_px);
  if (result.epe_after.violations > 0 && policy.max_refine_iters > 0) {
    IltConfig refine_cfg = ilt_cfg;
    refine_cfg.max_iters = policy.max_refine_iters;
    refine_cfg.epe = epe_cfg;
    SolverResult refined = optimize(pattern, result.corrected_mask, model, refine_cfg);
    result.corrected_mask = std::move(refined.mask);
    result.epe_after = std::move(refined.epe);
    result.refinement_iters = refined.iters_used;
    result.pvband_nm2 = refined.pvband_nm2;
  } else {
    result.pvband_nm2 = pvband(result.corrected_mask, model).area_nm2;
  }
  result.verified = result.epe_after.violations <= policy.verified_max_violations;
  return result;
}

}  // namespace opckit
