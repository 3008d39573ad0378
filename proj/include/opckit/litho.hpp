#pragma once

#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <utility>
#include <vector>

#include "opckit/errors.hpp"
#include "opckit/fft.hpp"
#include "opckit/grid.hpp"

namespace opckit {

/// One coherent-system kernel: odd-sided square of complex coefficients,
/// centred at ((size-1)/2, (size-1)/2).
struct OpticalKernel {
  int size = 0;
  std::vector<std::complex<double>> coeff;
};

/// Exposure/focus condition. dose scales intensity multiplicatively;
/// defocus widens the kernels (see aerial_image). The guard band keeps
/// conditions inside the modeled process window.
struct ProcessCondition {
  double dose = 1.0;
  double defocus_nm = 0.0;

  void validate() const {
    if (!(dose >= 0.9 && dose <= 1.1)) throw invalid_param("ProcessCondition: dose outside [0.9, 1.1]");
    if (!(std::abs(defocus_nm) <= 50.0)) throw invalid_param("ProcessCondition: |defocus| exceeds 50 nm");
  }
};

struct ProcessCorners {
  ProcessCondition nominal{1.0, 0.0};
  ProcessCondition inner{0.98, 25.0};  // min dose, max defocus
  ProcessCondition outer{1.02, 0.0};   // max dose, no defocus
};

/// Imaging model: aerial intensity is the weighted sum of squared
/// magnitudes of the mask convolved (circularly) with each kernel, and
/// the resist develops wherever intensity reaches resist_threshold.
struct LithoModel {
  std::vector<OpticalKernel> kernels;
  std::vector<double> weights;
  double resist_threshold = 0.055;
  ProcessCorners corners;
  double units_nm_per_px = 1.0;

  int order() const { return static_cast<int>(kernels.size()); }

  void validate() const {
    if (kernels.empty()) throw invalid_param("LithoModel: needs at least one kernel");
    if (kernels.size() != weights.size()) throw invalid_param("LithoModel: kernels/weights length mismatch");
    for (double w : weights)
      if (!(w > 0)) throw invalid_param("LithoModel: weights must be positive");
    if (!(resist_threshold > 0) || !(resist_threshold < 1))
      throw invalid_param("LithoModel: resist threshold must lie in (0,1)");
    for (const auto& k : kernels) {
      if (k.size <= 0 || k.size % 2 == 0) throw invalid_param("LithoModel: kernel sides must be odd");
      if (k.coeff.size() != static_cast<std::size_t>(k.size) * k.size)
        throw invalid_param("LithoModel: kernel coefficient count mismatch");
    }
  }
};

namespace detail {

inline double hermite(int m, double x) {
  // Probabilists' Hermite polynomials He_m via the usual recurrence.
  double h0 = 1.0, h1 = x;
  if (m == 0) return h0;
  if (m == 1) return h1;
  for (int i = 2; i <= m; ++i) {
    const double h2 = x * h1 - (i - 1) * h0;
    h0 = h1;
    h1 = h2;
  }
  return h1;
}

/// Embed a small centred kernel into an n×n field with its centre at
/// (0,0) and wrap-around, the layout circular convolution expects.
inline std::vector<fft::cd> embed_kernel(const OpticalKernel& k, int n) {
  if (k.size > n) throw size_mismatch("kernel larger than grid");
  std::vector<fft::cd> field(static_cast<std::size_t>(n) * n, fft::cd(0.0, 0.0));
  const int c = (k.size - 1) / 2;
  for (int j = 0; j < k.size; ++j) {
    const int gy = wrap(j - c, n);
    for (int i = 0; i < k.size; ++i) {
      const int gx = wrap(i - c, n);
      field[static_cast<std::size_t>(gy) * n + gx] = k.coeff[static_cast<std::size_t>(j) * k.size + i];
    }
  }
  return field;
}

inline OpticalKernel gaussian_kernel(double sigma_px, int max_size) {
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma_px)));
  int size = 2 * radius + 1;
  if (size > max_size) size = max_size % 2 == 1 ? max_size : max_size - 1;
  OpticalKernel k;
  k.size = size;
  k.coeff.resize(static_cast<std::size_t>(size) * size);
  const int c = (size - 1) / 2;
  double sum = 0.0;
  for (int j = 0; j < size; ++j)
    for (int i = 0; i < size; ++i) {
      const double dx = i - c, dy = j - c;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma_px * sigma_px));
      k.coeff[static_cast<std::size_t>(j) * size + i] = v;
      sum += v;
    }
  for (auto& v : k.coeff) v /= sum;
  return k;
}

/// Frequency response of one kernel under the given condition: the
/// kernel spectrum, times a normalized Gaussian blur spectrum when the
/// condition is defocused. sigma_blur = |defocus_nm| / units / 10.
inline std::vector<fft::cd> kernel_spectrum(const OpticalKernel& k, int n, const ProcessCondition& cond,
                                            double units_nm_per_px) {
  auto field = embed_kernel(k, n);
  fft::fft2_inplace(field, n, false);
  if (cond.defocus_nm != 0.0) {
    const double sigma = std::abs(cond.defocus_nm) / units_nm_per_px / 10.0;
    auto blur = embed_kernel(gaussian_kernel(sigma, n), n);
    fft::fft2_inplace(blur, n, false);
    for (std::size_t i = 0; i < field.size(); ++i) field[i] *= blur[i];
  }
  return field;
}

}  // namespace detail

/// Deterministic synthetic kernel stack: a sum-normalized Gaussian,
/// followed by Gram-Schmidt-orthogonalized Gauss-Hermite modes of the
/// same width, ordered by total mode order. Higher modes are scaled to
/// the base kernel's L2 energy so they perturb rather than dominate the
/// image. Weights decay geometrically: w_k = decay^(k-1).
inline std::pair<std::vector<OpticalKernel>, std::vector<double>> synth_kernels(int K, double base_sigma_px,
                                                                                double decay, int size) {
  if (K < 1) throw invalid_param("synth_kernels: K must be >= 1");
  if (size <= 0 || size % 2 == 0) throw invalid_param("synth_kernels: size must be odd and positive");
  if (!(decay > 0.0) || !(decay < 1.0)) throw invalid_param("synth_kernels: decay must lie in (0,1)");
  if (!(base_sigma_px > 0.0)) throw invalid_param("synth_kernels: sigma must be positive");

  const int c = (size - 1) / 2;
  const std::size_t cells = static_cast<std::size_t>(size) * size;
  std::vector<std::vector<double>> basis;  // orthonormal, L2
  std::vector<OpticalKernel> kernels;
  std::vector<double> weights;

  // Mode (m, n) enumerated by total order t = m + n, then by m.
  int m = 0, nn = 0, t = 0;
  double base_l2 = 0.0;  // L2 norm of the sum-normalized base Gaussian
  for (int k = 0; k < K; ++k) {
    std::vector<double> mode(cells);
    double raw_sum = 0.0;
    for (int j = 0; j < size; ++j)
      for (int i = 0; i < size; ++i) {
        const double xs = (i - c) / base_sigma_px;
        const double ys = (j - c) / base_sigma_px;
        const double v = detail::hermite(m, xs) * detail::hermite(nn, ys) * std::exp(-(xs * xs + ys * ys) / 2.0);
        mode[static_cast<std::size_t>(j) * size + i] = v;
        raw_sum += v;
      }
    // Orthogonalize against earlier modes, then L2-normalize.
    for (const auto& u : basis) {
      double dot = 0.0;
      for (std::size_t i = 0; i < cells; ++i) dot += mode[i] * u[i];
      for (std::size_t i = 0; i < cells; ++i) mode[i] -= dot * u[i];
    }
    double norm2 = 0.0;
    for (double v : mode) norm2 += v * v;
    const double norm = std::sqrt(norm2);
    if (norm < 1e-12)
      throw invalid_param("synth_kernels: mode collapsed; enlarge size or shrink sigma");
    for (auto& v : mode) v /= norm;
    basis.push_back(mode);

    OpticalKernel kern;
    kern.size = size;
    kern.coeff.resize(cells);
    if (k == 0) {
      // The base Gaussian is normalized to unit sum, not unit L2.
      base_l2 = norm / raw_sum;
      for (std::size_t i = 0; i < cells; ++i) kern.coeff[i] = mode[i] * base_l2;
    } else {
      for (std::size_t i = 0; i < cells; ++i) kern.coeff[i] = mode[i] * base_l2;
    }
    kernels.push_back(std::move(kern));
    weights.push_back(std::pow(decay, k));

    if (m == t) {
      ++t;
      m = 0;
      nn = t;
    } else {
      ++m;
      --nn;
    }
  }
  return {std::move(kernels), std::move(weights)};
}

inline LithoModel make_synthetic_model(int K, double base_sigma_px, double decay, int size,
                                       double resist_threshold = 0.055, double units_nm_per_px = 1.0) {
  LithoModel model;
  auto [kernels, weights] = synth_kernels(K, base_sigma_px, decay, size);
  model.kernels = std::move(kernels);
  model.weights = std::move(weights);
  model.resist_threshold = resist_threshold;
  model.units_nm_per_px = units_nm_per_px;
  model.validate();
  return model;
}

/// I = dose * sum_k w_k |M (*) h_k'|^2, with (*) the circular FFT
/// convolution and h_k' the defocus-widened kernel.
inline AerialImage aerial_image(const MaskGrid& mask, const LithoModel& model, const ProcessCondition& cond) {
  model.validate();
  cond.validate();
  const int n = mask.size();
  if (n <= 0) throw invalid_param("aerial_image: empty mask");
  auto mask_fft = fft::forward_2d(mask);
  AerialImage intensity(n, 0.0);
  std::vector<fft::cd> field(mask_fft.size());
  for (std::size_t k = 0; k < model.kernels.size(); ++k) {
    const auto spectrum = detail::kernel_spectrum(model.kernels[k], n, cond, model.units_nm_per_px);
    for (std::size_t i = 0; i < field.size(); ++i) field[i] = mask_fft[i] * spectrum[i];
    fft::fft2_inplace(field, n, true);
    const double w = model.weights[k];
    for (std::size_t i = 0; i < field.size(); ++i) intensity.data()[i] += w * std::norm(field[i]);
  }
  for (auto& v : intensity.data()) v *= cond.dose;
  return intensity;
}

/// Resist development: Z = 1 where I >= threshold.
inline PrintedImage resist(const AerialImage& img, double resist_threshold) {
  if (!(resist_threshold > 0)) throw invalid_param("resist: threshold must be positive");
  PrintedImage out(img.size());
  for (std::size_t i = 0; i < img.cell_count(); ++i) out.data()[i] = img.data()[i] >= resist_threshold ? 1 : 0;
  return out;
}

inline PrintedImage litho(const MaskGrid& mask, const LithoModel& model, const ProcessCondition& cond) {
  return resist(aerial_image(mask, model, cond), model.resist_threshold);
}

inline PrintedImage litho(const MaskGrid& mask, const LithoModel& model) {
  return litho(mask, model, model.corners.nominal);
}

// ---------------------------------------------------------------------------
// Kernel file format: little-endian binary.
//   magic "AOK1" | u32 K | u32 n_k | K * n_k*n_k * (f64 re, f64 im) | K * f64 w
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

inline void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace detail

inline void save_kernels(const std::vector<OpticalKernel>& kernels, const std::vector<double>& weights,
                         const std::filesystem::path& path) {
  if (kernels.empty() || kernels.size() != weights.size())
    throw invalid_param("save_kernels: kernels/weights mismatch");
  const int size = kernels.front().size;
  for (const auto& k : kernels)
    if (k.size != size) throw invalid_param("save_kernels: kernels must share one side length");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("save_kernels: cannot open " + path.string());
  out.write("AOK1", 4);
  detail::put_u32(out, static_cast<std::uint32_t>(kernels.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(size));
  for (const auto& k : kernels)
    for (const auto& cval : k.coeff) {
      detail::put_f64(out, cval.real());
      detail::put_f64(out, cval.imag());
    }
  for (double w : weights) detail::put_f64(out, w);
  if (!out) throw io_error("save_kernels: short write to " + path.string());
}

inline std::pair<std::vector<OpticalKernel>, std::vector<double>> load_kernels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("load_kernels: cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::string_view(magic, 4) != "AOK1") throw format_error("load_kernels: bad magic in " + path.string());
  const std::uint32_t K = detail::get_u32(in);
  const std::uint32_t size = detail::get_u32(in);
  if (!in || K == 0 || size == 0 || size % 2 == 0 || K > 4096 || size > 32768)
    throw format_error("load_kernels: implausible header in " + path.string());
  std::vector<OpticalKernel> kernels(K);
  for (auto& k : kernels) {
    k.size = static_cast<int>(size);
    k.coeff.resize(static_cast<std::size_t>(size) * size);
    for (auto& cval : k.coeff) {
      const double re = detail::get_f64(in);
      const double im = detail::get_f64(in);
      cval = {re, im};
    }
  }
  std::vector<double> weights(K);
  for (auto& w : weights) w = detail::get_f64(in);
  if (!in) throw format_error("load_kernels: truncated file " + path.string());
  return {std::move(kernels), std::move(weights)};
}

}  // namespace opckit
