#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "opckit/errors.hpp"
#include "opckit/grid.hpp"

namespace opckit::fft {

using cd = std::complex<double>;

/// Radix-2 plan for a fixed power-of-two length. Twiddles are tabulated
/// directly (no recurrence), which keeps round-off at the few-ulp level
/// even for long transforms. Plans are immutable after construction and
/// safe to share across threads.
class Plan {
 public:
  explicit Plan(std::size_t n) : n_(n) {
    if (n == 0 || (n & (n - 1)) != 0) throw invalid_param("fft::Plan: length must be a power of two");
    tw_.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      tw_[k] = cd(std::cos(ang), std::sin(ang));
    }
  }

  std::size_t length() const { return n_; }

  void forward(std::span<cd> a) const { run(a, false); }

  void inverse(std::span<cd> a) const {
    run(a, true);
    const double s = 1.0 / static_cast<double>(n_);
    for (auto& x : a) x *= s;
  }

 private:
  void run(std::span<cd> a, bool inverse) const {
    if (a.size() != n_) throw size_mismatch("fft::Plan: span length does not match plan");
    // Bit-reversal permutation.
    for (std::size_t i = 1, j = 0; i < n_; ++i) {
      std::size_t bit = n_ >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t stride = n_ / len;
      const std::size_t half = len / 2;
      for (std::size_t i = 0; i < n_; i += len) {
        for (std::size_t k = 0; k < half; ++k) {
          const cd w = tw_[k * stride];
          const double wr = w.real();
          const double wi = inverse ? -w.imag() : w.imag();
          cd& lo = a[i + k];
          cd& hi = a[i + k + half];
          // Explicit multiply keeps the loop free of the library's
          // NaN-handling complex-multiply call.
          const double vr = hi.real() * wr - hi.imag() * wi;
          const double vi = hi.real() * wi + hi.imag() * wr;
          const double ur = lo.real(), ui = lo.imag();
          lo = cd(ur + vr, ui + vi);
          hi = cd(ur - vr, ui - vi);
        }
      }
    }
  }

  std::size_t n_;
  std::vector<cd> tw_;
};

/// Arbitrary-length DFT via Bluestein's chirp-z construction: the
/// transform becomes one circular convolution at the next power of two,
/// so non-power-of-two grids cost three radix-2 transforms per line.
class ChirpPlan {
 public:
  explicit ChirpPlan(std::size_t n) : n_(n) {
    if (n == 0) throw invalid_param("fft::ChirpPlan: length must be positive");
    std::size_t m = 1;
    while (m < 2 * n) m <<= 1;
    inner_ = std::make_unique<Plan>(m);
    chirp_.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      // exp(-i pi j^2 / n), with j^2 reduced mod 2n to keep the angle small.
      const std::size_t j2 = (j * j) % (2 * n);
      const double ang = -std::numbers::pi * static_cast<double>(j2) / static_cast<double>(n);
      chirp_[j] = cd(std::cos(ang), std::sin(ang));
    }
    kernel_fft_.assign(m, cd(0.0, 0.0));
    kernel_fft_[0] = std::conj(chirp_[0]);
    for (std::size_t j = 1; j < n; ++j) {
      kernel_fft_[j] = std::conj(chirp_[j]);
      kernel_fft_[m - j] = std::conj(chirp_[j]);
    }
    inner_->forward(kernel_fft_);
  }

  std::size_t length() const { return n_; }

  void forward(std::span<cd> a) const { run(a, false); }

  void inverse(std::span<cd> a) const {
    for (auto& x : a) x = std::conj(x);
    run(a, false);
    const double s = 1.0 / static_cast<double>(n_);
    for (auto& x : a) x = std::conj(x) * s;
  }

 private:
  void run(std::span<cd> a, bool) const {
    if (a.size() != n_) throw size_mismatch("fft::ChirpPlan: span length does not match plan");
    const std::size_t m = kernel_fft_.size();
    std::vector<cd> buf(m, cd(0.0, 0.0));
    for (std::size_t j = 0; j < n_; ++j) buf[j] = a[j] * chirp_[j];
    inner_->forward(buf);
    for (std::size_t j = 0; j < m; ++j) buf[j] *= kernel_fft_[j];
    inner_->inverse(buf);
    for (std::size_t k = 0; k < n_; ++k) a[k] = buf[k] * chirp_[k];
  }

  std::size_t n_;
  std::unique_ptr<Plan> inner_;
  std::vector<cd> chirp_;
  std::vector<cd> kernel_fft_;
};

namespace detail {

inline void transpose_square(std::vector<cd>& a, int n) {
  constexpr int block = 32;
  for (int by = 0; by < n; by += block)
    for (int bx = by; bx < n; bx += block) {
      const int ym = std::min(by + block, n), xm = std::min(bx + block, n);
      for (int y = by; y < ym; ++y) {
        const int x0 = bx == by ? y + 1 : bx;
        for (int x = x0; x < xm; ++x)
          std::swap(a[static_cast<std::size_t>(y) * n + x], a[static_cast<std::size_t>(x) * n + y]);
      }
    }
}

// Rows, transpose, rows, transpose: column transforms run on contiguous
// memory, which matters at production grid sizes.
inline void transform_lines(std::vector<cd>& a, int n, bool inverse, const auto& plan) {
  for (int pass = 0; pass < 2; ++pass) {
    for (int y = 0; y < n; ++y) {
      std::span<cd> row(a.data() + static_cast<std::size_t>(y) * n, static_cast<std::size_t>(n));
      if (inverse)
        plan.inverse(row);
      else
        plan.forward(row);
    }
    transpose_square(a, n);
  }
}

}  // namespace detail

/// In-place 2-D transform of an n×n row-major complex field. Power-of-two
/// sides take the radix-2 path; anything else goes through Bluestein.
inline void fft2_inplace(std::vector<cd>& a, int n, bool inverse) {
  if (n <= 0 || a.size() != static_cast<std::size_t>(n) * n) throw size_mismatch("fft2: buffer is not n*n");
  if ((n & (n - 1)) == 0) {
    detail::transform_lines(a, n, inverse, Plan(static_cast<std::size_t>(n)));
  } else {
    detail::transform_lines(a, n, inverse, ChirpPlan(static_cast<std::size_t>(n)));
  }
}

template <typename T>
std::vector<cd> to_complex(const Grid<T>& g) {
  std::vector<cd> out(g.cell_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cd(static_cast<double>(g.data()[i]), 0.0);
  return out;
}

template <typename T>
std::vector<cd> forward_2d(const Grid<T>& g) {
  auto a = to_complex(g);
  fft2_inplace(a, g.size(), false);
  return a;
}

inline Grid<double> real_part(const std::vector<cd>& a, int n) {
  Grid<double> out(n);
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a[i].real();
  return out;
}

inline Grid<double> magnitude(const std::vector<cd>& a, int n) {
  Grid<double> out(n);
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = std::abs(a[i]);
  return out;
}

}  // namespace opckit::fft
