#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

namespace asn {

namespace detail {

inline double bessel_i0(double x) {
  // Power series; converges quickly for the argument range of a Kaiser window.
  double sum = 1.0, term = 1.0;
  const double q = 0.25 * x * x;
  for (int k = 1; k < 64; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-16 * sum) break;
  }
  return sum;
}

// Kaiser window over u in [-1, 1], tabulated once for cheap lookup.
inline double kaiser_lookup(double u) {
  constexpr int kTableSize = 4096;
  constexpr double kBeta = 8.6;
  static const std::array<double, kTableSize + 2> table = [] {
    std::array<double, kTableSize + 2> t{};
    const double norm = bessel_i0(kBeta);
    for (int i = 0; i <= kTableSize; ++i) {
      const double v = static_cast<double>(i) / kTableSize;  // |u|
      t[i] = bessel_i0(kBeta * std::sqrt(std::max(0.0, 1.0 - v * v))) / norm;
    }
    t[kTableSize + 1] = 0.0;
    return t;
  }();
  const double a = std::abs(u);
  if (a >= 1.0) return 0.0;
  const double pos = a * kTableSize;
  const int i = static_cast<int>(pos);
  const double frac = pos - i;
  return table[i] * (1.0 - frac) + table[i + 1] * frac;
}

}  // namespace detail

// Number of taps on each side of the windowed-sinc interpolation kernel.
inline constexpr int kSincHalfTaps = 16;

// Band-limited read of x at fractional position t (32-tap Kaiser-windowed
// sinc). Positions outside the signal contribute zeros. Integer positions
// reproduce samples exactly.
inline double sinc_interp_at(std::span<const double> x, double t) {
  const std::size_t n = x.size();
  if (n == 0) return 0.0;
  const double rounded = std::round(t);
  if (std::abs(t - rounded) < 1e-9) {
    const long long i = static_cast<long long>(rounded);
    return (i >= 0 && i < static_cast<long long>(n)) ? x[static_cast<std::size_t>(i)] : 0.0;
  }
  const long long base = static_cast<long long>(std::floor(t));
  const long long k_first = base - (kSincHalfTaps - 1);
  const long long k_last = base + kSincHalfTaps;
  if (k_last < 0 || k_first >= static_cast<long long>(n)) return 0.0;

  // sin(pi*(t-k)) = sin(pi*t) * (-1)^k, so one sin() serves all taps.
  const double pi = std::numbers::pi;
  const double s = std::sin(pi * (t - static_cast<double>(base)));
  double acc = 0.0;
  double sign = 1.0;  // (-1)^(base - k) folded into the loop below
  for (long long k = base; k >= k_first; --k, sign = -sign) {
    if (k >= 0 && k < static_cast<long long>(n)) {
      const double d = t - static_cast<double>(k);
      acc += x[static_cast<std::size_t>(k)] * sign * s / (pi * d) *
             detail::kaiser_lookup(d / kSincHalfTaps);
    }
  }
  sign = -1.0;
  for (long long k = base + 1; k <= k_last; ++k, sign = -sign) {
    if (k >= 0 && k < static_cast<long long>(n)) {
      const double d = t - static_cast<double>(k);
      acc += x[static_cast<std::size_t>(k)] * sign * s / (pi * d) *
             detail::kaiser_lookup(d / kSincHalfTaps);
    }
  }
  return acc;
}

// Adds a unit impulse at fractional position t into h, band-limited the same
// way sinc_interp_at reads. Used to build impulse responses.
inline void add_sinc_pulse(std::vector<double>& h, double t, double amplitude) {
  const long long base = static_cast<long long>(std::floor(t));
  const double pi = std::numbers::pi;
  const double frac = t - static_cast<double>(base);
  if (std::abs(frac) < 1e-12) {
    if (base >= 0 && base < static_cast<long long>(h.size()))
      h[static_cast<std::size_t>(base)] += amplitude;
    return;
  }
  const double s = std::sin(pi * frac);
  for (long long k = base - (kSincHalfTaps - 1); k <= base + kSincHalfTaps; ++k) {
    if (k < 0 || k >= static_cast<long long>(h.size())) continue;
    const double d = t - static_cast<double>(k);
    const double sign = ((base - k) % 2 == 0) ? 1.0 : -1.0;
    h[static_cast<std::size_t>(k)] +=
        amplitude * sign * s / (pi * d) * detail::kaiser_lookup(d / kSincHalfTaps);
  }
}

// Reads the whole signal at positions pos(n) = n*rate + offset.
inline std::vector<double> resample_linear_clock(std::span<const double> x, double rate,
                                                 double offset, std::size_t out_len) {
  std::vector<double> y(out_len, 0.0);
  for (std::size_t n_idx = 0; n_idx < out_len; ++n_idx)
    y[n_idx] = sinc_interp_at(x, static_cast<double>(n_idx) * rate + offset);
  return y;
}

}  // namespace asn
