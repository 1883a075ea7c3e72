#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "asn/common.hpp"

namespace asn {

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Forward DFT of a real signal, one-sided spectrum of length nfft/2+1.
inline std::vector<cdouble> rfft(std::span<const double> x, int nfft) {
  std::vector<cdouble> in(nfft, cdouble(0.0, 0.0));
  const std::size_t n = std::min<std::size_t>(x.size(), nfft);
  for (std::size_t i = 0; i < n; ++i) in[i] = cdouble(x[i], 0.0);
  Eigen::FFT<double> fft;
  std::vector<cdouble> out(nfft);
  fft.fwd(out, in);
  out.resize(nfft / 2 + 1);
  return out;
}

// Expand a one-sided spectrum to the full Hermitian spectrum of length nfft.
inline std::vector<cdouble> expand_hermitian(std::span<const cdouble> half, int nfft) {
  std::vector<cdouble> full(nfft, cdouble(0.0, 0.0));
  const int k_max = std::min(static_cast<int>(half.size()), nfft / 2 + 1);
  for (int k = 0; k < k_max; ++k) full[k] = half[k];
  for (int k = 1; k < k_max; ++k) {
    if (nfft - k > nfft / 2) full[nfft - k] = std::conj(half[k]);
  }
  return full;
}

// Inverse DFT of a one-sided spectrum back to a real signal of length nfft.
inline std::vector<double> irfft(std::span<const cdouble> half, int nfft) {
  std::vector<cdouble> full = expand_hermitian(half, nfft);
  Eigen::FFT<double> fft;
  std::vector<cdouble> out(nfft);
  fft.inv(out, full);
  std::vector<double> res(nfft);
  for (int i = 0; i < nfft; ++i) res[i] = out[i].real();
  return res;
}

// Linear convolution via FFT overlap-add.
inline std::vector<double> fft_convolve(std::span<const double> x, std::span<const double> h) {
  if (x.empty() || h.empty()) return {};
  const std::size_t ly = x.size() + h.size() - 1;
  const std::size_t nfft = std::max<std::size_t>(next_pow2(2 * h.size()), 8192);
  const std::size_t step = nfft - h.size() + 1;

  Eigen::FFT<double> fft;
  std::vector<cdouble> hbuf(nfft, cdouble(0, 0));
  for (std::size_t i = 0; i < h.size(); ++i) hbuf[i] = cdouble(h[i], 0);
  std::vector<cdouble> hspec(nfft);
  fft.fwd(hspec, hbuf);

  std::vector<double> y(ly, 0.0);
  std::vector<cdouble> xbuf(nfft), xspec(nfft), block(nfft);
  for (std::size_t start = 0; start < x.size(); start += step) {
    const std::size_t len = std::min(step, x.size() - start);
    std::fill(xbuf.begin(), xbuf.end(), cdouble(0, 0));
    for (std::size_t i = 0; i < len; ++i) xbuf[i] = cdouble(x[start + i], 0);
    fft.fwd(xspec, xbuf);
    for (std::size_t i = 0; i < nfft; ++i) xspec[i] *= hspec[i];
    fft.inv(block, xspec);
    const std::size_t out_len = std::min(nfft, ly - start);
    for (std::size_t i = 0; i < out_len; ++i) y[start + i] += block[i].real();
  }
  return y;
}

// Cross-correlation r(lag) = sum_n a[n]*b[n+lag] for lag in [-max_lag, max_lag].
// values[i] corresponds to lag = i - max_lag.
struct CrossCorrelation {
  std::vector<double> values;
  int max_lag = 0;

  double at_lag(int lag) const { return values[static_cast<std::size_t>(lag + max_lag)]; }
  int argmax_lag() const {
    const auto it = std::max_element(values.begin(), values.end());
    return static_cast<int>(it - values.begin()) - max_lag;
  }
};

inline CrossCorrelation cross_correlate(std::span<const double> a, std::span<const double> b,
                                        int max_lag) {
  if (a.empty() || b.empty()) throw std::invalid_argument("cross_correlate: empty input");
  const std::size_t nfft = next_pow2(a.size() + b.size());
  Eigen::FFT<double> fft;
  std::vector<cdouble> abuf(nfft, cdouble(0, 0)), bbuf(nfft, cdouble(0, 0));
  for (std::size_t i = 0; i < a.size(); ++i) abuf[i] = cdouble(a[i], 0);
  for (std::size_t i = 0; i < b.size(); ++i) bbuf[i] = cdouble(b[i], 0);
  std::vector<cdouble> aspec(nfft), bspec(nfft);
  fft.fwd(aspec, abuf);
  fft.fwd(bspec, bbuf);
  for (std::size_t i = 0; i < nfft; ++i) aspec[i] = std::conj(aspec[i]) * bspec[i];
  std::vector<cdouble> corr(nfft);
  fft.inv(corr, aspec);

  CrossCorrelation out;
  out.max_lag = max_lag;
  out.values.resize(2 * static_cast<std::size_t>(max_lag) + 1);
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    const std::size_t idx = lag >= 0 ? static_cast<std::size_t>(lag)
                                     : nfft - static_cast<std::size_t>(-lag);
    out.values[static_cast<std::size_t>(lag + max_lag)] = corr[idx % nfft].real();
  }
  return out;
}

// Sub-sample peak refinement by fitting a parabola through the three samples
// around an integer peak. Returns the fractional lag offset in [-0.5, 0.5].
inline double parabolic_offset(double left, double center, double right) {
  const double denom = left - 2.0 * center + right;
  if (std::abs(denom) < 1e-300) return 0.0;
  double off = 0.5 * (left - right) / denom;
  return std::clamp(off, -0.5, 0.5);
}

}  // namespace asn
