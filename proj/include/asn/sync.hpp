#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "asn/common.hpp"
#include "asn/fft_util.hpp"
#include "asn/interp.hpp"
#include "asn/wav.hpp"

namespace asn {

struct SyncConfig {
  int reference_channel = 0;
  double sto_search_window_s = 10.0;
  double sto_max_lag_s = 5.0;
  double sro_segment_s = 4.0;
  double sro_segment_overlap = 0.5;
  int sro_max_lag = 512;
  int sro_passes = 2;
  double band_low_hz = 125.0;
  double band_high_hz = 3500.0;
};

struct SyncReport {
  int reference_channel = 0;
  std::vector<int> sto_samples;   // per device; content advance relative to the reference
  std::vector<double> sro_ppm;    // per device; positive = device clock runs fast
};

// How many samples of content the other device missed at the start (positive:
// it started late, so its content is advanced relative to the reference).
inline int estimate_sto(const std::vector<double>& ref, const std::vector<double>& other,
                        double search_window_s, int sample_rate_hz,
                        double max_lag_s = 5.0) {
  const std::size_t win = static_cast<std::size_t>(search_window_s * sample_rate_hz);
  if (win > ref.size() || win > other.size())
    throw std::invalid_argument("estimate_sto: search window longer than signal");
  const int max_lag = std::min<int>(static_cast<int>(max_lag_s * sample_rate_hz),
                                    static_cast<int>(win) - 1);
  const std::vector<double> a(other.begin(), other.begin() + win);
  const std::vector<double> b(ref.begin(), ref.begin() + win);
  const auto cc = cross_correlate(a, b, max_lag);
  return cc.argmax_lag();
}

// Shift every channel by its estimated STO (delay devices that started late),
// zero-filling and trimming to the common aligned length.
inline MultichannelRecording compensate_sto(const MultichannelRecording& rec,
                                            const SyncReport& report) {
  if (report.sto_samples.size() != rec.channels.size())
    throw std::invalid_argument("compensate_sto: report size mismatch");
  MultichannelRecording out;
  out.sample_rate_hz = rec.sample_rate_hz;
  out.device_ids = rec.device_ids;
  std::size_t common = SIZE_MAX;
  for (std::size_t m = 0; m < rec.channels.size(); ++m) {
    const auto& ch = rec.channels[m];
    const long long sto = report.sto_samples[m];
    const long long out_len = static_cast<long long>(ch.size()) + sto;
    std::vector<double> shifted(static_cast<std::size_t>(std::max<long long>(out_len, 0)), 0.0);
    for (long long n = std::max<long long>(0, sto); n < out_len; ++n)
      shifted[static_cast<std::size_t>(n)] = ch[static_cast<std::size_t>(n - sto)];
    common = std::min(common, shifted.size());
    out.channels.push_back(std::move(shifted));
  }
  for (auto& ch : out.channels) ch.resize(common);
  return out;
}

namespace detail {

// Band-limited phase-transform correlation of two equal-length segments;
// peak at λ means `b` lags `a` by λ samples (r(λ) = Σ a[n]·b[n+λ]).
inline std::vector<double> phat_correlation(const std::vector<double>& a,
                                            const std::vector<double>& b, int max_lag,
                                            int sample_rate_hz, double band_low_hz,
                                            double band_high_hz) {
  const std::size_t n = std::min(a.size(), b.size());
  const std::size_t nfft = next_pow2(2 * n);
  std::vector<double> pa(a.begin(), a.begin() + n), pb(b.begin(), b.begin() + n);
  pa.resize(nfft, 0.0);
  pb.resize(nfft, 0.0);
  const auto A = rfft(pa, static_cast<int>(nfft));
  const auto B = rfft(pb, static_cast<int>(nfft));
  const int k_low = static_cast<int>(std::ceil(band_low_hz * nfft / sample_rate_hz));
  const int k_high = std::min<int>(static_cast<int>(A.size()) - 1,
                                   static_cast<int>(std::floor(band_high_hz * nfft / sample_rate_hz)));
  std::vector<cdouble> phi(A.size(), cdouble(0.0));
  for (int k = k_low; k <= k_high; ++k) {
    const cdouble c = std::conj(A[k]) * B[k];
    const double mag = std::abs(c);
    if (mag > 1e-12) phi[k] = c / mag;
  }
  const auto corr = irfft(phi, static_cast<int>(nfft));
  std::vector<double> out(2 * max_lag + 1);
  for (int lag = -max_lag; lag <= max_lag; ++lag)
    out[lag + max_lag] = corr[(lag + static_cast<int>(nfft)) % nfft];
  return out;
}

struct SegmentPeak {
  double t_center = 0.0;  // samples
  double lag = 0.0;       // samples, sub-sample refined
};

}  // namespace detail

// Drift slope of the other device relative to the reference, in ppm.
// Tracks the band-limited GCC peak across overlapping segments and fits a
// robust (Theil-Sen) line through the accepted peaks.
inline double estimate_sro(const std::vector<double>& ref, const std::vector<double>& other,
                           int sample_rate_hz, const SyncConfig& cfg = SyncConfig{}) {
  const std::size_t n = std::min(ref.size(), other.size());
  const std::size_t seg = static_cast<std::size_t>(cfg.sro_segment_s * sample_rate_hz);
  const std::size_t hop =
      std::max<std::size_t>(1, static_cast<std::size_t>(seg * (1.0 - cfg.sro_segment_overlap)));
  if (seg == 0 || n < seg) throw std::invalid_argument("estimate_sro: signal shorter than a segment");

  std::vector<detail::SegmentPeak> peaks;
  for (std::size_t start = 0; start + seg <= n; start += hop) {
    const std::vector<double> a(other.begin() + start, other.begin() + start + seg);
    const std::vector<double> b(ref.begin() + start, ref.begin() + start + seg);
    const auto slice = detail::phat_correlation(a, b, cfg.sro_max_lag, sample_rate_hz,
                                                cfg.band_low_hz, cfg.band_high_hz);
    // peak-quality gate: strict positive local maximum above twice the
    // slice's standard deviation
    int best = -1;
    double best_v = 0.0;
    for (std::size_t i = 1; i + 1 < slice.size(); ++i)
      if (slice[i] > best_v && slice[i] > slice[i - 1] && slice[i] > slice[i + 1]) {
        best_v = slice[i];
        best = static_cast<int>(i);
      }
    if (best < 0) continue;
    double mean = 0.0;
    for (double v : slice) mean += v;
    mean /= slice.size();
    double var = 0.0;
    for (double v : slice) var += (v - mean) * (v - mean);
    if (best_v <= 2.0 * std::sqrt(var / slice.size())) continue;
    const double frac = parabolic_offset(slice[best - 1], slice[best], slice[best + 1]);
    peaks.push_back({static_cast<double>(start) + seg / 2.0,
                     static_cast<double>(best - cfg.sro_max_lag) + frac});
  }
  if (peaks.size() < 3) throw std::runtime_error("estimate_sro: insufficient coherent segments");

  // Theil-Sen slope over all segment pairs
  std::vector<double> slopes;
  slopes.reserve(peaks.size() * (peaks.size() - 1) / 2);
  for (std::size_t i = 0; i < peaks.size(); ++i)
    for (std::size_t j = i + 1; j < peaks.size(); ++j) {
      const double dt = peaks[j].t_center - peaks[i].t_center;
      if (dt > 0) slopes.push_back((peaks[j].lag - peaks[i].lag) / dt);
    }
  std::nth_element(slopes.begin(), slopes.begin() + slopes.size() / 2, slopes.end());
  return slopes[slopes.size() / 2] * 1e6;
}

// Undo a clock that runs fast by sro_ppm: z[n] = y(n / (1 + ppm·1e−6)).
inline std::vector<double> resample_sro(const std::vector<double>& x, double sro_ppm) {
  if (std::abs(sro_ppm) >= 1000.0)
    throw std::invalid_argument("resample_sro: |sro_ppm| must be < 1000");
  if (sro_ppm == 0.0) return x;
  return resample_linear_clock(x, 1.0 / (1.0 + sro_ppm * 1e-6), 0.0, x.size());
}

// Full coarse synchronization: STO against the reference channel, then
// iterative SRO estimation + resampling (a second pass removes the bias the
// initial drift leaves inside each correlation segment).
inline std::pair<MultichannelRecording, SyncReport> synchronize(const MultichannelRecording& rec,
                                                                const SyncConfig& cfg = SyncConfig{}) {
  const int M = rec.num_channels();
  if (M < 2) throw std::invalid_argument("synchronize: need at least 2 channels");
  if (cfg.reference_channel < 0 || cfg.reference_channel >= M)
    throw std::invalid_argument("synchronize: bad reference channel");

  SyncReport report;
  report.reference_channel = cfg.reference_channel;
  report.sto_samples.assign(M, 0);
  report.sro_ppm.assign(M, 0.0);

  const auto& ref = rec.channels[cfg.reference_channel];
  for (int m = 0; m < M; ++m) {
    if (m == cfg.reference_channel) continue;
    report.sto_samples[m] = estimate_sto(ref, rec.channels[m], cfg.sto_search_window_s,
                                         rec.sample_rate_hz, cfg.sto_max_lag_s);
  }
  MultichannelRecording out = compensate_sto(rec, report);

  const auto& ref2 = out.channels[cfg.reference_channel];
  for (int m = 0; m < M; ++m) {
    if (m == cfg.reference_channel) continue;
    double rate = 1.0;
    for (int pass = 0; pass < cfg.sro_passes; ++pass) {
      const double ppm = estimate_sro(ref2, out.channels[m], out.sample_rate_hz, cfg);
      out.channels[m] = resample_sro(out.channels[m], ppm);
      rate *= 1.0 + ppm * 1e-6;
    }
    report.sro_ppm[m] = (rate - 1.0) * 1e6;
  }

  // the first STO pass absorbs part of the not-yet-compensated drift; with the
  // clocks aligned, a residual pass brings it back within the acoustic spread
  SyncReport residual;
  residual.sto_samples.assign(M, 0);
  bool any = false;
  for (int m = 0; m < M; ++m) {
    if (m == cfg.reference_channel) continue;
    residual.sto_samples[m] = estimate_sto(out.channels[cfg.reference_channel], out.channels[m],
                                           cfg.sto_search_window_s, out.sample_rate_hz,
                                           cfg.sto_max_lag_s);
    report.sto_samples[m] += residual.sto_samples[m];
    any = any || residual.sto_samples[m] != 0;
  }
  if (any) out = compensate_sto(out, residual);
  return {std::move(out), std::move(report)};
}

}  // namespace asn
