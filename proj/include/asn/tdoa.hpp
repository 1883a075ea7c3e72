#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "asn/common.hpp"
#include "asn/fft_util.hpp"
#include "asn/stft.hpp"

namespace asn {

struct TdoaEstConfig {
  double band_low_hz = 125.0;
  double band_high_hz = 3500.0;
  int avg_frames = 13;       // moving-average span L over GCC frames
  int max_peaks = 5;         // C, candidates kept per pair
  double tau_th = 2.0;       // cyclic-consistency slack, samples
  double peak_std_factor = 2.0;
  int lag_max = 256;         // lag search range, samples
  double vad_margin_db = 10.0;

  void validate(double fs) const {
    if (!(0.0 < band_low_hz && band_low_hz < band_high_hz && band_high_hz <= fs / 2.0))
      throw std::invalid_argument("TdoaEstConfig: bad band limits");
    if (max_peaks < 1 || tau_th < 0.0 || avg_frames < 1 || lag_max < 1)
      throw std::invalid_argument("TdoaEstConfig: bad scalar field");
  }
};

// τ_i with its steered-response score; the spatial signature of one source
// at one frame.
struct TdoaVector {
  std::vector<double> tau;  // pair-ordered, samples
  double srp = 0.0;
  int frame = -1;
};

struct GccTensor {
  int num_pair_rows = 0;
  int num_frames = 0;
  int lag_max = 0;
  int avg_span = 1;
  std::vector<float> values;  // [pair][frame][lag + lag_max]

  int lags() const { return 2 * lag_max + 1; }
  float at(int p, int l, int lag) const {
    return values[(static_cast<std::size_t>(p) * num_frames + l) * lags() + lag + lag_max];
  }
  double interp(int p, int l, double lag) const {
    const double clamped = std::clamp(lag, static_cast<double>(-lag_max), static_cast<double>(lag_max));
    const double f = std::floor(clamped);
    const int lo = static_cast<int>(f);
    const int hi = std::min(lo + 1, lag_max);
    const double w = clamped - f;
    return (1.0 - w) * at(p, l, lo) + w * at(p, l, hi);
  }
  std::vector<float> frame_slice(int p, int l) const {
    const auto begin = values.begin() + (static_cast<std::size_t>(p) * num_frames + l) * lags();
    return std::vector<float>(begin, begin + lags());
  }
};

// Phase-transform cross correlation per pair and frame, then a centered
// moving average over avg_frames frames.
inline GccTensor gcc_phat(const SpectrogramTensor& S, const TdoaEstConfig& cfg) {
  cfg.validate(S.sample_rate_hz);
  if (S.num_channels < 2) throw std::invalid_argument("gcc_phat: need at least 2 channels");
  const int M = S.num_channels;
  const int P = num_pairs(M);
  const int L = S.num_frames;
  const int nfft = S.cfg.fft_len;
  const int n_lags = 2 * cfg.lag_max + 1;
  if (cfg.lag_max >= nfft / 2) throw std::invalid_argument("gcc_phat: lag_max too large for fft_len");

  const int k_low = static_cast<int>(std::ceil(cfg.band_low_hz * nfft / S.sample_rate_hz));
  const int k_high = std::min(S.num_bins - 1,
                              static_cast<int>(std::floor(cfg.band_high_hz * nfft / S.sample_rate_hz)));

  GccTensor g;
  g.num_pair_rows = P;
  g.num_frames = L;
  g.lag_max = cfg.lag_max;
  g.avg_span = cfg.avg_frames;
  g.values.assign(static_cast<std::size_t>(P) * L * n_lags, 0.0f);

  const auto pairs = mic_pairs(M);
  std::vector<cdouble> phat(S.num_bins);
  std::vector<double> raw(static_cast<std::size_t>(L) * n_lags);
  const int half = (cfg.avg_frames - 1) / 2;

  for (int p = 0; p < P; ++p) {
    const auto [m, n] = pairs[p];
    for (int l = 0; l < L; ++l) {
      std::fill(phat.begin(), phat.end(), cdouble(0.0));
      for (int k = k_low; k <= k_high; ++k) {
        const cdouble c = std::conj(S.at(m, l, k)) * S.at(n, l, k);
        const double mag = std::abs(c);
        if (mag > 1e-12) phat[k] = c / mag;
      }
      const auto corr = irfft(phat, nfft);
      for (int lag = -cfg.lag_max; lag <= cfg.lag_max; ++lag)
        raw[static_cast<std::size_t>(l) * n_lags + lag + cfg.lag_max] =
            corr[(lag + nfft) % nfft] * nfft;
    }
    // centered moving average, window clipped at the edges
    for (int lag = 0; lag < n_lags; ++lag) {
      double acc = 0.0;
      int count = 0;
      int lo = 0, hi = -1;  // current accumulated window [lo, hi]
      for (int l = 0; l < L; ++l) {
        const int want_lo = std::max(0, l - half);
        const int want_hi = std::min(L - 1, l + half);
        while (hi < want_hi) {
          ++hi;
          acc += raw[static_cast<std::size_t>(hi) * n_lags + lag];
          ++count;
        }
        while (lo < want_lo) {
          acc -= raw[static_cast<std::size_t>(lo) * n_lags + lag];
          ++lo;
          --count;
        }
        g.values[(static_cast<std::size_t>(p) * L + l) * n_lags + lag] =
            static_cast<float>(acc / count);
      }
    }
  }
  return g;
}

struct GccPeak {
  int lag = 0;
  double score = 0.0;
};

// Strict positive local maxima above peak_std_factor times the slice's
// standard deviation, best first.
inline std::vector<GccPeak> detect_peaks(const std::vector<float>& slice, const TdoaEstConfig& cfg,
                                         int lag_max) {
  if (slice.empty()) throw std::invalid_argument("detect_peaks: empty slice");
  double mean = 0.0;
  for (float v : slice) mean += v;
  mean /= slice.size();
  double var = 0.0;
  for (float v : slice) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / slice.size());
  const double thresh = cfg.peak_std_factor * sd;

  std::vector<GccPeak> peaks;
  for (std::size_t i = 1; i + 1 < slice.size(); ++i) {
    const double v = slice[i];
    if (v > 0.0 && v > slice[i - 1] && v > slice[i + 1] && v > thresh)
      peaks.push_back({static_cast<int>(i) - lag_max, v});
  }
  std::sort(peaks.begin(), peaks.end(), [](const GccPeak& a, const GccPeak& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.lag < b.lag;
  });
  if (static_cast<int>(peaks.size()) > cfg.max_peaks) peaks.resize(cfg.max_peaks);
  return peaks;
}

// Steered response: sum of per-pair GCC values at the vector's lags, linearly
// interpolated at fractional positions.
inline double srp_phat(const std::vector<double>& tau, const GccTensor& g, int frame) {
  if (static_cast<int>(tau.size()) != g.num_pair_rows)
    throw std::invalid_argument("srp_phat: pair count mismatch");
  double acc = 0.0;
  for (int p = 0; p < g.num_pair_rows; ++p) acc += g.interp(p, frame, tau[p]);
  return acc;
}

namespace detail {

// Pairs reordered so that, at assignment time, every triangle involving the
// new pair is already closed: (0,1),(0,2),(1,2),(0,3),(1,3),(2,3),...
inline std::vector<int> combination_pair_order(int M) {
  std::vector<int> order;
  order.reserve(num_pairs(M));
  for (int n = 1; n < M; ++n)
    for (int m = 0; m < n; ++m) order.push_back(pair_index(m, n, M));
  return order;
}

}  // namespace detail

// All selections of one candidate lag per pair whose every microphone triple
// satisfies |τ_mn − τ_mo + τ_on| ≤ τ_th, scored by SRP-PhaT, then filtered so
// that no two emitted vectors agree in more than one element.
inline std::vector<TdoaVector> combine_candidates(
    const std::vector<std::vector<GccPeak>>& candidates, const GccTensor& g, int frame,
    const TdoaEstConfig& cfg, int num_mics) {
  const int P = num_pairs(num_mics);
  if (static_cast<int>(candidates.size()) != P)
    throw std::invalid_argument("combine_candidates: candidate list per pair required");
  for (const auto& c : candidates)
    if (c.empty()) return {};

  const auto order = detail::combination_pair_order(num_mics);
  const auto pairs = mic_pairs(num_mics);

  std::vector<double> assigned(P, 0.0);
  std::vector<TdoaVector> found;

  auto dfs = [&](auto&& self, int depth) -> void {
    if (depth == P) {
      TdoaVector v;
      v.tau = assigned;
      v.frame = frame;
      found.push_back(std::move(v));
      return;
    }
    const int p = order[depth];
    const auto [m, n] = pairs[p];
    for (const auto& cand : candidates[p]) {
      const double t_mn = cand.lag;
      bool ok = true;
      for (int a = 0; a < m && ok; ++a) {
        const double t_am = assigned[pair_index(a, m, num_mics)];
        const double t_an = assigned[pair_index(a, n, num_mics)];
        if (std::abs(t_am - t_an + t_mn) > cfg.tau_th) ok = false;
      }
      if (!ok) continue;
      assigned[p] = t_mn;
      self(self, depth + 1);
    }
  };
  dfs(dfs, 0);

  for (auto& v : found) v.srp = srp_phat(v.tau, g, frame);
  std::sort(found.begin(), found.end(), [](const TdoaVector& a, const TdoaVector& b) {
    if (a.srp != b.srp) return a.srp > b.srp;
    return a.tau < b.tau;
  });

  std::vector<TdoaVector> kept;
  for (auto& v : found) {
    bool distinct = true;
    for (const auto& u : kept) {
      int matches = 0;
      for (int p = 0; p < P; ++p)
        if (std::abs(v.tau[p] - u.tau[p]) <= cfg.tau_th) ++matches;
      if (matches > 1) {
        distinct = false;
        break;
      }
    }
    if (distinct) kept.push_back(std::move(v));
  }
  return kept;
}

// Frame-energy gate. The noise floor is taken as the 1st percentile of frame
// log-energies: busy meetings leave very little silence, so higher
// percentiles already land on quiet speech and would push the threshold into
// the speech bulk. If the energy spread never exceeds the margin the signal
// is unimodal (all speech or all silence) and an absolute floor decides
// instead.
inline std::vector<std::uint8_t> energy_vad(const std::vector<double>& x, const StftConfig& grid,
                                            double margin_db = 10.0) {
  const int L = stft_num_frames(x.size(), grid);
  std::vector<std::uint8_t> vad(std::max(L, 0), 0);
  if (L <= 0) return vad;
  std::vector<double> energy_db(L);
  for (int l = 0; l < L; ++l) {
    double e = 0.0;
    const std::size_t off = static_cast<std::size_t>(l) * grid.frame_shift;
    for (int n = 0; n < grid.frame_len; ++n) e += x[off + n] * x[off + n];
    energy_db[l] = 10.0 * std::log10(e / grid.frame_len + 1e-30);
  }
  auto sorted = energy_db;
  std::sort(sorted.begin(), sorted.end());
  const double floor_est = sorted[static_cast<std::size_t>(0.01 * (L - 1))];
  const double p90 = sorted[static_cast<std::size_t>(0.90 * (L - 1))];
  constexpr double kAbsoluteFloorDb = -90.0;
  const bool bimodal = (p90 - floor_est) >= margin_db;
  const double thresh = bimodal ? floor_est + margin_db : kAbsoluteFloorDb;
  for (int l = 0; l < L; ++l) vad[l] = energy_db[l] > thresh ? 1 : 0;
  return vad;
}

// Multichannel gate: a frame is active when ANY device hears it. A speaker
// close to a far device but distant from a chosen one would otherwise drop
// below that single device's threshold.
inline std::vector<std::uint8_t> energy_vad(const std::vector<std::vector<double>>& channels,
                                            const StftConfig& grid, double margin_db = 10.0) {
  if (channels.empty()) return {};
  std::vector<std::uint8_t> vad;
  for (const auto& ch : channels) {
    const auto v = energy_vad(ch, grid, margin_db);
    if (vad.empty()) vad.assign(v.size(), 0);
    const std::size_t n = std::min(vad.size(), v.size());
    vad.resize(n);
    for (std::size_t l = 0; l < n; ++l) vad[l] = vad[l] || v[l];
  }
  return vad;
}

// Keep the best vector of every voice-active frame; keep runners-up only if
// their score clears (mean − 2·std) of the per-frame maxima.
inline std::vector<std::vector<TdoaVector>> select_frame_tdoas(
    const std::vector<std::vector<TdoaVector>>& per_frame, const std::vector<std::uint8_t>& vad) {
  if (per_frame.size() != vad.size())
    throw std::invalid_argument("select_frame_tdoas: frame count mismatch");
  std::vector<double> maxima;
  for (std::size_t l = 0; l < per_frame.size(); ++l)
    if (vad[l] && !per_frame[l].empty()) {
      double best = per_frame[l].front().srp;
      for (const auto& v : per_frame[l]) best = std::max(best, v.srp);
      maxima.push_back(best);
    }
  double mean = 0.0, sd = 0.0;
  if (!maxima.empty()) {
    for (double v : maxima) mean += v;
    mean /= maxima.size();
    for (double v : maxima) sd += (v - mean) * (v - mean);
    sd = std::sqrt(sd / maxima.size());
  }
  const double floor_score = mean - 2.0 * sd;

  std::vector<std::vector<TdoaVector>> out(per_frame.size());
  for (std::size_t l = 0; l < per_frame.size(); ++l) {
    if (!vad[l] || per_frame[l].empty()) continue;
    auto frame = per_frame[l];
    std::sort(frame.begin(), frame.end(), [](const TdoaVector& a, const TdoaVector& b) {
      if (a.srp != b.srp) return a.srp > b.srp;
      return a.tau < b.tau;
    });
    out[l].push_back(frame.front());
    for (std::size_t i = 1; i < frame.size(); ++i)
      if (frame[i].srp > floor_score) out[l].push_back(frame[i]);
  }
  return out;
}

// Convenience wrapper: full per-frame TDOA estimation from a spectrogram.
inline std::vector<std::vector<TdoaVector>> estimate_frame_tdoas(const SpectrogramTensor& S,
                                                                 const TdoaEstConfig& cfg,
                                                                 const GccTensor& g) {
  const int P = g.num_pair_rows;
  std::vector<std::vector<TdoaVector>> per_frame(g.num_frames);
  std::vector<std::vector<GccPeak>> cands(P);
  for (int l = 0; l < g.num_frames; ++l) {
    for (int p = 0; p < P; ++p) cands[p] = detect_peaks(g.frame_slice(p, l), cfg, g.lag_max);
    per_frame[l] = combine_candidates(cands, g, l, cfg, S.num_channels);
  }
  return per_frame;
}

}  // namespace asn
