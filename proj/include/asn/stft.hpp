#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "asn/common.hpp"
#include "asn/fft_util.hpp"
#include "asn/wav.hpp"

namespace asn {

struct StftConfig {
  int frame_len = 1024;
  int frame_shift = 256;
  int fft_len = 1024;
  std::string window = "hann";

  void validate() const {
    if (frame_len <= 0 || frame_shift <= 0 || fft_len < frame_len)
      throw std::invalid_argument("StftConfig: frame_len/frame_shift/fft_len out of range");
    if (frame_len % frame_shift != 0)
      throw std::invalid_argument("StftConfig: frame_shift must divide frame_len");
    if (window != "hann") throw std::invalid_argument("StftConfig: unknown window " + window);
  }
  int num_bins() const { return fft_len / 2 + 1; }
  double frame_shift_s(int sample_rate_hz) const {
    return static_cast<double>(frame_shift) / sample_rate_hz;
  }
};

// Periodic Hann; COLA-compatible at any shift dividing the length.
inline std::vector<double> make_window(const StftConfig& cfg) {
  std::vector<double> w(cfg.frame_len);
  for (int n = 0; n < cfg.frame_len; ++n)
    w[n] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * n / cfg.frame_len));
  return w;
}

// Sum of squared shifted windows must be constant for WOLA with matching
// analysis/synthesis tapers.
inline bool check_cola(const StftConfig& cfg, double tol = 1e-10) {
  const auto w = make_window(cfg);
  const int overlap_count = cfg.frame_len / cfg.frame_shift;
  std::vector<double> acc(cfg.frame_shift, 0.0);
  for (int l = 0; l < overlap_count; ++l)
    for (int n = 0; n < cfg.frame_shift; ++n) acc[n] += w[l * cfg.frame_shift + n] * w[l * cfg.frame_shift + n];
  for (int n = 1; n < cfg.frame_shift; ++n)
    if (std::abs(acc[n] - acc[0]) > tol) return false;
  return acc[0] > tol;
}

struct SpectrogramTensor {
  StftConfig cfg;
  int sample_rate_hz = 16000;
  int num_channels = 0;
  int num_frames = 0;
  int num_bins = 0;
  std::vector<cdouble> data;  // [m][l][k] row-major

  cdouble& at(int m, int l, int k) {
    return data[(static_cast<std::size_t>(m) * num_frames + l) * num_bins + k];
  }
  const cdouble& at(int m, int l, int k) const {
    return data[(static_cast<std::size_t>(m) * num_frames + l) * num_bins + k];
  }

  // Y(l,k): microphone vector at one TF bin.
  Eigen::VectorXcd stacked(int l, int k) const {
    Eigen::VectorXcd y(num_channels);
    for (int m = 0; m < num_channels; ++m) y(m) = at(m, l, k);
    return y;
  }

  double bin_hz(int k) const { return static_cast<double>(k) * sample_rate_hz / cfg.fft_len; }
  double frame_center_s(int l) const {
    return (static_cast<double>(l) * cfg.frame_shift + 0.5 * cfg.frame_len) / sample_rate_hz;
  }
};

inline int stft_num_frames(std::size_t signal_len, const StftConfig& cfg) {
  if (signal_len < static_cast<std::size_t>(cfg.frame_len)) return 0;
  return static_cast<int>((signal_len - cfg.frame_len) / cfg.frame_shift) + 1;
}

inline SpectrogramTensor stft(const std::vector<std::vector<double>>& channels,
                              const StftConfig& cfg, int sample_rate_hz = 16000) {
  cfg.validate();
  if (channels.empty()) throw std::invalid_argument("stft: no channels");
  std::size_t len = channels.front().size();
  for (const auto& c : channels) len = std::min(len, c.size());
  const int L = stft_num_frames(len, cfg);
  if (L <= 0) throw std::invalid_argument("stft: channel shorter than one frame");

  SpectrogramTensor S;
  S.cfg = cfg;
  S.sample_rate_hz = sample_rate_hz;
  S.num_channels = static_cast<int>(channels.size());
  S.num_frames = L;
  S.num_bins = cfg.num_bins();
  S.data.resize(static_cast<std::size_t>(S.num_channels) * L * S.num_bins);

  const auto w = make_window(cfg);
  std::vector<double> frame(cfg.fft_len, 0.0);
  for (int m = 0; m < S.num_channels; ++m) {
    const auto& x = channels[m];
    for (int l = 0; l < L; ++l) {
      const std::size_t off = static_cast<std::size_t>(l) * cfg.frame_shift;
      for (int n = 0; n < cfg.frame_len; ++n) frame[n] = x[off + n] * w[n];
      std::fill(frame.begin() + cfg.frame_len, frame.end(), 0.0);
      const auto spec = rfft(frame, cfg.fft_len);
      std::copy(spec.begin(), spec.end(), S.data.begin() + (static_cast<std::size_t>(m) * L + l) * S.num_bins);
    }
  }
  return S;
}

inline SpectrogramTensor stft(const MultichannelRecording& rec, const StftConfig& cfg) {
  return stft(rec.channels, cfg, rec.sample_rate_hz);
}

// WOLA synthesis with the analysis taper reused on synthesis; division by the
// accumulated squared-window envelope makes the round trip exact wherever that
// envelope is full (the interior).
inline std::vector<std::vector<double>> istft(const SpectrogramTensor& S) {
  S.cfg.validate();
  const StftConfig& cfg = S.cfg;
  const auto w = make_window(cfg);
  const std::size_t out_len =
      static_cast<std::size_t>(S.num_frames - 1) * cfg.frame_shift + cfg.frame_len;

  std::vector<double> wsum(out_len, 0.0);
  for (int l = 0; l < S.num_frames; ++l) {
    const std::size_t off = static_cast<std::size_t>(l) * cfg.frame_shift;
    for (int n = 0; n < cfg.frame_len; ++n) wsum[off + n] += w[n] * w[n];
  }

  std::vector<std::vector<double>> out(S.num_channels, std::vector<double>(out_len, 0.0));
  std::vector<cdouble> half(S.num_bins);
  for (int m = 0; m < S.num_channels; ++m) {
    auto& y = out[m];
    for (int l = 0; l < S.num_frames; ++l) {
      std::copy(S.data.begin() + (static_cast<std::size_t>(m) * S.num_frames + l) * S.num_bins,
                S.data.begin() + (static_cast<std::size_t>(m) * S.num_frames + l + 1) * S.num_bins,
                half.begin());
      const auto frame = irfft(half, cfg.fft_len);
      const std::size_t off = static_cast<std::size_t>(l) * cfg.frame_shift;
      for (int n = 0; n < cfg.frame_len; ++n) y[off + n] += frame[n] * w[n];
    }
    for (std::size_t n = 0; n < out_len; ++n)
      if (wsum[n] > 1e-12) y[n] /= wsum[n];
  }
  return out;
}

inline std::vector<double> istft_mono(const std::vector<std::vector<cdouble>>& frames,
                                      const StftConfig& cfg, std::size_t target_len = 0) {
  SpectrogramTensor S;
  S.cfg = cfg;
  S.num_channels = 1;
  S.num_frames = static_cast<int>(frames.size());
  S.num_bins = cfg.num_bins();
  S.data.reserve(static_cast<std::size_t>(S.num_frames) * S.num_bins);
  for (const auto& f : frames) {
    if (static_cast<int>(f.size()) != S.num_bins)
      throw std::invalid_argument("istft_mono: bin count mismatch");
    S.data.insert(S.data.end(), f.begin(), f.end());
  }
  auto y = istft(S).front();
  if (target_len > 0) y.resize(target_len, 0.0);
  return y;
}

}  // namespace asn
