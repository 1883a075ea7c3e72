#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "asn/common.hpp"
#include "asn/fft_util.hpp"
#include "asn/interp.hpp"
#include "asn/stft.hpp"
#include "asn/wav.hpp"

namespace asn {

using Point = std::array<double, 3>;

inline double distance(const Point& a, const Point& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

struct Utterance {
  int speaker = 0;
  double onset_s = 0.0;
  double offset_s = 0.0;
  int source_ref = 0;
};

struct SceneConfig {
  std::optional<Point> room_dims;  // absent -> anechoic free field
  std::vector<Point> mic_positions;
  std::vector<Point> source_positions;
  std::vector<Utterance> utterance_plan;
  double snr_db = 30.0;
  double t60_s = 0.0;
  std::vector<int> per_device_sto_samples;
  std::vector<double> per_device_sro_ppm;
  int sample_rate_hz = 16000;
  double speed_of_sound = 343.0;
  double duration_s = 0.0;  // 0 -> derived from the utterance plan
  unsigned seed = 0;

  int num_mics() const { return static_cast<int>(mic_positions.size()); }
  int num_speakers() const { return static_cast<int>(source_positions.size()); }

  void validate() const {
    if (num_mics() < 2) throw std::invalid_argument("SceneConfig: need at least 2 microphones");
    if (num_speakers() < 1) throw std::invalid_argument("SceneConfig: need at least 1 speaker");
    if (sample_rate_hz <= 0 || speed_of_sound <= 0 || t60_s < 0)
      throw std::invalid_argument("SceneConfig: bad scalar field");
    if (!per_device_sto_samples.empty() &&
        per_device_sto_samples.size() != mic_positions.size())
      throw std::invalid_argument("SceneConfig: per_device_sto_samples size mismatch");
    if (!per_device_sro_ppm.empty() && per_device_sro_ppm.size() != mic_positions.size())
      throw std::invalid_argument("SceneConfig: per_device_sro_ppm size mismatch");
    for (double p : per_device_sro_ppm)
      if (std::abs(p) >= 1000.0) throw std::invalid_argument("SceneConfig: |sro_ppm| must be < 1000");
    if (room_dims) {
      auto inside = [&](const Point& p) {
        for (int d = 0; d < 3; ++d)
          if (p[d] < 0.0 || p[d] > (*room_dims)[d]) return false;
        return true;
      };
      for (const auto& p : mic_positions)
        if (!inside(p)) throw std::invalid_argument("SceneConfig: microphone outside room");
      for (const auto& p : source_positions)
        if (!inside(p)) throw std::invalid_argument("SceneConfig: source outside room");
    }
    std::vector<std::vector<std::pair<double, double>>> per_speaker(num_speakers());
    for (const auto& u : utterance_plan) {
      if (u.speaker < 0 || u.speaker >= num_speakers())
        throw std::invalid_argument("SceneConfig: utterance references unknown speaker");
      if (!(u.offset_s > u.onset_s) || u.onset_s < 0.0)
        throw std::invalid_argument("SceneConfig: bad utterance interval");
      per_speaker[u.speaker].emplace_back(u.onset_s, u.offset_s);
    }
    for (auto& iv : per_speaker) {
      std::sort(iv.begin(), iv.end());
      for (std::size_t i = 1; i < iv.size(); ++i)
        if (iv[i].first < iv[i - 1].second)
          throw std::invalid_argument("SceneConfig: overlapping utterances for one speaker");
    }
  }
};

struct GroundTruth {
  std::vector<std::vector<double>> true_tdoa_vectors;  // per speaker, num_pairs(M) entries
  ActivityMatrix activity;
  std::vector<std::vector<double>> clean_sources;  // per-speaker image at channel 0, no clock errors
};

// Pairwise TDOA in samples: how much later the source arrives at mic n than
// at mic m, for every pair (m, n), m < n, in canonical order.
inline std::vector<double> ground_truth_tdoa(const Point& src, const std::vector<Point>& mics,
                                             double fs, double c) {
  if (fs <= 0 || c <= 0) throw std::invalid_argument("ground_truth_tdoa: fs and c must be positive");
  std::vector<double> dist(mics.size());
  for (std::size_t m = 0; m < mics.size(); ++m) {
    dist[m] = distance(src, mics[m]);
    if (dist[m] < 1e-9)
      throw std::invalid_argument("ground_truth_tdoa: source coincides with a microphone");
  }
  std::vector<double> tau;
  tau.reserve(num_pairs(static_cast<int>(mics.size())));
  for (std::size_t m = 0; m < mics.size(); ++m)
    for (std::size_t n = m + 1; n < mics.size(); ++n)
      tau.push_back((dist[n] - dist[m]) * fs / c);
  return tau;
}

// y[n] = x(n·(1 + ppm·1e-6) + sto): a device whose clock runs fast eats
// through the true waveform quicker, and a positive STO means it started
// recording late, so the content is advanced.
inline std::vector<double> apply_sto_sro(const std::vector<double>& x, double sto_samples,
                                         double sro_ppm) {
  return resample_linear_clock(x, 1.0 + sro_ppm * 1e-6, sto_samples, x.size());
}

namespace detail {

// Allen-Berkley image method with uniform Sabine absorption. Amplitudes use
// 1/d spreading to stay consistent with the anechoic direct path.
inline std::vector<double> image_source_ir(const Point& room, const Point& src, const Point& mic,
                                           double fs, double c, double t60) {
  const double V = room[0] * room[1] * room[2];
  const double S = 2.0 * (room[0] * room[1] + room[0] * room[2] + room[1] * room[2]);
  double alpha = 0.161 * V / (S * t60);
  alpha = std::min(alpha, 0.95);
  const double beta = std::sqrt(1.0 - alpha);

  const double d_direct = distance(src, mic);
  const double lmin = std::min({room[0], room[1], room[2]});
  const int order = static_cast<int>(std::ceil(c * t60 / (2.0 * lmin)));
  const double max_dist = std::max(c * t60, 1.5 * d_direct);

  const int len = static_cast<int>(std::lround(max_dist / c * fs)) + 2 * kSincHalfTaps + 4;
  std::vector<double> h(len, 0.0);

  for (int qx = 0; qx <= 1; ++qx)
    for (int qy = 0; qy <= 1; ++qy)
      for (int qz = 0; qz <= 1; ++qz)
        for (int nx = -order; nx <= order; ++nx) {
          const double ix = (1 - 2 * qx) * src[0] + 2.0 * nx * room[0];
          const double dx = ix - mic[0];
          if (std::abs(dx) > max_dist) continue;
          for (int ny = -order; ny <= order; ++ny) {
            const double iy = (1 - 2 * qy) * src[1] + 2.0 * ny * room[1];
            const double dy = iy - mic[1];
            if (std::abs(dy) > max_dist) continue;
            for (int nz = -order; nz <= order; ++nz) {
              const double iz = (1 - 2 * qz) * src[2] + 2.0 * nz * room[2];
              const double dzv = iz - mic[2];
              const double d = std::sqrt(dx * dx + dy * dy + dzv * dzv);
              if (d > max_dist || d < 1e-9) continue;
              const int refl = std::abs(nx - qx) + std::abs(nx) + std::abs(ny - qy) +
                               std::abs(ny) + std::abs(nz - qz) + std::abs(nz);
              const double amp = std::pow(beta, refl) / d;
              const double delay = d * fs / c;
              if (delay + kSincHalfTaps + 1 >= len) continue;
              add_sinc_pulse(h, delay, amp);
            }
          }
        }
  return h;
}

inline std::vector<double> direct_path_ir(const Point& src, const Point& mic, double fs, double c) {
  const double d = distance(src, mic);
  if (d < 1e-9) throw std::invalid_argument("simulate_scene: source coincides with a microphone");
  const double delay = d * fs / c;
  std::vector<double> h(static_cast<int>(std::ceil(delay)) + 2 * kSincHalfTaps + 4, 0.0);
  add_sinc_pulse(h, delay, 1.0 / d);
  return h;
}

inline void apply_edge_ramps(std::vector<double>& seg, int ramp) {
  const int n = static_cast<int>(seg.size());
  const int r = std::min(ramp, n / 2);
  for (int i = 0; i < r; ++i) {
    const double g = 0.5 * (1.0 - std::cos(std::numbers::pi * i / r));
    seg[i] *= g;
    seg[n - 1 - i] *= g;
  }
}

}  // namespace detail

inline std::pair<MultichannelRecording, GroundTruth> simulate_scene(
    const SceneConfig& cfg, const std::vector<std::vector<double>>& source_audio,
    const StftConfig& activity_grid = StftConfig{}) {
  cfg.validate();
  const int M = cfg.num_mics();
  const int I = cfg.num_speakers();
  const double fs = cfg.sample_rate_hz;

  double duration = cfg.duration_s;
  if (duration <= 0.0) {
    for (const auto& u : cfg.utterance_plan) duration = std::max(duration, u.offset_s);
    duration += cfg.t60_s + 0.25;
  }
  const std::size_t N = static_cast<std::size_t>(std::llround(duration * fs));

  // dry per-speaker signals from the utterance plan
  std::vector<std::vector<double>> dry(I, std::vector<double>(N, 0.0));
  const int ramp = static_cast<int>(std::lround(0.005 * fs));
  for (const auto& u : cfg.utterance_plan) {
    if (u.source_ref < 0 || u.source_ref >= static_cast<int>(source_audio.size()))
      throw std::invalid_argument("simulate_scene: utterance references missing source audio");
    const auto& src = source_audio[u.source_ref];
    const std::size_t on = static_cast<std::size_t>(std::llround(u.onset_s * fs));
    const std::size_t off = std::min(N, static_cast<std::size_t>(std::llround(u.offset_s * fs)));
    if (off <= on) continue;
    const std::size_t len = off - on;
    if (src.size() < len)
      throw std::invalid_argument("simulate_scene: source audio shorter than utterance");
    std::vector<double> seg(src.begin(), src.begin() + len);
    detail::apply_edge_ramps(seg, ramp);
    for (std::size_t n = 0; n < len; ++n) dry[u.speaker][on + n] += seg[n];
  }

  const bool reverberant = cfg.room_dims.has_value() && cfg.t60_s > 0.0;

  GroundTruth gt;
  gt.true_tdoa_vectors.reserve(I);
  for (int i = 0; i < I; ++i)
    gt.true_tdoa_vectors.push_back(
        ground_truth_tdoa(cfg.source_positions[i], cfg.mic_positions, fs, cfg.speed_of_sound));

  // propagate
  std::vector<std::vector<double>> mix(M, std::vector<double>(N, 0.0));
  gt.clean_sources.assign(I, {});
  for (int i = 0; i < I; ++i) {
    for (int m = 0; m < M; ++m) {
      const auto h = reverberant
                         ? detail::image_source_ir(*cfg.room_dims, cfg.source_positions[i],
                                                   cfg.mic_positions[m], fs, cfg.speed_of_sound,
                                                   cfg.t60_s)
                         : detail::direct_path_ir(cfg.source_positions[i], cfg.mic_positions[m],
                                                  fs, cfg.speed_of_sound);
      auto img = fft_convolve(dry[i], h);
      img.resize(N, 0.0);
      for (std::size_t n = 0; n < N; ++n) mix[m][n] += img[n];
      if (m == 0) gt.clean_sources[i] = std::move(img);
    }
  }

  // white noise against the speech-active mixture power
  if (std::isfinite(cfg.snr_db) && cfg.snr_db < 300.0) {
    std::vector<uint8_t> active(N, 0);
    for (const auto& u : cfg.utterance_plan) {
      const std::size_t on = static_cast<std::size_t>(std::llround(u.onset_s * fs));
      const std::size_t off = std::min(N, static_cast<std::size_t>(std::llround(u.offset_s * fs)));
      for (std::size_t n = on; n < off; ++n) active[n] = 1;
    }
    double pow_sum = 0.0;
    std::size_t cnt = 0;
    for (std::size_t n = 0; n < N; ++n)
      if (active[n]) {
        for (int m = 0; m < M; ++m) pow_sum += mix[m][n] * mix[m][n];
        cnt += M;
      }
    if (cnt > 0 && pow_sum > 0.0) {
      const double sigma = std::sqrt(pow_sum / cnt) * std::pow(10.0, -cfg.snr_db / 20.0);
      for (int m = 0; m < M; ++m) {
        std::seed_seq sseq{cfg.seed, static_cast<unsigned>(m), 0xa5u};
        std::mt19937 rng(sseq);
        std::normal_distribution<double> g(0.0, sigma);
        for (auto& v : mix[m]) v += g(rng);
      }
    }
  }

  // per-device clock errors
  MultichannelRecording rec;
  rec.sample_rate_hz = cfg.sample_rate_hz;
  for (int m = 0; m < M; ++m) {
    const double sto = cfg.per_device_sto_samples.empty() ? 0.0 : cfg.per_device_sto_samples[m];
    const double sro = cfg.per_device_sro_ppm.empty() ? 0.0 : cfg.per_device_sro_ppm[m];
    if (sto == 0.0 && sro == 0.0)
      rec.channels.push_back(std::move(mix[m]));
    else
      rec.channels.push_back(apply_sto_sro(mix[m], sto, sro));
    rec.device_ids.push_back("dev" + std::to_string(m));
  }

  // activity raster on the analysis frame grid (frame active if its center
  // falls inside an utterance)
  const int L = stft_num_frames(N, activity_grid);
  gt.activity = ActivityMatrix(I, std::max(L, 0), activity_grid.frame_shift_s(cfg.sample_rate_hz));
  for (const auto& u : cfg.utterance_plan)
    for (int l = 0; l < L; ++l) {
      const double center =
          (static_cast<double>(l) * activity_grid.frame_shift + 0.5 * activity_grid.frame_len) / fs;
      if (center >= u.onset_s && center < u.offset_s) gt.activity.set(u.speaker, l, true);
    }

  return {std::move(rec), std::move(gt)};
}

// Speech-shaped test source: low-pass filtered noise with two random
// formant-like resonances per talker and a syllabic-rate amplitude
// modulation, so spectra differ across talkers and level statistics resemble
// running speech.
inline std::vector<double> speech_like_signal(std::size_t n, unsigned seed, int fs = 16000) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> uf(300.0, 2600.0);
  const double f_res1 = uf(rng), f_res2 = uf(rng);
  const double r = 0.94;
  const double c1 = 2.0 * r * std::cos(2.0 * std::numbers::pi * f_res1 / fs);
  const double c2 = 2.0 * r * std::cos(2.0 * std::numbers::pi * f_res2 / fs);

  std::vector<double> x(n);
  double lp1 = 0.0, lp2 = 0.0;
  double r1a = 0.0, r1b = 0.0, r2a = 0.0, r2b = 0.0;
  const double a = std::exp(-2.0 * std::numbers::pi * 900.0 / fs);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = g(rng);
    lp1 = a * lp1 + (1.0 - a) * w;
    lp2 = a * lp2 + (1.0 - a) * lp1;
    const double y1 = w * 0.02 + c1 * r1a - r * r * r1b;
    r1b = r1a;
    r1a = y1;
    const double y2 = w * 0.02 + c2 * r2a - r * r * r2b;
    r2b = r2a;
    r2a = y2;
    x[i] = lp2 + 0.5 * (y1 + y2);
  }
  double rms = 0.0;
  for (double v : x) rms += v * v;
  rms = std::sqrt(rms / std::max<std::size_t>(n, 1));
  if (rms < 1e-12) return x;
  std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
  const double phase_syl = ph(rng), phase_phr = ph(rng);
  const double f_syl = 4.0 + 2.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const double f_phr = 0.4 + 0.3 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double env = (0.75 + 0.25 * std::sin(2.0 * std::numbers::pi * f_syl * t + phase_syl)) *
                       (0.9 + 0.1 * std::sin(2.0 * std::numbers::pi * f_phr * t + phase_phr));
    x[i] = x[i] / rms * 0.1 * env;
  }
  return x;
}

// Round-robin utterance plan with a controllable pairwise overlap ratio:
// each utterance overlaps its predecessor by overlap_ratio of its length.
inline std::vector<Utterance> make_meeting_plan(int num_speakers, double duration_s,
                                                double overlap_ratio, unsigned seed,
                                                double utterance_s = 2.5) {
  if (num_speakers < 1 || duration_s <= 0.0 || overlap_ratio < 0.0 || overlap_ratio >= 1.0)
    throw std::invalid_argument("make_meeting_plan: bad arguments");
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> jitter(0.85, 1.15);
  std::vector<Utterance> plan;
  double cursor = 0.3;
  int spk = static_cast<int>(rng() % static_cast<unsigned>(num_speakers));
  while (true) {
    const double len = utterance_s * jitter(rng);
    const double onset = cursor;
    const double offset = onset + len;
    if (offset > duration_s - 0.1) break;
    plan.push_back({spk, onset, offset, spk});
    // pairwise overlap o giving (overlapped time)/(union speech time) = r is
    // o = len * r / (1 + r)
    const double gap = overlap_ratio > 0.0 ? -(overlap_ratio / (1.0 + overlap_ratio)) * len
                                           : 0.2 * jitter(rng);
    cursor = offset + gap;
    int next = spk;
    while (num_speakers > 1 && next == spk) next = static_cast<int>(rng() % static_cast<unsigned>(num_speakers));
    spk = next;
  }
  return plan;
}

}  // namespace asn
