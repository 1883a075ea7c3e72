#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "asn/common.hpp"
#include "asn/diarize.hpp"
#include "asn/gss.hpp"
#include "asn/stft.hpp"

namespace asn {

struct BeamformConfig {
  double activity_threshold = 0.2;  // on per-frame mask averages
  int min_subsegment_frames = 5;
  int dilate_frames = 25;
  int erode_frames = 15;
};

struct SubSegment {
  int begin = 0;
  int end = 0;  // [begin, end)
};

struct Segment {
  int begin = 0;
  int end = 0;
  std::vector<SubSegment> subs;
};

struct SegmentPlan {
  std::vector<std::vector<Segment>> per_speaker;
};

// Frame-level class activity from the mask averages over frequency,
// thresholded and closed with the diarization smoothing filter. Segments are
// maximal runs of target activity; sub-segments split wherever the set of
// active interfering speakers changes, with runts merged into their left
// neighbor.
inline SegmentPlan resegment(const MaskSet& masks, const BeamformConfig& cfg = BeamformConfig{}) {
  const int I = masks.num_classes - 1;  // speakers, noise excluded
  const int L = masks.num_frames;
  ActivityMatrix act(I, L, 0.0);
  for (int i = 0; i < I; ++i)
    for (int l = 0; l < L; ++l) {
      double s = 0.0;
      for (int k = 0; k < masks.num_bins; ++k) s += masks.at(i, l, k);
      act.set(i, l, s / masks.num_bins > cfg.activity_threshold);
    }
  act = smooth_activity(act, cfg.dilate_frames, cfg.erode_frames);

  SegmentPlan plan;
  plan.per_speaker.resize(I);
  for (int i = 0; i < I; ++i) {
    int b = -1;
    for (int l = 0; l <= L; ++l) {
      const bool on = l < L && act.get(i, l);
      if (on && b < 0) b = l;
      if (!on && b >= 0) {
        Segment seg;
        seg.begin = b;
        seg.end = l;
        // sub-segment boundaries at interferer-set change points
        auto interferers = [&](int frame) {
          std::uint64_t bits = 0;
          for (int j = 0; j < I; ++j)
            if (j != i && act.get(j, frame)) bits |= std::uint64_t{1} << j;
          return bits;
        };
        int sb = b;
        std::uint64_t cur = interferers(b);
        for (int f = b + 1; f <= l; ++f) {
          const std::uint64_t next = f < l ? interferers(f) : ~cur;
          if (next != cur) {
            seg.subs.push_back({sb, f});
            sb = f;
            cur = next;
          }
        }
        for (std::size_t s = 0; s + 1 < seg.subs.size();) {
          if (seg.subs[s].end - seg.subs[s].begin < cfg.min_subsegment_frames) {
            if (s == 0) {
              seg.subs[1].begin = seg.subs[0].begin;
              seg.subs.erase(seg.subs.begin());
            } else {
              seg.subs[s - 1].end = seg.subs[s].end;
              seg.subs.erase(seg.subs.begin() + s);
            }
          } else {
            ++s;
          }
        }
        if (seg.subs.size() > 1) {
          auto& last = seg.subs.back();
          if (last.end - last.begin < cfg.min_subsegment_frames) {
            seg.subs[seg.subs.size() - 2].end = last.end;
            seg.subs.pop_back();
          }
        }
        plan.per_speaker[i].push_back(std::move(seg));
        b = -1;
      }
    }
  }
  return plan;
}

// Phi_i(k) = 1/|T| sum over the segment of gamma^2 * Y Y^H; the squared mask
// suppresses cross-talk harder than the raw posterior would.
inline std::vector<Eigen::MatrixXcd> estimate_target_scm(const SpectrogramTensor& S,
                                                         const MaskSet& masks, int speaker,
                                                         int begin, int end) {
  if (begin >= end) throw std::invalid_argument("estimate_target_scm: empty segment");
  const int M = S.num_channels, K = S.num_bins;
  std::vector<Eigen::MatrixXcd> phi(K, Eigen::MatrixXcd::Zero(M, M));
  Eigen::VectorXcd y(M);
  for (int l = begin; l < end; ++l)
    for (int k = 0; k < K; ++k) {
      const double g = masks.at(speaker, l, k);
      if (g <= 0.0) continue;
      for (int m = 0; m < M; ++m) y(m) = S.at(m, l, k);
      phi[k].noalias() += (g * g) * (y * y.adjoint());
    }
  const double inv = 1.0 / (end - begin);
  for (auto& p : phi) p *= inv;
  return phi;
}

inline std::vector<Eigen::MatrixXcd> estimate_interference_scm(const SpectrogramTensor& S,
                                                               const MaskSet& masks, int speaker,
                                                               int begin, int end) {
  if (begin >= end) throw std::invalid_argument("estimate_interference_scm: empty sub-segment");
  const int M = S.num_channels, K = S.num_bins;
  std::vector<Eigen::MatrixXcd> phi(K, Eigen::MatrixXcd::Zero(M, M));
  Eigen::VectorXcd y(M);
  for (int l = begin; l < end; ++l)
    for (int k = 0; k < K; ++k) {
      const double g = 1.0 - masks.at(speaker, l, k);
      if (g <= 0.0) continue;
      for (int m = 0; m < M; ++m) y(m) = S.at(m, l, k);
      phi[k].noalias() += (g * g) * (y * y.adjoint());
    }
  const double inv = 1.0 / (end - begin);
  for (auto& p : phi) p *= inv;
  return phi;
}

// w = (Phi_int^-1 Phi_target / trace(Phi_int^-1 Phi_target)) u_ref. Diagonal
// loading keeps the interference matrix invertible; degenerate bins fall back
// to plain reference-channel pickup.
inline Eigen::VectorXcd mvdr_souden(const Eigen::MatrixXcd& target,
                                    const Eigen::MatrixXcd& interference, int ref) {
  const int M = static_cast<int>(target.rows());
  Eigen::VectorXcd u = Eigen::VectorXcd::Zero(M);
  u(ref) = 1.0;
  const double tr_int = interference.real().trace();
  if (!(tr_int > 1e-12)) return u;
  Eigen::MatrixXcd loaded =
      interference + (1e-6 * tr_int / M) * Eigen::MatrixXcd::Identity(M, M);
  const Eigen::MatrixXcd num = loaded.ldlt().solve(target);
  const double tr = num.real().trace();
  if (!(tr > 1e-12)) return u;
  return (num / tr) * u;
}

// Expected output SDR of a candidate reference channel is the worst
// sub-segment's ratio of beamformed target power to beamformed interference
// power, both summed over frequency; pick the channel whose worst case is
// best.
inline int select_reference(const std::vector<Eigen::MatrixXcd>& target,
                            const std::vector<std::vector<Eigen::MatrixXcd>>& interference_subs) {
  if (interference_subs.empty())
    throw std::invalid_argument("select_reference: need at least one sub-segment");
  const int M = static_cast<int>(target.front().rows());
  const int K = static_cast<int>(target.size());
  int best_ref = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int ref = 0; ref < M; ++ref) {
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& phis : interference_subs) {
      double num = 0.0, den = 0.0;
      for (int k = 0; k < K; ++k) {
        const Eigen::VectorXcd w = mvdr_souden(target[k], phis[k], ref);
        num += std::real(w.dot(target[k] * w));
        den += std::real(w.dot(phis[k] * w));
      }
      const double sdr = 10.0 * std::log10(std::max(num, 1e-300) / std::max(den, 1e-300));
      worst = std::min(worst, sdr);
    }
    if (worst > best_score) {
      best_score = worst;
      best_ref = ref;
    }
  }
  return best_ref;
}

// Beamform every segment of one speaker and synthesize; frames outside the
// speaker's segments stay zero.
struct SegmentTrace {
  int begin = 0;
  int end = 0;
  int ref_channel = 0;
};

inline std::vector<double> extract_speaker(const SpectrogramTensor& S, const MaskSet& masks,
                                           const SegmentPlan& plan, int speaker,
                                           std::size_t target_len = 0,
                                           std::vector<SegmentTrace>* trace = nullptr) {
  if (masks.num_frames != S.num_frames)
    throw std::invalid_argument("extract_speaker: masks must cover the full recording");
  if (speaker < 0 || speaker >= static_cast<int>(plan.per_speaker.size()))
    throw std::invalid_argument("extract_speaker: unknown speaker");
  const int K = S.num_bins;

  std::vector<std::vector<cdouble>> frames(S.num_frames, std::vector<cdouble>(K, cdouble(0.0)));
  Eigen::VectorXcd y(S.num_channels);
  for (const auto& seg : plan.per_speaker[speaker]) {
    const auto phi_t = estimate_target_scm(S, masks, speaker, seg.begin, seg.end);
    std::vector<std::vector<Eigen::MatrixXcd>> phi_subs;
    for (const auto& sub : seg.subs)
      phi_subs.push_back(estimate_interference_scm(S, masks, speaker, sub.begin, sub.end));
    const int ref = select_reference(phi_t, phi_subs);
    if (trace) trace->push_back({seg.begin, seg.end, ref});
    for (std::size_t b = 0; b < seg.subs.size(); ++b) {
      std::vector<Eigen::VectorXcd> w(K);
      for (int k = 0; k < K; ++k) w[k] = mvdr_souden(phi_t[k], phi_subs[b][k], ref);
      for (int l = seg.subs[b].begin; l < seg.subs[b].end; ++l)
        for (int k = 0; k < K; ++k) {
          for (int m = 0; m < S.num_channels; ++m) y(m) = S.at(m, l, k);
          frames[l][k] = w[k].dot(y);
        }
    }
  }
  return istft_mono(frames, S.cfg, target_len);
}

}  // namespace asn
