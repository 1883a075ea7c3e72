#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "asn/common.hpp"
#include "asn/tdoa.hpp"

namespace asn {

struct DiarizeConfig {
  double eps_lf = 2.0;        // leader-follower gate, max-abs samples
  double recency_s = 1.0;     // how far back a leader may lie
  double msd_abort = 4.0;     // single-linkage stop, samples^2
  double tau_match = 2.0;     // element match tolerance for pruning
  double min_leader_rate = 0.15;  // see prune_clusters
  int min_group_frames = 25;      // drop micro-groups (reverberant debris) below this activity
  int dilate_frames = 25;
  int erode_frames = 15;
};

// Temporally local cluster, roughly one utterance of one speaker.
struct LocalCluster {
  std::vector<TdoaVector> members;  // frames strictly increasing

  const TdoaVector& leader() const { return members.back(); }

  std::vector<double> representative() const {
    const std::size_t P = members.front().tau.size();
    std::vector<double> rep(P);
    std::vector<double> col(members.size());
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t i = 0; i < members.size(); ++i) col[i] = members[i].tau[p];
      std::nth_element(col.begin(), col.begin() + col.size() / 2, col.end());
      rep[p] = col[col.size() / 2];
    }
    return rep;
  }
};

namespace detail {

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

inline double mean_sq_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return a.empty() ? 0.0 : s / a.size();
}

}  // namespace detail

// Each vector joins the nearest live cluster (leader within recency, max-abs
// distance within the gate, at most one member per frame) or founds a new one;
// the joining vector becomes the cluster's new leader.
inline std::vector<LocalCluster> leader_follower(const std::vector<std::vector<TdoaVector>>& per_frame,
                                                 double frame_shift_s,
                                                 const DiarizeConfig& cfg = DiarizeConfig{}) {
  const int recency_frames = std::max(1, static_cast<int>(std::round(cfg.recency_s / frame_shift_s)));
  std::vector<LocalCluster> clusters;
  for (std::size_t l = 0; l < per_frame.size(); ++l) {
    for (const auto& v : per_frame[l]) {
      int best = -1;
      double best_dist = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < clusters.size(); ++c) {
        const auto& lead = clusters[c].leader();
        if (static_cast<int>(l) - lead.frame > recency_frames) continue;
        if (lead.frame >= static_cast<int>(l)) continue;  // one member per frame
        const double d = detail::max_abs_diff(v.tau, lead.tau);
        if (d <= cfg.eps_lf && d < best_dist) {
          best_dist = d;
          best = static_cast<int>(c);
        }
      }
      TdoaVector member = v;
      member.frame = static_cast<int>(l);
      if (best >= 0) {
        clusters[best].members.push_back(std::move(member));
      } else {
        clusters.push_back(LocalCluster{{std::move(member)}});
      }
    }
  }
  return clusters;
}

// Agglomerative single linkage over cluster representatives with a
// mean-squared-difference metric; merging stops at the abort threshold.
// Returns groups as lists of cluster indices.
inline std::vector<std::vector<int>> single_linkage(const std::vector<LocalCluster>& clusters,
                                                    double msd_abort) {
  if (clusters.empty()) return {};
  std::vector<std::vector<double>> reps;
  reps.reserve(clusters.size());
  for (const auto& c : clusters) reps.push_back(c.representative());

  std::vector<std::vector<int>> groups;
  for (int i = 0; i < static_cast<int>(clusters.size()); ++i) groups.push_back({i});
  while (groups.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < groups.size(); ++i)
      for (std::size_t j = i + 1; j < groups.size(); ++j) {
        double d = std::numeric_limits<double>::infinity();
        for (int a : groups[i])
          for (int b : groups[j]) d = std::min(d, detail::mean_sq_diff(reps[a], reps[b]));
        if (d < best) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    if (best > msd_abort) break;
    groups[bi].insert(groups[bi].end(), groups[bj].begin(), groups[bj].end());
    groups.erase(groups.begin() + bj);
  }
  return groups;
}

// One global speaker hypothesis: the frames its member vectors cover and the
// element-wise median over all of them.
struct SpeakerGroup {
  std::vector<int> frames;  // sorted, unique
  std::vector<double> representative;
  std::vector<TdoaVector> members;
};

inline SpeakerGroup make_speaker_group(const std::vector<LocalCluster>& clusters,
                                       const std::vector<int>& indices) {
  SpeakerGroup g;
  for (int c : indices)
    for (const auto& m : clusters[c].members) g.members.push_back(m);
  std::sort(g.members.begin(), g.members.end(),
            [](const TdoaVector& a, const TdoaVector& b) { return a.frame < b.frame; });
  for (const auto& m : g.members)
    if (g.frames.empty() || g.frames.back() != m.frame) g.frames.push_back(m.frame);
  const std::size_t P = g.members.front().tau.size();
  g.representative.resize(P);
  std::vector<double> col(g.members.size());
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t i = 0; i < g.members.size(); ++i) col[i] = g.members[i].tau[p];
    std::nth_element(col.begin(), col.begin() + col.size() / 2, col.end());
    g.representative[p] = col[col.size() / 2];
  }
  return g;
}

// Drop a group when a surviving group with more activity overlaps more than
// half of its frames and their representatives match in more than one element.
//
// Strong specular reflections can pass cyclic consistency with several
// microphones substituted by image sources, leaving only one element equal to
// the parent vector, which the representative match cannot catch. Such
// reflection groups are shadows: they are (almost) never the strongest vector
// of a frame, while a real speaker tops the frames of its solo segments. When
// per-frame top scores are given, an overlapped group whose members hold the
// frame maximum less often than min_leader_rate is discarded as well.
inline std::vector<SpeakerGroup> prune_clusters(std::vector<SpeakerGroup> groups, double tau_match,
                                                const std::vector<double>& frame_top_srp = {},
                                                double min_leader_rate = 0.0) {
  std::stable_sort(groups.begin(), groups.end(), [](const SpeakerGroup& a, const SpeakerGroup& b) {
    return a.frames.size() > b.frames.size();
  });
  auto leader_rate = [&](const SpeakerGroup& g) {
    if (g.members.empty() || frame_top_srp.empty()) return 1.0;
    std::size_t top = 0;
    for (const auto& m : g.members)
      if (m.frame >= 0 && m.frame < static_cast<int>(frame_top_srp.size()) &&
          m.srp >= 0.999 * frame_top_srp[m.frame])
        ++top;
    return static_cast<double>(top) / g.members.size();
  };
  std::vector<SpeakerGroup> kept;
  for (auto& g : groups) {
    bool discard = false;
    for (const auto& big : kept) {
      std::size_t inter = 0;
      for (int f : g.frames)
        if (std::binary_search(big.frames.begin(), big.frames.end(), f)) ++inter;
      if (2 * inter <= g.frames.size()) continue;
      int matches = 0;
      for (std::size_t p = 0; p < g.representative.size(); ++p)
        if (std::abs(g.representative[p] - big.representative[p]) <= tau_match) ++matches;
      if (matches > 1 || leader_rate(g) < min_leader_rate) {
        discard = true;
        break;
      }
    }
    if (!discard) kept.push_back(std::move(g));
  }
  return kept;
}

// Morphological closing per speaker row: dilation then erosion along time.
inline ActivityMatrix smooth_activity(const ActivityMatrix& act, int dilate_frames,
                                      int erode_frames) {
  if (dilate_frames < 1 || erode_frames < 1 || dilate_frames % 2 == 0 || erode_frames % 2 == 0)
    throw std::invalid_argument("smooth_activity: kernel sizes must be odd and positive");
  const int L = act.num_frames;
  ActivityMatrix out(act.num_speakers, L, act.frame_shift_s);
  const int dh = dilate_frames / 2, eh = erode_frames / 2;
  std::vector<char> row(L), tmp(L);
  for (int s = 0; s < act.num_speakers; ++s) {
    for (int l = 0; l < L; ++l) row[l] = act.get(s, l) ? 1 : 0;
    for (int l = 0; l < L; ++l) {
      char v = 0;
      for (int f = std::max(0, l - dh); f <= std::min(L - 1, l + dh) && !v; ++f) v = row[f];
      tmp[l] = v;
    }
    for (int l = 0; l < L; ++l) {
      char v = 1;
      for (int f = std::max(0, l - eh); f <= std::min(L - 1, l + eh) && v; ++f) v = tmp[f];
      out.set(s, l, v != 0);
    }
  }
  return out;
}

struct DiarizationResult {
  ActivityMatrix activity;
  std::vector<std::vector<double>> representatives;  // per output speaker
};

// Frame-wise TDOA vectors -> global speaker activity.
inline DiarizationResult diarize(const std::vector<std::vector<TdoaVector>>& per_frame,
                                 double frame_shift_s, const DiarizeConfig& cfg = DiarizeConfig{}) {
  const int L = static_cast<int>(per_frame.size());
  const auto clusters = leader_follower(per_frame, frame_shift_s, cfg);
  if (clusters.empty())
    return {ActivityMatrix(0, L, frame_shift_s), {}};

  std::vector<SpeakerGroup> groups;
  for (const auto& idx : single_linkage(clusters, cfg.msd_abort))
    groups.push_back(make_speaker_group(clusters, idx));
  std::vector<double> frame_top(per_frame.size(), 0.0);
  for (std::size_t l = 0; l < per_frame.size(); ++l)
    for (const auto& v : per_frame[l]) frame_top[l] = std::max(frame_top[l], v.srp);
  groups = prune_clusters(std::move(groups), cfg.tau_match, frame_top, cfg.min_leader_rate);
  std::erase_if(groups, [&](const SpeakerGroup& g) {
    return static_cast<int>(g.frames.size()) < cfg.min_group_frames;
  });

  ActivityMatrix act(static_cast<int>(groups.size()), L, frame_shift_s);
  for (std::size_t s = 0; s < groups.size(); ++s)
    for (int f : groups[s].frames) act.set(static_cast<int>(s), f, true);
  DiarizationResult out;
  out.activity = smooth_activity(act, cfg.dilate_frames, cfg.erode_frames);
  for (const auto& g : groups) out.representatives.push_back(g.representative);
  return out;
}

}  // namespace asn
