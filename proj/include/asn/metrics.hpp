#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "asn/common.hpp"
#include "asn/tdoa.hpp"

namespace asn {

namespace detail {

// Kuhn-Munkres with potentials; cost is n×m with n <= m, returns row -> column.
inline std::vector<int> hungarian_min(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  if (n == 0) return {};
  const int m = static_cast<int>(cost[0].size());
  if (n > m) throw std::invalid_argument("hungarian_min: need rows <= cols");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= m; ++j)
        if (!used[j]) {
          const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] >= 1) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

// maximize total score over an R×H matrix; returns pairs (row, col)
inline std::vector<std::pair<int, int>> max_assignment(const std::vector<std::vector<double>>& score) {
  const int R = static_cast<int>(score.size());
  if (R == 0) return {};
  const int H = static_cast<int>(score[0].size());
  const bool flip = R > H;
  const int n = flip ? H : R, m = flip ? R : H;
  std::vector<std::vector<double>> cost(n, std::vector<double>(m));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) cost[i][j] = -(flip ? score[j][i] : score[i][j]);
  const auto sol = hungarian_min(cost);
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n; ++i)
    if (sol[i] >= 0) pairs.emplace_back(flip ? sol[i] : i, flip ? i : sol[i]);
  return pairs;
}

}  // namespace detail

struct DerResult {
  double der = 0.0;
  double miss = 0.0;         // rates relative to scored reference speech
  double false_alarm = 0.0;
  double confusion = 0.0;
  double scored_speech_s = 0.0;
};

// Frame-level diarization error rate with a no-score collar around every
// reference boundary and an optimal speaker mapping (assignment over overlap).
inline DerResult compute_der(const ActivityMatrix& ref, const ActivityMatrix& hyp,
                             double collar_s = 0.25) {
  if (hyp.num_frames != ref.num_frames)
    throw std::invalid_argument("compute_der: hypothesis frame grid differs from reference");
  const int L = ref.num_frames;
  const int R = ref.num_speakers;
  const int H = hyp.num_speakers;

  long long total_ref_frames = 0;
  for (int r = 0; r < R; ++r)
    for (int l = 0; l < L; ++l) total_ref_frames += ref.get(r, l) ? 1 : 0;
  if (total_ref_frames == 0) throw std::invalid_argument("compute_der: empty reference speech");

  // no-score zone: ±collar around each reference segment edge
  const int collar_frames = static_cast<int>(std::round(collar_s / ref.frame_shift_s));
  std::vector<char> scored(L, 1);
  for (int r = 0; r < R; ++r) {
    bool prev = false;
    for (int l = 0; l <= L; ++l) {
      const bool cur = l < L && ref.get(r, l);
      if (cur != prev) {
        for (int f = std::max(0, l - collar_frames); f < std::min(L, l + collar_frames); ++f)
          scored[f] = 0;
      }
      prev = cur;
    }
  }

  std::vector<std::vector<double>> overlap(std::max(R, 1),
                                           std::vector<double>(std::max(H, 1), 0.0));
  for (int l = 0; l < L; ++l) {
    if (!scored[l]) continue;
    for (int r = 0; r < R; ++r) {
      if (!ref.get(r, l)) continue;
      for (int h = 0; h < H; ++h)
        if (hyp.get(h, l)) overlap[r][h] += 1.0;
    }
  }
  std::vector<int> hyp_of_ref(R, -1);
  if (R > 0 && H > 0)
    for (const auto& [r, h] : detail::max_assignment(overlap)) hyp_of_ref[r] = h;

  long long miss = 0, fa = 0, conf = 0, ref_time = 0;
  for (int l = 0; l < L; ++l) {
    if (!scored[l]) continue;
    int n_ref = 0, n_hyp = 0, n_correct = 0;
    for (int r = 0; r < R; ++r) n_ref += ref.get(r, l) ? 1 : 0;
    for (int h = 0; h < H; ++h) n_hyp += hyp.get(h, l) ? 1 : 0;
    for (int r = 0; r < R; ++r)
      if (ref.get(r, l) && hyp_of_ref[r] >= 0 && hyp.get(hyp_of_ref[r], l)) ++n_correct;
    ref_time += n_ref;
    miss += std::max(0, n_ref - n_hyp);
    fa += std::max(0, n_hyp - n_ref);
    conf += std::min(n_ref, n_hyp) - n_correct;
  }

  DerResult out;
  out.scored_speech_s = static_cast<double>(ref_time) * ref.frame_shift_s;
  if (ref_time == 0) return out;
  out.miss = static_cast<double>(miss) / ref_time;
  out.false_alarm = static_cast<double>(fa) / ref_time;
  out.confusion = static_cast<double>(conf) / ref_time;
  out.der = out.miss + out.false_alarm + out.confusion;
  return out;
}

struct TdoaAccuracy {
  double rmse = 0.0;
  double spurious_rate = 0.0;
  std::size_t matched_vectors = 0;
  std::size_t spurious_vectors = 0;
};

// Frame-wise assignment (min mean-squared difference) of estimated vectors to
// ground truth; RMSE over matched elements, unmatched estimates are spurious.
inline TdoaAccuracy tdoa_rmse(const std::vector<std::vector<TdoaVector>>& est,
                              const std::vector<std::vector<std::vector<double>>>& truth) {
  if (est.size() != truth.size())
    throw std::invalid_argument("tdoa_rmse: frame count mismatch");
  double sq_sum = 0.0;
  std::size_t n_elems = 0, n_est = 0;
  TdoaAccuracy acc;
  for (std::size_t l = 0; l < est.size(); ++l) {
    const auto& e = est[l];
    const auto& t = truth[l];
    n_est += e.size();
    if (e.empty()) continue;
    if (t.empty()) {
      acc.spurious_vectors += e.size();
      continue;
    }
    std::vector<std::vector<double>> score(e.size(), std::vector<double>(t.size(), 0.0));
    for (std::size_t i = 0; i < e.size(); ++i)
      for (std::size_t j = 0; j < t.size(); ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < t[j].size(); ++p) {
          const double d = e[i].tau[p] - t[j][p];
          s += d * d;
        }
        score[i][j] = -s / t[j].size();
      }
    std::vector<char> est_matched(e.size(), 0);
    for (const auto& [i, j] : detail::max_assignment(score)) {
      est_matched[i] = 1;
      ++acc.matched_vectors;
      for (std::size_t p = 0; p < t[j].size(); ++p) {
        const double d = e[i].tau[p] - t[j][p];
        sq_sum += d * d;
        ++n_elems;
      }
    }
    for (std::size_t i = 0; i < e.size(); ++i)
      if (!est_matched[i]) ++acc.spurious_vectors;
  }
  acc.rmse = n_elems ? std::sqrt(sq_sum / n_elems) : 0.0;
  acc.spurious_rate = n_est ? static_cast<double>(acc.spurious_vectors) / n_est : 0.0;
  return acc;
}

// Scale-invariant signal-to-distortion ratio in dB, capped at ±60.
inline double si_sdr(const std::vector<double>& est, const std::vector<double>& ref) {
  const std::size_t n = std::min(est.size(), ref.size());
  double dot = 0.0, ref_pow = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dot += ref[i] * est[i];
    ref_pow += ref[i] * ref[i];
  }
  if (ref_pow <= 0.0 || n == 0) return -120.0;
  const double alpha = dot / ref_pow;
  double sig = 0.0, err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = alpha * ref[i];
    sig += s * s;
    const double e = est[i] - s;
    err += e * e;
  }
  if (err <= sig * 1e-6) return 60.0;
  return std::clamp(10.0 * std::log10(sig / err), -60.0, 60.0);
}

namespace detail {

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string w;
  while (iss >> w) out.push_back(w);
  return out;
}

inline std::size_t edit_distance(const std::vector<std::string>& a,
                                 const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

// Concatenated minimum-permutation WER over per-speaker transcripts.
inline double cp_wer(const std::vector<std::string>& ref_speakers,
                     const std::vector<std::string>& hyp_speakers) {
  std::vector<std::vector<std::string>> ref, hyp;
  for (const auto& s : ref_speakers) ref.push_back(detail::split_words(s));
  for (const auto& s : hyp_speakers) hyp.push_back(detail::split_words(s));
  std::size_t ref_words = 0;
  for (const auto& r : ref) ref_words += r.size();
  if (ref_words == 0) throw std::invalid_argument("cp_wer: empty reference");
  const std::size_t n = std::max(ref.size(), hyp.size());
  ref.resize(n);
  hyp.resize(n);
  std::vector<std::vector<double>> cost(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      cost[i][j] = static_cast<double>(detail::edit_distance(ref[i], hyp[j]));
  const auto sol = detail::hungarian_min(cost);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += cost[i][sol[i]];
  return total / ref_words;
}

}  // namespace asn
