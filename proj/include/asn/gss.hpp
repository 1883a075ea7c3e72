#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "asn/common.hpp"
#include "asn/stft.hpp"

namespace asn {

// Per class x frame x frequency posteriors. Class order: speakers first,
// the noise class last.
struct MaskSet {
  int num_classes = 0;
  int num_frames = 0;
  int num_bins = 0;
  std::vector<double> gamma;

  MaskSet() = default;
  MaskSet(int classes, int frames, int bins)
      : num_classes(classes),
        num_frames(frames),
        num_bins(bins),
        gamma(static_cast<std::size_t>(classes) * frames * bins, 0.0) {}

  double& at(int i, int l, int k) {
    return gamma[(static_cast<std::size_t>(i) * num_frames + l) * num_bins + k];
  }
  double at(int i, int l, int k) const {
    return gamma[(static_cast<std::size_t>(i) * num_frames + l) * num_bins + k];
  }
  int noise_class() const { return num_classes - 1; }
};

// Mixture model over unit-norm direction vectors: per class and frequency a
// Hermitian shape matrix, per class and frame a mixture weight.
struct CacgmmState {
  int num_classes = 0;
  int num_channels = 0;
  int num_frames = 0;
  int num_bins = 0;
  std::vector<Eigen::MatrixXcd> B;           // [class * num_bins + k]
  std::vector<double> pi;                    // [class][frame]
  std::vector<std::uint8_t> class_activity;  // [class][frame]; noise row all ones

  double& pi_at(int i, int l) { return pi[static_cast<std::size_t>(i) * num_frames + l]; }
  double pi_at(int i, int l) const { return pi[static_cast<std::size_t>(i) * num_frames + l]; }
  bool active(int i, int l) const {
    return class_activity[static_cast<std::size_t>(i) * num_frames + l] != 0;
  }
};

// Unit-normalized microphone vectors; bins with (near) zero norm are flagged
// invalid and take no part in the model.
struct NormalizedField {
  int num_channels = 0;
  int num_frames = 0;
  int num_bins = 0;
  std::vector<cdouble> z;           // [frame][bin][channel]
  std::vector<std::uint8_t> valid;  // [frame][bin]

  const cdouble* vec(int l, int k) const {
    return z.data() + (static_cast<std::size_t>(l) * num_bins + k) * num_channels;
  }
  bool is_valid(int l, int k) const {
    return valid[static_cast<std::size_t>(l) * num_bins + k] != 0;
  }
};

inline NormalizedField normalize_observations(const SpectrogramTensor& S) {
  NormalizedField f;
  f.num_channels = S.num_channels;
  f.num_frames = S.num_frames;
  f.num_bins = S.num_bins;
  f.z.assign(static_cast<std::size_t>(S.num_frames) * S.num_bins * S.num_channels, cdouble(0.0));
  f.valid.assign(static_cast<std::size_t>(S.num_frames) * S.num_bins, 0);
  for (int l = 0; l < S.num_frames; ++l)
    for (int k = 0; k < S.num_bins; ++k) {
      double norm_sq = 0.0;
      for (int m = 0; m < S.num_channels; ++m) norm_sq += std::norm(S.at(m, l, k));
      if (norm_sq <= 1e-24) continue;
      const double inv = 1.0 / std::sqrt(norm_sq);
      auto* dst = f.z.data() + (static_cast<std::size_t>(l) * f.num_bins + k) * f.num_channels;
      for (int m = 0; m < S.num_channels; ++m) dst[m] = S.at(m, l, k) * inv;
      f.valid[static_cast<std::size_t>(l) * f.num_bins + k] = 1;
    }
  return f;
}

// Broadcast per-frame speaker activity uniformly over frequency: each active
// speaker and the noise class share a frame's mass equally; silent frames put
// everything on noise.
inline MaskSet t_init(const ActivityMatrix& activity, int num_bins) {
  const int I = activity.num_speakers;
  MaskSet masks(I + 1, activity.num_frames, num_bins);
  for (int l = 0; l < activity.num_frames; ++l) {
    const int n_active = activity.active_speakers_at(l);
    const double share = 1.0 / (n_active + 1);
    for (int k = 0; k < num_bins; ++k) {
      for (int i = 0; i < I; ++i)
        if (activity.get(i, l)) masks.at(i, l, k) = share;
      masks.at(I, l, k) = n_active > 0 ? share : 1.0;
    }
  }
  return masks;
}

// Anechoic steering vector for per-channel delays in samples (reference
// channel delay 0), unit-normalized.
inline Eigen::VectorXcd steering_vector(const std::vector<double>& delays, int k, int fft_len) {
  const int M = static_cast<int>(delays.size());
  Eigen::VectorXcd a(M);
  for (int m = 0; m < M; ++m) {
    const double phase = -2.0 * std::numbers::pi * k * delays[m] / fft_len;
    a(m) = cdouble(std::cos(phase), std::sin(phase));
  }
  return a / std::sqrt(static_cast<double>(M));
}

inline std::vector<double> delays_from_representative(const std::vector<double>& rep,
                                                      int num_channels) {
  std::vector<double> d(num_channels, 0.0);
  for (int m = 1; m < num_channels; ++m) d[m] = rep[pair_index(0, m, num_channels)];
  return d;
}

struct DominanceConfig {
  int time_context = 3;  // frames
  int freq_context = 3;  // bins
  double eig_ratio_threshold = 5.0;
};

// Local-context covariance eigenvalue ratio test: true where one source
// dominates the bin's neighborhood.
inline std::vector<std::uint8_t> dominance_test(const SpectrogramTensor& S,
                                                const DominanceConfig& cfg = DominanceConfig{}) {
  if (S.num_channels < 2) throw std::invalid_argument("dominance_test: need at least 2 channels");
  const int L = S.num_frames, K = S.num_bins, M = S.num_channels;
  const int ht = cfg.time_context / 2, hf = cfg.freq_context / 2;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(L) * K, 0);
  Eigen::MatrixXcd scm(M, M);
  Eigen::VectorXcd y(M);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig;
  for (int l = 0; l < L; ++l)
    for (int k = 0; k < K; ++k) {
      scm.setZero();
      int count = 0;
      for (int dl = std::max(0, l - ht); dl <= std::min(L - 1, l + ht); ++dl)
        for (int dk = std::max(0, k - hf); dk <= std::min(K - 1, k + hf); ++dk) {
          for (int m = 0; m < M; ++m) y(m) = S.at(m, dl, dk);
          scm.noalias() += y * y.adjoint();
          ++count;
        }
      scm /= count;
      eig.compute(scm, Eigen::EigenvaluesOnly);
      const auto& ev = eig.eigenvalues();  // ascending
      const double lmax = ev(M - 1), lsecond = ev(M - 2);
      if (lmax <= 1e-24) continue;
      if (lsecond <= 1e-12 * lmax || lmax / lsecond > cfg.eig_ratio_threshold)
        out[static_cast<std::size_t>(l) * K + k] = 1;
    }
  return out;
}

struct TfInitConfig {
  DominanceConfig dominance;
  double diagonal_loading = 1e-3;  // times M, onto the interference outer-product sum
};

// Per-bin one-hot masks from steered anechoic beamformers: each dominant bin
// goes to the active speaker whose beamformer output is strongest (ties to
// the lower index); everything else goes to noise.
inline MaskSet tf_init(const ActivityMatrix& activity,
                       const std::vector<std::vector<double>>& representatives,
                       const SpectrogramTensor& S, const TfInitConfig& cfg = TfInitConfig{}) {
  const int I = activity.num_speakers;
  const int L = S.num_frames, K = S.num_bins, M = S.num_channels;
  if (static_cast<int>(representatives.size()) < I)
    throw std::invalid_argument("tf_init: speaker without a representative TDOA vector");
  if (activity.num_frames < L) throw std::invalid_argument("tf_init: activity shorter than STFT");

  const auto dominant = dominance_test(S, cfg.dominance);
  MaskSet masks(I + 1, L, K);

  // frames with the same active set share beamformers; cache per set
  std::vector<std::uint64_t> set_of_frame(L, 0);
  for (int l = 0; l < L; ++l) {
    std::uint64_t bits = 0;
    for (int i = 0; i < I; ++i)
      if (activity.get(i, l)) bits |= std::uint64_t{1} << i;
    set_of_frame[l] = bits;
  }
  std::vector<std::uint64_t> sets;
  for (auto b : set_of_frame)
    if (b != 0 && std::find(sets.begin(), sets.end(), b) == sets.end()) sets.push_back(b);

  // weights[set][i] is a K x M array for speaker i in that active set
  std::vector<std::vector<Eigen::MatrixXcd>> weights(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s) {
    weights[s].assign(I, Eigen::MatrixXcd());
    std::vector<int> members;
    for (int i = 0; i < I; ++i)
      if (sets[s] >> i & 1) members.push_back(i);
    for (int i : members) weights[s][i].resize(K, M);
    for (int k = 0; k < K; ++k) {
      std::vector<Eigen::VectorXcd> a(I);
      for (int i : members)
        a[i] = steering_vector(delays_from_representative(representatives[i], M), k,
                               S.cfg.fft_len);
      for (int i : members) {
        Eigen::MatrixXcd phi = cfg.diagonal_loading * M * Eigen::MatrixXcd::Identity(M, M);
        for (int j : members)
          if (j != i) phi.noalias() += a[j] * a[j].adjoint();
        const Eigen::VectorXcd num = phi.llt().solve(a[i]);
        const cdouble denom = a[i].dot(num);  // conjugate-linear in a[i]
        weights[s][i].row(k) = (num / denom).transpose();
      }
    }
  }

  Eigen::VectorXcd y(M);
  for (int l = 0; l < L; ++l) {
    const std::uint64_t bits = set_of_frame[l];
    if (bits == 0) {
      for (int k = 0; k < K; ++k) masks.at(I, l, k) = 1.0;
      continue;
    }
    const std::size_t s = std::find(sets.begin(), sets.end(), bits) - sets.begin();
    for (int k = 0; k < K; ++k) {
      if (!dominant[static_cast<std::size_t>(l) * K + k]) {
        masks.at(I, l, k) = 1.0;
        continue;
      }
      for (int m = 0; m < M; ++m) y(m) = S.at(m, l, k);
      int best = -1;
      double best_pow = -1.0;
      for (int i = 0; i < I; ++i) {
        if (!(bits >> i & 1)) continue;
        cdouble out(0.0);
        for (int m = 0; m < M; ++m) out += std::conj(weights[s][i](k, m)) * y(m);
        const double p = std::norm(out);
        if (p > best_pow + 1e-15 * best_pow) {
          best_pow = p;
          best = i;
        }
      }
      masks.at(best, l, k) = 1.0;
    }
  }
  return masks;
}

namespace detail {

inline void regularize(Eigen::MatrixXcd& B) {
  const int M = static_cast<int>(B.rows());
  B = 0.5 * (B + B.adjoint()).eval();
  double tr = B.real().trace();
  if (!(tr > 0.0) || !std::isfinite(tr)) {
    B = Eigen::MatrixXcd::Identity(M, M);
    return;
  }
  B += (1e-6 * tr / M) * Eigen::MatrixXcd::Identity(M, M);
  B *= M / B.real().trace();  // the density is scale-free; keep trace at M
}

}  // namespace detail

// Build a state whose activity guide is the diarized activity plus an
// always-on noise class.
inline CacgmmState make_cacgmm_state(const ActivityMatrix& activity, int num_channels,
                                     int num_frames, int num_bins) {
  const int I = activity.num_speakers;
  CacgmmState st;
  st.num_classes = I + 1;
  st.num_channels = num_channels;
  st.num_frames = num_frames;
  st.num_bins = num_bins;
  st.B.assign(static_cast<std::size_t>(st.num_classes) * num_bins,
              Eigen::MatrixXcd::Identity(num_channels, num_channels));
  st.pi.assign(static_cast<std::size_t>(st.num_classes) * num_frames, 0.0);
  st.class_activity.assign(static_cast<std::size_t>(st.num_classes) * num_frames, 0);
  for (int l = 0; l < num_frames; ++l) {
    for (int i = 0; i < I; ++i)
      st.class_activity[static_cast<std::size_t>(i) * num_frames + l] =
          l < activity.num_frames && activity.get(i, l) ? 1 : 0;
    st.class_activity[static_cast<std::size_t>(I) * num_frames + l] = 1;
  }
  return st;
}

// M-step for the shape matrices from given posteriors, with the previous
// shape matrices taken as identity (for unit-norm observations the quadratic
// form is then 1). Mixture weights start from the activity share of each
// frame, not from the mask sums: a bin-wise init parks ambiguous bins on the
// noise class, and folding that into the weights would bias the first E-step
// toward noise on exactly the frames the init is meant to help with.
inline void initial_m_step(CacgmmState& state, const NormalizedField& field, const MaskSet& init) {
  const int I = state.num_classes, L = state.num_frames, K = state.num_bins,
            M = state.num_channels;
  if (init.num_classes != I || init.num_frames != L || init.num_bins != K)
    throw std::invalid_argument("initial_m_step: mask dimensions mismatch");
  Eigen::VectorXcd z(M);
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < I; ++i) {
      Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(M, M);
      double mass = 0.0;
      for (int l = 0; l < L; ++l) {
        if (!field.is_valid(l, k)) continue;
        const double g = init.at(i, l, k);
        if (g <= 0.0) continue;
        const cdouble* zp = field.vec(l, k);
        for (int m = 0; m < M; ++m) z(m) = zp[m];
        acc.noalias() += g * (z * z.adjoint());
        mass += g;
      }
      Eigen::MatrixXcd& B = state.B[static_cast<std::size_t>(i) * K + k];
      if (mass > 1e-12) {
        B = (static_cast<double>(M) / mass) * acc;
        detail::regularize(B);
      } else {
        B = Eigen::MatrixXcd::Identity(M, M);
      }
    }
  }
  for (int l = 0; l < L; ++l) {
    int n_active = 0;
    for (int i = 0; i + 1 < I; ++i) n_active += state.active(i, l) ? 1 : 0;
    const double share = 1.0 / (n_active + 1);
    for (int i = 0; i + 1 < I; ++i) state.pi_at(i, l) = state.active(i, l) ? share : 0.0;
    state.pi_at(I - 1, l) = n_active > 0 ? share : 1.0;
  }
}

struct EmResult {
  MaskSet masks;
  double log_likelihood = 0.0;
};

// One EM iteration. E-step posteriors are computed in the log domain; when
// guided, inactive speaker classes are zeroed before normalization. The
// M-step re-estimates mixture weights and shape matrices. Returns the
// posteriors and the auxiliary log-likelihood under the incoming state.
inline EmResult em_iterate(CacgmmState& state, const NormalizedField& field, bool guided) {
  const int I = state.num_classes, L = state.num_frames, K = state.num_bins,
            M = state.num_channels;
  if (field.num_frames != L || field.num_bins != K || field.num_channels != M)
    throw std::invalid_argument("em_iterate: field dimensions mismatch");

  EmResult result;
  result.masks = MaskSet(I, L, K);
  double ll = 0.0;

  std::vector<double> new_pi_num(static_cast<std::size_t>(I) * L, 0.0);
  std::vector<int> valid_per_frame(L, 0);

  std::vector<Eigen::MatrixXcd> inv_b(I), acc(I);
  std::vector<double> logdet(I), mass(I);
  std::vector<double> log_w(I), gamma(I), q(I);
  Eigen::VectorXcd z(M), tmp(M);

  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < I; ++i) {
      const Eigen::MatrixXcd& B = state.B[static_cast<std::size_t>(i) * K + k];
      Eigen::LLT<Eigen::MatrixXcd> llt(B);
      if (llt.info() != Eigen::Success) {
        Eigen::MatrixXcd fixed = B;
        detail::regularize(fixed);
        llt.compute(fixed);
      }
      inv_b[i] = llt.solve(Eigen::MatrixXcd::Identity(M, M));
      double ld = 0.0;
      for (int m = 0; m < M; ++m) ld += std::log(std::real(llt.matrixL()(m, m)));
      logdet[i] = 2.0 * ld;
      acc[i].setZero(M, M);
      mass[i] = 0.0;
    }

    for (int l = 0; l < L; ++l) {
      if (!field.is_valid(l, k)) {
        result.masks.at(I - 1, l, k) = 1.0;
        continue;
      }
      const cdouble* zp = field.vec(l, k);
      for (int m = 0; m < M; ++m) z(m) = zp[m];

      double lse = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < I; ++i) {
        const bool usable = (!guided || state.active(i, l)) && state.pi_at(i, l) > 0.0;
        if (!usable) {
          log_w[i] = -std::numeric_limits<double>::infinity();
          q[i] = 1.0;
          continue;
        }
        tmp.noalias() = inv_b[i] * z;
        const double quad = std::max(std::real(z.dot(tmp)), 1e-300);
        q[i] = quad;
        log_w[i] = std::log(state.pi_at(i, l)) - logdet[i] - M * std::log(quad);
        lse = std::max(lse, log_w[i]);
      }
      if (!std::isfinite(lse)) {
        // no usable class carries weight; park the bin on noise
        result.masks.at(I - 1, l, k) = 1.0;
        continue;
      }
      double sum = 0.0;
      for (int i = 0; i < I; ++i) sum += std::exp(log_w[i] - lse);
      const double log_total = lse + std::log(sum);
      if (!std::isfinite(log_total))
        throw std::runtime_error("em_iterate: non-finite likelihood at frame " +
                                 std::to_string(l) + ", bin " + std::to_string(k));
      ll += log_total;
      ++valid_per_frame[l];

      for (int i = 0; i < I; ++i) {
        const double g = std::exp(log_w[i] - log_total);
        result.masks.at(i, l, k) = g;
        if (g <= 0.0) continue;
        new_pi_num[static_cast<std::size_t>(i) * L + l] += g;
        const double w = g / q[i];
        acc[i].noalias() += w * (z * z.adjoint());
        mass[i] += g;
      }
    }

    for (int i = 0; i < I; ++i) {
      if (mass[i] <= 1e-12) continue;  // keep the previous shape for empty classes
      Eigen::MatrixXcd& B = state.B[static_cast<std::size_t>(i) * K + k];
      B = (static_cast<double>(M) / mass[i]) * acc[i];
      detail::regularize(B);
    }
  }

  for (int l = 0; l < L; ++l) {
    const int n = valid_per_frame[l];
    for (int i = 0; i < I; ++i)
      state.pi_at(i, l) =
          n > 0 ? new_pi_num[static_cast<std::size_t>(i) * L + l] / n : (i == I - 1 ? 1.0 : 0.0);
  }

  result.log_likelihood = ll;
  return result;
}

enum class GssInit { kTInit, kTfInit };

struct GssConfig {
  int n_guided = 1;
  int n_unguided = 1;
  double context_s = 5.0;
  GssInit init = GssInit::kTfInit;
  TfInitConfig tf;
};

// Guided separation for one segment: extend by the context, initialize from
// the chosen mask init, run guided then unguided EM, return the posteriors of
// the segment frames.
inline MaskSet run_gss(const SpectrogramTensor& S, const ActivityMatrix& activity,
                       const std::vector<std::vector<double>>& representatives, int seg_begin,
                       int seg_end, const GssConfig& cfg = GssConfig{}) {
  if (seg_begin < 0 || seg_end > S.num_frames || seg_begin >= seg_end)
    throw std::invalid_argument("run_gss: empty segment");
  const int context = static_cast<int>(std::round(cfg.context_s / S.cfg.frame_shift_s(S.sample_rate_hz)));
  const int ext_begin = std::max(0, seg_begin - context);
  const int ext_end = std::min(S.num_frames, seg_end + context);
  const int L = ext_end - ext_begin, K = S.num_bins, M = S.num_channels;
  const int I = activity.num_speakers;

  // views of the extended window
  SpectrogramTensor Sw;
  Sw.cfg = S.cfg;
  Sw.sample_rate_hz = S.sample_rate_hz;
  Sw.num_channels = M;
  Sw.num_frames = L;
  Sw.num_bins = K;
  Sw.data.resize(static_cast<std::size_t>(M) * L * K);
  for (int m = 0; m < M; ++m)
    for (int l = 0; l < L; ++l)
      for (int k = 0; k < K; ++k) Sw.at(m, l, k) = S.at(m, ext_begin + l, k);
  ActivityMatrix act(I, L, activity.frame_shift_s);
  for (int i = 0; i < I; ++i)
    for (int l = 0; l < L; ++l)
      act.set(i, l, ext_begin + l < activity.num_frames && activity.get(i, ext_begin + l));

  const auto field = normalize_observations(Sw);
  const MaskSet init =
      cfg.init == GssInit::kTInit ? t_init(act, K) : tf_init(act, representatives, Sw, cfg.tf);
  CacgmmState state = make_cacgmm_state(act, M, L, K);
  initial_m_step(state, field, init);

  MaskSet masks = init;
  for (int it = 0; it < cfg.n_guided + cfg.n_unguided; ++it) {
    auto r = em_iterate(state, field, it < cfg.n_guided);
    masks = std::move(r.masks);
  }

  MaskSet out(I + 1, seg_end - seg_begin, K);
  for (int i = 0; i <= I; ++i)
    for (int l = seg_begin; l < seg_end; ++l)
      for (int k = 0; k < K; ++k) out.at(i, l - seg_begin, k) = masks.at(i, l - ext_begin, k);
  return out;
}

}  // namespace asn
