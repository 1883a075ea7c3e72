#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "asn/beamform.hpp"
#include "asn/scene_sim.hpp"
#include "asn/stft.hpp"
#include "test_util.hpp"

using namespace asn;
using namespace asn::testutil;

namespace {

Eigen::MatrixXcd random_psd(int M, std::mt19937& rng, int rank = 8) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXcd phi = Eigen::MatrixXcd::Zero(M, M);
  for (int r = 0; r < rank; ++r) {
    Eigen::VectorXcd v(M);
    for (int m = 0; m < M; ++m) v(m) = cdouble(nd(rng), nd(rng));
    phi += v * v.adjoint();
  }
  return phi / rank;
}

Eigen::VectorXcd random_vec(int M, std::mt19937& rng) {
  std::normal_distribution<double> nd;
  Eigen::VectorXcd v(M);
  for (int m = 0; m < M; ++m) v(m) = cdouble(nd(rng), nd(rng));
  return v;
}

MaskSet flat_masks(int classes, int frames, int bins, int hot, double value) {
  MaskSet m(classes, frames, bins);
  for (int l = 0; l < frames; ++l)
    for (int k = 0; k < bins; ++k) m.at(hot, l, k) = value;
  return m;
}

}  // namespace

TEST_CASE("mvdr_souden is distortionless on rank-1 targets") {
  std::mt19937 rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const int M = 2 + trial % 5;
    const auto a = random_vec(M, rng);
    const Eigen::MatrixXcd target = (0.1 + trial * 0.07) * (a * a.adjoint());
    const Eigen::MatrixXcd noise = random_psd(M, rng);
    const int ref = trial % M;
    const Eigen::VectorXcd w = mvdr_souden(target, noise, ref);
    const cdouble resp = w.dot(a);  // w^H a
    REQUIRE(std::abs(resp - a(ref)) <= 1e-6 * std::abs(a(ref)));
  }
}

TEST_CASE("mvdr_souden ignores positive rescaling of either matrix") {
  std::mt19937 rng(43);
  const auto a = random_vec(4, rng);
  const Eigen::MatrixXcd target = a * a.adjoint() + 0.3 * random_psd(4, rng);
  const Eigen::MatrixXcd noise = random_psd(4, rng);
  const Eigen::VectorXcd w = mvdr_souden(target, noise, 1);
  REQUIRE((mvdr_souden(17.5 * target, noise, 1) - w).norm() <= 1e-9 * w.norm());
  REQUIRE((mvdr_souden(target, 0.004 * noise, 1) - w).norm() <= 1e-9 * w.norm());
}

TEST_CASE("mvdr_souden identity case and degenerate fallbacks") {
  const Eigen::MatrixXcd eye = Eigen::MatrixXcd::Identity(4, 4);
  const Eigen::VectorXcd w = mvdr_souden(eye, eye, 2);
  for (int m = 0; m < 4; ++m)
    REQUIRE(std::abs(w(m) - (m == 2 ? cdouble(0.25) : cdouble(0.0))) < 1e-9);

  const Eigen::MatrixXcd zero = Eigen::MatrixXcd::Zero(4, 4);
  const Eigen::VectorXcd wz = mvdr_souden(eye, zero, 3);
  REQUIRE(std::abs(wz(3) - cdouble(1.0)) < 1e-12);
  REQUIRE(wz.norm() == Catch::Approx(1.0).margin(1e-12));
  const Eigen::VectorXcd wt = mvdr_souden(zero, eye, 0);
  REQUIRE(std::abs(wt(0) - cdouble(1.0)) < 1e-12);
}

TEST_CASE("estimated SCMs follow the masks") {
  const int M = 3, K = 5;
  SpectrogramTensor S;
  S.num_channels = M;
  S.num_frames = 4;
  S.num_bins = K;
  S.data.assign(static_cast<std::size_t>(M) * 4 * K, cdouble(0.0));
  std::mt19937 rng(47);
  std::normal_distribution<double> nd;
  for (auto& v : S.data) v = cdouble(nd(rng), nd(rng));

  // unit mask over a single frame reproduces that frame's outer product
  const auto one = estimate_target_scm(S, flat_masks(2, 4, K, 0, 1.0), 0, 2, 3);
  for (int k = 0; k < K; ++k) {
    Eigen::VectorXcd y(M);
    for (int m = 0; m < M; ++m) y(m) = S.at(m, 2, k);
    REQUIRE((one[k] - y * y.adjoint()).norm() < 1e-12);
    REQUIRE((one[k] - one[k].adjoint()).norm() <= 1e-6 * one[k].norm());
  }

  // zero mask gives a zero matrix; complementary weighting mirrors it
  const auto zero = estimate_target_scm(S, flat_masks(2, 4, K, 0, 0.0), 0, 0, 4);
  for (int k = 0; k < K; ++k) REQUIRE(zero[k].norm() == 0.0);
  const auto noise_all = estimate_interference_scm(S, flat_masks(2, 4, K, 0, 0.0), 0, 0, 4);
  const auto target_all = estimate_target_scm(S, flat_masks(2, 4, K, 0, 1.0), 0, 0, 4);
  for (int k = 0; k < K; ++k) REQUIRE((noise_all[k] - target_all[k]).norm() < 1e-12);
  const auto noise_none = estimate_interference_scm(S, flat_masks(2, 4, K, 0, 1.0), 0, 0, 4);
  for (int k = 0; k < K; ++k) REQUIRE(noise_none[k].norm() == 0.0);

  REQUIRE_THROWS_AS(estimate_target_scm(S, flat_masks(2, 4, K, 0, 1.0), 0, 2, 2),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(estimate_interference_scm(S, flat_masks(2, 4, K, 0, 1.0), 0, 3, 3),
                    std::invalid_argument);
}

TEST_CASE("oracle-masked SCMs point at the source steering vectors") {
  const int M = 4, L = 40, K = 9;
  SpectrogramTensor S;
  S.num_channels = M;
  S.num_frames = L;
  S.num_bins = K;
  S.data.assign(static_cast<std::size_t>(M) * L * K, cdouble(0.0));
  std::mt19937 rng(53);
  std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> nd;
  const auto a0 = random_vec(M, rng).normalized();
  const auto a1 = random_vec(M, rng).normalized();
  MaskSet masks(2, L, K);
  for (int l = 0; l < L; ++l)
    for (int k = 0; k < K; ++k) {
      const double p0 = l % 2 == 0 ? 1.0 : 0.05, p1 = l % 2 == 0 ? 0.05 : 1.0;
      const cdouble s0 = std::polar(p0, ph(rng)), s1 = std::polar(p1, ph(rng));
      for (int m = 0; m < M; ++m) S.at(m, l, k) = a0(m) * s0 + a1(m) * s1;
      masks.at(0, l, k) = p0 > p1 ? 1.0 : 0.0;
      masks.at(1, l, k) = 1.0 - masks.at(0, l, k);
    }

  const auto phi_t = estimate_target_scm(S, masks, 0, 0, L);
  const auto phi_n = estimate_interference_scm(S, masks, 0, 0, L);
  for (int k = 0; k < K; ++k) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig_t(phi_t[k]), eig_n(phi_n[k]);
    const Eigen::VectorXcd vt = eig_t.eigenvectors().col(M - 1);
    const Eigen::VectorXcd vn = eig_n.eigenvectors().col(M - 1);
    REQUIRE(std::abs(vt.dot(a0)) > 0.99);
    REQUIRE(std::abs(vn.dot(a1)) > 0.99);
  }

  // beamforming with these SCMs should suppress the interferer hard
  double in_t = 0.0, in_i = 0.0, out_t = 0.0, out_i = 0.0;
  for (int k = 0; k < K; ++k) {
    const Eigen::VectorXcd w = mvdr_souden(phi_t[k], phi_n[k], 0);
    out_t += std::norm(w.dot(a0));
    out_i += std::norm(w.dot(a1));
    in_t += std::norm(a0(0));
    in_i += std::norm(a1(0));
  }
  const double gain_db = 10.0 * std::log10(out_t / out_i) - 10.0 * std::log10(in_t / in_i);
  REQUIRE(gain_db >= 15.0);
}

TEST_CASE("resegment extends runs by the closing margin") {
  MaskSet masks(2, 300, 8);
  for (int l = 50; l < 150; ++l)
    for (int k = 0; k < 8; ++k) masks.at(0, l, k) = 0.8;
  const auto plan = resegment(masks);
  REQUIRE(plan.per_speaker.size() == 1);
  REQUIRE(plan.per_speaker[0].size() == 1);
  const auto& seg = plan.per_speaker[0][0];
  REQUIRE(seg.begin == 45);
  REQUIRE(seg.end == 155);
  REQUIRE(seg.subs.size() == 1);
  REQUIRE(seg.subs[0].begin == 45);
  REQUIRE(seg.subs[0].end == 155);
}

TEST_CASE("resegment splits at interferer change points") {
  MaskSet masks(3, 300, 8);
  for (int l = 0; l < 300; ++l)
    for (int k = 0; k < 8; ++k) {
      masks.at(0, l, k) = (l >= 50 && l < 250) ? 0.8 : 0.0;
      masks.at(1, l, k) = (l >= 120 && l < 180) ? 0.7 : 0.05;
    }
  const auto plan = resegment(masks);
  REQUIRE(plan.per_speaker[0].size() == 1);
  const auto& seg = plan.per_speaker[0][0];
  REQUIRE(seg.begin == 45);
  REQUIRE(seg.end == 255);
  REQUIRE(seg.subs.size() == 3);
  REQUIRE(seg.subs[0].end == 115);
  REQUIRE(seg.subs[1].begin == 115);
  REQUIRE(seg.subs[1].end == 185);
  REQUIRE(seg.subs[2].begin == 185);
  // the interferer's own segment sees one constant interferer set
  REQUIRE(plan.per_speaker[1].size() == 1);
  REQUIRE(plan.per_speaker[1][0].subs.size() == 1);
}

TEST_CASE("runt sub-segments merge into a neighbor") {
  BeamformConfig cfg;
  cfg.dilate_frames = 1;
  cfg.erode_frames = 1;  // closing disabled, boundaries are exact

  auto mk = [](int interferer_lo, int interferer_hi) {
    MaskSet masks(3, 20, 4);
    for (int l = 0; l < 20; ++l)
      for (int k = 0; k < 4; ++k) {
        masks.at(0, l, k) = 0.9;
        masks.at(1, l, k) = (l >= interferer_lo && l < interferer_hi) ? 0.9 : 0.0;
      }
    return masks;
  };

  const auto lead = resegment(mk(0, 3), cfg);
  REQUIRE(lead.per_speaker[0][0].subs.size() == 1);
  REQUIRE(lead.per_speaker[0][0].subs[0].begin == 0);
  REQUIRE(lead.per_speaker[0][0].subs[0].end == 20);

  const auto trail = resegment(mk(17, 20), cfg);
  REQUIRE(trail.per_speaker[0][0].subs.size() == 1);

  const auto mid = resegment(mk(8, 11), cfg);
  const auto& subs = mid.per_speaker[0][0].subs;
  REQUIRE(subs.size() == 2);
  REQUIRE(subs[0].begin == 0);
  REQUIRE(subs[0].end == 11);
  REQUIRE(subs[1].begin == 11);
  REQUIRE(subs[1].end == 20);
}

TEST_CASE("select_reference avoids the low-SNR channel and breaks ties low") {
  const int K = 3;
  std::vector<Eigen::MatrixXcd> target(K), noisy(K), mild(K);
  for (int k = 0; k < K; ++k) {
    Eigen::VectorXd t(3), n(3);
    t << 1.0, 1.0, 0.01;
    n << 0.1, 0.1, 10.0;
    target[k] = t.asDiagonal().toDenseMatrix().cast<cdouble>();
    noisy[k] = n.asDiagonal().toDenseMatrix().cast<cdouble>();
    mild[k] = (0.5 * n).asDiagonal().toDenseMatrix().cast<cdouble>();
  }
  REQUIRE(select_reference(target, {noisy}) == 0);
  REQUIRE(select_reference(target, {noisy, mild}) == select_reference(target, {mild, noisy}));
  REQUIRE_THROWS_AS(select_reference(target, {}), std::invalid_argument);
}

TEST_CASE("extract_speaker reconstructs a lone source") {
  SceneConfig cfg = random_layout(4, 1, 701);
  cfg.snr_db = 20.0;
  cfg.utterance_plan = {{0, 1.0, 5.0, 0}};
  cfg.duration_s = 6.0;
  std::vector<std::vector<double>> srcs = {speech_like_signal(6 * 16000, 702)};
  equalize_source_levels(cfg, srcs);
  auto [rec, gt] = simulate_scene(cfg, srcs);
  const auto S = stft(rec, StftConfig{});

  SceneConfig quiet = cfg;
  quiet.snr_db = 1000.0;
  auto [rec_c, gt_c] = simulate_scene(quiet, srcs);
  const auto C = stft(rec_c, StftConfig{});

  MaskSet masks(2, S.num_frames, S.num_bins);
  for (int l = 0; l < S.num_frames; ++l)
    for (int k = 0; k < S.num_bins; ++k) {
      double ec = 0.0, ey = 0.0;
      for (int m = 0; m < S.num_channels; ++m) {
        if (l < C.num_frames) ec += std::norm(C.at(m, l, k));
        ey += std::norm(S.at(m, l, k));
      }
      const double g = ey > 0.0 ? std::min(1.0, ec / ey) : 0.0;
      masks.at(0, l, k) = g;
      masks.at(1, l, k) = 1.0 - g;
    }

  const auto plan = resegment(masks);
  REQUIRE(plan.per_speaker[0].size() == 1);
  const auto out = extract_speaker(S, masks, plan, 0, rec.channels[0].size());
  REQUIRE(out.size() == rec.channels[0].size());
  REQUIRE(si_sdr_shift_tolerant(gt.clean_sources[0], out) > 15.0);
}

TEST_CASE("a silent speaker extracts zeros") {
  SceneConfig cfg = random_layout(4, 1, 703);
  cfg.utterance_plan = {{0, 0.5, 2.0, 0}};
  cfg.duration_s = 3.0;
  std::vector<std::vector<double>> srcs = {speech_like_signal(3 * 16000, 704)};
  auto [rec, gt] = simulate_scene(cfg, srcs);
  const auto S = stft(rec, StftConfig{});

  MaskSet masks(3, S.num_frames, S.num_bins);  // speaker 1 never speaks
  for (int l = 0; l < S.num_frames; ++l)
    for (int k = 0; k < S.num_bins; ++k) masks.at(2, l, k) = 1.0;
  const auto plan = resegment(masks);
  REQUIRE(plan.per_speaker[1].empty());
  const auto out = extract_speaker(S, masks, plan, 1, rec.channels[0].size());
  REQUIRE(out.size() == rec.channels[0].size());
  for (double v : out) REQUIRE(v == 0.0);
}

TEST_CASE("overlap extraction beats the best raw channel") {
  // Utterances keep a margin from the recording edges: overlap-add synthesis
  // divides by the window sum, which rolls off over the first and last frame,
  // and beamformed frames are no longer window-shaped there.
  SceneConfig cfg = random_layout(4, 2, 913);
  cfg.snr_db = 20.0;
  cfg.utterance_plan = {{0, 0.3, 5.0, 0}, {1, 3.0, 7.7, 1}};
  cfg.duration_s = 8.0;
  std::vector<std::vector<double>> srcs = {speech_like_signal(8 * 16000, 914),
                                           speech_like_signal(8 * 16000, 915)};
  equalize_source_levels(cfg, srcs);
  auto [rec, gt] = simulate_scene(cfg, srcs);
  const auto S = stft(rec, StftConfig{});

  std::vector<SpectrogramTensor> clean;
  for (int i = 0; i < 2; ++i) {
    SceneConfig one = cfg;
    one.source_positions = {cfg.source_positions[i]};
    one.utterance_plan = {{0, cfg.utterance_plan[i].onset_s, cfg.utterance_plan[i].offset_s, 0}};
    one.snr_db = 1000.0;
    auto [rec1, gt1] = simulate_scene(one, {srcs[i]});
    clean.push_back(stft(rec1, StftConfig{}));
  }

  // Saturated dominance masks: a soft energy-ratio mask leaks a scaled copy of
  // the target into the interference SCM (no speech-free frames exist inside a
  // segment), and the beamformer then cancels the target it was steered at.
  MaskSet masks(3, S.num_frames, S.num_bins);
  for (int l = 0; l < S.num_frames; ++l)
    for (int k = 0; k < S.num_bins; ++k) {
      double e[2] = {0.0, 0.0}, ey = 0.0;
      for (int m = 0; m < S.num_channels; ++m) {
        for (int i = 0; i < 2; ++i)
          if (l < clean[i].num_frames) e[i] += std::norm(clean[i].at(m, l, k));
        ey += std::norm(S.at(m, l, k));
      }
      const double g0 = (ey > 0.0 && e[0] / ey > 0.5) ? 1.0 : 0.0;
      const double g1 = (ey > 0.0 && e[1] / ey > 0.5) ? 1.0 : 0.0;
      masks.at(0, l, k) = g0;
      masks.at(1, l, k) = g1;
      masks.at(2, l, k) = 1.0 - g0 - g1;
    }

  const auto plan = resegment(masks);
  for (int i = 0; i < 2; ++i) {
    REQUIRE_FALSE(plan.per_speaker[i].empty());
    const auto out = extract_speaker(S, masks, plan, i, rec.channels[0].size());
    double best_raw = -120.0;
    for (const auto& ch : rec.channels)
      best_raw = std::max(best_raw, si_sdr_shift_tolerant(gt.clean_sources[i], ch, 256));
    const double enhanced = si_sdr_shift_tolerant(gt.clean_sources[i], out, 256);
    REQUIRE(enhanced - best_raw > 5.0);
  }
}
