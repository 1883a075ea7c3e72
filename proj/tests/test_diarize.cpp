#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "asn/diarize.hpp"
#include "asn/metrics.hpp"
#include "asn/scene_sim.hpp"
#include "test_util.hpp"

using namespace asn;

namespace {

TdoaVector vec(std::vector<double> tau, int frame = -1) {
  TdoaVector v;
  v.tau = std::move(tau);
  v.frame = frame;
  v.srp = 1.0;
  return v;
}

constexpr double kShift = 0.016;

}  // namespace

TEST_CASE("leader_follower keeps a static continuous source in one cluster") {
  std::vector<std::vector<TdoaVector>> pf(100);
  for (int l = 0; l < 100; ++l) pf[l] = {vec({3.0, -2.0, 5.0})};
  const auto clusters = leader_follower(pf, kShift);
  REQUIRE(clusters.size() == 1);
  REQUIRE(clusters[0].members.size() == 100);
  REQUIRE(clusters[0].leader().frame == 99);
  REQUIRE(clusters[0].representative() == std::vector<double>{3.0, -2.0, 5.0});
}

TEST_CASE("recency expiry splits activity across a two-second gap") {
  std::vector<std::vector<TdoaVector>> pf(225);
  for (int l = 0; l < 50; ++l) pf[l] = {vec({3.0, -2.0, 5.0})};
  for (int l = 175; l < 225; ++l) pf[l] = {vec({3.0, -2.0, 5.0})};
  const auto clusters = leader_follower(pf, kShift);
  REQUIRE(clusters.size() == 2);
  REQUIRE(clusters[0].members.size() == 50);
  REQUIRE(clusters[1].members.size() == 50);
}

TEST_CASE("distance gate separates interleaved speakers") {
  std::vector<std::vector<TdoaVector>> pf(50);
  for (int l = 0; l < 50; ++l) pf[l] = {vec({3.0, -2.0, 5.0}), vec({12.0, 9.0, -8.0})};
  const auto clusters = leader_follower(pf, kShift);
  REQUIRE(clusters.size() == 2);
  for (const auto& c : clusters) {
    REQUIRE(c.members.size() == 50);
    for (std::size_t i = 1; i < c.members.size(); ++i)
      REQUIRE(c.members[i].frame > c.members[i - 1].frame);
    for (const auto& m : c.members) REQUIRE(m.tau == c.members.front().tau);
  }
}

TEST_CASE("small jitter stays inside one cluster") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  std::vector<std::vector<TdoaVector>> pf(80);
  for (int l = 0; l < 80; ++l) pf[l] = {vec({3.0 + u(rng), -2.0 + u(rng), 5.0 + u(rng)})};
  REQUIRE(leader_follower(pf, kShift).size() == 1);
}

TEST_CASE("clusters on an alternating two-speaker scene are pure") {
  auto cfg = testutil::random_layout(4, 2, 60);
  cfg.utterance_plan = make_meeting_plan(2, 20.0, 0.0, 61);
  cfg.duration_s = 20.0;
  cfg.snr_db = 30.0;
  std::vector<std::vector<double>> sources = {speech_like_signal(20 * 16000, 62),
                                              speech_like_signal(20 * 16000, 63)};
  testutil::equalize_source_levels(cfg, sources);
  const auto [rec, gt] = simulate_scene(cfg, sources);
  const auto selected = testutil::run_tdoa_frontend(rec);
  const auto clusters = leader_follower(selected, kShift);

  int turns = 0;
  for (std::size_t i = 1; i < cfg.utterance_plan.size(); ++i)
    turns += cfg.utterance_plan[i].speaker != cfg.utterance_plan[i - 1].speaker ? 1 : 0;
  REQUIRE(static_cast<int>(clusters.size()) >= turns);

  std::size_t pure = 0, total = 0;
  for (const auto& c : clusters) {
    std::vector<std::size_t> votes(gt.true_tdoa_vectors.size(), 0);
    for (const auto& m : c.members) {
      double best = 1e18;
      std::size_t who = 0;
      for (std::size_t i = 0; i < gt.true_tdoa_vectors.size(); ++i) {
        const double d = detail::max_abs_diff(m.tau, gt.true_tdoa_vectors[i]);
        if (d < best) {
          best = d;
          who = i;
        }
      }
      ++votes[who];
    }
    pure += *std::max_element(votes.begin(), votes.end());
    total += c.members.size();
  }
  REQUIRE(total > 200);
  REQUIRE(static_cast<double>(pure) / total >= 0.95);
}

TEST_CASE("single_linkage merges identical representatives into one group") {
  std::vector<LocalCluster> clusters;
  for (int c = 0; c < 5; ++c) {
    LocalCluster lc;
    for (int i = 0; i < 10; ++i) lc.members.push_back(vec({4.0, -1.0, 2.0}, c * 100 + i));
    clusters.push_back(lc);
  }
  const auto groups = single_linkage(clusters, 4.0);
  REQUIRE(groups.size() == 1);
  REQUIRE(groups[0].size() == 5);
}

TEST_CASE("single_linkage keeps well-separated populations apart") {
  std::mt19937 rng(12);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<LocalCluster> clusters;
  for (int c = 0; c < 6; ++c) {
    const double base = c % 2 == 0 ? 0.0 : 40.0;
    LocalCluster lc;
    for (int i = 0; i < 8; ++i)
      lc.members.push_back(vec({base + u(rng), base - 3.0 + u(rng), base + 7.0 + u(rng)}, c * 50 + i));
    clusters.push_back(lc);
  }
  const auto groups = single_linkage(clusters, 4.0);
  REQUIRE(groups.size() == 2);
  for (const auto& g : groups) REQUIRE(g.size() == 3);
}

TEST_CASE("prune_clusters keeps disjoint activity even with equal representatives") {
  SpeakerGroup a, b;
  a.representative = b.representative = {3.0, -2.0, 5.0, 1.0, 7.0, -4.0};
  for (int f = 0; f < 100; ++f) a.frames.push_back(f);
  for (int f = 100; f < 160; ++f) b.frames.push_back(f);
  const auto kept = prune_clusters({a, b}, 2.0);
  REQUIRE(kept.size() == 2);
}

TEST_CASE("prune_clusters removes duplicates and echo combinations") {
  SpeakerGroup truth, echo, other;
  truth.representative = {3.0, -2.0, 5.0, 1.0, 7.0, -4.0};
  for (int f = 0; f < 100; ++f) truth.frames.push_back(f);
  // shares two elements within tolerance, 100 % of its frames overlap
  echo.representative = {3.5, -1.0, 25.0, 30.0, -20.0, 18.0};
  for (int f = 0; f < 50; ++f) echo.frames.push_back(f);
  // overlaps heavily but matches in no element
  other.representative = {10.0, 12.0, -9.0, 6.0, -15.0, 20.0};
  for (int f = 0; f < 70; ++f) other.frames.push_back(f);

  const auto kept = prune_clusters({truth, echo, other}, 2.0);
  REQUIRE(kept.size() == 2);
  REQUIRE(kept[0].frames.size() == 100);  // largest never pruned
  REQUIRE(kept[1].representative == other.representative);

  SpeakerGroup dup = truth;
  dup.frames.resize(40);
  const auto kept2 = prune_clusters({truth, dup}, 2.0);
  REQUIRE(kept2.size() == 1);
}

TEST_CASE("prune_clusters drops overlapped groups that never lead a frame") {
  auto with_members = [](int f0, int f1, double srp, std::vector<double> rep) {
    SpeakerGroup g;
    g.representative = std::move(rep);
    for (int f = f0; f < f1; ++f) {
      g.frames.push_back(f);
      TdoaVector v;
      v.tau = g.representative;
      v.frame = f;
      v.srp = srp;
      g.members.push_back(v);
    }
    return g;
  };
  const auto parent = with_members(0, 100, 10.0, {3.0, -2.0, 5.0, 1.0, 7.0, -4.0});
  // shares only one element, fully overlapped, always second-best
  const auto shadow = with_members(0, 60, 5.0, {3.0, 40.0, -30.0, 25.0, -18.0, 33.0});
  // quiet but tops its own solo frames
  const auto solo = with_members(200, 260, 3.0, {-12.0, 16.0, -7.0, 22.0, -30.0, 9.0});

  std::vector<double> frame_top(300, 0.0);
  for (int f = 0; f < 100; ++f) frame_top[f] = 10.0;
  for (int f = 200; f < 260; ++f) frame_top[f] = 3.0;

  const auto kept = prune_clusters({parent, shadow, solo}, 2.0, frame_top, 0.15);
  REQUIRE(kept.size() == 2);
  REQUIRE(kept[0].frames.size() == 100);
  REQUIRE(kept[1].representative == solo.representative);

  // without the frame scores the shadow survives (representatives do not match)
  REQUIRE(prune_clusters({parent, shadow, solo}, 2.0).size() == 3);
}

TEST_CASE("smooth_activity closes short gaps") {
  ActivityMatrix act(1, 200, kShift);
  for (int f = 50; f < 60; ++f) act.set(0, f, true);
  for (int f = 64; f < 74; ++f) act.set(0, f, true);
  const auto sm = smooth_activity(act, 9, 9);
  for (int f = 50; f < 74; ++f) REQUIRE(sm.get(0, f));
  REQUIRE_FALSE(sm.get(0, 49));
  REQUIRE_FALSE(sm.get(0, 74));
}

TEST_CASE("smooth_activity erases specks when erosion outweighs dilation") {
  ActivityMatrix act(1, 200, kShift);
  act.set(0, 100, true);
  const auto sm = smooth_activity(act, 3, 5);
  for (int f = 0; f < 200; ++f) REQUIRE_FALSE(sm.get(0, f));
}

TEST_CASE("closing with equal kernels is idempotent") {
  std::mt19937 rng(13);
  std::bernoulli_distribution coin(0.3);
  ActivityMatrix act(3, 300, kShift);
  for (int s = 0; s < 3; ++s)
    for (int f = 0; f < 300; ++f) act.set(s, f, coin(rng));
  const auto once = smooth_activity(act, 9, 9);
  const auto twice = smooth_activity(once, 9, 9);
  REQUIRE(once.data == twice.data);
}

TEST_CASE("smooth_activity rejects even kernels") {
  ActivityMatrix act(1, 10, kShift);
  REQUIRE_THROWS_AS(smooth_activity(act, 4, 3), std::invalid_argument);
}

TEST_CASE("diarizing silence yields zero speakers") {
  std::vector<std::vector<TdoaVector>> pf(200);
  const auto result = diarize(pf, kShift);
  REQUIRE(result.activity.num_speakers == 0);
  REQUIRE(result.activity.num_frames == 200);
  REQUIRE(result.representatives.empty());
}

namespace {

DerResult meeting_der(double overlap, double t60, unsigned seed, DiarizationResult* out_result = nullptr,
                      const GroundTruth** out_gt = nullptr) {
  static GroundTruth gt_storage;
  auto cfg = testutil::random_layout(4, 4, seed);
  cfg.utterance_plan = make_meeting_plan(4, 45.0, overlap, seed + 1);
  cfg.duration_s = 45.0;
  cfg.snr_db = 30.0;
  cfg.t60_s = t60;
  std::vector<std::vector<double>> sources;
  for (unsigned i = 0; i < 4; ++i) sources.push_back(speech_like_signal(45 * 16000, seed + 10 + i));
  testutil::equalize_source_levels(cfg, sources);
  auto [rec, gt] = simulate_scene(cfg, sources);
  const auto selected = testutil::run_tdoa_frontend(rec);
  auto result = diarize(selected, kShift);
  const auto der = compute_der(gt.activity, result.activity);
  if (out_result) *out_result = std::move(result);
  if (out_gt) {
    gt_storage = std::move(gt);
    *out_gt = &gt_storage;
  }
  return der;
}

}  // namespace

TEST_CASE("meeting diarization, no overlap, anechoic") {
  DiarizationResult result;
  const GroundTruth* gt = nullptr;
  const auto der = meeting_der(0.0, 0.0, 500, &result, &gt);
  INFO("DER " << der.der << " miss " << der.miss << " fa " << der.false_alarm << " conf "
              << der.confusion << " speakers " << result.activity.num_speakers);
  REQUIRE(der.der < 0.10);

  // every output speaker sits on exactly one ground-truth vector
  for (const auto& rep : result.representatives) {
    int near = 0;
    for (const auto& truth : gt->true_tdoa_vectors)
      if (detail::max_abs_diff(rep, truth) <= 2.0) ++near;
    REQUIRE(near == 1);
  }
}

TEST_CASE("meeting diarization, no overlap, reverberant") {
  const auto der = meeting_der(0.0, 0.2, 520);
  INFO("DER " << der.der << " miss " << der.miss << " fa " << der.false_alarm << " conf "
              << der.confusion);
  REQUIRE(der.der < 0.10);
}

TEST_CASE("meeting diarization, 40 % overlap, anechoic") {
  const auto der = meeting_der(0.4, 0.0, 540);
  INFO("DER " << der.der << " miss " << der.miss << " fa " << der.false_alarm << " conf "
              << der.confusion);
  REQUIRE(der.der < 0.20);
}
