#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "asn/fft_util.hpp"
#include "asn/scene_sim.hpp"
#include "asn/sync.hpp"
#include "test_util.hpp"

using namespace asn;

namespace {

// sub-sample lag between two windows via correlation peak + parabolic fit
double measure_lag(const std::vector<double>& ref, const std::vector<double>& other,
                   std::size_t start, std::size_t len, int max_lag) {
  const std::vector<double> a(other.begin() + start, other.begin() + start + len);
  const std::vector<double> b(ref.begin() + start, ref.begin() + start + len);
  const auto cc = cross_correlate(a, b, max_lag);
  const int lag = cc.argmax_lag();
  const int i = lag + cc.max_lag;
  if (i <= 0 || i + 1 >= static_cast<int>(cc.values.size())) return lag;
  return lag + parabolic_offset(cc.values[i - 1], cc.values[i], cc.values[i + 1]);
}

}  // namespace

TEST_CASE("estimate_sto recovers a late device start") {
  const auto x = speech_like_signal(12 * 16000, 901);
  const auto other = apply_sto_sro(x, 400, 0.0);
  REQUIRE(estimate_sto(x, other, 10.0, 16000) == 400);
}

TEST_CASE("estimate_sto of a channel against itself is zero") {
  const auto x = speech_like_signal(12 * 16000, 902);
  REQUIRE(estimate_sto(x, x, 10.0, 16000) == 0);
}

TEST_CASE("estimate_sto rejects a window longer than the signal") {
  const auto x = speech_like_signal(5 * 16000, 903);
  REQUIRE_THROWS_AS(estimate_sto(x, x, 10.0, 16000), std::invalid_argument);
}

TEST_CASE("estimate_sto handles negative offsets") {
  const auto x = speech_like_signal(12 * 16000, 904);
  const auto other = apply_sto_sro(x, -250, 0.0);
  REQUIRE(estimate_sto(x, other, 10.0, 16000) == -250);
}

TEST_CASE("compensate_sto with a zero report is the identity") {
  const auto x = speech_like_signal(16000, 905);
  const auto y = speech_like_signal(16000, 906);
  MultichannelRecording rec;
  rec.channels = {x, y};
  SyncReport report;
  report.sto_samples = {0, 0};
  const auto out = compensate_sto(rec, report);
  REQUIRE(out.channels[0] == x);
  REQUIRE(out.channels[1] == y);
}

TEST_CASE("compensate_sto realigns a late device") {
  const auto x = speech_like_signal(3 * 16000, 907);
  const auto other = apply_sto_sro(x, 250, 0.0);
  MultichannelRecording rec;
  rec.channels = {x, other};
  SyncReport report;
  report.sto_samples = {0, 250};
  const auto out = compensate_sto(rec, report);
  REQUIRE(out.channels[0].size() == out.channels[1].size());
  double err = 0.0;
  for (std::size_t n = 250; n < out.channels[0].size(); ++n)
    err = std::max(err, std::abs(out.channels[0][n] - out.channels[1][n]));
  REQUIRE(err < 1e-9);
}

TEST_CASE("estimate_sto on a simulated scene lands within the acoustic spread") {
  auto cfg = testutil::random_layout(3, 1, 910);
  cfg.utterance_plan = make_meeting_plan(1, 12.0, 0.0, 911);
  cfg.duration_s = 12.0;
  cfg.snr_db = 30.0;
  cfg.per_device_sto_samples = {0, 1000, 0};
  cfg.per_device_sro_ppm = {0.0, 0.0, 0.0};
  std::vector<std::vector<double>> sources = {speech_like_signal(12 * 16000, 912)};
  const auto [rec, gt] = simulate_scene(cfg, sources);

  double max_tdof = 0.0;
  for (const auto& v : gt.true_tdoa_vectors)
    for (double t : v) max_tdof = std::max(max_tdof, std::abs(t));
  const int est = estimate_sto(rec.channels[0], rec.channels[1], 10.0, rec.sample_rate_hz);
  REQUIRE(std::abs(est - 1000) <= max_tdof + 1.0);
}

TEST_CASE("estimate_sro is near zero for a common clock") {
  const auto x = speech_like_signal(40 * 16000, 920);
  REQUIRE(std::abs(estimate_sro(x, x, 16000)) < 2.0);
}

TEST_CASE("estimate_sro recovers an injected 50 ppm drift") {
  const auto x = speech_like_signal(40 * 16000, 921);
  const auto y = apply_sto_sro(x, 0, 50.0);
  const double est = estimate_sro(x, y, 16000);
  REQUIRE(std::abs(est - 50.0) < 5.0);
}

TEST_CASE("estimate_sro is antisymmetric under swapping the channels") {
  const auto x = speech_like_signal(40 * 16000, 922);
  const auto y = apply_sto_sro(x, 0, 50.0);
  const double fwd = estimate_sro(x, y, 16000);
  const double bwd = estimate_sro(y, x, 16000);
  REQUIRE(std::abs(fwd + bwd) < 2.0);
}

TEST_CASE("estimate_sro needs at least three usable segments") {
  const auto x = speech_like_signal(6 * 16000, 923);
  REQUIRE_THROWS_WITH(estimate_sro(x, x, 16000),
                      Catch::Matchers::ContainsSubstring("insufficient coherent segments"));
}

TEST_CASE("resample_sro undoes an applied drift") {
  const auto x = speech_like_signal(60 * 16000, 930);
  const auto y = apply_sto_sro(x, 0, 80.0);
  const auto z = resample_sro(y, 80.0);
  const std::size_t win = 16000;
  const double lag_start = measure_lag(x, z, 8000, win, 16);
  const double lag_end = measure_lag(x, z, 58 * 16000, win, 16);
  REQUIRE(std::abs(lag_start) < 0.1);
  REQUIRE(std::abs(lag_end) < 0.1);
  REQUIRE(std::abs(lag_end - lag_start) < 0.1);
}

TEST_CASE("resample_sro rejects out-of-range drift") {
  std::vector<double> x(100, 0.0);
  REQUIRE_THROWS_AS(resample_sro(x, 1200.0), std::invalid_argument);
}

TEST_CASE("synchronize aligns a drifting late device to under a sample per minute") {
  auto cfg = testutil::random_layout(3, 1, 940);
  cfg.utterance_plan = make_meeting_plan(1, 62.0, 0.0, 941);
  cfg.duration_s = 62.0;
  cfg.snr_db = 30.0;
  cfg.per_device_sto_samples = {0, 700, -300};
  cfg.per_device_sro_ppm = {0.0, 60.0, -40.0};
  std::vector<std::vector<double>> sources = {speech_like_signal(62 * 16000, 942)};
  const auto [rec, gt] = simulate_scene(cfg, sources);

  const auto [synced, report] = synchronize(rec);
  REQUIRE(report.reference_channel == 0);
  REQUIRE(report.sto_samples[0] == 0);
  REQUIRE(report.sro_ppm[0] == 0.0);

  double max_tdof = 0.0;
  for (const auto& v : gt.true_tdoa_vectors)
    for (double t : v) max_tdof = std::max(max_tdof, std::abs(t));
  REQUIRE(std::abs(report.sto_samples[1] - 700) <= max_tdof + 1.0);
  REQUIRE(std::abs(report.sto_samples[2] + 300) <= max_tdof + 1.0);

  // residual drift: the pairwise lag must stay put across the recording
  const std::size_t win = 16000;
  const std::size_t last = synced.min_length() - win - 16000;
  for (int m = 1; m <= 2; ++m) {
    const double early = measure_lag(synced.channels[0], synced.channels[m], 16000, win, 600);
    const double late = measure_lag(synced.channels[0], synced.channels[m], last, win, 600);
    REQUIRE(std::abs(late - early) <= 1.0);
  }
}
