#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>
#include <vector>

#include "asn/rttm.hpp"

using namespace asn;

TEST_CASE("rttm write then read is lossless at millisecond precision") {
  std::mt19937 rng(42);
  std::uniform_real_distribution<double> onset(0.0, 100.0);
  std::uniform_real_distribution<double> dur(0.001, 20.0);
  RttmDocument doc;
  for (int i = 0; i < 200; ++i) {
    RttmEntry e;
    e.session = "sess" + std::to_string(i % 3);
    e.speaker = "spk" + std::to_string(i % 7);
    e.onset_s = std::round(onset(rng) * 1000.0) / 1000.0;
    e.duration_s = std::round(dur(rng) * 1000.0) / 1000.0;
    if (e.duration_s == 0.0) e.duration_s = 0.001;
    doc.entries.push_back(e);
  }
  std::stringstream ss;
  write_rttm(ss, doc);
  const auto back = read_rttm(ss);
  REQUIRE(back.entries.size() == doc.entries.size());
  for (std::size_t i = 0; i < doc.entries.size(); ++i) {
    REQUIRE(back.entries[i].session == doc.entries[i].session);
    REQUIRE(back.entries[i].speaker == doc.entries[i].speaker);
    REQUIRE(back.entries[i].onset_s == Catch::Approx(doc.entries[i].onset_s).margin(5e-4));
    REQUIRE(back.entries[i].duration_s == Catch::Approx(doc.entries[i].duration_s).margin(5e-4));
  }
}

TEST_CASE("rttm reader skips comments and non-speaker records") {
  std::stringstream ss;
  ss << "; comment line\n"
     << "SPKR-INFO mtg 1 <NA> <NA> <NA> unknown spk00 <NA> <NA>\n"
     << "SPEAKER mtg 1 1.250 2.000 <NA> <NA> alice <NA> <NA>\n"
     << "\n"
     << "SPEAKER mtg 1 4.000 0.500 <NA> <NA> bob <NA> <NA>\n";
  const auto doc = read_rttm(ss);
  REQUIRE(doc.entries.size() == 2);
  REQUIRE(doc.entries[0].speaker == "alice");
  REQUIRE(doc.entries[0].onset_s == Catch::Approx(1.25));
  REQUIRE(doc.entries[1].duration_s == Catch::Approx(0.5));
}

TEST_CASE("rttm reader rejects malformed input") {
  SECTION("truncated field list") {
    std::stringstream ss("SPEAKER mtg 1 1.0\n");
    REQUIRE_THROWS_AS(read_rttm(ss), std::runtime_error);
  }
  SECTION("non-numeric time") {
    std::stringstream ss("SPEAKER mtg 1 abc 2.0 <NA> <NA> alice <NA> <NA>\n");
    REQUIRE_THROWS_AS(read_rttm(ss), std::runtime_error);
  }
  SECTION("zero duration") {
    std::stringstream ss("SPEAKER mtg 1 1.0 0.000 <NA> <NA> alice <NA> <NA>\n");
    REQUIRE_THROWS_AS(read_rttm(ss), std::runtime_error);
  }
  SECTION("negative onset") {
    std::stringstream ss("SPEAKER mtg 1 -1.0 2.0 <NA> <NA> alice <NA> <NA>\n");
    REQUIRE_THROWS_AS(read_rttm(ss), std::runtime_error);
  }
}

TEST_CASE("writer rejects invalid entries") {
  RttmDocument doc;
  doc.entries.push_back({"mtg", 1.0, 0.0, "alice"});
  std::stringstream ss;
  REQUIRE_THROWS_AS(write_rttm(ss, doc), std::invalid_argument);
}

TEST_CASE("activity to rttm emits one segment per run") {
  ActivityMatrix act(2, 100, 0.016);
  for (int l = 10; l < 20; ++l) act.set(0, l, true);
  for (int l = 30; l < 35; ++l) act.set(0, l, true);
  for (int l = 0; l < 100; ++l) act.set(1, l, true);
  const auto doc = activity_to_rttm(act, "mtg");
  REQUIRE(doc.entries.size() == 3);
  REQUIRE(doc.entries[0].speaker == "spk00");
  REQUIRE(doc.entries[0].onset_s == Catch::Approx(0.16));
  REQUIRE(doc.entries[0].duration_s == Catch::Approx(0.16));
  REQUIRE(doc.entries[1].onset_s == Catch::Approx(0.48));
  REQUIRE(doc.entries[2].speaker == "spk01");
  REQUIRE(doc.entries[2].duration_s == Catch::Approx(1.6));
}

TEST_CASE("activity to rttm and back is the identity on the same grid") {
  std::mt19937 rng(7);
  ActivityMatrix act(4, 500, 0.016);
  for (int i = 0; i < 4; ++i) {
    int l = 0;
    while (l < 500) {
      const int run = 5 + static_cast<int>(rng() % 40);
      const int gap = 5 + static_cast<int>(rng() % 40);
      for (int f = l; f < std::min(500, l + run); ++f) act.set(i, f, true);
      l += run + gap;
    }
  }
  const auto doc = activity_to_rttm(act, "mtg");
  const auto back = rttm_to_activity(doc, act.frame_shift_s, act.num_frames);
  REQUIRE(back.num_speakers == act.num_speakers);
  for (int i = 0; i < 4; ++i)
    for (int l = 0; l < 500; ++l) REQUIRE(back.get(i, l) == act.get(i, l));
}

TEST_CASE("rttm to activity uses frame centers") {
  RttmDocument doc;
  doc.entries.push_back({"mtg", 0.016, 0.032, "a"});
  // frame centers at 8, 24, 40, 56 ms; the segment [16, 48) covers 24 and 40
  const auto act = rttm_to_activity(doc, 0.016, 4);
  REQUIRE(act.num_speakers == 1);
  REQUIRE_FALSE(act.get(0, 0));
  REQUIRE(act.get(0, 1));
  REQUIRE(act.get(0, 2));
  REQUIRE_FALSE(act.get(0, 3));
}

TEST_CASE("rttm to activity rejects a bad grid") {
  RttmDocument doc;
  REQUIRE_THROWS_AS(rttm_to_activity(doc, 0.0, 10), std::invalid_argument);
  REQUIRE_THROWS_AS(rttm_to_activity(doc, 0.016, -1), std::invalid_argument);
}
