#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "asn/common.hpp"

namespace asn {

struct RttmEntry {
  std::string session;
  double onset_s = 0.0;
  double duration_s = 0.0;
  std::string speaker;
};

struct RttmDocument {
  std::vector<RttmEntry> entries;
};

namespace detail {

// Times are serialized with three decimals; keeping all arithmetic on integer
// milliseconds makes write -> read an identity.
inline long long to_ms(double seconds) { return std::llround(seconds * 1000.0); }

inline std::string format_ms(long long ms) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%lld.%03lld", ms / 1000, ms % 1000);
  return buf;
}

}  // namespace detail

inline void write_rttm(std::ostream& os, const RttmDocument& doc) {
  for (const auto& e : doc.entries) {
    if (!(e.duration_s > 0.0) || e.onset_s < 0.0)
      throw std::invalid_argument("write_rttm: entry for " + e.speaker +
                                  " has non-positive duration or negative onset");
    os << "SPEAKER " << e.session << " 1 " << detail::format_ms(detail::to_ms(e.onset_s)) << ' '
       << detail::format_ms(detail::to_ms(e.duration_s)) << " <NA> <NA> " << e.speaker
       << " <NA> <NA>\n";
  }
}

inline void write_rttm(const std::string& path, const RttmDocument& doc) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_rttm: cannot open " + path);
  write_rttm(os, doc);
  if (!os) throw std::runtime_error("write_rttm: short write to " + path);
}

inline RttmDocument read_rttm(std::istream& is) {
  RttmDocument doc;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == ';') continue;
    std::istringstream ls(line);
    std::string type, session, channel, onset, duration, ortho, stype, speaker;
    if (!(ls >> type >> session >> channel >> onset >> duration >> ortho >> stype >> speaker))
      throw std::runtime_error("read_rttm: malformed line " + std::to_string(lineno));
    if (type != "SPEAKER") continue;
    RttmEntry e;
    e.session = session;
    e.speaker = speaker;
    try {
      e.onset_s = std::stod(onset);
      e.duration_s = std::stod(duration);
    } catch (const std::exception&) {
      throw std::runtime_error("read_rttm: bad time field on line " + std::to_string(lineno));
    }
    if (!(e.duration_s > 0.0) || e.onset_s < 0.0)
      throw std::runtime_error("read_rttm: bad segment on line " + std::to_string(lineno));
    doc.entries.push_back(std::move(e));
  }
  return doc;
}

inline RttmDocument read_rttm(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_rttm: cannot open " + path);
  return read_rttm(static_cast<std::istream&>(is));
}

// Maximal per-speaker activity runs become one RTTM segment each. Labels are
// "spk00", "spk01", ... so documents from different stages line up by index.
inline RttmDocument activity_to_rttm(const ActivityMatrix& act, const std::string& session) {
  RttmDocument doc;
  for (int i = 0; i < act.num_speakers; ++i) {
    int run_begin = -1;
    for (int l = 0; l <= act.num_frames; ++l) {
      const bool on = l < act.num_frames && act.get(i, l);
      if (on && run_begin < 0) run_begin = l;
      if (!on && run_begin >= 0) {
        RttmEntry e;
        e.session = session;
        char label[16];
        std::snprintf(label, sizeof label, "spk%02d", i);
        e.speaker = label;
        e.onset_s = run_begin * act.frame_shift_s;
        e.duration_s = (l - run_begin) * act.frame_shift_s;
        doc.entries.push_back(std::move(e));
        run_begin = -1;
      }
    }
  }
  return doc;
}

// Inverse of activity_to_rttm onto a fixed frame grid: a frame is active when
// its center falls inside a segment. Speaker order follows first appearance.
inline ActivityMatrix rttm_to_activity(const RttmDocument& doc, double frame_shift_s,
                                       int num_frames) {
  if (frame_shift_s <= 0.0 || num_frames < 0)
    throw std::invalid_argument("rttm_to_activity: bad frame grid");
  std::vector<std::string> speakers;
  for (const auto& e : doc.entries)
    if (std::find(speakers.begin(), speakers.end(), e.speaker) == speakers.end())
      speakers.push_back(e.speaker);
  ActivityMatrix act(static_cast<int>(speakers.size()), num_frames, frame_shift_s);
  for (const auto& e : doc.entries) {
    const int i = static_cast<int>(std::find(speakers.begin(), speakers.end(), e.speaker) -
                                   speakers.begin());
    for (int l = 0; l < num_frames; ++l) {
      const double center = (l + 0.5) * frame_shift_s;
      if (center >= e.onset_s && center < e.onset_s + e.duration_s) act.set(i, l, true);
    }
  }
  return act;
}

}  // namespace asn
