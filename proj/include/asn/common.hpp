#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace asn {

using cdouble = std::complex<double>;

// Microphone pairs are enumerated (0,1),(0,2),...,(0,M-1),(1,2),...,(M-2,M-1).
inline int num_pairs(int num_mics) { return num_mics * (num_mics - 1) / 2; }

inline int pair_index(int m, int n, int num_mics) {
  if (m == n) throw std::invalid_argument("pair_index: m == n");
  if (m > n) std::swap(m, n);
  return m * num_mics - m * (m + 1) / 2 + (n - m - 1);
}

inline std::vector<std::pair<int, int>> mic_pairs(int num_mics) {
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(num_pairs(num_mics));
  for (int m = 0; m < num_mics; ++m)
    for (int n = m + 1; n < num_mics; ++n) pairs.emplace_back(m, n);
  return pairs;
}

// Boolean speaker-by-frame activity. Row s is one speaker's "who spoke when".
struct ActivityMatrix {
  int num_speakers = 0;
  int num_frames = 0;
  double frame_shift_s = 0.016;
  std::vector<std::uint8_t> data;  // row-major [speaker][frame]

  ActivityMatrix() = default;
  ActivityMatrix(int speakers, int frames, double shift_s)
      : num_speakers(speakers),
        num_frames(frames),
        frame_shift_s(shift_s),
        data(static_cast<std::size_t>(speakers) * frames, 0) {}

  bool get(int s, int f) const { return data[static_cast<std::size_t>(s) * num_frames + f] != 0; }
  void set(int s, int f, bool v) { data[static_cast<std::size_t>(s) * num_frames + f] = v ? 1 : 0; }

  int count_active(int s) const {
    int n = 0;
    for (int f = 0; f < num_frames; ++f) n += get(s, f) ? 1 : 0;
    return n;
  }

  int active_speakers_at(int f) const {
    int n = 0;
    for (int s = 0; s < num_speakers; ++s) n += get(s, f) ? 1 : 0;
    return n;
  }
};

}  // namespace asn
