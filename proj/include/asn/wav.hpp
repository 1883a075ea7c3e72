#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "asn/common.hpp"

namespace asn {

// Per-device sampled waveforms plus clock metadata lives elsewhere; this is
// just the audio payload as read from / written to disk.
struct MultichannelRecording {
  std::vector<std::vector<double>> channels;
  int sample_rate_hz = 16000;
  std::vector<std::string> device_ids;

  int num_channels() const { return static_cast<int>(channels.size()); }
  std::size_t min_length() const {
    std::size_t n = channels.empty() ? 0 : channels.front().size();
    for (const auto& c : channels) n = std::min(n, c.size());
    return n;
  }
};

enum class WavEncoding { kPcm16, kFloat32 };

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32(std::string& s, std::uint32_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 24) & 0xff));
}
inline void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace detail

inline MultichannelRecording load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_wav: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("load_wav: not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, num_channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  bool have_fmt = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    std::uint32_t chunk_len = detail::read_u32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = bytes.size() - body;
    if (chunk_len > avail) chunk_len = static_cast<std::uint32_t>(avail);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw std::runtime_error("load_wav: short fmt chunk: " + path);
      format = detail::read_u16(bytes.data() + body);
      num_channels = detail::read_u16(bytes.data() + body + 2);
      sample_rate = detail::read_u32(bytes.data() + body + 4);
      bits = detail::read_u16(bytes.data() + body + 14);
      if (format == 0xFFFE && chunk_len >= 40)  // WAVE_FORMAT_EXTENSIBLE
        format = detail::read_u16(bytes.data() + body + 24);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = chunk_len;
    }
    pos = body + chunk_len + (chunk_len % 2);  // chunks are word-aligned
  }
  if (!have_fmt || data == nullptr)
    throw std::runtime_error("load_wav: missing fmt/data chunk: " + path);
  if (num_channels == 0 || sample_rate == 0)
    throw std::runtime_error("load_wav: malformed fmt chunk: " + path);

  MultichannelRecording rec;
  rec.sample_rate_hz = static_cast<int>(sample_rate);
  rec.channels.resize(num_channels);
  if (format == 1 && bits == 16) {
    const std::size_t frames = data_len / (2u * num_channels);
    for (auto& c : rec.channels) c.resize(frames);
    for (std::size_t f = 0; f < frames; ++f)
      for (int c = 0; c < num_channels; ++c) {
        const unsigned char* p = data + (f * num_channels + c) * 2;
        const std::int16_t v = static_cast<std::int16_t>(p[0] | (p[1] << 8));
        rec.channels[c][f] = static_cast<double>(v) / 32768.0;
      }
  } else if (format == 3 && bits == 32) {
    const std::size_t frames = data_len / (4u * num_channels);
    for (auto& c : rec.channels) c.resize(frames);
    for (std::size_t f = 0; f < frames; ++f)
      for (int c = 0; c < num_channels; ++c) {
        float v;
        std::memcpy(&v, data + (f * num_channels + c) * 4, 4);
        rec.channels[c][f] = static_cast<double>(v);
      }
  } else {
    throw std::runtime_error("load_wav: unsupported encoding (format " + std::to_string(format) +
                             ", " + std::to_string(bits) + " bit): " + path);
  }
  for (int c = 0; c < num_channels; ++c) rec.device_ids.push_back("ch" + std::to_string(c));
  return rec;
}

inline void write_wav(const std::string& path, const std::vector<std::vector<double>>& channels,
                      int sample_rate_hz, WavEncoding enc = WavEncoding::kFloat32) {
  if (channels.empty()) throw std::invalid_argument("write_wav: no channels");
  const std::size_t frames = channels.front().size();
  for (const auto& c : channels)
    if (c.size() != frames) throw std::invalid_argument("write_wav: channel length mismatch");

  const int nch = static_cast<int>(channels.size());
  const int bytes_per = enc == WavEncoding::kPcm16 ? 2 : 4;
  const std::uint32_t data_len = static_cast<std::uint32_t>(frames * nch * bytes_per);

  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  detail::put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, enc == WavEncoding::kPcm16 ? 1 : 3);
  detail::put_u16(out, static_cast<std::uint16_t>(nch));
  detail::put_u32(out, static_cast<std::uint32_t>(sample_rate_hz));
  detail::put_u32(out, static_cast<std::uint32_t>(sample_rate_hz * nch * bytes_per));
  detail::put_u16(out, static_cast<std::uint16_t>(nch * bytes_per));
  detail::put_u16(out, static_cast<std::uint16_t>(8 * bytes_per));
  out += "data";
  detail::put_u32(out, data_len);

  for (std::size_t f = 0; f < frames; ++f)
    for (int c = 0; c < nch; ++c) {
      const double v = channels[c][f];
      if (enc == WavEncoding::kPcm16) {
        const double clamped = std::clamp(v, -1.0, 32767.0 / 32768.0);
        const auto q = static_cast<std::int16_t>(std::lround(clamped * 32768.0));
        detail::put_u16(out, static_cast<std::uint16_t>(q));
      } else {
        const float fv = static_cast<float>(v);
        std::uint32_t u;
        std::memcpy(&u, &fv, 4);
        detail::put_u32(out, u);
      }
    }

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_wav: cannot open " + path);
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw std::runtime_error("write_wav: write failed: " + path);
}

inline void write_wav(const std::string& path, const MultichannelRecording& rec,
                      WavEncoding enc = WavEncoding::kFloat32) {
  write_wav(path, rec.channels, rec.sample_rate_hz, enc);
}

}  // namespace asn
