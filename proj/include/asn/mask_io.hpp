#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "asn/gss.hpp"

namespace asn {

namespace detail {

constexpr std::array<char, 8> kMaskMagic = {'A', 'S', 'N', 'M', 'A', 'S', 'K', '1'};

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
  const std::array<unsigned char, 4> b = {static_cast<unsigned char>(v & 0xff),
                                          static_cast<unsigned char>(v >> 8 & 0xff),
                                          static_cast<unsigned char>(v >> 16 & 0xff),
                                          static_cast<unsigned char>(v >> 24 & 0xff)};
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline std::uint32_t get_u32_le(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace detail

// Binary layout: 8-byte magic, three little-endian u32 dims (classes, frames,
// bins), then float32 little-endian values in class-major order.
inline void write_masks(const std::string& path, const MaskSet& masks) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_masks: cannot open " + path);
  os.write(detail::kMaskMagic.data(), detail::kMaskMagic.size());
  detail::put_u32_le(os, static_cast<std::uint32_t>(masks.num_classes));
  detail::put_u32_le(os, static_cast<std::uint32_t>(masks.num_frames));
  detail::put_u32_le(os, static_cast<std::uint32_t>(masks.num_bins));
  std::vector<float> row(masks.num_bins);
  for (int i = 0; i < masks.num_classes; ++i)
    for (int l = 0; l < masks.num_frames; ++l) {
      for (int k = 0; k < masks.num_bins; ++k) row[k] = static_cast<float>(masks.at(i, l, k));
      os.write(reinterpret_cast<const char*>(row.data()), row.size() * sizeof(float));
    }
  if (!os) throw std::runtime_error("write_masks: short write to " + path);
}

inline MaskSet read_masks(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_masks: cannot open " + path);
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != detail::kMaskMagic)
    throw std::runtime_error("read_masks: bad magic in " + path);
  const std::uint32_t classes = detail::get_u32_le(is);
  const std::uint32_t frames = detail::get_u32_le(is);
  const std::uint32_t bins = detail::get_u32_le(is);
  if (!is) throw std::runtime_error("read_masks: truncated header in " + path);
  MaskSet masks(static_cast<int>(classes), static_cast<int>(frames), static_cast<int>(bins));
  std::vector<float> row(bins);
  for (std::uint32_t i = 0; i < classes; ++i)
    for (std::uint32_t l = 0; l < frames; ++l) {
      is.read(reinterpret_cast<char*>(row.data()), row.size() * sizeof(float));
      if (!is) throw std::runtime_error("read_masks: truncated payload in " + path);
      for (std::uint32_t k = 0; k < bins; ++k)
        masks.at(static_cast<int>(i), static_cast<int>(l), static_cast<int>(k)) = row[k];
    }
  return masks;
}

}  // namespace asn
