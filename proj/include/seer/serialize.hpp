#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "seer/tensor.hpp"

namespace seer {

// TNS1 tensor block: magic "TNS1", rank (u32), extents (u32 each), then the
// element data as raw little-endian 32-bit reals, row-major.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("tensor stream truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

inline float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

}  // namespace detail

inline void write_tns(std::ostream& os, const Tensor& t) {
  t.check_finite("tensor being serialized");
  os.write("TNS1", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(e));
  for (float v : t.values()) detail::put_f32(os, v);
}

inline Tensor read_tns(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TNS1", 4) != 0) throw DataError("bad tensor magic");
  std::uint32_t rank = detail::get_u32(is);
  if (rank > 8) throw DataError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) {
    e = detail::get_u32(is);
    if (e == 0) throw DataError("zero extent in tensor header");
  }
  Tensor t(shape);
  for (auto& v : t.values()) v = detail::get_f32(is);
  if (!is) throw DataError("tensor stream truncated");
  t.check_finite("tensor being deserialized");
  return t;
}

inline void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  write_tns(os, t);
  if (!os) throw DataError("write failed: " + path);
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  return read_tns(is);
}

// JSON-headed container: magic, u32 length, JSON bytes, then TNS1 blocks.
inline void write_json_header(std::ostream& os, const char magic[4], const std::string& json) {
  os.write(magic, 4);
  detail::put_u32(os, static_cast<std::uint32_t>(json.size()));
  os.write(json.data(), static_cast<std::streamsize>(json.size()));
}

inline std::string read_json_header(std::istream& is, const char magic[4]) {
  char got[4];
  is.read(got, 4);
  if (!is || std::memcmp(got, magic, 4) != 0)
    throw DataError(std::string("bad container magic, expected ") + std::string(magic, 4));
  std::uint32_t len = detail::get_u32(is);
  std::string json(len, '\0');
  is.read(json.data(), len);
  if (!is) throw DataError("container header truncated");
  return json;
}

}  // namespace seer
