#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tape/numcore/tensor.hpp"

// Binary tensor record:
//   "TAPE" | version u16 | rank u16 | dims u64[rank] | f64[numel]
// All integers and floats little-endian.
//
// Named container (checkpoints, dataset caches):
//   "TAPC" | version u16 | header_len u32 | header bytes (UTF-8 text)
//   | count u32 | count x (name_len u16 | name bytes | tensor record)
namespace tape::io {

inline constexpr std::uint16_t kTensorVersion = 1;
inline constexpr std::uint16_t kContainerVersion = 1;

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw FileError("unexpected end of stream");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double d) { put_le(os, std::bit_cast<std::uint64_t>(d)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_le<std::uint64_t>(is)); }

inline void expect_magic(std::istream& is, const char* magic) {
  char buf[4];
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    throw FileError(std::string("bad magic, expected \"") + magic + "\"");
  }
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("TAPE", 4);
  detail::put_le<std::uint16_t>(os, kTensorVersion);
  detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(os, d);
  for (double v : t.data()) detail::put_f64(os, v);
  if (!os) throw FileError("write_tensor: stream failure");
}

inline Tensor read_tensor(std::istream& is) {
  detail::expect_magic(is, "TAPE");
  const auto version = detail::get_le<std::uint16_t>(is);
  if (version != kTensorVersion) throw FileError("unsupported tensor version " + std::to_string(version));
  const auto rank = detail::get_le<std::uint16_t>(is);
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(detail::get_le<std::uint64_t>(is));
  const std::size_t n = shape_numel(shape);
  if (n > (std::size_t{1} << 34)) throw FileError("tensor record too large");
  std::vector<double> data(n);
  for (auto& v : data) v = detail::get_f64(is);
  return Tensor(std::move(shape), std::move(data));
}

inline void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FileError("cannot open for writing: " + path);
  write_tensor(os, t);
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FileError("cannot open for reading: " + path);
  return read_tensor(is);
}

/// Named tensors plus a free-form text header.
struct Archive {
  std::string header;
  std::map<std::string, Tensor> entries;

  const Tensor& at(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw FileError("archive has no entry named '" + name + "'");
    return it->second;
  }
};

inline void write_archive(std::ostream& os, const Archive& ar) {
  os.write("TAPC", 4);
  detail::put_le<std::uint16_t>(os, kContainerVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ar.header.size()));
  os.write(ar.header.data(), static_cast<std::streamsize>(ar.header.size()));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ar.entries.size()));
  for (const auto& [name, t] : ar.entries) {
    detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
  if (!os) throw FileError("write_archive: stream failure");
}

inline Archive read_archive(std::istream& is) {
  detail::expect_magic(is, "TAPC");
  const auto version = detail::get_le<std::uint16_t>(is);
  if (version != kContainerVersion) throw FileError("unsupported container version " + std::to_string(version));
  Archive ar;
  const auto hlen = detail::get_le<std::uint32_t>(is);
  ar.header.resize(hlen);
  if (hlen && !is.read(ar.header.data(), hlen)) throw FileError("truncated archive header");
  const auto count = detail::get_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = detail::get_le<std::uint16_t>(is);
    std::string name(nlen, '\0');
    if (nlen && !is.read(name.data(), nlen)) throw FileError("truncated entry name");
    ar.entries.emplace(std::move(name), read_tensor(is));
  }
  return ar;
}

inline void save_archive(const std::string& path, const Archive& ar) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FileError("cannot open for writing: " + path);
  write_archive(os, ar);
}

inline Archive load_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FileError("cannot open for reading: " + path);
  return read_archive(is);
}

/// CSV export for rank <= 2 tensors, full round-trip precision.
inline void write_csv(std::ostream& os, const Tensor& t) {
  if (t.rank() > 2) throw DimensionError("write_csv: rank " + std::to_string(t.rank()) + " > 2");
  const std::size_t rows = t.rank() == 2 ? t.dim(0) : 1;
  const std::size_t cols = t.rank() == 0 ? 1 : t.shape().back();
  os << std::setprecision(17);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) os << ',';
      os << t[r * cols + c];
    }
    os << '\n';
  }
}

inline std::string to_csv(const Tensor& t) {
  std::ostringstream os;
  write_csv(os, t);
  return os.str();
}

}  // namespace tape::io
