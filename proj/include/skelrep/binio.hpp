#pragma once

// Little-endian binary primitives shared by the dataset cache and the
// checkpoint container.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "skelrep/tensor.hpp"

namespace skelrep::binio {

template <typename T>
inline T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char* p = reinterpret_cast<unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
    return v;
  }
}

template <typename T>
inline void write_raw(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (sizeof(T) > 1) {
    if constexpr (std::is_floating_point_v<T>) {
      // reinterpret through an integer of the same width for the swap
      if constexpr (sizeof(T) == 8) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        bits = byteswap_if_big(bits);
        out.write(reinterpret_cast<const char*>(&bits), 8);
        return;
      } else {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        bits = byteswap_if_big(bits);
        out.write(reinterpret_cast<const char*>(&bits), 4);
        return;
      }
    } else {
      v = byteswap_if_big(v);
    }
  }
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
inline T read_raw(std::istream& in) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::is_floating_point_v<T>) {
    if constexpr (sizeof(T) == 8) {
      std::uint64_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), 8);
      bits = byteswap_if_big(bits);
      T v;
      std::memcpy(&v, &bits, 8);
      return v;
    } else {
      std::uint32_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), 4);
      bits = byteswap_if_big(bits);
      T v;
      std::memcpy(&v, &bits, 4);
      return v;
    }
  } else {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return byteswap_if_big(v);
  }
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const auto n = read_raw<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

inline void write_magic(std::ostream& out, const char (&magic)[9]) { out.write(magic, 8); }

inline void expect_magic(std::istream& in, const char (&magic)[9], const char* what) {
  char buf[8];
  in.read(buf, 8);
  if (!in || std::memcmp(buf, magic, 8) != 0)
    fail(std::string(what) + ": bad magic bytes (not a " + what + " file)");
}

// dtype tags used in both containers
inline constexpr std::uint8_t kF64 = 8;
inline constexpr std::uint8_t kF32 = 4;

template <typename S>
inline void write_tensor(std::ostream& out, const TensorT<S>& t) {
  write_raw<std::uint8_t>(out, sizeof(S) == 8 ? kF64 : kF32);
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
  for (auto e : t.shape) write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(e));
  for (Eigen::Index i = 0; i < t.numel(); ++i) write_raw<S>(out, t.data[i]);
}

template <typename S>
inline TensorT<S> read_tensor(std::istream& in, const char* what) {
  const auto tag = read_raw<std::uint8_t>(in);
  if (tag != (sizeof(S) == 8 ? kF64 : kF32))
    fail(std::string(what) + ": dtype tag " + std::to_string(tag) +
         " does not match expected scalar width " + std::to_string(sizeof(S)));
  const auto rank = read_raw<std::uint32_t>(in);
  if (rank < 1 || rank > 4) fail(std::string(what) + ": bad tensor rank " + std::to_string(rank));
  Shape sh(rank);
  for (auto& e : sh) e = static_cast<Eigen::Index>(read_raw<std::uint64_t>(in));
  TensorT<S> t(sh);
  for (Eigen::Index i = 0; i < t.numel(); ++i) t.data[i] = read_raw<S>(in);
  if (!in) fail(std::string(what) + ": truncated tensor payload");
  return t;
}

}  // namespace skelrep::binio
