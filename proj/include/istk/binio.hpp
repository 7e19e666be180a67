#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "istk/error.hpp"

namespace istk {

// Little-endian binary I/O. x86 is little-endian; the explicit byte writes
// keep the on-disk formats well-defined anyway.

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), std::streamsize(n));
}

inline void write_u16le(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8)};
  write_bytes(os, b, 2);
}

inline void write_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  write_bytes(os, b, 4);
}

inline void write_u64le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  write_bytes(os, b, 8);
}

inline void write_f32le(std::ostream& os, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  write_u32le(os, u);
}

inline void write_f64le(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  write_u64le(os, u);
}

inline void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), std::streamsize(n));
  if (!is) throw Error(Error::Kind::Parse, std::string("truncated read: ") + what);
}

inline std::uint16_t read_u16le(std::istream& is, const char* what) {
  unsigned char b[2];
  read_bytes(is, b, 2, what);
  return std::uint16_t(b[0]) | (std::uint16_t(b[1]) << 8);
}

inline std::uint32_t read_u32le(std::istream& is, const char* what) {
  unsigned char b[4];
  read_bytes(is, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint64_t read_u64le(std::istream& is, const char* what) {
  unsigned char b[8];
  read_bytes(is, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline float read_f32le(std::istream& is, const char* what) {
  std::uint32_t u = read_u32le(is, what);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

inline double read_f64le(std::istream& is, const char* what) {
  std::uint64_t u = read_u64le(is, what);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

inline std::ifstream open_input(const std::filesystem::path& path, bool binary = true) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw Error(Error::Kind::Io, "cannot open for reading: " + path.string());
  return is;
}

// Atomic file write: writes to <path>.tmp then renames over the target.
template <typename Fn>
void atomic_write(const std::filesystem::path& path, Fn&& fn, bool binary = true) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, binary ? std::ios::binary : std::ios::out);
    if (!os) throw Error(Error::Kind::Io, "cannot open for writing: " + tmp.string());
    fn(os);
    os.flush();
    if (!os) throw Error(Error::Kind::Io, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace istk
