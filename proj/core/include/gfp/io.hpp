#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gfp/error.hpp"

namespace gfp::io {

using Bytes = std::vector<std::uint8_t>;

// Little-endian encoder.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f32(float v);
  void str16(std::string_view s);  // u16 length + UTF-8 bytes
  void raw(const void* data, std::size_t n);
  const Bytes& bytes() const { return buf_; }
  Bytes take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes buf_;
};

// Little-endian decoder; every read past the end throws FormatError.
class ByteReader {
 public:
  explicit ByteReader(const Bytes& b) : data_(b.data()), size_(b.size()) {}
  ByteReader(const std::uint8_t* d, std::size_t n) : data_(d), size_(n) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  float f32();
  std::string str16();
  std::string fixed(std::size_t n);
  const std::uint8_t* take(std::size_t n);
  bool at_end() const { return pos_ == size_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  std::uint64_t get(int n);
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

Bytes read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it over `path`, so readers never observe a
// partially written artifact.
void write_file_atomic(const std::filesystem::path& path, const Bytes& bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

// FNV-1a 64-bit digest rendered as 16 hex chars; used for provenance content hashes.
std::string content_hash(const Bytes& bytes);

}  // namespace gfp::io
