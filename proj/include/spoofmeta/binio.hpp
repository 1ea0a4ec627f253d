#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "spoofmeta/error.hpp"

namespace spoofmeta::binio {

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// Little-endian byte sink.
class Writer {
 public:
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void str(const std::string& s) {
    bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }
  template <typename T>
  void put(T v) {
    static_assert(std::is_arithmetic_v<T>);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    bytes(raw);
  }
  void put_crc() { put<std::uint32_t>(crc32(buf_)); }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Little-endian byte source over a buffer; overruns throw DataError.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b, std::string what) : b_(b), what_(std::move(what)) {}
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > b_.size() - pos_) throw DataError(what_ + ": truncated");
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  T get() {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, take(sizeof(T)).data(), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::string what_;
  std::size_t pos_ = 0;
};

/// Strip and verify the trailing CRC32; returns the covered payload.
std::span<const std::uint8_t> verify_crc(std::span<const std::uint8_t> bytes, const std::string& what);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Write through a temporary file and rename. With `lock`, writers of the same path are
/// serialized through an exclusive lock on `<path>.lock`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes,
                       bool lock = false);

}  // namespace spoofmeta::binio
