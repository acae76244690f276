#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace occprior {

/// Container failed its magic, version or checksum check.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint32_t crc32(std::span<const unsigned char> bytes);
inline std::uint32_t crc32(std::string_view bytes) {
  return crc32({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
}

/// Little-endian append-only byte buffer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(char(v)); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(std::uint64_t(v)); }
  void f32(float v);
  void f64(double v);
  void bytes(std::string_view b) { buf_.append(b); }
  void str(std::string_view s);

  std::size_t size() const { return buf_.size(); }
  const std::string& data() const { return buf_; }
  std::string_view since(std::size_t pos) const {
    return std::string_view(buf_).substr(pos);
  }

 private:
  std::string buf_;
};

/// Bounds-checked little-endian reader; throws IntegrityError on overrun.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return std::int64_t(u64()); }
  float f32();
  double f64();
  std::string_view bytes(std::size_t n);
  std::string str();

  std::size_t pos() const { return pos_; }
  std::string_view since(std::size_t pos) const {
    return data_.substr(pos, pos_ - pos);
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view data);

}  // namespace occprior
