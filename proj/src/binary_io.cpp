#include "occprior/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include <zlib.h>

namespace occprior {

std::uint32_t crc32(std::span<const unsigned char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const std::size_t n = std::min(kChunk, bytes.size() - off);
    crc = ::crc32(crc, bytes.data() + off, uInt(n));
  }
  return std::uint32_t(crc);
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(char((v >> (8 * i)) & 0xff));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(char((v >> (8 * i)) & 0xff));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u32(std::uint32_t(s.size()));
  buf_.append(s);
}

std::string_view ByteReader::bytes(std::size_t n) {
  if (n > data_.size() - pos_)
    throw IntegrityError("truncated container: need " + std::to_string(n) +
                         " bytes at offset " + std::to_string(pos_));
  std::string_view out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t ByteReader::u8() { return std::uint8_t(bytes(1)[0]); }

std::uint32_t ByteReader::u32() {
  std::string_view b = bytes(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(b[i])) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  std::string_view b = bytes(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(b[i])) << (8 * i);
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  return std::string(bytes(n));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

void write_file(const std::filesystem::path& path, std::string_view data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os.write(data.data(), std::streamsize(data.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace occprior
