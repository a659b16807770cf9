#include "nasa/binary_io.hpp"

#include <zlib.h>

#include <algorithm>

#include <fstream>
#include <iterator>

namespace nasa {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

void ByteWriter::f32_array(std::span<const double> values) {
  u64(values.size());
  for (double v : values) f32(static_cast<float>(v));
}

std::string ByteReader::bytes(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::vector<double> ByteReader::f32_array() {
  const std::uint64_t n = u64();
  if (n > remaining() / 4) throw Error(ErrorCode::Truncated, "array length exceeds remaining data");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = static_cast<double>(f32());
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

void check_magic(std::span<const std::uint8_t> bytes, const char* magic, const std::string& what) {
  const std::size_t n = std::min<std::size_t>(bytes.size(), 8);
  if (std::memcmp(bytes.data(), magic, n) != 0) throw Error(ErrorCode::BadMagic, what);
  if (n < 8) throw Error(ErrorCode::Truncated, what + ": shorter than the header");
}

}  // namespace nasa
