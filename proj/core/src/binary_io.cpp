#include "binary_io.hpp"

#include <zlib.h>

#include <fstream>
#include <system_error>

namespace knnmts::detail {

std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const unsigned char* p = bytes.data();
  std::size_t left = bytes.size();
  while (left > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void ByteWriter::put_crc32() { put<std::uint32_t>(crc32_of(bytes_)); }

void ByteReader::require(std::size_t n) const {
  if (n > bytes_.size() - offset_) {
    fail("truncated: need " + std::to_string(n) + " bytes, " + std::to_string(bytes_.size() - offset_) +
         " left");
  }
}

void ByteReader::fail(const std::string& message) const {
  throw IoError(what_ + ": " + message + " at offset " + std::to_string(offset_));
}

void ByteReader::expect_magic(std::string_view magic) {
  const std::string got = get_string(magic.size());
  if (got != magic) {
    offset_ -= magic.size();
    fail("bad magic, expected \"" + std::string(magic) + "\"");
  }
}

void ByteReader::verify_crc32() {
  if (bytes_.size() < offset_ + 4) fail("truncated: missing CRC32 footer");
  const std::size_t body = bytes_.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes_.data() + body, 4);
  if (crc32_of(bytes_.first(body)) != stored) {
    offset_ = body;
    fail("CRC32 mismatch");
  }
  bytes_ = bytes_.first(body);
}

void ByteReader::expect_end() const {
  if (offset_ != bytes_.size()) fail(std::to_string(bytes_.size() - offset_) + " unexpected trailing bytes");
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw IoError("failed reading " + path.string());
  }
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace knnmts::detail
