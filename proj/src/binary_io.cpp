#include "bvelab/binary_io.hpp"

#include <zlib.h>

#include <fstream>
#include <iterator>

namespace bvelab::io {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - offset, 1u << 30));
    crc = ::crc32(crc, bytes.data() + offset, chunk);
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> seal(std::string_view magic, std::uint16_t version,
                               std::span<const std::uint8_t> payload) {
  ByteWriter w;
  w.putBytes(magic);
  w.put<std::uint16_t>(version);
  std::vector<std::uint8_t> out = w.take();
  out.insert(out.end(), payload.begin(), payload.end());
  const std::uint32_t crc = crc32(out);
  ByteWriter tail;
  tail.put<std::uint32_t>(crc);
  out.insert(out.end(), tail.bytes().begin(), tail.bytes().end());
  return out;
}

std::span<const std::uint8_t> unseal(std::string_view magic, std::uint16_t version,
                                     std::span<const std::uint8_t> file) {
  const std::size_t headerSize = magic.size() + sizeof(std::uint16_t);
  if (file.size() < magic.size() ||
      std::memcmp(file.data(), magic.data(), magic.size()) != 0) {
    throw FormatVersionMismatch("bad magic bytes, expected \"" + std::string(magic) + "\"");
  }
  if (file.size() < headerSize + sizeof(std::uint32_t)) {
    throw ChecksumMismatch("file too short for envelope");
  }
  ByteReader head(file.subspan(magic.size(), sizeof(std::uint16_t)));
  const auto found = head.get<std::uint16_t>();
  if (found != version) {
    throw FormatVersionMismatch("format version " + std::to_string(found) + ", expected " +
                                std::to_string(version));
  }
  const std::size_t body = file.size() - sizeof(std::uint32_t);
  ByteReader tail(file.subspan(body));
  if (tail.get<std::uint32_t>() != crc32(file.first(body))) {
    throw ChecksumMismatch("CRC32 mismatch");
  }
  return file.subspan(headerSize, body - headerSize);
}

std::vector<std::uint8_t> readFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void writeFile(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace bvelab::io
