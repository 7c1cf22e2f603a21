#include "csegnet/io.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "csegnet/error.hpp"

namespace csegnet {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_binary_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::Io, "read failed: " + path.string());
  return out;
}

void write_binary_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

std::string read_text_file(const fs::path& path) {
  auto bytes = read_binary_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text_file(const fs::path& path, const std::string& text) {
  write_binary_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<float> read_f32_le(const fs::path& path) {
  auto bytes = read_binary_file(path);
  if (bytes.size() % 4 != 0) fail(ErrorKind::CorruptEntry, path.string() + ": size is not a multiple of 4");
  ByteReader r(bytes);
  std::vector<float> out(bytes.size() / 4);
  for (auto& v : out) {
    const std::uint32_t u = r.u32();
    std::memcpy(&v, &u, 4);
  }
  return out;
}

void write_f32_le(const fs::path& path, std::span<const float> values) {
  ByteWriter w;
  w.f32s(values);
  write_binary_file(path, w.data());
}

void ByteWriter::u16(std::uint16_t v) {
  buf_.push_back(static_cast<std::uint8_t>(v));
  buf_.push_back(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32s(std::span<const float> values) {
  buf_.reserve(buf_.size() + values.size() * 4);
  for (float f : values) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    u32(u);
  }
}

std::uint8_t ByteReader::u8() { return bytes(1)[0]; }

std::uint16_t ByteReader::u16() {
  auto b = bytes(2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t ByteReader::u32() {
  auto b = bytes(4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  if (n > remaining()) fail(ErrorKind::CorruptEntry, "unexpected end of data");
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

}  // namespace csegnet
