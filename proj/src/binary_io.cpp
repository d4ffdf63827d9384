#include "sabre/binary_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <system_error>

#include <unistd.h>

namespace sabre {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void LeWriter::bytes(std::string_view raw) { out_.write(raw.data(), static_cast<std::streamsize>(raw.size())); }

void LeWriter::u32(std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out_.write(b.data(), 4);
}

void LeWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

bool LeReader::bytes(char* dst, std::size_t n) {
  in_.read(dst, static_cast<std::streamsize>(n));
  const auto got = static_cast<std::size_t>(in_.gcount());
  offset_ += got;
  return got == n;
}

bool LeReader::u32(std::uint32_t& v) {
  std::array<unsigned char, 4> b{};
  if (!bytes(reinterpret_cast<char*>(b.data()), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

bool LeReader::f32(float& v) {
  std::uint32_t raw = 0;
  if (!u32(raw)) return false;
  v = std::bit_cast<float>(raw);
  return true;
}

bool LeReader::at_end() { return in_.peek() == std::char_traits<char>::eof(); }

void write_file_atomically(const std::filesystem::path& destination,
                           const std::function<void(std::ostream&)>& writer) {
  namespace fs = std::filesystem;
  fs::path tmp = destination;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    writer(out);
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error("write failed for " + destination.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, destination, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error("cannot move output into place at " + destination.string());
  }
}

void write_text_atomically(const std::filesystem::path& destination, std::string_view text) {
  write_file_atomically(destination, [&](std::ostream& out) {
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
  });
}

}  // namespace sabre
