#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>

#include "sabre/types.hpp"

namespace sabre {

/// Little-endian writer over an ostream.
class LeWriter {
 public:
  explicit LeWriter(std::ostream& out) : out_(out) {}
  void bytes(std::string_view raw);
  void u32(std::uint32_t v);
  void f32(float v);

 private:
  std::ostream& out_;
};

/// Little-endian reader that knows its byte offset, so parse errors can name
/// where they happened.
class LeReader {
 public:
  explicit LeReader(std::istream& in) : in_(in) {}

  /// Returns false when fewer than n bytes remain.
  bool bytes(char* dst, std::size_t n);
  bool u32(std::uint32_t& v);
  bool f32(float& v);
  bool at_end();
  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

/// Writes through a temporary sibling file and renames it into place, so the
/// destination never holds a partial file.
void write_file_atomically(const std::filesystem::path& destination,
                           const std::function<void(std::ostream&)>& writer);

void write_text_atomically(const std::filesystem::path& destination, std::string_view text);

}  // namespace sabre
