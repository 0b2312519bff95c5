#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// Little-endian byte buffers for the bag, coordinate and checkpoint formats.

namespace wsical::io {

class ByteWriter {
 public:
  void magic(std::string_view tag) { bytes_.insert(bytes_.end(), tag.begin(), tag.end()); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(char((v >> (8 * i)) & 0xffu));
  }

  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  void text(std::string_view s) {
    u32(std::uint32_t(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }

  const std::vector<char>& bytes() const { return bytes_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.write(bytes_.data(), std::streamsize(bytes_.size()));
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
  }

 private:
  std::vector<char> bytes_;
};

/// Sequential reader; every read names the file and field on failure.
template <typename Error>
class ByteReader {
 public:
  ByteReader(std::vector<char> bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

  static ByteReader load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(bytes), path.string());
  }

  void expect_magic(std::string_view tag) {
    need(tag.size(), "magic");
    if (std::string_view(bytes_.data() + pos_, tag.size()) != tag) {
      fail("bad magic, expected \"" + std::string(tag) + "\"");
    }
    pos_ += tag.size();
  }

  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }

  std::string text(const char* field) {
    const std::uint32_t n = u32(field);
    need(n, field);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

  void expect_end() {
    if (remaining() != 0) fail(std::to_string(remaining()) + " unexpected trailing bytes");
  }

  [[noreturn]] void fail(const std::string& what) const { throw Error(source_ + ": " + what); }

  void need(std::size_t n, const char* field) const {
    if (remaining() < n) fail(std::string("truncated while reading ") + field);
  }

 private:
  std::vector<char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace wsical::io
