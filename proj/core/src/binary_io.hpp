#pragma once

// Little-endian byte (de)serialisation shared by the on-disk formats.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ccm/tensor.hpp"

namespace ccm::io {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

class ByteWriter {
 public:
  void magic(std::string_view tag);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void i32(std::int32_t v);
  void f64(double v);
  /// rank u32, extents u32 x rank, f64 values.
  void tensor(const Tensor& t);
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::string source);

  void expect_magic(std::string_view tag);
  std::uint8_t u8();
  std::uint32_t u32();
  /// Big-endian variant used by the IDX container.
  std::uint32_t u32_be();
  std::int32_t i32();
  double f64();
  Tensor tensor();
  const std::uint8_t* take(std::size_t n);

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return bytes_.size() - offset_; }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string source_;
  std::size_t offset_ = 0;
};

}  // namespace ccm::io
