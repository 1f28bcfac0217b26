#include "binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "ccm/error.hpp"

namespace ccm::io {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

void ByteWriter::magic(std::string_view tag) { bytes_.insert(bytes_.end(), tag.begin(), tag.end()); }

void ByteWriter::u8(std::uint8_t v) { bytes_.push_back(v); }

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }

void ByteWriter::f64(double v) {
  std::uint8_t raw[8];
  std::memcpy(raw, &v, 8);
  bytes_.insert(bytes_.end(), raw, raw + 8);
}

void ByteWriter::tensor(const Tensor& t) {
  u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) u32(static_cast<std::uint32_t>(d));
  const auto data = t.data();
  const auto* raw = reinterpret_cast<const std::uint8_t*>(data.data());
  bytes_.insert(bytes_.end(), raw, raw + data.size() * sizeof(double));
}

ByteReader::ByteReader(const std::vector<std::uint8_t>& bytes, std::string source)
    : bytes_(bytes), source_(std::move(source)) {}

void ByteReader::fail(const std::string& what) const {
  throw FormatError(source_ + ": " + what + " at offset " + std::to_string(offset_));
}

const std::uint8_t* ByteReader::take(std::size_t n) {
  if (remaining() < n) {
    fail("truncated: needed " + std::to_string(n) + " bytes, " + std::to_string(remaining()) +
         " left");
  }
  const std::uint8_t* p = bytes_.data() + offset_;
  offset_ += n;
  return p;
}

void ByteReader::expect_magic(std::string_view tag) {
  const std::size_t at = offset_;
  const std::uint8_t* p = take(tag.size());
  if (std::memcmp(p, tag.data(), tag.size()) != 0) {
    offset_ = at;
    fail("bad magic, expected '" + std::string(tag) + "'");
  }
}

std::uint8_t ByteReader::u8() { return *take(1); }

std::uint32_t ByteReader::u32() {
  const std::uint8_t* p = take(4);
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t ByteReader::u32_be() {
  const std::uint8_t* p = take(4);
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

std::int32_t ByteReader::i32() { return static_cast<std::int32_t>(u32()); }

double ByteReader::f64() {
  double v;
  std::memcpy(&v, take(8), 8);
  return v;
}

Tensor ByteReader::tensor() {
  const std::uint32_t rank = u32();
  if (rank == 0 || rank > 8) fail("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = u32();
    if (d == 0) fail("zero tensor extent");
    n *= d;
  }
  if (remaining() / sizeof(double) < n) fail("truncated tensor payload");
  std::vector<double> values(n);
  std::memcpy(values.data(), take(n * sizeof(double)), n * sizeof(double));
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace ccm::io
