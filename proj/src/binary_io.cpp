#include "nps/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "nps/error.hpp"

namespace nps {

const char* to_string(ParseErrorCode code) noexcept {
  switch (code) {
    case ParseErrorCode::kBadMagic: return "bad magic";
    case ParseErrorCode::kVersionMismatch: return "version mismatch";
    case ParseErrorCode::kTruncated: return "truncated payload";
    case ParseErrorCode::kNonFinite: return "non-finite value";
    case ParseErrorCode::kMalformed: return "malformed file";
  }
  return "parse error";
}

namespace io {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

template <typename T>
T get_le(const std::uint8_t* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(p[i]) << (8 * i);
  }
  return v;
}

}  // namespace

void ByteWriter::u16(std::uint16_t v) { put_le(buf_, v); }
void ByteWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void ByteWriter::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::bytes(std::span<const std::uint8_t> data) {
  buf_.insert(buf_.end(), data.begin(), data.end());
}

void ByteWriter::str(std::string_view s) {
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::f32_array(std::span<const float> values) {
  const std::size_t start = buf_.size();
  buf_.resize(start + values.size() * 4);
  std::uint8_t* out = buf_.data() + start;
  for (float v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    out[0] = static_cast<std::uint8_t>(bits);
    out[1] = static_cast<std::uint8_t>(bits >> 8);
    out[2] = static_cast<std::uint8_t>(bits >> 16);
    out[3] = static_cast<std::uint8_t>(bits >> 24);
    out += 4;
  }
}

void ByteReader::require(std::size_t n, const char* what) const {
  if (n > remaining()) {
    throw ParseError(ParseErrorCode::kTruncated,
                     std::string("needed ") + std::to_string(n) + " bytes for " + what +
                         ", " + std::to_string(remaining()) + " left");
  }
}

std::uint8_t ByteReader::u8(const char* what) {
  require(1, what);
  return data_[pos_++];
}

std::uint16_t ByteReader::u16(const char* what) {
  require(2, what);
  auto v = get_le<std::uint16_t>(data_.data() + pos_);
  pos_ += 2;
  return v;
}

std::uint32_t ByteReader::u32(const char* what) {
  require(4, what);
  auto v = get_le<std::uint32_t>(data_.data() + pos_);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64(const char* what) {
  require(8, what);
  auto v = get_le<std::uint64_t>(data_.data() + pos_);
  pos_ += 8;
  return v;
}

float ByteReader::f32(const char* what) { return std::bit_cast<float>(u32(what)); }
double ByteReader::f64(const char* what) { return std::bit_cast<double>(u64(what)); }

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n, const char* what) {
  require(n, what);
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::string ByteReader::str(std::size_t n, const char* what) {
  auto raw = bytes(n, what);
  return std::string(raw.begin(), raw.end());
}

void ByteReader::f32_array(std::span<float> out, const char* what) {
  if (out.size() > remaining() / 4) {
    throw ParseError(ParseErrorCode::kTruncated,
                     std::string("needed ") + std::to_string(out.size()) + " floats for " +
                         what + ", " + std::to_string(remaining()) + " bytes left");
  }
  const std::uint8_t* p = data_.data() + pos_;
  for (auto& v : out) {
    v = std::bit_cast<float>(get_le<std::uint32_t>(p));
    p += 4;
  }
  pos_ += out.size() * 4;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open '" + path.string() + "' for reading");
  }
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> data(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size))) {
    throw IoError("failed reading '" + path.string() + "'");
  }
  return data;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open '" + path.string() + "' for writing");
  }
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) {
    throw IoError("failed writing '" + path.string() + "'");
  }
}

}  // namespace io
}  // namespace nps
