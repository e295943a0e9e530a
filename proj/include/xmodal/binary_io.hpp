#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace xmodal::io {

// Little-endian encoder into an in-memory buffer.
class ByteWriter {
 public:
  void put_bytes(std::string_view bytes);
  void put_u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void put_u16(std::uint16_t v);
  void put_u32(std::uint32_t v);
  void put_u64(std::uint64_t v);
  void put_f32(float v);
  void put_f64(double v);
  void put_zeros(std::size_t count) { buf_.append(count, '\0'); }

  const std::string& bytes() const noexcept { return buf_; }

 private:
  std::string buf_;
};

// Little-endian decoder over a byte buffer. Every getter throws
// CorruptionError with `context` in the message when the buffer runs out.
class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  std::string_view get_bytes(std::size_t count);
  std::uint8_t get_u8();
  std::uint16_t get_u16();
  std::uint32_t get_u32();
  std::uint64_t get_u64();
  float get_f32();
  double get_f64();

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }
  const std::string& context() const noexcept { return context_; }

 private:
  void require(std::size_t count) const;

  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::string context_;
};

// Whole-file read; IoError with the path on failure.
std::string read_file(const std::filesystem::path& path);

// Writes via a sibling temporary and rename, so readers never observe a
// partially written file. IoError with the path on failure.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

}  // namespace xmodal::io
