#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "noisebench/tensor.hpp"

namespace noisebench {

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t crc = 0);

// Little-endian binary scratch buffers for the container formats.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void str(const std::string& s);  // u32 length + bytes
  void bytes(const void* p, std::size_t n);
  void f32_array(const float* p, std::size_t n);
  const std::vector<std::uint8_t>& data() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();
  void f32_array(float* dst, std::size_t n);
  bool done() const { return pos_ == n_; }

 private:
  void need(std::size_t n);
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

// Container layout: magic (4 bytes), version u16 LE, payload, CRC32 of all
// preceding bytes. FormatError on magic/version mismatch or CRC failure.
void write_container(const std::string& path, const char magic[4], std::uint16_t version,
                     const std::vector<std::uint8_t>& payload);
std::vector<std::uint8_t> read_container(const std::string& path, const char magic[4],
                                         std::uint16_t expected_version);

// 8-bit P5 PGM, min-max normalized for viewing. Multi-channel maps are
// collapsed to the channel mean; the f32 sidecar stays quantitative.
void write_pgm(const std::string& path, const Tensor& map);

// Raw little-endian float32 dump / load.
void write_f32_raw(const std::string& path, const Tensor& t);
Tensor read_f32_raw(const std::string& path, const Shape& shape);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);
// Whole file as bytes (for checksumming arbitrary artifacts).
std::string read_file_bytes(const std::string& path);

}  // namespace noisebench
