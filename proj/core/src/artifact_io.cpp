#include "noisebench/artifact_io.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "noisebench/errors.hpp"

namespace noisebench {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int b = 0; b < 8; ++b) {
      c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    }
    table[i] = c;
  }
  return table;
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t crc) {
  static const auto table = make_crc_table();
  const std::uint8_t* p = static_cast<const std::uint8_t*>(data);
  std::uint32_t c = crc ^ 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) {
    c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
  }
  return c ^ 0xFFFFFFFFu;
}

void ByteWriter::u16(std::uint16_t v) {
  buf_.push_back(static_cast<std::uint8_t>(v));
  buf_.push_back(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  u32(bits);
}

void ByteWriter::f64(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  u64(bits);
}

void ByteWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void ByteWriter::bytes(const void* p, std::size_t n) {
  const std::uint8_t* b = static_cast<const std::uint8_t*>(p);
  buf_.insert(buf_.end(), b, b + n);
}

void ByteWriter::f32_array(const float* p, std::size_t n) {
  // Little-endian host assumed (x86); stored format is LE by contract.
  bytes(p, n * sizeof(float));
}

void ByteReader::need(std::size_t n) {
  if (pos_ + n > n_) throw FormatError("container payload truncated");
}

std::uint8_t ByteReader::u8() {
  need(1);
  return p_[pos_++];
}

std::uint16_t ByteReader::u16() {
  need(2);
  std::uint16_t v = static_cast<std::uint16_t>(p_[pos_] | (p_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() {
  std::uint32_t bits = u32();
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

double ByteReader::f64() {
  std::uint64_t bits = u64();
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string ByteReader::str() {
  std::uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
  pos_ += n;
  return s;
}

void ByteReader::f32_array(float* dst, std::size_t n) {
  need(n * sizeof(float));
  std::memcpy(dst, p_ + pos_, n * sizeof(float));
  pos_ += n * sizeof(float);
}

void write_container(const std::string& path, const char magic[4], std::uint16_t version,
                     const std::vector<std::uint8_t>& payload) {
  std::vector<std::uint8_t> out;
  out.reserve(payload.size() + 10);
  out.insert(out.end(), magic, magic + 4);
  out.push_back(static_cast<std::uint8_t>(version));
  out.push_back(static_cast<std::uint8_t>(version >> 8));
  out.insert(out.end(), payload.begin(), payload.end());
  std::uint32_t crc = crc32(out.data(), out.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write on " + path);
}

std::vector<std::uint8_t> read_container(const std::string& path, const char magic[4],
                                         std::uint16_t expected_version) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  f.seekg(0, std::ios::end);
  std::streamoff len = f.tellg();
  f.seekg(0, std::ios::beg);
  if (len < 10) throw FormatError("container too short: " + path);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
  f.read(reinterpret_cast<char*>(buf.data()), len);
  if (!f) throw IoError("short read on " + path);

  if (std::memcmp(buf.data(), magic, 4) != 0) {
    throw FormatError("bad magic in " + path);
  }
  std::uint16_t version = static_cast<std::uint16_t>(buf[4] | (buf[5] << 8));
  if (version != expected_version) {
    throw FormatError("unsupported version " + std::to_string(version) + " in " + path);
  }
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) {
    stored |= static_cast<std::uint32_t>(buf[buf.size() - 4 + i]) << (8 * i);
  }
  std::uint32_t actual = crc32(buf.data(), buf.size() - 4);
  if (stored != actual) throw FormatError("checksum mismatch in " + path);
  return {buf.begin() + 6, buf.end() - 4};
}

void write_pgm(const std::string& path, const Tensor& map) {
  std::size_t h, w, c;
  if (map.ndim() == 2) {
    c = 1;
    h = map.dim(0);
    w = map.dim(1);
  } else if (map.ndim() == 3) {
    c = map.dim(0);
    h = map.dim(1);
    w = map.dim(2);
  } else {
    throw ShapeError("write_pgm: expected H x W or C x H x W");
  }
  std::vector<double> gray(h * w, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) gray[i] += map[ch * h * w + i];
  }
  double lo = gray[0], hi = gray[0];
  for (double v : gray) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<std::uint8_t> row(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    row[i] = static_cast<std::uint8_t>((gray[i] - lo) * scale + 0.5);
  }
  f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  if (!f) throw IoError("short write on " + path);
}

void write_f32_raw(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!f) throw IoError("short write on " + path);
}

Tensor read_f32_raw(const std::string& path, const Shape& shape) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  Tensor t(shape);
  f.read(reinterpret_cast<char*>(t.data()),
         static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!f) throw IoError("short read on " + path);
  return t;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << text;
  if (!f) throw IoError("short write on " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

}  // namespace noisebench
