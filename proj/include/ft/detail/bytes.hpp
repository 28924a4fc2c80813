#pragma once

// Little-endian byte (de)serialization helpers plus atomic file replacement.
// Every on-disk format in this project is little-endian regardless of host
// byte order, so values are assembled byte by byte rather than memcpy'd.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ft::detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, sizeof(bits));
  put_u32(out, bits);
}

// Cursor over an in-memory byte buffer; reads raise std::out_of_range with
// the byte offset embedded so format errors can point at the exact spot.
class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::uint64_t offset() const { return pos_; }
  std::uint64_t size() const { return bytes_.size(); }
  bool exhausted() const { return pos_ == bytes_.size(); }

  std::uint8_t u8() { return take(1)[0]; }

  std::uint16_t u16() {
    const auto* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (std::uint16_t(p[1]) << 8));
  }

  std::uint32_t u32() {
    const auto* p = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }

  std::uint64_t u64() {
    const auto* p = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  std::string str(std::size_t n) {
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }

 private:
  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > bytes_.size())
      throw std::out_of_range("byte buffer exhausted at offset " +
                              std::to_string(pos_));
    const auto* p =
        reinterpret_cast<const std::uint8_t*>(bytes_.data()) + pos_;
    pos_ += n;
    return p;
  }

  std::string bytes_;
  std::uint64_t pos_ = 0;
};

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

// Writes to a sibling temp file then renames over the target, so readers
// never observe a partially written file and reruns are all-or-nothing.
inline void atomic_write_file(const std::filesystem::path& path,
                              const std::string& bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace ft::detail
