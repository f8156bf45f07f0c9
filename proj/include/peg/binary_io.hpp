#ifndef PEG_BINARY_IO_HPP_
#define PEG_BINARY_IO_HPP_

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

// Little-endian primitives shared by the checkpoint and episode formats.
namespace peg::bin {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

template <typename Derived>
void put_f64s(std::string& out, const Eigen::DenseBase<Derived>& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) put_f64(out, static_cast<double>(v(i)));
}

/// Bounds-checked cursor over a byte buffer.
class Reader {
 public:
  explicit Reader(const std::string& bytes, std::size_t pos = 0) : bytes_(bytes), pos_(pos) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated data");
  }
  const std::string& bytes_;
  std::size_t pos_;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace peg::bin

#endif  // PEG_BINARY_IO_HPP_
