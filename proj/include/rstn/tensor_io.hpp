#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "rstn/errors.hpp"
#include "rstn/tensor.hpp"

// Binary tensor record:
//   "TNSR" | version u8 | rank u8 | rank x u32 LE extents | dtype u8 (0=f32, 1=f64) | raw LE data

namespace rstn {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline constexpr std::array<char, 4> kTensorMagic{'T', 'N', 'S', 'R'};
inline constexpr std::uint8_t kTensorVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

namespace io {

template <class U>
void write_pod(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U read_pod(std::istream& is, const char* what) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(U))) {
    throw FormatError(std::string("truncated input while reading ") + what);
  }
  return v;
}

inline void read_exact(std::istream& is, char* dst, std::size_t n, const char* what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n)) {
    throw FormatError(std::string("truncated input while reading ") + what);
  }
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, const char* what) {
  const auto n = read_pod<std::uint32_t>(is, what);
  std::string s(n, '\0');
  read_exact(is, s.data(), n, what);
  return s;
}

}  // namespace io

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  if (t.rank() > 255) throw ShapeError("tensor rank too large to serialize");
  os.write(kTensorMagic.data(), kTensorMagic.size());
  io::write_pod(os, kTensorVersion);
  io::write_pod(os, static_cast<std::uint8_t>(t.rank()));
  for (const auto e : t.shape()) io::write_pod(os, static_cast<std::uint32_t>(e));
  io::write_pod(os, static_cast<std::uint8_t>(dtype_of<T>()));
  os.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(T)));
}

// Reads one record, converting the stored dtype to T.
template <class T>
Tensor<T> read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  io::read_exact(is, magic.data(), magic.size(), "tensor magic");
  if (magic != kTensorMagic) throw FormatError("bad tensor magic");
  const auto version = io::read_pod<std::uint8_t>(is, "tensor version");
  if (version != kTensorVersion) throw FormatError("unsupported tensor version " + std::to_string(version));
  const auto rank = io::read_pod<std::uint8_t>(is, "tensor rank");
  Shape shape(rank);
  for (auto& e : shape) e = io::read_pod<std::uint32_t>(is, "tensor shape");
  const auto tag = io::read_pod<std::uint8_t>(is, "tensor dtype");
  const std::size_t n = shape_size(shape);
  Tensor<T> out(shape);
  if (tag == static_cast<std::uint8_t>(DType::f32)) {
    std::vector<float> buf(n);
    io::read_exact(is, reinterpret_cast<char*>(buf.data()), n * sizeof(float), "tensor data");
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(buf[i]);
  } else if (tag == static_cast<std::uint8_t>(DType::f64)) {
    std::vector<double> buf(n);
    io::read_exact(is, reinterpret_cast<char*>(buf.data()), n * sizeof(double), "tensor data");
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(buf[i]);
  } else {
    throw FormatError("unknown tensor dtype tag " + std::to_string(tag));
  }
  return out;
}

}  // namespace rstn
