#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "neurosem/tensor.hpp"

namespace neurosem {

namespace {

constexpr std::array<char, 4> kMagic = {'N', 'S', 'E', 'M'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw DataError("truncated NSEM stream");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(bytes[i]) << (8 * i);
  }
  return value;
}

template <typename F>
using BitsOf = std::conditional_t<sizeof(F) == 4, std::uint32_t, std::uint64_t>;

template <typename F>
void read_payload(std::istream& in, std::size_t n, std::vector<F>& out) {
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::bit_cast<F>(get_le<BitsOf<F>>(in));
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename Scalar>
void write_nsem(std::ostream& out, const Tensor<Scalar>& t) {
  if (t.shape.size() > 255) throw DimensionError("NSEM supports at most 255 dimensions");
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of<Scalar>()));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
  for (auto d : t.shape) put_le<std::uint64_t>(out, d);
  for (Scalar v : t.data) put_le<BitsOf<Scalar>>(out, std::bit_cast<BitsOf<Scalar>>(v));
  if (!out) throw FileError("failed writing NSEM tensor");
}

template <typename Scalar>
Tensor<Scalar> read_nsem(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError("missing NSEM magic bytes");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kVersion) throw DataError("unsupported NSEM version " + std::to_string(version));
  const auto dtype = get_le<std::uint8_t>(in);
  const auto ndim = get_le<std::uint8_t>(in);
  Shape shape(ndim);
  for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(in));
  const std::size_t n = shape_numel(shape);

  std::vector<Scalar> data;
  if (dtype == static_cast<std::uint8_t>(dtype_of<Scalar>())) {
    read_payload(in, n, data);
  } else if (dtype == 0) {
    std::vector<float> raw;
    read_payload(in, n, raw);
    data.assign(raw.begin(), raw.end());
  } else if (dtype == 1) {
    std::vector<double> raw;
    read_payload(in, n, raw);
    data.assign(raw.begin(), raw.end());
  } else {
    throw DataError("unknown NSEM dtype " + std::to_string(dtype));
  }
  return Tensor<Scalar>(std::move(shape), std::move(data));
}

template <typename Scalar>
void save_nsem(const std::filesystem::path& path, const Tensor<Scalar>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot open " + path.string() + " for writing");
  write_nsem(out, t);
}

template <typename Scalar>
Tensor<Scalar> load_nsem(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  return read_nsem<Scalar>(in);
}

template void write_nsem(std::ostream&, const Tensor<float>&);
template void write_nsem(std::ostream&, const Tensor<double>&);
template Tensor<float> read_nsem(std::istream&);
template Tensor<double> read_nsem(std::istream&);
template void save_nsem(const std::filesystem::path&, const Tensor<float>&);
template void save_nsem(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_nsem(const std::filesystem::path&);
template Tensor<double> load_nsem(const std::filesystem::path&);

}  // namespace neurosem
