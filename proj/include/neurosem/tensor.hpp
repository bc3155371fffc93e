#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <numeric>
#include <string>
#include <vector>

#include "neurosem/error.hpp"

namespace neurosem {

/// Dense row-major matrix; the unit of computation in the graph.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// N-dimensional row-major tensor used for storage and file I/O.
template <typename Scalar>
struct Tensor {
  Shape shape;
  std::vector<Scalar> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<Scalar> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    }
  }

  static Tensor zeros(Shape s) {
    const std::size_t n = shape_numel(s);
    return Tensor(std::move(s), std::vector<Scalar>(n, Scalar(0)));
  }

  static Tensor from_matrix(const Mat<Scalar>& m) {
    return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                  std::vector<Scalar>(m.data(), m.data() + m.size()));
  }

  std::size_t numel() const { return data.size(); }

  /// View as rows x cols where cols is the last dimension.
  Eigen::Map<const Mat<Scalar>> matrix() const {
    const auto cols = shape.empty() ? std::size_t{1} : shape.back();
    const auto rows = cols == 0 ? 0 : numel() / cols;
    return {data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
  }

  bool operator==(const Tensor&) const = default;
};

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

template <typename Scalar>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::F32; }
template <>
constexpr DType dtype_of<double>() { return DType::F64; }

/// NSEM binary format: "NSEM", u32 version (1), u8 dtype, u8 ndim,
/// u64 dims, then the row-major payload; everything little-endian.
template <typename Scalar>
void write_nsem(std::ostream& out, const Tensor<Scalar>& t);

/// Reads one NSEM record; values are converted to Scalar when the stored
/// dtype differs.
template <typename Scalar>
Tensor<Scalar> read_nsem(std::istream& in);

template <typename Scalar>
void save_nsem(const std::filesystem::path& path, const Tensor<Scalar>& t);

template <typename Scalar>
Tensor<Scalar> load_nsem(const std::filesystem::path& path);

}  // namespace neurosem
