#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "neurosem/tensor.hpp"

namespace neurosem {

struct SymmetricEigen {
  Eigen::VectorXd values;  // ascending
  Mat<double> vectors;     // columns are eigenvectors
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
SymmetricEigen jacobi_eigen(const Mat<double>& a, double tol = 1e-13, int max_sweeps = 64);

/// Unbiased (n - 1) covariance of the rows of x.
Mat<double> covariance(const Mat<double>& x);

/// Square root of a symmetric positive semi-definite matrix; eigenvalues below
/// `clamp` are treated as zero.
Mat<double> sqrtm_psd(const Mat<double>& a, double clamp = 1e-10);

double fid(const Mat<double>& a, const Mat<double>& b);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

struct KidOptions {
  std::optional<int> subset_size;  // default: min(100, n_a, n_b)
  int n_subsets = 100;
  std::uint64_t seed = 0;
};

/// Unbiased MMD^2 with k(x, y) = (x.y / d + 1)^3 between two equal-size sets.
double mmd2_unbiased(const Mat<double>& x, const Mat<double>& y);
MeanStd kid(const Mat<double>& a, const Mat<double>& b, const KidOptions& options = {});

/// Rows are class distributions; n_splits near-equal contiguous splits.
MeanStd inception_score(const Mat<double>& p, int n_splits = 10);

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  std::uint8_t at(int y, int x, int c) const {
    return rgb[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3 +
               static_cast<std::size_t>(c)];
  }
  bool operator==(const Image&) const = default;
};

/// Any 8/16-bit PNG is converted to 8-bit RGB.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
std::string encode_png(const Image& image);

/// Rec. 601 luma, 0.299 R + 0.587 G + 0.114 B.
Mat<double> luminance(const Image& image);

/// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), valid positions only.
double ssim(const Mat<double>& x, const Mat<double>& y);
double ssim(const Image& x, const Image& y);

/// Pearson correlation over all flattened channel values.
double pixcorr(const Image& x, const Image& y);

/// Mean cosine similarity of matched rows.
double cosine_score(const Mat<double>& a, const Mat<double>& b);
double swav_distance(const Mat<double>& a, const Mat<double>& b);

/// For each i a seeded distractor j != i; correct when corr(gen_i, gt_i) >
/// corr(gen_i, gt_j), ties count one half.
double two_way_identification(const Mat<double>& gen, const Mat<double>& gt, std::uint64_t seed = 0);
/// Same rule averaged over every j != i.
double two_way_identification_exhaustive(const Mat<double>& gen, const Mat<double>& gt);

/// NSEM tensor as n x d (leading dimensions flattened into rows).
Mat<double> load_features(const std::filesystem::path& path);

struct MetricReport {
  std::string metric;
  double value = 0.0;
  std::optional<double> std;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();

  nlohmann::ordered_json to_json() const;
};

}  // namespace neurosem
