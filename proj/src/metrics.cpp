#include "neurosem/metrics.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>

#include "neurosem/ops.hpp"
#include "neurosem/rng.hpp"

namespace neurosem {

SymmetricEigen jacobi_eigen(const Mat<double>& input, double tol, int max_sweeps) {
  if (input.rows() != input.cols()) throw DimensionError("jacobi_eigen: matrix is " + detail::dims(input.rows(), input.cols()));
  const Eigen::Index n = input.rows();
  Mat<double> a = 0.5 * (input + input.transpose());
  Mat<double> v = Mat<double>::Identity(n, n);
  const double scale = std::max(a.norm(), 1e-300);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    }
    if (std::sqrt(2.0 * off) <= tol * scale) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) { return a(i, i) < a(j, j); });
  SymmetricEigen out{Eigen::VectorXd(n), Mat<double>(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    out.vectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
  return out;
}

Mat<double> covariance(const Mat<double>& x) {
  if (x.rows() < 2) throw ContractError("covariance needs at least 2 rows, got " + std::to_string(x.rows()));
  const Mat<double> centered = x.rowwise() - x.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

Mat<double> sqrtm_psd(const Mat<double>& a, double clamp) {
  const auto eig = jacobi_eigen(a);
  Eigen::VectorXd root = eig.values.unaryExpr([clamp](double l) { return l < clamp ? 0.0 : std::sqrt(l); });
  return eig.vectors * root.asDiagonal() * eig.vectors.transpose();
}

namespace {

void require_finite(const Mat<double>& m, const char* what) {
  if (!m.allFinite()) throw DataError(std::string(what) + " contains non-finite values");
}

}  // namespace

double fid(const Mat<double>& a, const Mat<double>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("fid: feature dimensions differ (" + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()) + ")");
  }
  require_finite(a, "fid input");
  require_finite(b, "fid input");
  const RowVec<double> diff = a.colwise().mean() - b.colwise().mean();
  const Mat<double> sa = covariance(a), sb = covariance(b);
  const Mat<double> ra = sqrtm_psd(sa);
  const Mat<double> m = ra * sb * ra;
  const auto eig = jacobi_eigen(m);
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    if (eig.values(i) >= 1e-10) tr_sqrt += std::sqrt(eig.values(i));
  }
  const double value = diff.squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

double mmd2_unbiased(const Mat<double>& x, const Mat<double>& y) {
  if (x.cols() != y.cols()) throw DimensionError("mmd2: feature dimensions differ");
  if (x.rows() < 2 || y.rows() < 2) throw ContractError("mmd2 needs at least 2 rows per set");
  const double d = static_cast<double>(x.cols());
  auto kernel = [d](const Mat<double>& p, const Mat<double>& q) {
    return Mat<double>(((p * q.transpose()).array() / d + 1.0).cube());
  };
  const Mat<double> kxx = kernel(x, x), kyy = kernel(y, y), kxy = kernel(x, y);
  const double m = static_cast<double>(x.rows()), n = static_cast<double>(y.rows());
  const double sxx = (kxx.sum() - kxx.trace()) / (m * (m - 1));
  const double syy = (kyy.sum() - kyy.trace()) / (n * (n - 1));
  return sxx + syy - 2.0 * kxy.sum() / (m * n);
}

MeanStd kid(const Mat<double>& a, const Mat<double>& b, const KidOptions& options) {
  if (a.cols() != b.cols()) throw DimensionError("kid: feature dimensions differ");
  require_finite(a, "kid input");
  require_finite(b, "kid input");
  const Eigen::Index limit = std::min(a.rows(), b.rows());
  const Eigen::Index m = options.subset_size ? *options.subset_size : std::min<Eigen::Index>(100, limit);
  if (m < 2) throw ContractError("kid: subset size must be at least 2");
  if (m > limit) {
    throw ContractError("kid: subset size " + std::to_string(m) + " exceeds the smaller set (" + std::to_string(limit) + ")");
  }
  if (options.n_subsets < 1) throw ContractError("kid: n_subsets must be >= 1");
  RngStream root = Rng(options.seed).stream("kid");
  auto draw = [&](const Mat<double>& src, RngStream& s) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(src.rows()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto j = i + static_cast<Eigen::Index>(s.below(static_cast<std::uint64_t>(src.rows() - i)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    Mat<double> out(m, src.cols());
    for (Eigen::Index i = 0; i < m; ++i) out.row(i) = src.row(idx[static_cast<std::size_t>(i)]);
    return out;
  };
  std::vector<double> values;
  for (int k = 0; k < options.n_subsets; ++k) {
    RngStream s = root.split(static_cast<std::uint64_t>(k));
    const Mat<double> x = draw(a, s), y = draw(b, s);
    values.push_back(mmd2_unbiased(x, y));
  }
  MeanStd out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  for (double v : values) out.std += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(out.std / static_cast<double>(values.size()));
  return out;
}

MeanStd inception_score(const Mat<double>& p, int n_splits) {
  if (n_splits < 1 || n_splits > p.rows()) {
    throw ContractError("inception_score: n_splits must be in [1, " + std::to_string(p.rows()) + "], got " +
                        std::to_string(n_splits));
  }
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    if (!p.row(i).allFinite() || p.row(i).minCoeff() < 0.0 || std::abs(p.row(i).sum() - 1.0) > 1e-6) {
      throw ContractError("inception_score: row " + std::to_string(i) + " is not a probability distribution");
    }
  }
  const Eigen::Index n = p.rows(), base = n / n_splits, extra = n % n_splits;
  std::vector<double> scores;
  Eigen::Index start = 0;
  for (int k = 0; k < n_splits; ++k) {
    const Eigen::Index len = base + (k < extra ? 1 : 0);
    const auto part = p.middleRows(start, len);
    RowVec<double> marginal(p.cols());
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      long double acc = 0.0L;
      for (Eigen::Index i = 0; i < len; ++i) acc += part(i, c);
      marginal(c) = static_cast<double>(acc / static_cast<long double>(len));
    }
    double kl = 0.0;
    for (Eigen::Index i = 0; i < len; ++i) {
      for (Eigen::Index c = 0; c < p.cols(); ++c) {
        const double v = part(i, c);
        if (v > 0.0) kl += v * (std::log(v) - std::log(marginal(c)));
      }
    }
    scores.push_back(std::exp(kl / static_cast<double>(len)));
    start += len;
  }
  MeanStd out;
  out.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
  for (double s : scores) out.std += (s - out.mean) * (s - out.mean);
  out.std = std::sqrt(out.std / static_cast<double>(scores.size()));
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

}  // namespace

Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file) throw FileError("cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialisation failed");
  }
  Image img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": corrupt PNG data");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  if (png_get_rowbytes(png, info) != static_cast<std::size_t>(img.width) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": unsupported PNG layout");
  }
  img.rgb.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) * 3);
  rows.resize(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

std::string encode_png(const Image& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.rgb.size() != static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height) * 3) {
    throw DimensionError("encode_png: pixel buffer does not match " + std::to_string(image.width) + "x" +
                         std::to_string(image.height));
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  std::string out;
  std::vector<png_const_bytep> rows(static_cast<std::size_t>(image.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t len) {
        static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(data), len);
      },
      nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    rows[static_cast<std::size_t>(y)] = image.rgb.data() + static_cast<std::size_t>(y) * image.width * 3;
  }
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    throw FileError("cannot write " + path.string());
  }
}

Mat<double> luminance(const Image& image) {
  Mat<double> out(image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      out(y, x) = 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) + 0.114 * image.at(y, x, 2);
    }
  }
  return out;
}

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

// Valid-mode separable filtering with the normalized Gaussian window.
Mat<double> gaussian_filter(const Mat<double>& img) {
  static const std::vector<double> w = [] {
    std::vector<double> g(kWindow);
    double total = 0.0;
    for (int i = 0; i < kWindow; ++i) {
      const double d = i - kWindow / 2;
      g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * kSigma * kSigma));
      total += g[static_cast<std::size_t>(i)];
    }
    for (auto& v : g) v /= total;
    return g;
  }();
  const Eigen::Index h = img.rows() - kWindow + 1, wd = img.cols() - kWindow + 1;
  Mat<double> tmp = Mat<double>::Zero(img.rows(), wd);
  for (Eigen::Index y = 0; y < img.rows(); ++y) {
    for (Eigen::Index x = 0; x < wd; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += w[static_cast<std::size_t>(k)] * img(y, x + k);
      tmp(y, x) = s;
    }
  }
  Mat<double> out = Mat<double>::Zero(h, wd);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < wd; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += w[static_cast<std::size_t>(k)] * tmp(y + k, x);
      out(y, x) = s;
    }
  }
  return out;
}

}  // namespace

double ssim(const Mat<double>& x, const Mat<double>& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw DimensionError("ssim: images are " + detail::dims(x.rows(), x.cols()) + " and " + detail::dims(y.rows(), y.cols()));
  }
  if (std::min(x.rows(), x.cols()) < kWindow) {
    throw ContractError("ssim: images must be at least 11x11, got " + detail::dims(x.rows(), x.cols()));
  }
  constexpr double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  const Mat<double> mx = gaussian_filter(x), my = gaussian_filter(y);
  const Mat<double> sxx = gaussian_filter(x.cwiseProduct(x)) - mx.cwiseProduct(mx);
  const Mat<double> syy = gaussian_filter(y.cwiseProduct(y)) - my.cwiseProduct(my);
  const Mat<double> sxy = gaussian_filter(x.cwiseProduct(y)) - mx.cwiseProduct(my);
  const auto num = (2 * mx.cwiseProduct(my).array() + c1) * (2 * sxy.array() + c2);
  const auto den = (mx.cwiseProduct(mx).array() + my.cwiseProduct(my).array() + c1) * (sxx.array() + syy.array() + c2);
  return (num / den).mean();
}

double ssim(const Image& x, const Image& y) {
  if (x.width != y.width || x.height != y.height) {
    throw DimensionError("ssim: images are " + std::to_string(x.width) + "x" + std::to_string(x.height) + " and " +
                         std::to_string(y.width) + "x" + std::to_string(y.height));
  }
  return ssim(luminance(x), luminance(y));
}

double pixcorr(const Image& x, const Image& y) {
  if (x.width != y.width || x.height != y.height) throw DimensionError("pixcorr: image shapes differ");
  const auto n = static_cast<Eigen::Index>(x.rgb.size());
  const Eigen::Map<const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>> a(x.rgb.data(), n), b(y.rgb.data(), n);
  const Eigen::VectorXd xa = a.cast<double>(), ya = b.cast<double>();
  const Eigen::VectorXd dx = xa.array() - xa.mean(), dy = ya.array() - ya.mean();
  const double vx = dx.squaredNorm(), vy = dy.squaredNorm();
  if (vx == 0.0 || vy == 0.0) throw ContractError("pixcorr: zero-variance image");
  return dx.dot(dy) / std::sqrt(vx * vy);
}

double cosine_score(const Mat<double>& a, const Mat<double>& b) {
  if (a.rows() != b.rows()) {
    throw ContractError("cosine_score: " + std::to_string(a.rows()) + " vs " + std::to_string(b.rows()) + " rows");
  }
  if (a.cols() != b.cols()) throw DimensionError("cosine_score: feature dimensions differ");
  if (a.rows() == 0) throw ContractError("cosine_score: empty feature sets");
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double den = a.row(i).norm() * b.row(i).norm();
    if (den > 0.0) total += a.row(i).dot(b.row(i)) / den;
  }
  return total / static_cast<double>(a.rows());
}

double swav_distance(const Mat<double>& a, const Mat<double>& b) { return 1.0 - cosine_score(a, b); }

namespace {

Mat<double> standardized_rows(const Mat<double>& m) {
  Mat<double> out = m.colwise() - m.rowwise().mean();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

void check_pairs(const Mat<double>& gen, const Mat<double>& gt) {
  if (gen.rows() != gt.rows() || gen.cols() != gt.cols()) {
    throw DimensionError("two-way identification: " + detail::dims(gen.rows(), gen.cols()) + " vs " +
                         detail::dims(gt.rows(), gt.cols()));
  }
  if (gen.rows() < 2) throw ContractError("two-way identification needs at least 2 rows");
}

double credit(double own, double other) { return own > other ? 1.0 : (own == other ? 0.5 : 0.0); }

}  // namespace

double two_way_identification(const Mat<double>& gen, const Mat<double>& gt, std::uint64_t seed) {
  check_pairs(gen, gt);
  const Mat<double> a = standardized_rows(gen), b = standardized_rows(gt);
  RngStream s = Rng(seed).stream("two_way");
  const auto n = gen.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto j = static_cast<Eigen::Index>(s.below(static_cast<std::uint64_t>(n - 1)));
    if (j >= i) ++j;
    total += credit(a.row(i).dot(b.row(i)), a.row(i).dot(b.row(j)));
  }
  return total / static_cast<double>(n);
}

double two_way_identification_exhaustive(const Mat<double>& gen, const Mat<double>& gt) {
  check_pairs(gen, gt);
  const Mat<double> corr = standardized_rows(gen) * standardized_rows(gt).transpose();
  const auto n = gen.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) total += credit(corr(i, i), corr(i, j));
    }
  }
  return total / static_cast<double>(n * (n - 1));
}

Mat<double> load_features(const std::filesystem::path& path) {
  const auto t = load_nsem<double>(path);
  if (t.shape.size() < 2) throw DimensionError(path.string() + ": expected a 2-D feature tensor, got " + shape_string(t.shape));
  Mat<double> m = t.matrix();
  require_finite(m, path.string().c_str());
  return m;
}

nlohmann::ordered_json MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["metric"] = metric;
  j["value"] = value;
  if (std) j["std"] = *std;
  j["params"] = params.is_null() ? nlohmann::ordered_json::object() : params;
  return j;
}

}  // namespace neurosem
