#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neurosem/encoder.hpp"

namespace neurosem {

struct TsneConfig {
  double perplexity = 30.0;
  int iterations = 1000;
  double exaggeration = 12.0;
  int exaggeration_iterations = 250;
  double learning_rate = 200.0;
  double momentum = 0.5;
  double final_momentum = 0.8;
  std::uint64_t seed = 0;

  /// Throws ConfigError unless perplexity < (n - 1) / 3 and iterations >= 250.
  void validate(Eigen::Index n) const;
};

struct Calibration {
  Mat<double> conditional;  // row i: p(j | i), zero diagonal
  std::vector<double> beta;  // 1 / (2 sigma_i^2)
  std::vector<double> entropy;
  /// Rows whose distances were all equal and could not reach the target.
  std::vector<Eigen::Index> degenerate_rows;
};

/// Per-row binary search on the Gaussian precision so that the conditional
/// entropy is ln(perplexity) (50 steps, tolerance 1e-5 nats).
Calibration perplexity_calibration(const Mat<double>& sq_distances, double perplexity);

Mat<double> squared_distances(const Mat<double>& x);

/// Symmetrized joint affinities (P_cond + P_cond^T) / 2n.
Mat<double> joint_affinities(const Calibration& calibration);

struct Embedding2D {
  Mat<double> coords;  // n x 2
  std::vector<std::string> labels;
  std::vector<double> kl_trace;  // KL(P || Q) after each iteration
};

/// Exact t-SNE. Initial positions come from streams keyed by the seed and a
/// hash of each point's coordinates, and points are processed in content
/// order, so permuting the input permutes the output bit for bit.
Embedding2D tsne(const Mat<double>& x, const TsneConfig& config, std::vector<std::string> labels = {});

/// One row per (epoch, head), head-major, labeled by head name.
std::pair<Mat<double>, std::vector<std::string>> tsne_points(const HeadEmbeddings<float>& embeddings);

/// Maps data coordinates onto the SVG canvas.
struct ScatterTransform {
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  double left = 40, top = 40, width = 480, height = 480;

  Eigen::Vector2d apply(const Eigen::Vector2d& p) const;
  Eigen::Vector2d invert(const Eigen::Vector2d& q) const;
};

ScatterTransform scatter_transform(const Embedding2D& emb);

/// Labels in first-appearance order.
std::vector<std::string> legend_labels(const Embedding2D& emb);

std::string scatter_svg(const Embedding2D& emb);
void export_scatter(const Embedding2D& emb, const std::filesystem::path& out_path);

/// "x,y,label"
void write_embedding_csv(const std::filesystem::path& path, const Embedding2D& emb);
/// "iteration,kl"
void write_kl_trace_csv(const std::filesystem::path& path, const Embedding2D& emb);

}  // namespace neurosem
