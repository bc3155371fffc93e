#include "neurosem/embed_viz.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "neurosem/rng.hpp"

namespace neurosem {

void TsneConfig::validate(Eigen::Index n) const {
  if (n < 10) throw ConfigError("tsne needs at least 10 points, got " + std::to_string(n));
  if (!(perplexity > 0.0) || !(perplexity < static_cast<double>(n - 1) / 3.0)) {
    throw ConfigError("tsne perplexity must be in (0, (n - 1) / 3) = (0, " + std::to_string(static_cast<double>(n - 1) / 3.0) +
                      "), got " + std::to_string(perplexity));
  }
  if (iterations < 250) throw ConfigError("tsne iterations must be >= 250, got " + std::to_string(iterations));
  if (exaggeration_iterations < 0 || exaggeration_iterations > iterations) {
    throw ConfigError("tsne exaggeration_iterations must be in [0, iterations]");
  }
  if (!(learning_rate > 0.0)) throw ConfigError("tsne learning_rate must be > 0");
  if (!(exaggeration >= 1.0)) throw ConfigError("tsne exaggeration must be >= 1");
}

Mat<double> squared_distances(const Mat<double>& x) {
  const Eigen::VectorXd norms = x.rowwise().squaredNorm();
  Mat<double> d = (-2.0 * x * x.transpose()).colwise() + norms;
  d.rowwise() += norms.transpose();
  d = d.cwiseMax(0.0);
  d.diagonal().setZero();
  return d;
}

Calibration perplexity_calibration(const Mat<double>& d, double perplexity) {
  if (d.rows() != d.cols()) throw DimensionError("perplexity_calibration: distance matrix is not square");
  const Eigen::Index n = d.rows();
  if (n < 2) throw ContractError("perplexity_calibration needs at least 2 points");
  if (!(perplexity > 0.0)) throw ConfigError("perplexity must be > 0");
  const double target = std::log(perplexity);
  Calibration out;
  out.conditional = Mat<double>::Zero(n, n);
  out.beta.assign(static_cast<std::size_t>(n), 1.0);
  out.entropy.assign(static_cast<std::size_t>(n), 0.0);
  std::vector<double> p(static_cast<std::size_t>(n));

  for (Eigen::Index i = 0; i < n; ++i) {
    double dmin = std::numeric_limits<double>::infinity(), dmax = -dmin;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      dmin = std::min(dmin, d(i, j));
      dmax = std::max(dmax, d(i, j));
    }
    // Entropy of the row at precision beta, with distances shifted by dmin.
    auto evaluate = [&](double beta) {
      double total = 0.0, weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        p[uj] = j == i ? 0.0 : std::exp(-(d(i, j) - dmin) * beta);
        total += p[uj];
        weighted += p[uj] * (d(i, j) - dmin);
      }
      for (auto& v : p) v /= total;
      return std::log(total) + beta * weighted / total;
    };
    const auto ui = static_cast<std::size_t>(i);
    if (dmax == dmin) {
      const double h = evaluate(0.0);
      if (std::abs(h - target) > 1e-5) out.degenerate_rows.push_back(i);
      out.beta[ui] = 0.0;
      out.entropy[ui] = h;
      for (Eigen::Index j = 0; j < n; ++j) out.conditional(i, j) = p[static_cast<std::size_t>(j)];
      continue;
    }
    double beta = 1.0 / std::max(dmax - dmin, 1e-300), lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double h = evaluate(beta);
    for (int step = 0; step < 50 && std::abs(h - target) > 1e-5; ++step) {
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
      h = evaluate(beta);
    }
    out.beta[ui] = beta;
    out.entropy[ui] = h;
    for (Eigen::Index j = 0; j < n; ++j) out.conditional(i, j) = p[static_cast<std::size_t>(j)];
  }
  return out;
}

Mat<double> joint_affinities(const Calibration& calibration) {
  const auto& c = calibration.conditional;
  return (c + c.transpose()) / (2.0 * static_cast<double>(c.rows()));
}

namespace {

std::uint64_t point_hash(const Mat<double>& x, Eigen::Index row) {
  std::uint64_t h = 1469598103934665603ULL;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double v = x(row, j);
    if (v == 0.0) v = 0.0;  // fold -0 into +0
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xff;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

double kl_divergence(const Mat<double>& p, const Mat<double>& q) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pv = p.data()[i];
    if (pv > 0.0) kl += pv * std::log(pv / std::max(q.data()[i], 1e-300));
  }
  return kl;
}

}  // namespace

Embedding2D tsne(const Mat<double>& x, const TsneConfig& config, std::vector<std::string> labels) {
  const Eigen::Index n = x.rows();
  config.validate(n);
  if (!x.allFinite()) throw DataError("tsne input contains non-finite values");
  if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != n) {
    throw DimensionError("tsne: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " points");
  }
  // Points are processed in an order fixed by their content, which makes
  // every floating-point sum independent of the caller's row order.
  std::vector<std::uint64_t> hashes(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) hashes[static_cast<std::size_t>(i)] = point_hash(x, i);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    const auto ha = hashes[static_cast<std::size_t>(a)], hb = hashes[static_cast<std::size_t>(b)];
    if (ha != hb) return ha < hb;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (x(a, j) != x(b, j)) return x(a, j) < x(b, j);
    }
    return false;
  });
  Mat<double> xs(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) xs.row(i) = x.row(order[static_cast<std::size_t>(i)]);
  const Mat<double> p = joint_affinities(perplexity_calibration(squared_distances(xs), config.perplexity));

  const RngStream init = Rng(config.seed).stream("tsne/init");
  Mat<double> y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    RngStream s = init.split(hashes[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
    y(i, 0) = 1e-4 * s.normal();
    y(i, 1) = 1e-4 * s.normal();
  }
  Mat<double> velocity = Mat<double>::Zero(n, 2), gains = Mat<double>::Ones(n, 2), grad(n, 2);
  Mat<double> num(n, n), q(n, n);

  Embedding2D out;
  out.labels = std::move(labels);
  out.kl_trace.reserve(static_cast<std::size_t>(config.iterations));
  for (int it = 0; it < config.iterations; ++it) {
    const double exag = it < config.exaggeration_iterations ? config.exaggeration : 1.0;
    const double mom = it < config.exaggeration_iterations ? config.momentum : config.final_momentum;
    num = (1.0 + squared_distances(y).array()).inverse().matrix();
    num.diagonal().setZero();
    const double z = num.sum();
    q = num / z;
    const Mat<double> w = ((exag * p - q).array() * num.array()).matrix();
    // grad_i = 4 sum_j w_ij (y_i - y_j)
    grad = 4.0 * (w.rowwise().sum().asDiagonal() * y - w * y);
    for (Eigen::Index k = 0; k < grad.size(); ++k) {
      double& g = gains.data()[k];
      g = (grad.data()[k] > 0.0) != (velocity.data()[k] > 0.0) ? g + 0.2 : g * 0.8;
      g = std::max(g, 0.01);
    }
    velocity = mom * velocity - config.learning_rate * gains.cwiseProduct(grad);
    y += velocity;
    y.rowwise() -= y.colwise().mean();

    num = (1.0 + squared_distances(y).array()).inverse().matrix();
    num.diagonal().setZero();
    out.kl_trace.push_back(kl_divergence(p, num / num.sum()));
  }
  out.coords.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) out.coords.row(order[static_cast<std::size_t>(i)]) = y.row(i);
  return out;
}

std::pair<Mat<double>, std::vector<std::string>> tsne_points(const HeadEmbeddings<float>& embeddings) {
  if (embeddings.embeddings.empty()) throw ContractError("tsne_points: no head embeddings");
  const Eigen::Index rows = embeddings.embeddings.front().rows(), cols = embeddings.embeddings.front().cols();
  Mat<double> x(rows * static_cast<Eigen::Index>(embeddings.size()), cols);
  std::vector<std::string> labels;
  for (std::size_t h = 0; h < embeddings.size(); ++h) {
    x.middleRows(static_cast<Eigen::Index>(h) * rows, rows) = embeddings.embeddings[h].cast<double>();
    labels.insert(labels.end(), static_cast<std::size_t>(rows), embeddings.heads[h]);
  }
  return {x, labels};
}

Eigen::Vector2d ScatterTransform::apply(const Eigen::Vector2d& p) const {
  return {left + (p.x() - x_min) / (x_max - x_min) * width, top + (y_max - p.y()) / (y_max - y_min) * height};
}

Eigen::Vector2d ScatterTransform::invert(const Eigen::Vector2d& q) const {
  return {x_min + (q.x() - left) / width * (x_max - x_min), y_max - (q.y() - top) / height * (y_max - y_min)};
}

ScatterTransform scatter_transform(const Embedding2D& emb) {
  ScatterTransform t;
  if (emb.coords.rows() == 0) return t;
  t.x_min = emb.coords.col(0).minCoeff();
  t.x_max = emb.coords.col(0).maxCoeff();
  t.y_min = emb.coords.col(1).minCoeff();
  t.y_max = emb.coords.col(1).maxCoeff();
  const double px = std::max(0.05 * (t.x_max - t.x_min), 1e-9), py = std::max(0.05 * (t.y_max - t.y_min), 1e-9);
  t.x_min -= px;
  t.x_max += px;
  t.y_min -= py;
  t.y_max += py;
  return t;
}

std::vector<std::string> legend_labels(const Embedding2D& emb) {
  std::vector<std::string> out;
  for (const auto& l : emb.labels) {
    if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
  }
  return out;
}

namespace {

constexpr std::array<const char*, 10> kColors = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string label_color(std::size_t i) {
  if (i < kColors.size()) return kColors[i];
  // Golden-angle hues beyond the base palette.
  const double hue = std::fmod(static_cast<double>(i) * 137.508, 360.0);
  char buf[32];
  std::snprintf(buf, sizeof buf, "hsl(%.1f,65%%,45%%)", hue);
  return buf;
}

std::string fmt(const char* spec, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

std::string scatter_svg(const Embedding2D& emb) {
  if (!emb.coords.allFinite()) throw DataError("scatter: non-finite coordinates");
  const auto t = scatter_transform(emb);
  const auto legend = legend_labels(emb);
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt("%.0f", t.left + t.width + 200) << "\" height=\""
      << fmt("%.0f", t.top + t.height + 40) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  svg << "<rect x=\"" << fmt("%.0f", t.left) << "\" y=\"" << fmt("%.0f", t.top) << "\" width=\"" << fmt("%.0f", t.width)
      << "\" height=\"" << fmt("%.0f", t.height) << "\" fill=\"none\" stroke=\"#999999\"/>\n";
  svg << "<g id=\"points\" data-x-min=\"" << fmt("%.17g", t.x_min) << "\" data-x-max=\"" << fmt("%.17g", t.x_max)
      << "\" data-y-min=\"" << fmt("%.17g", t.y_min) << "\" data-y-max=\"" << fmt("%.17g", t.y_max) << "\">\n";
  for (Eigen::Index i = 0; i < emb.coords.rows(); ++i) {
    const auto q = t.apply(emb.coords.row(i).transpose());
    std::size_t li = 0;
    if (!emb.labels.empty()) {
      li = static_cast<std::size_t>(std::find(legend.begin(), legend.end(), emb.labels[static_cast<std::size_t>(i)]) -
                                    legend.begin());
    }
    svg << "<circle cx=\"" << fmt("%.6f", q.x()) << "\" cy=\"" << fmt("%.6f", q.y()) << "\" r=\"2.5\" fill=\""
        << label_color(li) << "\" fill-opacity=\"0.8\"/>\n";
  }
  svg << "</g>\n<g id=\"legend\">\n";
  for (std::size_t i = 0; i < legend.size(); ++i) {
    const double ly = t.top + 10 + 18.0 * static_cast<double>(i);
    svg << "<circle cx=\"" << fmt("%.0f", t.left + t.width + 20) << "\" cy=\"" << fmt("%.0f", ly) << "\" r=\"5\" fill=\""
        << label_color(i) << "\"/>";
    svg << "<text x=\"" << fmt("%.0f", t.left + t.width + 32) << "\" y=\"" << fmt("%.0f", ly + 4) << "\">"
        << escape(legend[i]) << "</text>\n";
  }
  svg << "</g>\n</svg>\n";
  return svg.str();
}

void export_scatter(const Embedding2D& emb, const std::filesystem::path& out_path) {
  const auto svg = scatter_svg(emb);
  std::ofstream out(out_path, std::ios::binary);
  if (!out || !out.write(svg.data(), static_cast<std::streamsize>(svg.size()))) {
    throw FileError("cannot write " + out_path.string());
  }
}

void write_embedding_csv(const std::filesystem::path& path, const Embedding2D& emb) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  out << "x,y,label\n";
  for (Eigen::Index i = 0; i < emb.coords.rows(); ++i) {
    out << nlohmann::json(emb.coords(i, 0)).dump() << ',' << nlohmann::json(emb.coords(i, 1)).dump() << ','
        << (emb.labels.empty() ? std::string() : emb.labels[static_cast<std::size_t>(i)]) << '\n';
  }
}

void write_kl_trace_csv(const std::filesystem::path& path, const Embedding2D& emb) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  out << "iteration,kl\n";
  for (std::size_t i = 0; i < emb.kl_trace.size(); ++i) out << i + 1 << ',' << nlohmann::json(emb.kl_trace[i]).dump() << '\n';
}

}  // namespace neurosem
