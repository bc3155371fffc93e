#include "neurosem/saliency.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "neurosem/trainer.hpp"

namespace neurosem {

std::vector<double> channel_scores(const Mat<double>& input_gradient, Eigen::Index channels) {
  if (channels <= 0 || input_gradient.rows() % channels != 0) {
    throw DimensionError("saliency: gradient has " + std::to_string(input_gradient.rows()) + " rows, not a multiple of " +
                         std::to_string(channels) + " channels");
  }
  const Eigen::Index batch = input_gradient.rows() / channels;
  std::vector<double> scores(static_cast<std::size_t>(channels), 0.0);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index c = 0; c < channels; ++c) {
      scores[static_cast<std::size_t>(c)] += input_gradient.row(b * channels + c).cwiseAbs().sum();
    }
  }
  const double n = static_cast<double>(batch * input_gradient.cols());
  for (auto& s : scores) s /= n;
  return scores;
}

SaliencyMap compute_saliency(const InputLossModel& model, const Mat<double>& batch,
                             const std::vector<std::string>& channel_names, const std::string& head_scope) {
  if (batch.size() == 0) throw ContractError("saliency: empty batch");
  Tape<double> tape;
  auto input = tape.leaf(batch);
  auto grads = tape.backward(model(tape, input));
  SaliencyMap map;
  map.per_channel = channel_scores(grads[input], static_cast<Eigen::Index>(channel_names.size()));
  map.channel_names = channel_names;
  map.head_scope = head_scope;
  return map;
}

SaliencyMap compute_saliency(const Checkpoint& checkpoint, const std::vector<const EegEpoch*>& batch,
                             const std::vector<std::string>& channel_names, const CaptionBank& bank,
                             const SaliencyOptions& options) {
  if (batch.empty()) throw ContractError("saliency: empty batch");
  const auto& config = checkpoint.config;
  if (static_cast<int>(channel_names.size()) != config.channels) {
    throw DimensionError("saliency: " + std::to_string(channel_names.size()) + " channel names for a " +
                         std::to_string(config.channels) + "-channel encoder");
  }
  std::vector<std::size_t> scope;
  for (std::size_t h = 0; h < config.head_categories.size(); ++h) {
    if (options.head_scope == kAllHeads || config.head_categories[h] == options.head_scope) scope.push_back(h);
  }
  if (scope.empty()) throw ConfigError("saliency: unknown head scope '" + options.head_scope + "'");

  std::vector<Mat<double>> targets;
  for (auto h : scope) {
    Mat<double> t(static_cast<Eigen::Index>(batch.size()), bank.dim());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& options_for = bank.captions_for(batch[i]->class_label, config.head_categories[h]);
      t.row(static_cast<Eigen::Index>(i)) = bank.entries()[options_for.front()].embedding;
    }
    targets.push_back(std::move(t));
  }
  const double tau = options.temperature;
  HeadLossFn<double> loss = [&](Tape<double>& tape, const std::vector<Var<double>>& heads) {
    Var<double> total = infonce_symmetric(heads[scope[0]], tape.constant(targets[0]), tau);
    for (std::size_t i = 1; i < scope.size(); ++i) {
      total = add(total, infonce_symmetric(heads[scope[i]], tape.constant(targets[i]), tau));
    }
    return total;
  };
  // Attribution is taken on the preprocessed (z-scored) signal the network consumes.
  std::vector<EegEpoch> standardized;
  standardized.reserve(batch.size());
  for (const auto* e : batch) standardized.push_back(zscore(*e));
  std::vector<const EegEpoch*> view;
  for (const auto& e : standardized) view.push_back(&e);
  const Mat<double> input = stack_epochs(view).cast<double>();
  const auto result = encode_with_input_grad<double>(input, checkpoint.params.cast<double>(), config, loss);

  SaliencyMap map;
  map.per_channel = channel_scores(result.gradient, config.channels);
  map.channel_names = channel_names;
  map.head_scope = options.head_scope;
  return map;
}

SaliencyMap compute_saliency(const Checkpoint& checkpoint, const EegDataset& dataset, const CaptionBank& bank,
                             const SaliencyOptions& options) {
  std::vector<const EegEpoch*> batch;
  for (const auto& e : dataset.epochs) batch.push_back(&e);
  return compute_saliency(checkpoint, batch, dataset.channel_names, bank, options);
}

std::vector<std::size_t> rank_channels(const SaliencyMap& map) {
  std::vector<std::size_t> order(map.per_channel.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return map.per_channel[a] > map.per_channel[b]; });
  return order;
}

void write_saliency_csv(const std::filesystem::path& path, const SaliencyMap& map) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  out << "channel,score\n";
  for (std::size_t i = 0; i < map.per_channel.size(); ++i) {
    out << map.channel_names[i] << ',' << nlohmann::json(map.per_channel[i]).dump() << '\n';
  }
}

SaliencyMap read_saliency_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open " + path.string());
  SaliencyMap map;
  std::string line;
  if (!std::getline(in, line) || line != "channel,score") throw SchemaError(path.string() + ": expected header channel,score");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw SchemaError(path.string() + ": malformed row '" + line + "'");
    map.channel_names.push_back(line.substr(0, comma));
    try {
      map.per_channel.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw SchemaError(path.string() + ": bad score in row '" + line + "'");
    }
  }
  return map;
}

Mat<double> topomap_field(const SaliencyMap& map, const ChannelLayout& layout, int grid) {
  if (grid < 2) throw ContractError("topomap grid must be at least 2");
  layout.require_channels(map.channel_names);
  std::vector<Eigen::Vector2d> pos;
  for (const auto& name : map.channel_names) pos.push_back(layout.positions.at(name));
  Mat<double> field(grid, grid);
  const double cell = 2.0 / grid;
  for (int r = 0; r < grid; ++r) {
    const double y = 1.0 - (r + 0.5) * cell;
    for (int c = 0; c < grid; ++c) {
      const double x = -1.0 + (c + 0.5) * cell;
      if (x * x + y * y > 1.0) {
        field(r, c) = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      double num = 0.0, den = 0.0;
      bool exact = false;
      for (std::size_t i = 0; i < pos.size() && !exact; ++i) {
        const double d2 = (pos[i] - Eigen::Vector2d(x, y)).squaredNorm();
        if (d2 == 0.0) {
          num = map.per_channel[i];
          den = 1.0;
          exact = true;
        } else {
          num += map.per_channel[i] / d2;
          den += 1.0 / d2;
        }
      }
      field(r, c) = den > 0.0 ? num / den : 0.0;
    }
  }
  return field;
}

namespace {

// Viridis stops, interpolated linearly.
constexpr std::array<std::array<double, 3>, 5> kPalette = {{
    {68, 1, 84},
    {59, 82, 139},
    {33, 145, 140},
    {94, 201, 98},
    {253, 231, 37},
}};

std::string color(double t) {
  t = std::clamp(t, 0.0, 1.0) * static_cast<double>(kPalette.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), kPalette.size() - 2);
  const double f = t - static_cast<double>(i);
  char buf[8];
  int rgb[3];
  for (int k = 0; k < 3; ++k) rgb[k] = static_cast<int>(std::lround(kPalette[i][k] + f * (kPalette[i + 1][k] - kPalette[i][k])));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

std::string topomap_svg(const SaliencyMap& map, const ChannelLayout& layout, int grid) {
  const Mat<double> field = topomap_field(map, layout, grid);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double s : map.per_channel) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  if (map.per_channel.empty()) lo = hi = 0.0;
  const double span = hi - lo;
  auto t_of = [&](double v) { return span > 0.0 ? (v - lo) / span : 0.0; };

  constexpr double kSize = 320.0, kMargin = 40.0, kRadius = kSize / 2.0;
  const double cx = kMargin + kRadius, cy = kMargin + kRadius, cell = kSize / grid;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kSize + 2 * kMargin + 80) << "\" height=\""
      << num(kSize + 2 * kMargin) << "\" font-family=\"sans-serif\" font-size=\"9\">\n";
  svg << "<title>saliency " << escape(map.head_scope) << "</title>\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  svg << "<g shape-rendering=\"crispEdges\">\n";
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      const double v = field(r, c);
      if (std::isnan(v)) continue;
      svg << "<rect x=\"" << num(kMargin + c * cell) << "\" y=\"" << num(kMargin + r * cell) << "\" width=\""
          << num(cell) << "\" height=\"" << num(cell) << "\" fill=\"" << color(t_of(v)) << "\"/>\n";
    }
  }
  svg << "</g>\n";
  svg << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(cy) << "\" r=\"" << num(kRadius)
      << "\" fill=\"none\" stroke=\"#000000\" stroke-width=\"1.5\"/>\n";
  svg << "<polyline points=\"" << num(cx - 12) << ',' << num(cy - kRadius + 1) << ' ' << num(cx) << ','
      << num(cy - kRadius - 14) << ' ' << num(cx + 12) << ',' << num(cy - kRadius + 1)
      << "\" fill=\"none\" stroke=\"#000000\" stroke-width=\"1.5\"/>\n";
  for (std::size_t i = 0; i < map.channel_names.size(); ++i) {
    const auto& p = layout.positions.at(map.channel_names[i]);
    const double px = cx + p.x() * kRadius, py = cy - p.y() * kRadius;
    svg << "<circle cx=\"" << num(px) << "\" cy=\"" << num(py) << "\" r=\"2\" fill=\"#000000\"/>\n";
    svg << "<text x=\"" << num(px + 3) << "\" y=\"" << num(py - 3) << "\">" << escape(map.channel_names[i])
        << "</text>\n";
  }
  const double bx = kSize + 2 * kMargin + 20;
  for (int k = 0; k < 50; ++k) {
    svg << "<rect x=\"" << num(bx) << "\" y=\"" << num(kMargin + kSize - (k + 1) * kSize / 50) << "\" width=\"14\" height=\""
        << num(kSize / 50) << "\" fill=\"" << color((k + 0.5) / 50) << "\"/>\n";
  }
  svg << "<text x=\"" << num(bx + 18) << "\" y=\"" << num(kMargin + 8) << "\">" << sci(hi) << "</text>\n";
  svg << "<text x=\"" << num(bx + 18) << "\" y=\"" << num(kMargin + kSize) << "\">" << sci(lo) << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

void render_topomap(const SaliencyMap& map, const ChannelLayout& layout, const std::filesystem::path& out_path) {
  const auto svg = topomap_svg(map, layout);
  std::ofstream out(out_path, std::ios::binary);
  if (!out || !out.write(svg.data(), static_cast<std::streamsize>(svg.size()))) {
    throw FileError("cannot write " + out_path.string());
  }
}

}  // namespace neurosem
