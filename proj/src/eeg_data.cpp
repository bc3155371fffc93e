#include "neurosem/eeg_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "json.hpp"
#include "neurosem/rng.hpp"

namespace neurosem {

using json = nlohmann::json;

int EegDataset::num_classes() const {
  int m = -1;
  for (const auto& e : epochs) m = std::max(m, e.class_label);
  return m + 1;
}

void EegDataset::validate() const {
  if (channels <= 0 || samples <= 0) throw DimensionError("dataset must have positive channels and samples");
  if (static_cast<int>(channel_names.size()) != channels) {
    throw DimensionError("dataset has " + std::to_string(channel_names.size()) + " channel names for " +
                         std::to_string(channels) + " channels");
  }
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& e = epochs[i];
    if (e.data.rows() != channels || e.data.cols() != samples) {
      throw DimensionError("epoch " + std::to_string(i) + " has shape [" + std::to_string(e.data.rows()) + "x" +
                           std::to_string(e.data.cols()) + "], expected [" + std::to_string(channels) + "x" +
                           std::to_string(samples) + "]");
    }
    if (!e.data.allFinite()) throw DataError("epoch " + std::to_string(i) + " contains non-finite values");
    if (e.class_label < 0) throw DataError("epoch " + std::to_string(i) + " has a negative class label");
  }
}

EegDataset EegDataset::subset(const std::vector<std::size_t>& positions) const {
  EegDataset out;
  out.channel_names = channel_names;
  out.sample_rate = sample_rate;
  out.channels = channels;
  out.samples = samples;
  out.epochs.reserve(positions.size());
  for (auto p : positions) out.epochs.push_back(epochs.at(p));
  return out;
}

EegDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open dataset " + path.string());
  std::string header_line;
  if (!std::getline(in, header_line)) throw DataError("dataset " + path.string() + " has no header");
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::parse_error& e) {
    throw DataError("dataset header is not valid JSON: " + std::string(e.what()));
  }
  EegDataset ds;
  try {
    ds.channels = header.at("channels").get<int>();
    ds.samples = header.at("samples").get<int>();
    ds.sample_rate = header.at("sample_rate").get<double>();
    ds.channel_names = header.at("channel_names").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError("dataset header: " + std::string(e.what()));
  }
  const auto n_epochs = header.at("epochs").get<std::size_t>();

  auto data = read_nsem<float>(in);
  auto labels = read_nsem<double>(in);
  const Shape want{n_epochs, static_cast<std::size_t>(ds.channels), static_cast<std::size_t>(ds.samples)};
  if (data.shape != want) {
    throw DimensionError("dataset tensor has shape " + shape_string(data.shape) + ", header declares " +
                         shape_string(want));
  }
  if (labels.shape != Shape{n_epochs, 2}) {
    throw DimensionError("labels tensor has shape " + shape_string(labels.shape) + ", expected [" +
                         std::to_string(n_epochs) + "x2]");
  }
  const std::size_t per = static_cast<std::size_t>(ds.channels) * static_cast<std::size_t>(ds.samples);
  ds.epochs.resize(n_epochs);
  for (std::size_t i = 0; i < n_epochs; ++i) {
    auto& e = ds.epochs[i];
    e.data = Eigen::Map<const Mat<float>>(data.data.data() + i * per, ds.channels, ds.samples);
    e.class_label = static_cast<int>(labels.data[2 * i]);
    e.subject_id = static_cast<int>(labels.data[2 * i + 1]);
    e.source_index = i;
  }
  ds.validate();
  return ds;
}

void save_dataset(const std::filesystem::path& path, const EegDataset& dataset) {
  dataset.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write dataset " + path.string());
  nlohmann::ordered_json header;
  header["channels"] = dataset.channels;
  header["samples"] = dataset.samples;
  header["sample_rate"] = dataset.sample_rate;
  header["channel_names"] = dataset.channel_names;
  header["epochs"] = dataset.epochs.size();
  out << header.dump() << '\n';

  const std::size_t n = dataset.epochs.size();
  const std::size_t per = static_cast<std::size_t>(dataset.channels) * static_cast<std::size_t>(dataset.samples);
  Tensor<float> data = Tensor<float>::zeros(
      {n, static_cast<std::size_t>(dataset.channels), static_cast<std::size_t>(dataset.samples)});
  Tensor<double> labels = Tensor<double>::zeros({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = dataset.epochs[i];
    std::copy(e.data.data(), e.data.data() + per, data.data.begin() + static_cast<std::ptrdiff_t>(i * per));
    labels.data[2 * i] = e.class_label;
    labels.data[2 * i + 1] = e.subject_id;
  }
  write_nsem(out, data);
  write_nsem(out, labels);
}

Mat<float> zscore(const Mat<float>& epoch) {
  Mat<float> out(epoch.rows(), epoch.cols());
  for (Eigen::Index c = 0; c < epoch.rows(); ++c) {
    const auto row = epoch.row(c).cast<double>();
    const double mu = row.mean();
    const double var = (row.array() - mu).square().mean();
    out.row(c) = ((row.array() - mu) / std::sqrt(var + 1e-8)).cast<float>();
  }
  return out;
}

EegEpoch zscore(const EegEpoch& epoch) {
  EegEpoch out = epoch;
  out.data = zscore(epoch.data);
  return out;
}

DatasetSplit split(const EegDataset& dataset, const SplitRatios& ratios, std::uint64_t seed) {
  if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ContractError("split ratios must be positive and sum to 1");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.epochs.size(); ++i) by_class[dataset.epochs[i].class_label].push_back(i);

  const RngStream root = Rng(seed).stream("split");
  std::vector<std::size_t> train, val, test;
  for (auto& [label, members] : by_class) {
    const auto n = static_cast<long>(members.size());
    const long n_val = std::max(1L, std::lround(static_cast<double>(n) * ratios.val));
    const long n_test = std::max(1L, std::lround(static_cast<double>(n) * ratios.test));
    if (n - n_val - n_test < 1) {
      throw DataError("stratification: class " + std::to_string(label) + " has " + std::to_string(n) +
                      " epochs, too few for a three-way split");
    }
    RngStream s = root.split(static_cast<std::uint64_t>(label));
    s.shuffle(members);
    val.insert(val.end(), members.begin(), members.begin() + n_val);
    test.insert(test.end(), members.begin() + n_val, members.begin() + n_val + n_test);
    train.insert(train.end(), members.begin() + n_val + n_test, members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  std::sort(test.begin(), test.end());
  return {dataset.subset(train), dataset.subset(val), dataset.subset(test)};
}

void ChannelLayout::require_channels(const std::vector<std::string>& channels) const {
  for (const auto& c : channels) {
    if (!positions.contains(c)) throw LayoutError("channel '" + c + "' missing from layout");
  }
}

ChannelLayout load_layout(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open channel layout " + path.string());
  ChannelLayout layout;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string name, xs, ys;
    if (!std::getline(ss, name, ',') || !std::getline(ss, xs, ',') || !std::getline(ss, ys, ',')) {
      throw LayoutError("line " + std::to_string(lineno) + ": expected name,x,y");
    }
    if (lineno == 1 && name == "name") continue;
    double x, y;
    try {
      x = std::stod(xs);
      y = std::stod(ys);
    } catch (const std::exception&) {
      throw LayoutError("line " + std::to_string(lineno) + ": coordinates are not numbers");
    }
    if (std::abs(x) > 1.0 || std::abs(y) > 1.0) {
      throw LayoutError("channel '" + name + "' coordinates outside [-1, 1]");
    }
    if (!layout.positions.emplace(name, Eigen::Vector2d(x, y)).second) {
      throw LayoutError("duplicate channel '" + name + "' in layout");
    }
    layout.names.push_back(name);
  }
  return layout;
}

void save_layout(const std::filesystem::path& path, const ChannelLayout& layout) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write channel layout " + path.string());
  out << "name,x,y\n";
  char buf[96];
  for (const auto& n : layout.names) {
    const auto& p = layout.positions.at(n);
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", p.x(), p.y());
    out << n << buf;
  }
}

ChannelLayout default_layout(const std::vector<std::string>& channel_names) {
  ChannelLayout layout;
  const double n = static_cast<double>(channel_names.size());
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < channel_names.size(); ++i) {
    const double r = 0.9 * std::sqrt((static_cast<double>(i) + 0.5) / n);
    const double theta = golden * static_cast<double>(i);
    layout.names.push_back(channel_names[i]);
    layout.positions.emplace(channel_names[i], Eigen::Vector2d(r * std::cos(theta), r * std::sin(theta)));
  }
  return layout;
}

std::vector<std::vector<int>> SynthSpec::default_informative(int classes, int channels) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    for (int j = 0; j < 3; ++j) out[static_cast<std::size_t>(c)].push_back((3 * c + j) % channels);
  }
  return out;
}

void SynthSpec::validate() const {
  if (classes < 1 || epochs_per_class < 1 || channels < 1 || samples < 2 || sample_rate <= 0) {
    throw ConfigError("synth: classes, epochs_per_class, channels, samples and sample_rate must be positive");
  }
  if (!(snr > 0)) throw ConfigError("synth: snr must be positive");
  if (embed_dim < 2) throw ConfigError("synth: embed_dim must be >= 2");
  if (!informative_channels.empty() && static_cast<int>(informative_channels.size()) != classes) {
    throw ConfigError("synth: informative_channels must list one channel set per class");
  }
  for (const auto& set : informative_channels) {
    for (int ch : set) {
      if (ch < 0 || ch >= channels) {
        throw ConfigError("synth: informative channel " + std::to_string(ch) + " outside [0, " +
                          std::to_string(channels) + ")");
      }
    }
  }
  if (distractor_captions < 1) throw ConfigError("synth: distractor_captions must be >= 1");
}

SynthOutput synth_generate(const SynthSpec& spec, const Taxonomy& taxonomy) {
  spec.validate();
  for (const auto& name : spec.informative_categories) taxonomy.index_of(name);
  const auto informative =
      spec.informative_channels.empty() ? SynthSpec::default_informative(spec.classes, spec.channels)
                                        : spec.informative_channels;
  const Rng rng(spec.seed);

  EegDataset ds;
  ds.channels = spec.channels;
  ds.samples = spec.samples;
  ds.sample_rate = spec.sample_rate;
  for (int c = 0; c < spec.channels; ++c) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "Ch%02d", c);
    ds.channel_names.emplace_back(buf);
  }

  const bool noiseless = std::isinf(spec.snr);
  const double noise_std = noiseless ? 0.0 : 1.0 / spec.snr;
  const int burst_start = spec.samples / 4;
  const int burst_len = spec.samples / 2;
  const RngStream signal_root = rng.stream("synth/signal");
  const RngStream noise_root = rng.stream("synth/noise");

  std::size_t index = 0;
  for (int k = 0; k < spec.epochs_per_class; ++k) {
    for (int c = 0; c < spec.classes; ++c) {
      EegEpoch e;
      e.class_label = c;
      e.subject_id = static_cast<int>(index % static_cast<std::size_t>(spec.subjects));
      e.source_index = index;
      Mat<double> x = Mat<double>::Zero(spec.channels, spec.samples);
      RngStream noise = noise_root.split(index);
      if (!noiseless) {
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = noise_std * noise.normal();
      }
      RngStream sig = signal_root.split(index);
      const double phase = 2.0 * std::numbers::pi * sig.uniform();
      const double f = burst_frequency(c);
      for (int ch : informative[static_cast<std::size_t>(c)]) {
        for (int t = 0; t < burst_len; ++t) {
          const double w = std::pow(std::sin(std::numbers::pi * (t + 0.5) / burst_len), 2.0);
          const int ts = burst_start + t;
          x(ch, ts) += w * std::sin(2.0 * std::numbers::pi * f * ts / spec.sample_rate + phase);
        }
      }
      e.data = x.cast<float>();
      ds.epochs.push_back(std::move(e));
      ++index;
    }
  }

  const auto& cats = taxonomy.categories();
  const auto is_informative = [&](const std::string& name) {
    return spec.informative_categories.empty() ||
           std::find(spec.informative_categories.begin(), spec.informative_categories.end(), name) !=
               spec.informative_categories.end();
  };
  const RngStream caption_root = rng.stream("synth/captions");
  std::vector<CaptionEntry> entries;
  const double per_coord = spec.caption_noise / std::sqrt(static_cast<double>(spec.embed_dim));
  for (int c = 0; c < spec.classes; ++c) {
    for (std::size_t k = 0; k < cats.size(); ++k) {
      RngStream s = caption_root.split(static_cast<std::uint64_t>(c) * 1000 + k);
      const bool info = is_informative(cats[k].name);
      const int count = info ? 1 : spec.distractor_captions;
      for (int j = 0; j < count; ++j) {
        CaptionEntry e;
        e.id = "c" + std::to_string(c) + "_" + cats[k].name + "_" + std::to_string(j);
        e.class_label = c;
        e.category = cats[k].name;
        e.level = cats[k].level;
        e.embedding.resize(spec.embed_dim);
        if (info) {
          for (Eigen::Index d = 0; d < spec.embed_dim; ++d) e.embedding(d) = per_coord * s.normal();
          e.embedding(static_cast<Eigen::Index>((k * static_cast<std::size_t>(spec.classes) + static_cast<std::size_t>(c)) %
                                                static_cast<std::size_t>(spec.embed_dim))) += 1.0;
          e.text = cats[k].name + " caption for class " + std::to_string(c);
        } else {
          for (Eigen::Index d = 0; d < spec.embed_dim; ++d) e.embedding(d) = s.normal();
          e.text = cats[k].name + " distractor " + std::to_string(j) + " for class " + std::to_string(c);
        }
        e.embedding /= e.embedding.norm();
        entries.push_back(std::move(e));
      }
    }
  }

  SynthOutput out{std::move(ds), CaptionBank(std::move(entries), taxonomy, spec.classes),
                  ChannelLayout{}};
  out.layout = default_layout(out.dataset.channel_names);
  return out;
}

}  // namespace neurosem
