#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "neurosem/caption_bank.hpp"
#include "neurosem/tensor.hpp"

namespace neurosem {

struct EegEpoch {
  Mat<float> data;  // channels x samples, microvolts
  int class_label = 0;
  int subject_id = 0;
  std::size_t source_index = 0;  // position in the originating file
};

struct EegDataset {
  std::vector<EegEpoch> epochs;
  std::vector<std::string> channel_names;
  double sample_rate = 256.0;
  int channels = 0;
  int samples = 0;

  std::size_t size() const { return epochs.size(); }
  int num_classes() const;
  /// Throws DimensionError/DataError when an invariant does not hold.
  void validate() const;
  /// Subset by positions into epochs.
  EegDataset subset(const std::vector<std::size_t>& positions) const;
};

/// Dataset file: one JSON header line, then an NSEM f32 tensor
/// epochs x channels x samples, then an NSEM labels tensor epochs x 2
/// (class, subject).
EegDataset load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const EegDataset& dataset);

/// Per-channel standardization, eps 1e-8 guard for flat channels.
Mat<float> zscore(const Mat<float>& epoch);
EegEpoch zscore(const EegEpoch& epoch);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  EegDataset train;
  EegDataset val;
  EegDataset test;
};

/// Class-stratified, disjoint, exhaustive split. Each class contributes
/// round(n * ratio) epochs (at least one) to val and test and the rest to
/// train.
DatasetSplit split(const EegDataset& dataset, const SplitRatios& ratios, std::uint64_t seed);

struct ChannelLayout {
  std::vector<std::string> names;
  std::map<std::string, Eigen::Vector2d> positions;

  /// Throws LayoutError naming the first channel without coordinates.
  void require_channels(const std::vector<std::string>& channels) const;
};

/// CSV "name,x,y"; a header row is optional.
ChannelLayout load_layout(const std::filesystem::path& path);
void save_layout(const std::filesystem::path& path, const ChannelLayout& layout);
/// Deterministic sunflower layout inside the unit head circle.
ChannelLayout default_layout(const std::vector<std::string>& channel_names);

struct SynthSpec {
  int classes = 8;
  int epochs_per_class = 40;
  int channels = 32;
  int samples = 256;
  double sample_rate = 256.0;
  /// Class -> informative channel indices. Empty means default_informative().
  std::vector<std::vector<int>> informative_channels;
  double snr = 10.0;  // signal amplitude / noise std; infinity means noiseless
  std::uint64_t seed = 7;
  int embed_dim = 512;
  double caption_noise = 0.3;
  /// Categories whose captions carry class identity; empty means all.
  std::vector<std::string> informative_categories;
  /// Random captions per (class, category) for non-informative categories.
  int distractor_captions = 4;
  int subjects = 6;

  /// Class c -> {3c, 3c+1, 3c+2} mod channels.
  static std::vector<std::vector<int>> default_informative(int classes, int channels);
  void validate() const;
};

struct SynthOutput {
  EegDataset dataset;
  CaptionBank bank;
  ChannelLayout layout;
};

/// Class c emits a Hann-tapered sinusoidal burst at 4 + 2c Hz (unit amplitude,
/// central half of the epoch) on its informative channels, plus white noise
/// with std 1/snr on every channel. The paired bank encodes class identity as
/// a one-hot-plus-noise direction per category.
SynthOutput synth_generate(const SynthSpec& spec, const Taxonomy& taxonomy = Taxonomy::defaults());

inline double burst_frequency(int class_label) { return 4.0 + 2.0 * class_label; }

}  // namespace neurosem
