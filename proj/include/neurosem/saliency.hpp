#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "neurosem/caption_bank.hpp"
#include "neurosem/eeg_data.hpp"
#include "neurosem/encoder.hpp"

namespace neurosem {

inline constexpr const char* kAllHeads = "all";

struct SaliencyMap {
  std::vector<double> per_channel;
  std::vector<std::string> channel_names;
  std::string head_scope = kAllHeads;
};

/// Scalar loss of the stacked (B*C) x T input.
using InputLossModel = std::function<Var<double>(Tape<double>&, const Var<double>& input)>;

/// score_c = mean over epochs and samples of |dL/dx[b, c, t]|.
std::vector<double> channel_scores(const Mat<double>& input_gradient, Eigen::Index channels);

/// Saliency of an arbitrary differentiable model of the input batch.
SaliencyMap compute_saliency(const InputLossModel& model, const Mat<double>& batch,
                             const std::vector<std::string>& channel_names, const std::string& head_scope = kAllHeads);

struct SaliencyOptions {
  std::string head_scope = kAllHeads;  // one head name, or "all"
  double temperature = 0.07;
};

/// Contrastive loss of the batch against each epoch's class caption (first
/// caption by id per category), restricted to `head_scope`, differentiated to
/// the z-scored input in 64-bit evaluation mode.
SaliencyMap compute_saliency(const Checkpoint& checkpoint, const std::vector<const EegEpoch*>& batch,
                             const std::vector<std::string>& channel_names, const CaptionBank& bank,
                             const SaliencyOptions& options = {});
SaliencyMap compute_saliency(const Checkpoint& checkpoint, const EegDataset& dataset, const CaptionBank& bank,
                             const SaliencyOptions& options = {});

/// Channel indices ordered by descending score, ties by index.
std::vector<std::size_t> rank_channels(const SaliencyMap& map);

/// "channel,score"
void write_saliency_csv(const std::filesystem::path& path, const SaliencyMap& map);
SaliencyMap read_saliency_csv(const std::filesystem::path& path);

/// Inverse-distance-weighted (power 2) field on a grid x grid raster over
/// [-1, 1]^2, row 0 at the top. Cells outside the unit circle are NaN.
Mat<double> topomap_field(const SaliencyMap& map, const ChannelLayout& layout, int grid = 64);

std::string topomap_svg(const SaliencyMap& map, const ChannelLayout& layout, int grid = 64);
void render_topomap(const SaliencyMap& map, const ChannelLayout& layout, const std::filesystem::path& out_path);

}  // namespace neurosem
