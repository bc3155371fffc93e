#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "neurosem/autodiff.hpp"
#include "neurosem/caption_bank.hpp"
#include "neurosem/eeg_data.hpp"
#include "neurosem/rng.hpp"
#include "neurosem/tensor.hpp"

namespace neurosem {

struct EncoderConfig {
  int channels = 32;
  int samples = 256;
  int patch_len = 16;
  int d_model = 64;
  int n_spatial_layers = 2;
  int n_temporal_layers = 2;
  int n_attn_heads = 4;
  int ff_mult = 4;
  double dropout = 0.1;
  int proj_dim = 512;
  std::vector<std::string> head_categories = Taxonomy::defaults().names();
  std::uint64_t seed = 0;

  int patches() const { return samples / patch_len; }
  int head_dim() const { return d_model / n_attn_heads; }

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
  /// Heads must list exactly the taxonomy's categories, in taxonomy order.
  void validate_against(const Taxonomy& taxonomy) const;

  bool operator==(const EncoderConfig&) const = default;
};

nlohmann::ordered_json to_json(const EncoderConfig& config);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

/// Named parameter store; insertion order is the canonical order used by the
/// optimizer and the checkpoint.
template <typename Scalar>
class EncoderParams {
 public:
  void add(std::string name, Mat<Scalar> value);

  std::size_t size() const { return values_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Mat<Scalar>>& values() { return values_; }
  const std::vector<Mat<Scalar>>& values() const { return values_; }

  Mat<Scalar>& at(std::string_view name);
  const Mat<Scalar>& at(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }
  /// Total number of scalar parameters.
  std::size_t count() const;
  bool all_finite() const;

  template <typename Other>
  EncoderParams<Other> cast() const {
    EncoderParams<Other> out;
    for (std::size_t i = 0; i < values_.size(); ++i) out.add(names_[i], values_[i].template cast<Other>());
    return out;
  }

  bool operator==(const EncoderParams& other) const {
    return names_ == other.names_ && values_ == other.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat<Scalar>> values_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Weights ~ truncated normal (std 0.02, per-parameter named stream), biases
/// and layer-norm shifts zero, layer-norm gains one.
template <typename Scalar>
EncoderParams<Scalar> init_params(const EncoderConfig& config);

/// Canonical parameter order for a configuration.
std::vector<std::string> param_names(const EncoderConfig& config);

/// Closed-form parameter count for a configuration.
std::size_t expected_param_count(const EncoderConfig& config);

/// Per-head unit-norm embeddings, one B x D matrix per head in head order.
template <typename Scalar>
struct HeadEmbeddings {
  std::vector<std::string> heads;
  std::vector<Mat<Scalar>> embeddings;

  const Mat<Scalar>& at(std::string_view head) const;
  std::size_t size() const { return heads.size(); }
};

/// Graph handles for one forward pass.
template <typename Scalar>
struct EncoderGraph {
  Var<Scalar> input;
  std::vector<Var<Scalar>> params;  // same order as EncoderParams
  std::vector<Var<Scalar>> heads;   // B x D, unit rows
};

/// Forward pass over caller-owned parameter nodes (canonical order).
template <typename Scalar>
std::vector<Var<Scalar>> encoder_heads(const Var<Scalar>& input, const std::vector<Var<Scalar>>& params,
                                       const EncoderConfig& config, bool train_mode, RngStream* dropout_stream);

/// Records the forward pass on `tape`. `batch` stacks B examples of
/// channels x samples rows (row b*channels + c). Dropout draws from
/// `dropout_stream` only in train mode.
template <typename Scalar>
EncoderGraph<Scalar> build_encoder(Tape<Scalar>& tape, const Mat<Scalar>& batch, const EncoderParams<Scalar>& params,
                                   const EncoderConfig& config, bool train_mode, RngStream* dropout_stream,
                                   bool params_require_grad, bool input_requires_grad);

template <typename Scalar>
HeadEmbeddings<Scalar> encode(const Mat<Scalar>& batch, const EncoderParams<Scalar>& params,
                              const EncoderConfig& config, bool train_mode = false, std::uint64_t dropout_seed = 0);

template <typename Scalar>
using HeadLossFn = std::function<Var<Scalar>(Tape<Scalar>&, const std::vector<Var<Scalar>>& heads)>;

template <typename Scalar>
struct InputGradient {
  Scalar loss = 0;
  Mat<Scalar> gradient;  // same layout as the batch
};

/// Evaluation-mode forward pass followed by a backward pass to the input.
template <typename Scalar>
InputGradient<Scalar> encode_with_input_grad(const Mat<Scalar>& batch, const EncoderParams<Scalar>& params,
                                             const EncoderConfig& config, const HeadLossFn<Scalar>& loss_fn);

/// Stacks epochs into the encoder batch layout.
Mat<float> stack_epochs(const std::vector<const EegEpoch*>& epochs);
Mat<float> stack_epochs(const EegDataset& dataset);

/// Evaluation-mode embeddings for every epoch, processed in chunks.
HeadEmbeddings<float> encode_dataset(const EegDataset& dataset, const EncoderParams<float>& params,
                                     const EncoderConfig& config, int chunk = 64);

struct CheckpointMeta {
  int epoch = 0;
  std::vector<double> loss_history;
};

struct Checkpoint {
  EncoderConfig config;
  EncoderParams<float> params;
  CheckpointMeta meta;
};

/// Directory with manifest.json plus one NSEM file per parameter.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace neurosem
