#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "neurosem/caption_bank.hpp"
#include "neurosem/eeg_data.hpp"
#include "neurosem/encoder.hpp"
#include "neurosem/ops.hpp"

namespace neurosem {

enum class LossKind { Contrastive, Mse };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view s);

struct TrainConfig {
  int batch_size = 32;
  int epochs = 50;
  double learning_rate = 2e-4;
  double temperature = 0.07;
  bool learnable_temperature = false;
  /// Exclude same-class off-diagonal pairs from the contrastive softmax.
  bool mask_duplicate_positives = false;
  LossKind loss_kind = LossKind::Contrastive;
  std::vector<std::string> active_heads;  // empty: every head
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: only final and best
  int eval_topk = 1;

  void validate(const EncoderConfig& encoder) const;
  std::vector<std::string> resolved_heads(const EncoderConfig& encoder) const;

  bool operator==(const TrainConfig&) const = default;
};

/// Symmetric cross-entropy over logits E T^T / tau with diagonal targets.
/// An optional additive mask (B x B) is applied to the logits.
template <typename Scalar>
Var<Scalar> infonce_symmetric(const Var<Scalar>& e, const Var<Scalar>& t, const Var<Scalar>& inv_tau,
                              const Mat<Scalar>* logit_mask = nullptr) {
  if (e.rows() != t.rows() || e.cols() != t.cols()) {
    throw DimensionError("infonce: E is " + detail::dims(e.rows(), e.cols()) + ", T is " + detail::dims(t.rows(), t.cols()));
  }
  if (e.rows() < 2) throw ContractError("infonce: batch size must be >= 2, got " + std::to_string(e.rows()));
  if (!(inv_tau.value()(0, 0) > Scalar(0))) throw ContractError("infonce: temperature must be > 0");
  auto logits = scale_by(matmul(e, transpose(t)), inv_tau);
  if (logit_mask != nullptr) logits = add(logits, e.tape()->constant(*logit_mask));
  std::vector<Eigen::Index> diag(static_cast<std::size_t>(e.rows()));
  for (Eigen::Index i = 0; i < e.rows(); ++i) diag[static_cast<std::size_t>(i)] = i;
  return scale(add(cross_entropy_rows(logits, diag), cross_entropy_rows(transpose(logits), diag)), Scalar(0.5));
}

template <typename Scalar>
Var<Scalar> infonce_symmetric(const Var<Scalar>& e, const Var<Scalar>& t, Scalar tau) {
  if (!(tau > Scalar(0))) throw ContractError("infonce: temperature must be > 0, got " + std::to_string(tau));
  return infonce_symmetric(e, t, e.tape()->constant(Mat<Scalar>::Constant(1, 1, Scalar(1) / tau)));
}

double infonce_symmetric(const Mat<double>& e, const Mat<double>& t, double tau);

/// Mean over all B x D entries of (E - T)^2.
template <typename Scalar>
Var<Scalar> mse_alignment_loss(const Var<Scalar>& e, const Var<Scalar>& t) {
  if (e.rows() != t.rows() || e.cols() != t.cols()) {
    throw DimensionError("mse_alignment_loss: E is " + detail::dims(e.rows(), e.cols()) + ", T is " +
                         detail::dims(t.rows(), t.cols()));
  }
  auto d = sub(e, t);
  return mean(hadamard(d, d));
}

double mse_alignment_loss(const Mat<double>& e, const Mat<double>& t);

/// Additive logit mask hiding same-class off-diagonal pairs.
template <typename Scalar>
Mat<Scalar> duplicate_positive_mask(const std::vector<int>& classes) {
  const auto n = static_cast<Eigen::Index>(classes.size());
  Mat<Scalar> m = Mat<Scalar>::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j && classes[static_cast<std::size_t>(i)] == classes[static_cast<std::size_t>(j)]) m(i, j) = Scalar(-1e9);
    }
  }
  return m;
}

struct BatchTargets {
  std::vector<Mat<double>> targets;              // per head, B x D
  std::vector<std::vector<std::size_t>> entries;  // per head, bank entry per row
};

/// Row i of head h's target is a caption of class classes[i] and category h,
/// drawn uniformly from `stream` when several exist.
BatchTargets batch_pair(const std::vector<int>& classes, const CaptionBank& bank, const std::vector<std::string>& heads,
                        RngStream& stream);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  std::vector<double> head_accuracy;  // validation, one per encoder head
  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<std::string> heads;
  std::vector<EpochRecord> epochs;

  /// "epoch,loss,<head>:acc,..."
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
  bool operator==(const TrainHistory&) const = default;
};

struct TrainResult {
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;
  int best_epoch = 0;
  double temperature = 0.0;
  TrainHistory history;
};

using CheckpointCallback = std::function<void(const Checkpoint&)>;

TrainResult train(const EegDataset& train_set, const EegDataset& val_set, const CaptionBank& bank,
                  const EncoderConfig& encoder, const TrainConfig& config, const CheckpointCallback& on_checkpoint = {});

/// Per-head fraction of epochs whose top-k captions (within the head's
/// category) include one of the epoch's class.
std::vector<double> evaluate_retrieval(const EncoderParams<float>& params, const EncoderConfig& encoder,
                                       const EegDataset& dataset, const CaptionBank& bank, int k);
std::vector<double> evaluate_retrieval(const Checkpoint& checkpoint, const EegDataset& dataset,
                                       const CaptionBank& bank, int k);
/// Same rule applied to precomputed head embeddings.
std::vector<double> retrieval_accuracy(const HeadEmbeddings<float>& embeddings, const std::vector<int>& labels,
                                       const CaptionBank& bank, int k);

struct AblationRow {
  LossKind loss_kind = LossKind::Contrastive;
  double mean_accuracy = 0.0;
  std::vector<double> head_accuracy;
};

/// "loss,mean_acc,<head>:acc,..."
void write_ablation_csv(const std::filesystem::path& path, const std::vector<std::string>& heads,
                        const std::vector<AblationRow>& rows);

}  // namespace neurosem
