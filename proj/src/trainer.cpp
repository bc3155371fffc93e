#include "neurosem/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "neurosem/adam.hpp"
#include "neurosem/retrieval.hpp"

namespace neurosem {

namespace {

std::string num(double v) { return nlohmann::json(v).dump(); }

}  // namespace

std::string_view to_string(LossKind kind) { return kind == LossKind::Contrastive ? "contrastive" : "mse"; }

LossKind parse_loss_kind(std::string_view s) {
  if (s == "contrastive") return LossKind::Contrastive;
  if (s == "mse") return LossKind::Mse;
  throw ConfigError("train.loss_kind must be 'contrastive' or 'mse', got '" + std::string(s) + "'");
}

void TrainConfig::validate(const EncoderConfig& encoder) const {
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (loss_kind == LossKind::Contrastive && batch_size < 2) {
    throw ConfigError("train.batch_size must be >= 2 for the contrastive loss");
  }
  if (!(temperature > 0.0)) throw ConfigError("train.temperature must be > 0");
  if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (eval_topk < 1) throw ConfigError("train.eval_topk must be >= 1");
  std::set<std::string> seen;
  for (const auto& h : active_heads) {
    if (std::find(encoder.head_categories.begin(), encoder.head_categories.end(), h) == encoder.head_categories.end()) {
      throw ConfigError("train.active_heads: unknown head '" + h + "'");
    }
    if (!seen.insert(h).second) throw ConfigError("train.active_heads: duplicate head '" + h + "'");
  }
}

std::vector<std::string> TrainConfig::resolved_heads(const EncoderConfig& encoder) const {
  if (active_heads.empty()) return encoder.head_categories;
  // Keep encoder order regardless of how the subset was listed.
  std::vector<std::string> out;
  for (const auto& h : encoder.head_categories) {
    if (std::find(active_heads.begin(), active_heads.end(), h) != active_heads.end()) out.push_back(h);
  }
  return out;
}

double infonce_symmetric(const Mat<double>& e, const Mat<double>& t, double tau) {
  Tape<double> tape(false);
  return infonce_symmetric(tape.constant(e), tape.constant(t), tau).value()(0, 0);
}

double mse_alignment_loss(const Mat<double>& e, const Mat<double>& t) {
  Tape<double> tape(false);
  return mse_alignment_loss(tape.constant(e), tape.constant(t)).value()(0, 0);
}

BatchTargets batch_pair(const std::vector<int>& classes, const CaptionBank& bank, const std::vector<std::string>& heads,
                        RngStream& stream) {
  BatchTargets out;
  const auto B = static_cast<Eigen::Index>(classes.size());
  for (const auto& h : heads) {
    Mat<double> t(B, bank.dim());
    std::vector<std::size_t> picked;
    for (Eigen::Index i = 0; i < B; ++i) {
      const auto& options = bank.captions_for(classes[static_cast<std::size_t>(i)], h);
      if (options.empty()) {
        throw CoverageError("no caption for class " + std::to_string(classes[static_cast<std::size_t>(i)]) +
                            " in category " + h);
      }
      const auto pick = options.size() == 1 ? options[0] : options[stream.below(options.size())];
      t.row(i) = bank.entries()[pick].embedding;
      picked.push_back(pick);
    }
    out.targets.push_back(std::move(t));
    out.entries.push_back(std::move(picked));
  }
  return out;
}

std::string TrainHistory::csv() const {
  std::ostringstream os;
  os << "epoch,loss";
  for (const auto& h : heads) os << ',' << h << ":acc";
  os << '\n';
  for (const auto& r : epochs) {
    os << r.epoch << ',' << num(r.loss);
    for (double a : r.head_accuracy) os << ',' << num(a);
    os << '\n';
  }
  return os.str();
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  out << csv();
}

std::vector<double> retrieval_accuracy(const HeadEmbeddings<float>& embeddings, const std::vector<int>& labels,
                                       const CaptionBank& bank, int k) {
  std::vector<double> acc(embeddings.size(), 0.0);
  if (labels.empty()) return acc;
  for (std::size_t h = 0; h < embeddings.size(); ++h) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      RowVec<double> q = embeddings.embeddings[h].row(static_cast<Eigen::Index>(i)).cast<double>();
      for (const auto& c : topk_captions(q, bank, embeddings.heads[h], k)) {
        if (bank.entries()[c.entry].class_label == labels[i]) {
          ++hits;
          break;
        }
      }
    }
    acc[h] = static_cast<double>(hits) / static_cast<double>(labels.size());
  }
  return acc;
}

std::vector<double> evaluate_retrieval(const EncoderParams<float>& params, const EncoderConfig& encoder,
                                       const EegDataset& dataset, const CaptionBank& bank, int k) {
  if (dataset.size() == 0) return std::vector<double>(encoder.head_categories.size(), 0.0);
  std::vector<int> labels;
  for (const auto& e : dataset.epochs) labels.push_back(e.class_label);
  return retrieval_accuracy(encode_dataset(dataset, params, encoder), labels, bank, k);
}

std::vector<double> evaluate_retrieval(const Checkpoint& checkpoint, const EegDataset& dataset,
                                       const CaptionBank& bank, int k) {
  return evaluate_retrieval(checkpoint.params, checkpoint.config, dataset, bank, k);
}

namespace {

// Batches of batch_size; a trailing remainder too small for the loss joins
// the previous batch.
std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, int batch_size, int min_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(start),
                               order.begin() + static_cast<std::ptrdiff_t>(end));
    if (static_cast<int>(b.size()) < min_size && !out.empty()) {
      out.back().insert(out.back().end(), b.begin(), b.end());
    } else if (static_cast<int>(b.size()) >= min_size) {
      out.push_back(std::move(b));
    }
  }
  return out;
}

double mean_over(const std::vector<double>& acc, const std::vector<std::size_t>& which) {
  double s = 0.0;
  for (auto i : which) s += acc[i];
  return which.empty() ? 0.0 : s / static_cast<double>(which.size());
}

}  // namespace

TrainResult train(const EegDataset& train_set, const EegDataset& val_set, const CaptionBank& bank,
                  const EncoderConfig& encoder, const TrainConfig& config, const CheckpointCallback& on_checkpoint) {
  encoder.validate();
  encoder.validate_against(bank.taxonomy());
  config.validate(encoder);
  if (train_set.channels != encoder.channels || train_set.samples != encoder.samples) {
    throw DimensionError("training data is " + std::to_string(train_set.channels) + "x" +
                         std::to_string(train_set.samples) + ", encoder expects " + std::to_string(encoder.channels) +
                         "x" + std::to_string(encoder.samples));
  }
  if (train_set.size() == 0) throw DataError("training split is empty");

  const auto heads = config.resolved_heads(encoder);
  std::vector<std::size_t> head_index;
  for (const auto& h : heads) {
    head_index.push_back(static_cast<std::size_t>(
        std::find(encoder.head_categories.begin(), encoder.head_categories.end(), h) - encoder.head_categories.begin()));
  }

  auto params = init_params<float>(encoder);
  AdamState<float> adam;
  adam.learning_rate = config.learning_rate;
  AdamState<float> tau_adam = adam;
  Mat<float> log_inv_tau = Mat<float>::Constant(1, 1, static_cast<float>(std::log(1.0 / config.temperature)));

  const Rng rng(config.seed);
  const RngStream shuffle_root = rng.stream("train/shuffle");
  const RngStream dropout_root = rng.stream("train/dropout");
  const RngStream target_root = rng.stream("train/targets");
  const int min_batch = config.loss_kind == LossKind::Contrastive ? 2 : 1;

  TrainResult result;
  result.history.heads = encoder.head_categories;
  auto snapshot = [&](int epoch) {
    Checkpoint ck{encoder, params, {epoch, {}}};
    for (const auto& r : result.history.epochs) ck.meta.loss_history.push_back(r.loss);
    return ck;
  };
  result.best_checkpoint = snapshot(0);
  double best_acc = -1.0;

  std::uint64_t step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream shuffle = shuffle_root.split(static_cast<std::uint64_t>(epoch));
    shuffle.shuffle(order);

    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    for (const auto& batch : make_batches(order, config.batch_size, min_batch)) {
      std::vector<const EegEpoch*> ptrs;
      std::vector<int> classes;
      for (auto i : batch) {
        ptrs.push_back(&train_set.epochs[i]);
        classes.push_back(train_set.epochs[i].class_label);
      }
      RngStream drop = dropout_root.split(step);
      RngStream pick = target_root.split(step);
      ++step;

      Tape<float> tape;
      auto g = build_encoder(tape, stack_epochs(ptrs), params, encoder, true, &drop, true, false);
      auto targets = batch_pair(classes, bank, heads, pick);
      auto tau_leaf = tape.leaf(log_inv_tau, config.learnable_temperature);
      auto inv_tau = exp(tau_leaf);
      const Mat<float> mask = duplicate_positive_mask<float>(classes);
      Var<float> total;
      for (std::size_t j = 0; j < heads.size(); ++j) {
        auto t = tape.constant(targets.targets[j].cast<float>());
        const auto& e = g.heads[head_index[j]];
        auto l = config.loss_kind == LossKind::Contrastive
                     ? infonce_symmetric(e, t, inv_tau, config.mask_duplicate_positives ? &mask : nullptr)
                     : mse_alignment_loss(e, t);
        total = j == 0 ? l : add(total, l);
      }
      const double batch_loss = total.value()(0, 0);
      if (!std::isfinite(batch_loss)) throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      auto grads = tape.backward(total);
      std::vector<Mat<float>> grad_list;
      grad_list.reserve(g.params.size());
      for (const auto& v : g.params) grad_list.push_back(grads[v]);
      adam_step<float>(params.values(), grad_list, adam);
      if (config.learnable_temperature) {
        const std::vector<Mat<float>> tg{grads[tau_leaf]};
        std::vector<Mat<float>> tv{log_inv_tau};
        adam_step<float>(tv, tg, tau_adam);
        log_inv_tau = tv[0];
      }
      loss_sum += batch_loss * static_cast<double>(batch.size());
      loss_n += batch.size();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_n ? loss_sum / static_cast<double>(loss_n) : 0.0;
    rec.head_accuracy = evaluate_retrieval(params, encoder, val_set, bank, config.eval_topk);
    result.history.epochs.push_back(rec);

    const double acc = mean_over(rec.head_accuracy, head_index);
    if (val_set.size() > 0 && acc > best_acc) {
      best_acc = acc;
      result.best_epoch = epoch;
      result.best_checkpoint = snapshot(epoch);
    }
    if (on_checkpoint && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      on_checkpoint(snapshot(epoch));
    }
  }
  result.final_checkpoint = snapshot(config.epochs);
  if (val_set.size() == 0) {
    result.best_checkpoint = result.final_checkpoint;
    result.best_epoch = config.epochs;
  }
  result.temperature = 1.0 / std::exp(static_cast<double>(log_inv_tau(0, 0)));
  if (!params.all_finite()) throw NumericError("training produced non-finite parameters");
  return result;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<std::string>& heads,
                        const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  out << "loss,mean_acc";
  for (const auto& h : heads) out << ',' << h << ":acc";
  out << '\n';
  for (const auto& r : rows) {
    out << to_string(r.loss_kind) << ',' << num(r.mean_accuracy);
    for (double a : r.head_accuracy) out << ',' << num(a);
    out << '\n';
  }
}

}  // namespace neurosem
