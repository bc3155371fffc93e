#include "neurosem/encoder.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "neurosem/ops.hpp"

namespace neurosem {

using json = nlohmann::json;

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-5;
constexpr double kInputEps = 1e-8;

void require_positive(int v, const char* name) {
  if (v <= 0) throw ConfigError(std::string("encoder.") + name + " must be positive, got " + std::to_string(v));
}

}  // namespace

void EncoderConfig::validate() const {
  require_positive(channels, "channels");
  require_positive(samples, "samples");
  require_positive(patch_len, "patch_len");
  require_positive(d_model, "d_model");
  require_positive(n_attn_heads, "n_attn_heads");
  require_positive(ff_mult, "ff_mult");
  require_positive(proj_dim, "proj_dim");
  if (n_spatial_layers < 0 || n_temporal_layers < 0) throw ConfigError("encoder layer counts must be >= 0");
  if (d_model % n_attn_heads != 0) {
    throw ConfigError("encoder.d_model (" + std::to_string(d_model) + ") must be divisible by n_attn_heads (" +
                      std::to_string(n_attn_heads) + ")");
  }
  if (samples % patch_len != 0) {
    throw ConfigError("encoder.samples (" + std::to_string(samples) + ") must be divisible by patch_len (" +
                      std::to_string(patch_len) + ")");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("encoder.dropout must be in [0, 1)");
  if (head_categories.size() != Taxonomy::kCategories) {
    throw ConfigError("encoder.head_categories must list " + std::to_string(Taxonomy::kCategories) +
                      " categories, got " + std::to_string(head_categories.size()));
  }
  std::set<std::string> seen(head_categories.begin(), head_categories.end());
  if (seen.size() != head_categories.size()) throw ConfigError("encoder.head_categories has duplicates");
}

void EncoderConfig::validate_against(const Taxonomy& taxonomy) const {
  if (head_categories != taxonomy.names()) {
    std::string got, want;
    for (const auto& n : head_categories) got += (got.empty() ? "" : ",") + n;
    for (const auto& n : taxonomy.names()) want += (want.empty() ? "" : ",") + n;
    throw ConfigError("encoder.head_categories [" + got + "] does not match bank taxonomy [" + want + "]");
  }
}

nlohmann::ordered_json to_json(const EncoderConfig& c) {
  nlohmann::ordered_json j;
  j["channels"] = c.channels;
  j["samples"] = c.samples;
  j["patch_len"] = c.patch_len;
  j["d_model"] = c.d_model;
  j["n_spatial_layers"] = c.n_spatial_layers;
  j["n_temporal_layers"] = c.n_temporal_layers;
  j["n_attn_heads"] = c.n_attn_heads;
  j["ff_mult"] = c.ff_mult;
  j["dropout"] = c.dropout;
  j["proj_dim"] = c.proj_dim;
  j["head_categories"] = c.head_categories;
  j["seed"] = c.seed;
  return j;
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  try {
    c.channels = j.at("channels").get<int>();
    c.samples = j.at("samples").get<int>();
    c.patch_len = j.at("patch_len").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_spatial_layers = j.at("n_spatial_layers").get<int>();
    c.n_temporal_layers = j.at("n_temporal_layers").get<int>();
    c.n_attn_heads = j.at("n_attn_heads").get<int>();
    c.ff_mult = j.at("ff_mult").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.proj_dim = j.at("proj_dim").get<int>();
    c.head_categories = j.at("head_categories").get<std::vector<std::string>>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("encoder config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename Scalar>
void EncoderParams<Scalar>::add(std::string name, Mat<Scalar> value) {
  if (!index_.emplace(name, values_.size()).second) throw ContractError("duplicate parameter '" + name + "'");
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

template <typename Scalar>
std::size_t EncoderParams<Scalar>::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw LookupError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

template <typename Scalar>
Mat<Scalar>& EncoderParams<Scalar>::at(std::string_view name) {
  return values_[index_of(name)];
}

template <typename Scalar>
const Mat<Scalar>& EncoderParams<Scalar>::at(std::string_view name) const {
  return values_[index_of(name)];
}

template <typename Scalar>
std::size_t EncoderParams<Scalar>::count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

template <typename Scalar>
bool EncoderParams<Scalar>::all_finite() const {
  for (const auto& v : values_) {
    if (!v.allFinite()) return false;
  }
  return true;
}

namespace {

enum class InitKind { Weight, Zeros, Ones };

struct ParamSpec {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
  InitKind kind;
};

void add_layer(std::vector<ParamSpec>& out, const std::string& p, Eigen::Index d, Eigen::Index ff) {
  out.push_back({p + ".ln1.gamma", 1, d, InitKind::Ones});
  out.push_back({p + ".ln1.beta", 1, d, InitKind::Zeros});
  for (const char* w : {"q", "k", "v", "o"}) {
    out.push_back({p + ".attn.w" + w, d, d, InitKind::Weight});
    out.push_back({p + ".attn.b" + w, 1, d, InitKind::Zeros});
  }
  out.push_back({p + ".ln2.gamma", 1, d, InitKind::Ones});
  out.push_back({p + ".ln2.beta", 1, d, InitKind::Zeros});
  out.push_back({p + ".ff.w1", d, ff * d, InitKind::Weight});
  out.push_back({p + ".ff.b1", 1, ff * d, InitKind::Zeros});
  out.push_back({p + ".ff.w2", ff * d, d, InitKind::Weight});
  out.push_back({p + ".ff.b2", 1, d, InitKind::Zeros});
}

std::string layer_prefix(const char* stage, int i) { return std::string(stage) + "." + std::to_string(i); }

std::vector<ParamSpec> param_layout(const EncoderConfig& c) {
  const Eigen::Index d = c.d_model, ff = c.ff_mult;
  std::vector<ParamSpec> out;
  out.push_back({"patch.weight", Eigen::Index{c.channels} * c.patch_len, d, InitKind::Weight});
  out.push_back({"patch.bias", 1, d, InitKind::Zeros});
  out.push_back({"channel_embed", c.channels, d, InitKind::Weight});
  out.push_back({"temporal_pos", c.patches(), d, InitKind::Weight});
  for (int i = 0; i < c.n_spatial_layers; ++i) add_layer(out, layer_prefix("spatial", i), d, ff);
  for (int i = 0; i < c.n_temporal_layers; ++i) add_layer(out, layer_prefix("temporal", i), d, ff);
  out.push_back({"final_ln.gamma", 1, d, InitKind::Ones});
  out.push_back({"final_ln.beta", 1, d, InitKind::Zeros});
  for (const auto& h : c.head_categories) {
    out.push_back({"head." + h + ".weight", d, c.proj_dim, InitKind::Weight});
    out.push_back({"head." + h + ".bias", 1, c.proj_dim, InitKind::Zeros});
  }
  return out;
}

}  // namespace

std::vector<std::string> param_names(const EncoderConfig& config) {
  std::vector<std::string> names;
  for (const auto& p : param_layout(config)) names.push_back(p.name);
  return names;
}

template <typename Scalar>
EncoderParams<Scalar> init_params(const EncoderConfig& config) {
  config.validate();
  const Rng rng(config.seed);
  EncoderParams<Scalar> params;
  for (const auto& p : param_layout(config)) {
    Mat<Scalar> m(p.rows, p.cols);
    switch (p.kind) {
      case InitKind::Weight: {
        RngStream s = rng.stream("init/" + p.name);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(s.truncated_normal(kInitStd));
        break;
      }
      case InitKind::Zeros: m.setZero(); break;
      case InitKind::Ones: m.setOnes(); break;
    }
    params.add(p.name, std::move(m));
  }
  return params;
}

std::size_t expected_param_count(const EncoderConfig& c) {
  const std::size_t C = c.channels, L = c.patch_len, d = c.d_model, P = c.patches(), ff = c.ff_mult,
                    D = c.proj_dim, H = c.head_categories.size();
  const std::size_t layer = 4 * d * d + 2 * ff * d * d + 9 * d + ff * d;
  const std::size_t layers = static_cast<std::size_t>(c.n_spatial_layers + c.n_temporal_layers);
  return C * L * d + d + C * d + P * d + layers * layer + 2 * d + H * (d * D + D);
}

template <typename Scalar>
const Mat<Scalar>& HeadEmbeddings<Scalar>::at(std::string_view head) const {
  for (std::size_t i = 0; i < heads.size(); ++i) {
    if (heads[i] == head) return embeddings[i];
  }
  throw LookupError("unknown head '" + std::string(head) + "'");
}

namespace {

template <typename Scalar>
struct Forward {
  const EncoderConfig& config;
  std::map<std::string, std::size_t, std::less<>> index;
  const std::vector<Var<Scalar>>& vars;
  bool train_mode;
  RngStream* dropout_stream;

  const Var<Scalar>& p(const std::string& name) const { return vars[index.at(name)]; }

  Var<Scalar> linear(const Var<Scalar>& x, const std::string& w, const std::string& b) const {
    return add_row(matmul(x, p(w)), p(b));
  }

  Var<Scalar> drop(const Var<Scalar>& x) const {
    if (!train_mode || config.dropout <= 0.0) return x;
    return dropout(x, config.dropout, *dropout_stream);
  }

  // Pre-LN transformer block; attention stays within consecutive groups.
  Var<Scalar> block(const Var<Scalar>& x, const std::string& pre, Eigen::Index group) const {
    const Scalar eps = static_cast<Scalar>(kLayerNormEps);
    auto h = layer_norm(x, p(pre + ".ln1.gamma"), p(pre + ".ln1.beta"), eps);
    auto q = linear(h, pre + ".attn.wq", pre + ".attn.bq");
    auto k = linear(h, pre + ".attn.wk", pre + ".attn.bk");
    auto v = linear(h, pre + ".attn.wv", pre + ".attn.bv");
    auto a = grouped_attention(q, k, v, group, static_cast<Eigen::Index>(config.n_attn_heads));
    auto y = add(x, drop(linear(a, pre + ".attn.wo", pre + ".attn.bo")));
    auto h2 = layer_norm(y, p(pre + ".ln2.gamma"), p(pre + ".ln2.beta"), eps);
    auto f = linear(gelu(linear(h2, pre + ".ff.w1", pre + ".ff.b1")), pre + ".ff.w2", pre + ".ff.b2");
    return add(y, drop(f));
  }
};

}  // namespace

template <typename Scalar>
std::vector<Var<Scalar>> encoder_heads(const Var<Scalar>& input, const std::vector<Var<Scalar>>& params,
                                       const EncoderConfig& config, bool train_mode, RngStream* dropout_stream) {
  if (input.cols() != config.samples || input.rows() == 0 || input.rows() % config.channels != 0) {
    throw DimensionError("encoder input " + std::to_string(input.rows()) + "x" + std::to_string(input.cols()) +
                         " is not B*" + std::to_string(config.channels) + " x " + std::to_string(config.samples));
  }
  if (train_mode && config.dropout > 0.0 && dropout_stream == nullptr) {
    throw ContractError("train-mode encoding requires a dropout stream");
  }
  const auto layout = param_layout(config);
  if (params.size() != layout.size()) {
    throw DimensionError("encoder expects " + std::to_string(layout.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  Forward<Scalar> f{config, {}, params, train_mode, dropout_stream};
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params[i].rows() != layout[i].rows || params[i].cols() != layout[i].cols) {
      throw DimensionError("parameter '" + layout[i].name + "' is " + std::to_string(params[i].rows()) + "x" +
                           std::to_string(params[i].cols()) + ", expected " + std::to_string(layout[i].rows) + "x" +
                           std::to_string(layout[i].cols));
    }
    f.index.emplace(layout[i].name, i);
  }
  const Eigen::Index C = config.channels, P = config.patches();

  auto z = standardize_rows(input, static_cast<Scalar>(kInputEps));
  auto x = channel_patch_embed(z, f.p("patch.weight"), C, static_cast<Eigen::Index>(config.patch_len));
  x = add_tiled(add_row(x, f.p("patch.bias")), f.p("channel_embed"));
  for (int i = 0; i < config.n_spatial_layers; ++i) x = f.block(x, layer_prefix("spatial", i), C);
  x = add_tiled(group_mean_rows(x, C), f.p("temporal_pos"));
  for (int i = 0; i < config.n_temporal_layers; ++i) x = f.block(x, layer_prefix("temporal", i), P);
  x = layer_norm(x, f.p("final_ln.gamma"), f.p("final_ln.beta"), static_cast<Scalar>(kLayerNormEps));
  auto pooled = group_mean_rows(x, P);
  std::vector<Var<Scalar>> heads;
  for (const auto& h : config.head_categories) {
    heads.push_back(l2_normalize(f.linear(pooled, "head." + h + ".weight", "head." + h + ".bias"), 1));
  }
  return heads;
}

template <typename Scalar>
EncoderGraph<Scalar> build_encoder(Tape<Scalar>& tape, const Mat<Scalar>& batch, const EncoderParams<Scalar>& params,
                                   const EncoderConfig& config, bool train_mode, RngStream* dropout_stream,
                                   bool params_require_grad, bool input_requires_grad) {
  EncoderGraph<Scalar> g;
  g.input = tape.leaf(batch, input_requires_grad);
  for (const auto& v : params.values()) g.params.push_back(tape.leaf(v, params_require_grad));
  g.heads = encoder_heads(g.input, g.params, config, train_mode, dropout_stream);
  return g;
}

template <typename Scalar>
HeadEmbeddings<Scalar> encode(const Mat<Scalar>& batch, const EncoderParams<Scalar>& params,
                              const EncoderConfig& config, bool train_mode, std::uint64_t dropout_seed) {
  Tape<Scalar> tape(false);
  RngStream stream = Rng(dropout_seed).stream("dropout");
  auto g = build_encoder(tape, batch, params, config, train_mode, &stream, false, false);
  HeadEmbeddings<Scalar> out;
  out.heads = config.head_categories;
  for (const auto& h : g.heads) out.embeddings.push_back(h.value());
  return out;
}

template <typename Scalar>
InputGradient<Scalar> encode_with_input_grad(const Mat<Scalar>& batch, const EncoderParams<Scalar>& params,
                                             const EncoderConfig& config, const HeadLossFn<Scalar>& loss_fn) {
  Tape<Scalar> tape;
  auto g = build_encoder(tape, batch, params, config, false, nullptr, false, true);
  auto loss = loss_fn(tape, g.heads);
  auto grads = tape.backward(loss);
  return {loss.value()(0, 0), grads[g.input]};
}

Mat<float> stack_epochs(const std::vector<const EegEpoch*>& epochs) {
  if (epochs.empty()) throw ContractError("cannot stack an empty batch");
  const Eigen::Index C = epochs.front()->data.rows(), T = epochs.front()->data.cols();
  Mat<float> out(C * static_cast<Eigen::Index>(epochs.size()), T);
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    if (epochs[i]->data.rows() != C || epochs[i]->data.cols() != T) {
      throw DimensionError("epoch " + std::to_string(i) + " shape differs from the batch");
    }
    out.middleRows(static_cast<Eigen::Index>(i) * C, C) = epochs[i]->data;
  }
  return out;
}

Mat<float> stack_epochs(const EegDataset& dataset) {
  std::vector<const EegEpoch*> ptrs;
  for (const auto& e : dataset.epochs) ptrs.push_back(&e);
  return stack_epochs(ptrs);
}

HeadEmbeddings<float> encode_dataset(const EegDataset& dataset, const EncoderParams<float>& params,
                                     const EncoderConfig& config, int chunk) {
  HeadEmbeddings<float> out;
  out.heads = config.head_categories;
  out.embeddings.assign(out.heads.size(), Mat<float>(static_cast<Eigen::Index>(dataset.size()), config.proj_dim));
  for (std::size_t start = 0; start < dataset.size(); start += static_cast<std::size_t>(chunk)) {
    const auto end = std::min(dataset.size(), start + static_cast<std::size_t>(chunk));
    std::vector<const EegEpoch*> ptrs;
    for (auto i = start; i < end; ++i) ptrs.push_back(&dataset.epochs[i]);
    auto part = encode(stack_epochs(ptrs), params, config);
    for (std::size_t h = 0; h < out.heads.size(); ++h) {
      out.embeddings[h].middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
          part.embeddings[h];
    }
  }
  return out;
}

namespace {

std::string param_file(const std::string& name) { return name + ".nsem"; }

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json m;
  m["format"] = "neurosem-checkpoint";
  m["version"] = 1;
  m["config"] = to_json(ck.config);
  m["seed"] = ck.config.seed;
  m["epoch"] = ck.meta.epoch;
  m["loss_history"] = ck.meta.loss_history;
  auto list = nlohmann::ordered_json::array();
  const auto& names = ck.params.names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& v = ck.params.values()[i];
    list.push_back({{"name", names[i]}, {"file", param_file(names[i])}, {"shape", {v.rows(), v.cols()}}});
    save_nsem(dir / param_file(names[i]), Tensor<float>::from_matrix(v));
  }
  m["parameters"] = list;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw FileError("cannot write checkpoint manifest in " + dir.string());
  out << m.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FileError("no checkpoint manifest in " + dir.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("checkpoint manifest: " + std::string(e.what()));
  }
  Checkpoint ck;
  ck.config = encoder_config_from_json(m.at("config"));
  ck.meta.epoch = m.value("epoch", 0);
  ck.meta.loss_history = m.value("loss_history", std::vector<double>{});
  std::map<std::string, ParamSpec> expected;
  for (auto& p : param_layout(ck.config)) expected.emplace(p.name, p);
  for (const auto& p : m.at("parameters")) {
    const auto name = p.at("name").get<std::string>();
    auto it = expected.find(name);
    if (it == expected.end()) throw SchemaError("checkpoint parameter '" + name + "' is not part of the config");
    auto t = load_nsem<float>(dir / p.at("file").get<std::string>());
    const auto& want = it->second;
    if (t.shape.size() != 2 || t.shape[0] != static_cast<std::size_t>(want.rows) ||
        t.shape[1] != static_cast<std::size_t>(want.cols)) {
      throw DimensionError("checkpoint parameter '" + name + "' has shape " + shape_string(t.shape) +
                           ", config expects [" + std::to_string(want.rows) + "x" + std::to_string(want.cols) + "]");
    }
    ck.params.add(name, t.matrix());
  }
  if (ck.params.names() != param_names(ck.config)) throw SchemaError("checkpoint parameter list does not match config");
  if (!ck.params.all_finite()) throw NumericError("checkpoint contains non-finite parameters");
  return ck;
}

#define NEUROSEM_INSTANTIATE(S)                                                                                   \
  template class EncoderParams<S>;                                                                              \
  template struct HeadEmbeddings<S>;                                                                            \
  template EncoderParams<S> init_params<S>(const EncoderConfig&);                                               \
  template std::vector<Var<S>> encoder_heads<S>(const Var<S>&, const std::vector<Var<S>>&, const EncoderConfig&,  \
                                                bool, RngStream*);                                              \
  template EncoderGraph<S> build_encoder<S>(Tape<S>&, const Mat<S>&, const EncoderParams<S>&, const EncoderConfig&, \
                                            bool, RngStream*, bool, bool);                                      \
  template HeadEmbeddings<S> encode<S>(const Mat<S>&, const EncoderParams<S>&, const EncoderConfig&, bool,      \
                                       std::uint64_t);                                                          \
  template InputGradient<S> encode_with_input_grad<S>(const Mat<S>&, const EncoderParams<S>&, const EncoderConfig&, \
                                                      const HeadLossFn<S>&);

NEUROSEM_INSTANTIATE(float)
NEUROSEM_INSTANTIATE(double)

#undef NEUROSEM_INSTANTIATE

}  // namespace neurosem
