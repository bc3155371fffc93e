#include "neurosem/app.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "neurosem/embed_viz.hpp"
#include "neurosem/metrics.hpp"
#include "neurosem/retrieval.hpp"
#include "neurosem/saliency.hpp"

#ifndef NEUROSEM_VERSION
#define NEUROSEM_VERSION "0.0.0"
#endif

namespace neurosem {

namespace fs = std::filesystem;

namespace {

#define NEUROSEM_STR2(x) #x
#define NEUROSEM_STR(x) NEUROSEM_STR2(x)

struct Session {
  std::ostream& out;
  std::ostream& err;
  std::vector<std::string> args;
  std::string module = "app_cli";
};

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string csv_number(double v) { return nlohmann::json(v).dump(); }

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write " + path.string());
  return out;
}

// Files written by one invocation, relative to its output directory.
class RunRecord {
 public:
  explicit RunRecord(fs::path dir) : dir_(fs::absolute(std::move(dir)).lexically_normal()) { fs::create_directories(dir_); }

  const fs::path& dir() const { return dir_; }

  fs::path sub(const fs::path& name) const {
    fs::create_directories(dir_ / name);
    return dir_ / name;
  }

  void add(const fs::path& path) {
    if (fs::is_directory(path)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::recursive_directory_iterator(path)) {
        if (e.is_regular_file()) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) add(f);
      return;
    }
    files_.push_back(fs::absolute(path).lexically_normal());
  }

  void finish(Session& s, const std::string& command, const std::string& manifest_name, const RunConfig* config,
              nlohmann::ordered_json seeds) {
    RunManifest m;
    m.command = command;
    m.args = s.args;
    m.cwd = fs::current_path().string();
    if (config != nullptr) {
      m.config_toml = to_toml(*config);
      RunConfig hashed = *config;
      hashed.output_dir.clear();
      m.config_hash = fnv1a_hex(to_toml(hashed));
    }
    m.seeds = std::move(seeds);
    m.versions = {{"neurosem", NEUROSEM_VERSION},
                  {"eigen", NEUROSEM_STR(EIGEN_WORLD_VERSION) "." NEUROSEM_STR(EIGEN_MAJOR_VERSION) "." NEUROSEM_STR(
                                EIGEN_MINOR_VERSION)},
                  {"compiler", __VERSION__}};
    std::sort(files_.begin(), files_.end());
    files_.erase(std::unique(files_.begin(), files_.end()), files_.end());
    for (const auto& f : files_) {
      m.outputs.push_back({f.lexically_relative(dir_).generic_string(), fs::file_size(f), file_hash(f)});
    }
    const fs::path path = dir_ / "manifests" / (manifest_name + ".json");
    save_manifest(path, m);
    s.out << "manifest: " << path.string() << "\n";
  }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
};

RunConfig load_run_config(const std::string& path, const std::function<void(RunConfig&)>& overrides = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  RunConfig c = parse_config_string(text.str(), fs::absolute(path).parent_path());
  if (overrides) overrides(c);
  c.validate();
  return c;
}

fs::path output_dir(const RunConfig& c, const std::string& flag) { return flag.empty() ? c.output_dir : fs::path(flag); }

struct Data {
  EegDataset dataset;
  CaptionBank bank;
  DatasetSplit parts;

  const EegDataset& pick(const std::string& name) const {
    if (name == "train") return parts.train;
    if (name == "val") return parts.val;
    if (name == "test") return parts.test;
    return dataset;
  }
};

void check_dims(const EegDataset& d, const EncoderConfig& e) {
  if (d.channels != e.channels || d.samples != e.samples) {
    throw DimensionError("dataset epochs are " + std::to_string(d.channels) + " x " + std::to_string(d.samples) +
                         " but the encoder expects " + std::to_string(e.channels) + " x " + std::to_string(e.samples) +
                         " (set encoder.channels / encoder.samples)");
  }
}

Data load_data(const RunConfig& c, Session& s) {
  s.module = "eeg_data";
  EegDataset ds = load_dataset(c.data.dataset);
  s.module = "caption_bank";
  CaptionBank bank = load_bank(c.data.bank, Taxonomy::defaults(), ds.num_classes());
  s.module = "eeg_data";
  DatasetSplit parts = split(ds, c.data.split, c.data.split_seed);
  return {std::move(ds), std::move(bank), std::move(parts)};
}

Checkpoint load_ckpt(const std::string& dir, const EegDataset& data, Session& s) {
  s.module = "encoder";
  Checkpoint ck = load_checkpoint(dir);
  check_dims(data, ck.config);
  return ck;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void print_head_table(Session& s, const std::vector<std::string>& heads, const std::vector<double>& acc) {
  for (std::size_t h = 0; h < heads.size(); ++h) {
    char line[96];
    std::snprintf(line, sizeof line, "  %-12s %s\n", heads[h].c_str(), fixed(acc[h]).c_str());
    s.out << line;
  }
}

double mean_of(const std::vector<double>& v) {
  double t = 0;
  for (double x : v) t += x;
  return v.empty() ? 0.0 : t / static_cast<double>(v.size());
}

// ---- synth ----

struct SynthArgs {
  SynthSpec spec;
  std::string informative_channels;
  std::string informative_categories;
  std::string out;
};

int cmd_synth(Session& s, const SynthArgs& a) {
  s.module = "eeg_data";
  SynthSpec spec = a.spec;
  if (!a.informative_channels.empty()) {
    std::vector<int> channels;
    for (const auto& item : split_list(a.informative_channels)) {
      try {
        channels.push_back(std::stoi(item));
      } catch (const std::exception&) {
        throw ConfigError("--informative-channels: '" + item + "' is not an integer");
      }
    }
    spec.informative_channels.assign(static_cast<std::size_t>(spec.classes), channels);
  }
  spec.informative_categories = split_list(a.informative_categories);
  const SynthOutput data = synth_generate(spec);

  RunRecord run(a.out);
  save_dataset(run.dir() / "dataset.nsem", data.dataset);
  save_bank(run.dir() / "bank.jsonl", data.bank);
  save_layout(run.dir() / "layout.csv", data.layout);
  {
    auto cfg = open_out(run.dir() / "config.toml");
    cfg << "[data]\ndataset = \"dataset.nsem\"\nbank = \"bank.jsonl\"\nlayout = \"layout.csv\"\n\n"
        << "[encoder]\nchannels = " << spec.channels << "\nsamples = " << spec.samples << "\nproj_dim = " << spec.embed_dim
        << "\n\n[output]\ndir = \"run\"\n";
  }
  for (const char* f : {"dataset.nsem", "bank.jsonl", "layout.csv", "config.toml"}) run.add(run.dir() / f);
  s.out << "synth: " << data.dataset.size() << " epochs, " << spec.classes << " classes, " << data.bank.entries().size()
        << " captions -> " << run.dir().string() << "\n";
  run.finish(s, "synth", "synth", nullptr, {{"synth", spec.seed}});
  return 0;
}

// ---- train / ablation ----

struct TrainArgs {
  std::string config;
  std::string out;
  int epochs = 0;
  int batch_size = 0;
  double learning_rate = 0;
  std::uint64_t seed = 0;
  std::string loss;
  std::string heads;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* batch_opt = nullptr;
  CLI::Option* lr_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
};

RunConfig train_config(const TrainArgs& a) {
  return load_run_config(a.config, [&](RunConfig& c) {
    if (a.epochs_opt->count()) c.train.epochs = a.epochs;
    if (a.batch_opt->count()) c.train.batch_size = a.batch_size;
    if (a.lr_opt->count()) c.train.learning_rate = a.learning_rate;
    if (a.seed_opt->count()) c.train.seed = a.seed;
    if (!a.loss.empty()) c.train.loss_kind = parse_loss_kind(a.loss);
    if (!a.heads.empty()) c.train.active_heads = split_list(a.heads);
    if (!a.out.empty()) c.output_dir = a.out;
  });
}

nlohmann::ordered_json train_seeds(const RunConfig& c) {
  return {{"encoder", c.encoder.seed}, {"train", c.train.seed}, {"split", c.data.split_seed}};
}

int cmd_train(Session& s, const TrainArgs& a) {
  s.module = "app_cli";
  const RunConfig cfg = train_config(a);
  const Data data = load_data(cfg, s);
  check_dims(data.dataset, cfg.encoder);
  RunRecord run(cfg.output_dir);
  const fs::path ckdir = run.sub("checkpoints");

  s.module = "contrastive_trainer";
  const TrainResult res = train(data.parts.train, data.parts.val, data.bank, cfg.encoder, cfg.train, [&](const Checkpoint& ck) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04d", ck.meta.epoch);
    save_checkpoint(ckdir / name, ck);
    run.add(ckdir / name);
  });
  save_checkpoint(ckdir / "final", res.final_checkpoint);
  save_checkpoint(ckdir / "best", res.best_checkpoint);
  res.history.write_csv(run.sub("logs") / "history.csv");
  run.add(ckdir / "final");
  run.add(ckdir / "best");
  run.add(run.dir() / "logs" / "history.csv");

  s.out << "train: " << cfg.train.epochs << " epochs, loss " << to_string(cfg.train.loss_kind) << ", best epoch "
        << res.best_epoch << "\n";
  if (!res.history.epochs.empty()) {
    const auto& best = res.history.epochs[static_cast<std::size_t>(std::max(res.best_epoch - 1, 0))];
    s.out << "validation top-" << cfg.train.eval_topk << " accuracy at best epoch:\n";
    print_head_table(s, res.history.heads, best.head_accuracy);
  }
  run.finish(s, "train", "train", &cfg, train_seeds(cfg));
  return 0;
}

int cmd_ablation(Session& s, const TrainArgs& a) {
  const RunConfig cfg = train_config(a);
  const Data data = load_data(cfg, s);
  check_dims(data.dataset, cfg.encoder);
  RunRecord run(cfg.output_dir);
  std::vector<AblationRow> rows;
  for (LossKind kind : {LossKind::Contrastive, LossKind::Mse}) {
    TrainConfig t = cfg.train;
    t.loss_kind = kind;
    s.module = "contrastive_trainer";
    const TrainResult res = train(data.parts.train, data.parts.val, data.bank, cfg.encoder, t);
    const fs::path dir = run.sub("checkpoints") / (std::string(to_string(kind)) + "_best");
    save_checkpoint(dir, res.best_checkpoint);
    run.add(dir);
    AblationRow row;
    row.loss_kind = kind;
    row.head_accuracy = evaluate_retrieval(res.best_checkpoint, data.parts.test, data.bank, t.eval_topk);
    row.mean_accuracy = mean_of(row.head_accuracy);
    rows.push_back(row);
  }
  const auto& heads = cfg.encoder.head_categories;
  write_ablation_csv(run.sub("logs") / "ablation.csv", heads, rows);
  run.add(run.dir() / "logs" / "ablation.csv");

  s.out << "ablation: held-out top-" << cfg.train.eval_topk << " retrieval accuracy\n";
  char line[128];
  std::snprintf(line, sizeof line, "  %-12s %-12s %-12s\n", "head", "contrastive", "mse");
  s.out << line;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    std::snprintf(line, sizeof line, "  %-12s %-12s %-12s\n", heads[h].c_str(), fixed(rows[0].head_accuracy[h]).c_str(),
                  fixed(rows[1].head_accuracy[h]).c_str());
    s.out << line;
  }
  std::snprintf(line, sizeof line, "  %-12s %-12s %-12s\n", "mean", fixed(rows[0].mean_accuracy).c_str(),
                fixed(rows[1].mean_accuracy).c_str());
  s.out << line;
  run.finish(s, "ablation", "ablation", &cfg, train_seeds(cfg));
  return 0;
}

// ---- retrieve / classify ----

struct RetrieveArgs {
  std::string config;
  std::string ckpt;
  std::string split = "test";
  std::string out;
  int topk = 1;
  bool classify = false;
};

int cmd_retrieve(Session& s, const RetrieveArgs& a, bool classify_command) {
  s.module = "app_cli";
  const RunConfig cfg = load_run_config(a.config);
  const Data data = load_data(cfg, s);
  const EegDataset& set = data.pick(a.split);
  const Checkpoint ck = load_ckpt(a.ckpt, set, s);
  const bool classify = a.classify || classify_command;
  RunRecord run(output_dir(cfg, a.out));

  s.module = "encoder";
  const HeadEmbeddings<float> emb = encode_dataset(set, ck.params, ck.config);
  s.module = "retrieval";
  const std::vector<RetrievalResult> results = retrieve_all(emb, data.bank, a.topk);
  std::vector<int> labels;
  for (const auto& e : set.epochs) labels.push_back(e.class_label);

  std::vector<ManifestRow> rows;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    ManifestRow row;
    row.epoch = set.epochs[i].source_index;
    row.true_class = labels[i];
    row.result = results[i];
    row.prompt = assemble_prompt(results[i], data.bank, PromptPolicy::all(), row.epoch).prompt;
    if (classify) {
      row.predicted_class = ensemble_classify(results[i], data.bank);
      correct += row.predicted_class == row.true_class;
    }
    rows.push_back(std::move(row));
  }
  const std::string stem = classify_command ? "classify" : "retrieval";
  write_retrieval_manifest(run.sub("manifests") / (stem + ".jsonl"), rows);
  run.add(run.dir() / "manifests" / (stem + ".jsonl"));

  const std::vector<double> acc = retrieval_accuracy(emb, labels, data.bank, a.topk);
  {
    auto csv = open_out(run.sub("logs") / (stem + "_accuracy.csv"));
    csv << "head,accuracy\n";
    for (std::size_t h = 0; h < emb.heads.size(); ++h) csv << emb.heads[h] << "," << csv_number(acc[h]) << "\n";
  }
  run.add(run.dir() / "logs" / (stem + "_accuracy.csv"));
  const DominanceReport dom = head_dominance(results, data.bank.taxonomy());
  write_dominance_csv(run.dir() / "logs" / (stem + "_dominance.csv"), dom);
  run.add(run.dir() / "logs" / (stem + "_dominance.csv"));
  if (classify) {
    auto csv = open_out(run.dir() / "logs" / (stem + "_predictions.csv"));
    csv << "epoch,true_class,predicted_class\n";
    for (const auto& r : rows) csv << r.epoch << "," << r.true_class << "," << r.predicted_class << "\n";
    run.add(run.dir() / "logs" / (stem + "_predictions.csv"));
  }

  s.out << stem << ": " << set.size() << " epochs (" << a.split << " split), top-" << a.topk << " retrieval accuracy:\n";
  print_head_table(s, emb.heads, acc);
  s.out << "mean retrieval accuracy: " << fixed(mean_of(acc)) << "\n";
  if (classify) {
    s.out << "classification accuracy: " << fixed(static_cast<double>(correct) / static_cast<double>(set.size())) << " ("
          << correct << "/" << set.size() << ")\n";
  }
  run.finish(s, stem, stem, &cfg, {{"split", cfg.data.split_seed}});
  return 0;
}

// ---- prompt ----

struct PromptArgs {
  std::string config;
  std::string retrieval;
  std::string out;
  std::string policy = "all";
  int top_heads = 2;
  std::string endpoint;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  double timeout = 0;
  CLI::Option* timeout_opt = nullptr;
  int concurrency = 0;
  CLI::Option* concurrency_opt = nullptr;
  bool no_dispatch = false;
};

int cmd_prompt(Session& s, const PromptArgs& a) {
  s.module = "app_cli";
  const RunConfig cfg = load_run_config(a.config, [&](RunConfig& c) {
    if (!a.endpoint.empty()) c.endpoint.url = a.endpoint;
    if (a.seed_opt->count()) c.endpoint.seed = a.seed;
    if (a.timeout_opt->count()) c.endpoint.timeout_seconds = a.timeout;
    if (a.concurrency_opt->count()) c.endpoint.concurrency = a.concurrency;
  });
  s.module = "caption_bank";
  const CaptionBank bank = load_bank(cfg.data.bank);
  s.module = "retrieval";
  const std::vector<ManifestRow> rows = read_retrieval_manifest(a.retrieval, bank);
  const PromptPolicy policy = a.policy == "top" ? PromptPolicy::top(a.top_heads) : PromptPolicy::all();
  std::vector<PromptBundle> bundles;
  for (const auto& r : rows) bundles.push_back(assemble_prompt(r.result, bank, policy, r.epoch));

  RunRecord run(output_dir(cfg, a.out));
  {
    auto jl = open_out(run.sub("logs") / "prompts.jsonl");
    for (const auto& b : bundles) {
      nlohmann::ordered_json j;
      j["epoch"] = b.epoch_index;
      j["prompt"] = b.prompt;
      j["sources"] = nlohmann::ordered_json::array();
      for (const auto& src : b.sources) j["sources"].push_back({{"head", src.head}, {"caption_id", src.caption_id}});
      jl << j.dump() << "\n";
    }
  }
  run.add(run.dir() / "logs" / "prompts.jsonl");
  s.out << "prompt: " << bundles.size() << " prompts assembled\n";

  std::size_t failed = 0;
  if (!a.no_dispatch) {
    DispatchOptions opt;
    opt.endpoint = resolve_endpoint(cfg.endpoint.url);
    opt.timeout_seconds = cfg.endpoint.timeout_seconds;
    opt.concurrency = cfg.endpoint.concurrency;
    opt.seed = cfg.endpoint.seed;
    opt.out_dir = run.sub("figures") / "generated";
    const std::vector<DispatchOutcome> outcomes = dispatch_all(bundles, opt);
    auto csv = open_out(run.dir() / "logs" / "dispatch.csv");
    csv << "epoch,ok,image,error\n";
    for (const auto& o : outcomes) {
      csv << o.epoch_index << "," << (o.ok ? 1 : 0) << "," << (o.ok ? o.image_path.filename().string() : "") << ","
          << nlohmann::json(o.error).dump() << "\n";
      if (o.ok) {
        run.add(o.image_path);
      } else {
        ++failed;
        s.err << "neurosem prompt [retrieval]: epoch " << o.epoch_index << ": " << o.error << "\n";
      }
    }
    csv.close();
    run.add(run.dir() / "logs" / "dispatch.csv");
    s.out << "dispatch: " << outcomes.size() - failed << "/" << outcomes.size() << " images written to "
          << opt.out_dir.string() << "\n";
  }
  nlohmann::ordered_json seeds = nlohmann::ordered_json::object();
  if (cfg.endpoint.seed) seeds["endpoint"] = *cfg.endpoint.seed;
  run.finish(s, "prompt", "prompt", &cfg, seeds);
  return failed == 0 ? 0 : exit_code(ErrorKind::Transport);
}

// ---- saliency ----

struct SaliencyArgs {
  std::string config;
  std::string ckpt;
  std::string split = "test";
  std::string head = kAllHeads;
  std::string out;
};

int cmd_saliency(Session& s, const SaliencyArgs& a) {
  s.module = "app_cli";
  const RunConfig cfg = load_run_config(a.config);
  const Data data = load_data(cfg, s);
  const EegDataset& set = data.pick(a.split);
  const Checkpoint ck = load_ckpt(a.ckpt, set, s);
  RunRecord run(output_dir(cfg, a.out));

  s.module = "saliency";
  SaliencyOptions opt;
  opt.head_scope = a.head;
  opt.temperature = cfg.train.temperature;
  const SaliencyMap map = compute_saliency(ck, set, data.bank, opt);
  const ChannelLayout layout = cfg.data.layout.empty() ? default_layout(set.channel_names) : load_layout(cfg.data.layout);
  const std::string tag = a.head;
  write_saliency_csv(run.sub("logs") / ("saliency_" + tag + ".csv"), map);
  render_topomap(map, layout, run.sub("figures") / ("topomap_" + tag + ".svg"));
  run.add(run.dir() / "logs" / ("saliency_" + tag + ".csv"));
  run.add(run.dir() / "figures" / ("topomap_" + tag + ".svg"));

  s.out << "saliency (" << tag << "): top channels\n";
  const auto order = rank_channels(map);
  for (std::size_t i = 0; i < std::min<std::size_t>(6, order.size()); ++i) {
    s.out << "  " << map.channel_names[order[i]] << " " << map.per_channel[order[i]] << "\n";
  }
  run.finish(s, "saliency", "saliency_" + tag, &cfg, {{"split", cfg.data.split_seed}});
  return 0;
}

// ---- tsne ----

struct TsneArgs {
  std::string config;
  std::string ckpt;
  std::string split = "test";
  std::string out;
  TsneConfig tsne;
};

int cmd_tsne(Session& s, const TsneArgs& a) {
  s.module = "app_cli";
  const RunConfig cfg = load_run_config(a.config);
  const Data data = load_data(cfg, s);
  const EegDataset& set = data.pick(a.split);
  const Checkpoint ck = load_ckpt(a.ckpt, set, s);
  RunRecord run(output_dir(cfg, a.out));

  s.module = "encoder";
  const HeadEmbeddings<float> emb = encode_dataset(set, ck.params, ck.config);
  s.module = "embed_viz";
  auto [x, labels] = tsne_points(emb);
  const Embedding2D e = tsne(x, a.tsne, std::move(labels));
  write_embedding_csv(run.sub("logs") / "tsne.csv", e);
  write_kl_trace_csv(run.dir() / "logs" / "tsne_kl.csv", e);
  export_scatter(e, run.sub("figures") / "tsne.svg");
  for (const char* f : {"logs/tsne.csv", "logs/tsne_kl.csv", "figures/tsne.svg"}) run.add(run.dir() / f);
  s.out << "tsne: " << e.coords.rows() << " points, final KL " << fixed(e.kl_trace.back()) << "\n";
  run.finish(s, "tsne", "tsne", &cfg, {{"split", cfg.data.split_seed}, {"tsne", a.tsne.seed}});
  return 0;
}

// ---- metrics ----

struct MetricArgs {
  std::string a;
  std::string b;
  std::string out;
  bool json = false;
  std::uint64_t seed = 0;
  int subset_size = 0;
  CLI::Option* subset_opt = nullptr;
  int subsets = 100;
  int splits = 10;
};

// PNG pairs matched by file name when both sides are directories.
std::vector<std::pair<Image, Image>> image_pairs(const std::string& a, const std::string& b) {
  if (fs::is_directory(a) != fs::is_directory(b)) throw ContractError("--a and --b must both be files or both be directories");
  if (!fs::is_directory(a)) return {{read_png(a), read_png(b)}};
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(a)) {
    if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  std::vector<std::pair<Image, Image>> out;
  for (const auto& n : names) {
    if (!fs::exists(fs::path(b) / n)) throw FileError("no counterpart for " + n + " in " + b);
    out.emplace_back(read_png(fs::path(a) / n), read_png(fs::path(b) / n));
  }
  if (out.empty()) throw DataError("no PNG files in " + a);
  return out;
}

int cmd_metric(Session& s, const std::string& name, const MetricArgs& a) {
  s.module = "metrics";
  MetricReport report;
  report.metric = name;
  report.params["a"] = a.a;
  if (name != "is") report.params["b"] = a.b;
  if (name != "is" && a.b.empty()) throw ConfigError("metrics " + name + " needs --b");

  if (name == "fid") {
    report.value = fid(load_features(a.a), load_features(a.b));
  } else if (name == "kid") {
    KidOptions opt;
    if (a.subset_opt->count()) opt.subset_size = a.subset_size;
    opt.n_subsets = a.subsets;
    opt.seed = a.seed;
    const MeanStd r = kid(load_features(a.a), load_features(a.b), opt);
    report.value = r.mean;
    report.std = r.std;
    report.params["subsets"] = a.subsets;
    report.params["seed"] = a.seed;
  } else if (name == "is") {
    const MeanStd r = inception_score(load_features(a.a), a.splits);
    report.value = r.mean;
    report.std = r.std;
    report.params["splits"] = a.splits;
  } else if (name == "ssim" || name == "pixcorr") {
    double total = 0;
    const auto pairs = image_pairs(a.a, a.b);
    for (const auto& [x, y] : pairs) total += name == "ssim" ? ssim(x, y) : pixcorr(x, y);
    report.value = total / static_cast<double>(pairs.size());
    report.params["pairs"] = pairs.size();
  } else if (name == "cosine") {
    report.value = cosine_score(load_features(a.a), load_features(a.b));
  } else if (name == "swav") {
    report.value = swav_distance(load_features(a.a), load_features(a.b));
  } else {
    report.value = two_way_identification(load_features(a.a), load_features(a.b), a.seed);
    report.params["seed"] = a.seed;
  }

  if (a.json) {
    s.out << report.to_json().dump() << "\n";
  } else {
    s.out << nlohmann::json(report.value).dump();
    if (report.std) s.out << " " << nlohmann::json(*report.std).dump();
    s.out << "\n";
  }
  if (!a.out.empty()) {
    RunRecord run(a.out);
    const fs::path path = run.sub("logs") / ("metrics_" + name + ".json");
    open_out(path) << report.to_json().dump(2) << "\n";
    run.add(path);
    run.finish(s, "metrics", "metrics_" + name, nullptr, {{"metrics", a.seed}});
  }
  return 0;
}

// ---- rerun ----

struct RerunArgs {
  std::string manifest;
  std::string out;
};

int cmd_rerun(Session& s, const RerunArgs& a) {
  s.module = "app_cli";
  const RunManifest m = load_manifest(a.manifest);
  const fs::path out = fs::absolute(a.out).lexically_normal();
  std::vector<std::string> args;
  for (std::size_t i = 0; i < m.args.size(); ++i) {
    const std::string& arg = m.args[i];
    if (arg == "--out" || arg == "--config") {
      ++i;
      continue;
    }
    if (arg.rfind("--out=", 0) == 0 || arg.rfind("--config=", 0) == 0) continue;
    args.push_back(arg);
  }
  if (!m.config_toml.empty()) {
    const fs::path cfg = out / "manifests" / (fs::path(a.manifest).stem().string() + ".input.toml");
    open_out(cfg) << m.config_toml;
    args.insert(args.end(), {"--config", cfg.string()});
  }
  args.insert(args.end(), {"--out", out.string()});

  const fs::path previous = fs::current_path();
  if (!m.cwd.empty() && fs::is_directory(m.cwd)) fs::current_path(m.cwd);
  int rc = 0;
  try {
    rc = run_cli(args, s.out, s.err);
  } catch (...) {
    fs::current_path(previous);
    throw;
  }
  fs::current_path(previous);
  if (rc != 0) return rc;

  const RunManifest fresh = load_manifest(out / "manifests" / fs::path(a.manifest).filename());
  std::map<std::string, std::string> now;
  for (const auto& o : fresh.outputs) now[o.path] = o.hash;
  std::size_t same = 0;
  for (const auto& o : m.outputs) {
    const auto it = now.find(o.path);
    if (it != now.end() && it->second == o.hash) {
      ++same;
    } else {
      s.err << "neurosem rerun: output differs: " << o.path << "\n";
    }
  }
  s.out << "rerun: " << same << "/" << m.outputs.size() << " outputs identical\n";
  return same == m.outputs.size() && fresh.outputs.size() == m.outputs.size() ? 0 : exit_code(ErrorKind::Numeric);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Session s{out, err, args};
  CLI::App app{"EEG-to-caption contrastive alignment, retrieval and analysis", "neurosem"};
  app.require_subcommand(1);
  app.set_version_flag("--version", NEUROSEM_VERSION);

  const std::vector<std::string> splits = {"train", "val", "test", "all"};

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a planted-structure dataset, caption bank and layout");
  synth_cmd->add_option("--classes", synth.spec.classes)->capture_default_str();
  synth_cmd->add_option("--epochs-per-class", synth.spec.epochs_per_class)->capture_default_str();
  synth_cmd->add_option("--channels", synth.spec.channels)->capture_default_str();
  synth_cmd->add_option("--samples", synth.spec.samples)->capture_default_str();
  synth_cmd->add_option("--snr", synth.spec.snr)->capture_default_str();
  synth_cmd->add_option("--seed", synth.spec.seed)->capture_default_str();
  synth_cmd->add_option("--embed-dim", synth.spec.embed_dim)->capture_default_str();
  synth_cmd->add_option("--subjects", synth.spec.subjects)->capture_default_str();
  synth_cmd->add_option("--informative-channels", synth.informative_channels,
                        "Comma-separated channel indices shared by every class");
  synth_cmd->add_option("--informative-categories", synth.informative_categories,
                        "Comma-separated categories whose captions carry the class");
  synth_cmd->add_option("--out", synth.out)->required();

  auto add_train_options = [&](CLI::App* cmd, TrainArgs& t) {
    cmd->add_option("--config", t.config)->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", t.out, "Output directory (overrides output.dir)");
    t.epochs_opt = cmd->add_option("--epochs", t.epochs);
    t.batch_opt = cmd->add_option("--batch-size", t.batch_size);
    t.lr_opt = cmd->add_option("--lr", t.learning_rate);
    t.seed_opt = cmd->add_option("--seed", t.seed, "Training seed");
    cmd->add_option("--loss", t.loss)->check(CLI::IsMember({"contrastive", "mse"}));
    cmd->add_option("--heads", t.heads, "Comma-separated active heads");
  };
  TrainArgs train_args, ablation_args;
  auto* train_cmd = app.add_subcommand("train", "Train the encoder against the caption bank");
  add_train_options(train_cmd, train_args);
  auto* ablation_cmd = app.add_subcommand("ablation", "Train with contrastive and MSE losses and compare");
  add_train_options(ablation_cmd, ablation_args);

  auto add_retrieve_options = [&](CLI::App* cmd, RetrieveArgs& r) {
    cmd->add_option("--config", r.config)->required()->check(CLI::ExistingFile);
    cmd->add_option("--ckpt", r.ckpt)->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--split", r.split)->capture_default_str()->check(CLI::IsMember(splits));
    cmd->add_option("--topk", r.topk)->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--out", r.out);
  };
  RetrieveArgs retrieve_args, classify_args;
  auto* retrieve_cmd = app.add_subcommand("retrieve", "Retrieve captions per head for each epoch");
  add_retrieve_options(retrieve_cmd, retrieve_args);
  retrieve_cmd->add_flag("--classify", retrieve_args.classify, "Also predict classes by ensemble vote");
  auto* classify_cmd = app.add_subcommand("classify", "Ensemble classification from per-head retrievals");
  add_retrieve_options(classify_cmd, classify_args);

  PromptArgs prompt;
  auto* prompt_cmd = app.add_subcommand("prompt", "Assemble prompts from a retrieval manifest and dispatch them");
  prompt_cmd->add_option("--config", prompt.config)->required()->check(CLI::ExistingFile);
  prompt_cmd->add_option("--retrieval", prompt.retrieval, "Retrieval manifest (JSONL)")->required()->check(CLI::ExistingFile);
  prompt_cmd->add_option("--out", prompt.out);
  prompt_cmd->add_option("--policy", prompt.policy)->capture_default_str()->check(CLI::IsMember({"all", "top"}));
  prompt_cmd->add_option("--top-heads", prompt.top_heads)->capture_default_str()->check(CLI::PositiveNumber);
  prompt_cmd->add_option("--endpoint", prompt.endpoint, "Generation endpoint URL (else endpoint.url, else NEUROSEM_ENDPOINT)");
  prompt.seed_opt = prompt_cmd->add_option("--seed", prompt.seed);
  prompt.timeout_opt = prompt_cmd->add_option("--timeout", prompt.timeout);
  prompt.concurrency_opt = prompt_cmd->add_option("--concurrency", prompt.concurrency);
  prompt_cmd->add_flag("--no-dispatch", prompt.no_dispatch, "Only write the assembled prompts");

  SaliencyArgs sal;
  auto* sal_cmd = app.add_subcommand("saliency", "Per-channel gradient saliency and topomap");
  sal_cmd->add_option("--config", sal.config)->required()->check(CLI::ExistingFile);
  sal_cmd->add_option("--ckpt", sal.ckpt)->required()->check(CLI::ExistingDirectory);
  sal_cmd->add_option("--split", sal.split)->capture_default_str()->check(CLI::IsMember(splits));
  sal_cmd->add_option("--head", sal.head, "Head name or 'all'")->capture_default_str();
  sal_cmd->add_option("--out", sal.out);

  TsneArgs ts;
  auto* tsne_cmd = app.add_subcommand("tsne", "t-SNE of per-head embeddings");
  tsne_cmd->add_option("--config", ts.config)->required()->check(CLI::ExistingFile);
  tsne_cmd->add_option("--ckpt", ts.ckpt)->required()->check(CLI::ExistingDirectory);
  tsne_cmd->add_option("--split", ts.split)->capture_default_str()->check(CLI::IsMember(splits));
  tsne_cmd->add_option("--perplexity", ts.tsne.perplexity)->capture_default_str();
  tsne_cmd->add_option("--iterations", ts.tsne.iterations)->capture_default_str();
  tsne_cmd->add_option("--seed", ts.tsne.seed)->capture_default_str();
  tsne_cmd->add_option("--out", ts.out);

  MetricArgs met;
  auto* metrics_cmd = app.add_subcommand("metrics", "Image and feature metrics");
  metrics_cmd->require_subcommand(1);
  std::map<CLI::App*, std::string> metric_cmds;
  for (const char* name : {"fid", "kid", "is", "ssim", "pixcorr", "cosine", "swav", "twoway"}) {
    auto* m = metrics_cmd->add_subcommand(name);
    m->add_option("--a", met.a, "Features (NSEM) or PNG file/directory")->required();
    m->add_option("--b", met.b);
    m->add_option("--out", met.out, "Also write a JSON report and manifest here");
    m->add_flag("--json", met.json);
    m->add_option("--seed", met.seed)->capture_default_str();
    met.subset_opt = std::string(name) == "kid" ? m->add_option("--subset-size", met.subset_size) : met.subset_opt;
    m->add_option("--subsets", met.subsets)->capture_default_str();
    m->add_option("--splits", met.splits)->capture_default_str();
    metric_cmds[m] = name;
  }

  RerunArgs rerun;
  auto* rerun_cmd = app.add_subcommand("rerun", "Re-execute a recorded run and compare its outputs");
  rerun_cmd->add_option("--manifest", rerun.manifest)->required()->check(CLI::ExistingFile);
  rerun_cmd->add_option("--out", rerun.out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : exit_code(ErrorKind::Config);
  }

  std::string command = "neurosem";
  try {
    if (*synth_cmd) return command = "synth", cmd_synth(s, synth);
    if (*train_cmd) return command = "train", cmd_train(s, train_args);
    if (*ablation_cmd) return command = "ablation", cmd_ablation(s, ablation_args);
    if (*retrieve_cmd) return command = "retrieve", cmd_retrieve(s, retrieve_args, false);
    if (*classify_cmd) return command = "classify", cmd_retrieve(s, classify_args, true);
    if (*prompt_cmd) return command = "prompt", cmd_prompt(s, prompt);
    if (*sal_cmd) return command = "saliency", cmd_saliency(s, sal);
    if (*tsne_cmd) return command = "tsne", cmd_tsne(s, ts);
    if (*rerun_cmd) return command = "rerun", cmd_rerun(s, rerun);
    for (const auto& [m, name] : metric_cmds) {
      if (*m) return command = "metrics " + name, cmd_metric(s, name, met);
    }
  } catch (const Error& e) {
    err << "neurosem " << command << " [" << s.module << "]: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "neurosem " << command << " [" << s.module << "]: " << e.what() << "\n";
    return exit_code(ErrorKind::Numeric);
  }
  return exit_code(ErrorKind::Config);
}

}  // namespace neurosem
