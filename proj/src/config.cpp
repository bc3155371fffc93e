#include <toml.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "neurosem/app.hpp"

namespace neurosem {

namespace fs = std::filesystem;

namespace {

std::string type_name(const toml::node& n) {
  switch (n.type()) {
    case toml::node_type::table: return "table";
    case toml::node_type::array: return "array";
    case toml::node_type::string: return "string";
    case toml::node_type::integer: return "integer";
    case toml::node_type::floating_point: return "float";
    case toml::node_type::boolean: return "boolean";
    default: return "date/time";
  }
}

[[noreturn]] void mismatch(const std::string& key, const char* expected, const toml::node& n) {
  throw ConfigError("key '" + key + "' expects " + expected + ", got " + type_name(n));
}

// Reads one table, rejecting keys it does not know.
class TableReader {
 public:
  TableReader(const toml::table& table, std::string prefix) : table_(table), prefix_(std::move(prefix)) {}

  template <typename F>
  void get(const char* key, F&& assign) {
    known_.insert(key);
    if (const toml::node* n = table_.get(key)) assign(*n, prefix_ + key);
  }

  void integer(const char* key, int& out) {
    get(key, [&](const toml::node& n, const std::string& name) {
      if (!n.is_integer()) mismatch(name, "an integer", n);
      const auto v = n.as_integer()->get();
      if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
        throw ConfigError("key '" + name + "' is out of range");
      }
      out = static_cast<int>(v);
    });
  }

  void seed(const char* key, std::uint64_t& out) {
    get(key, [&](const toml::node& n, const std::string& name) {
      if (!n.is_integer()) mismatch(name, "an integer", n);
      const auto v = n.as_integer()->get();
      if (v < 0) throw ConfigError("key '" + name + "' must be >= 0");
      out = static_cast<std::uint64_t>(v);
    });
  }

  void real(const char* key, double& out) {
    get(key, [&](const toml::node& n, const std::string& name) {
      if (n.is_floating_point()) out = n.as_floating_point()->get();
      else if (n.is_integer()) out = static_cast<double>(n.as_integer()->get());
      else mismatch(name, "a number", n);
    });
  }

  void boolean(const char* key, bool& out) {
    get(key, [&](const toml::node& n, const std::string& name) {
      if (!n.is_boolean()) mismatch(name, "a boolean", n);
      out = n.as_boolean()->get();
    });
  }

  void string(const char* key, std::string& out) {
    get(key, [&](const toml::node& n, const std::string& name) {
      if (!n.is_string()) mismatch(name, "a string", n);
      out = n.as_string()->get();
    });
  }

  void path(const char* key, fs::path& out, const fs::path& base) {
    std::string s;
    bool present = false;
    get(key, [&](const toml::node& n, const std::string& name) {
      if (!n.is_string()) mismatch(name, "a string", n);
      s = n.as_string()->get();
      present = true;
    });
    if (!present) return;
    fs::path p(s);
    if (!s.empty() && p.is_relative() && !base.empty()) p = base / p;
    out = s.empty() ? fs::path{} : p.lexically_normal();
  }

  void strings(const char* key, std::vector<std::string>& out) {
    get(key, [&](const toml::node& n, const std::string& name) {
      if (!n.is_array()) mismatch(name, "an array of strings", n);
      out.clear();
      for (const auto& item : *n.as_array()) {
        if (!item.is_string()) mismatch(name + "[]", "a string", item);
        out.push_back(item.as_string()->get());
      }
    });
  }

  void finish() const {
    for (auto&& [k, v] : table_) {
      if (!known_.count(std::string(k.str()))) throw ConfigError("unknown key '" + prefix_ + std::string(k.str()) + "'");
    }
  }

 private:
  const toml::table& table_;
  std::string prefix_;
  std::set<std::string, std::less<>> known_;
};

const toml::table& subtable(const toml::table& root, const char* name) {
  static const toml::table empty;
  const toml::node* n = root.get(name);
  if (n == nullptr) return empty;
  if (!n->is_table()) mismatch(name, "a table", *n);
  return *n->as_table();
}

std::string quoted(const std::string& s) { return nlohmann::json(s).dump(); }
std::string number(double v) { return nlohmann::json(v).dump(); }
std::string path_string(const fs::path& p) { return p.empty() ? "" : fs::absolute(p).lexically_normal().string(); }

void require_path(const fs::path& p, const char* key) {
  if (p.empty()) throw ConfigError("key '" + std::string(key) + "' is required");
  if (!fs::exists(p)) throw ConfigError("key '" + std::string(key) + "': path does not exist: " + p.string());
}

}  // namespace

RunConfig parse_config_string(std::string_view toml_text, const fs::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "TOML parse error at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError(msg.str());
  }
  static constexpr const char* kTables[] = {"data", "encoder", "train", "output", "endpoint"};
  for (auto&& [k, v] : root) {
    if (std::find(std::begin(kTables), std::end(kTables), k.str()) == std::end(kTables)) {
      throw ConfigError("unknown key '" + std::string(k.str()) + "'");
    }
  }

  RunConfig c;
  {
    TableReader r(subtable(root, "data"), "data.");
    r.path("dataset", c.data.dataset, base_dir);
    r.path("bank", c.data.bank, base_dir);
    r.path("layout", c.data.layout, base_dir);
    r.real("train_ratio", c.data.split.train);
    r.real("val_ratio", c.data.split.val);
    r.real("test_ratio", c.data.split.test);
    r.seed("split_seed", c.data.split_seed);
    r.finish();
  }
  {
    TableReader r(subtable(root, "encoder"), "encoder.");
    auto& e = c.encoder;
    r.integer("channels", e.channels);
    r.integer("samples", e.samples);
    r.integer("patch_len", e.patch_len);
    r.integer("d_model", e.d_model);
    r.integer("n_spatial_layers", e.n_spatial_layers);
    r.integer("n_temporal_layers", e.n_temporal_layers);
    r.integer("n_attn_heads", e.n_attn_heads);
    r.integer("ff_mult", e.ff_mult);
    r.real("dropout", e.dropout);
    r.integer("proj_dim", e.proj_dim);
    r.strings("head_categories", e.head_categories);
    r.seed("seed", e.seed);
    r.finish();
  }
  {
    TableReader r(subtable(root, "train"), "train.");
    auto& t = c.train;
    r.integer("batch_size", t.batch_size);
    r.integer("epochs", t.epochs);
    r.real("learning_rate", t.learning_rate);
    r.real("temperature", t.temperature);
    r.boolean("learnable_temperature", t.learnable_temperature);
    r.boolean("mask_duplicate_positives", t.mask_duplicate_positives);
    std::string loss(to_string(t.loss_kind));
    r.string("loss_kind", loss);
    t.loss_kind = parse_loss_kind(loss);
    r.strings("active_heads", t.active_heads);
    r.seed("seed", t.seed);
    r.integer("checkpoint_every", t.checkpoint_every);
    r.integer("eval_topk", t.eval_topk);
    r.finish();
  }
  {
    TableReader r(subtable(root, "output"), "output.");
    r.path("dir", c.output_dir, base_dir);
    r.finish();
    if (c.output_dir.is_relative() && !base_dir.empty()) c.output_dir = (base_dir / c.output_dir).lexically_normal();
  }
  {
    TableReader r(subtable(root, "endpoint"), "endpoint.");
    r.string("url", c.endpoint.url);
    r.real("timeout_seconds", c.endpoint.timeout_seconds);
    r.integer("concurrency", c.endpoint.concurrency);
    std::uint64_t seed = 0;
    bool has_seed = false;
    r.get("seed", [&](const toml::node& n, const std::string& name) {
      if (!n.is_integer() || n.as_integer()->get() < 0) mismatch(name, "a non-negative integer", n);
      seed = static_cast<std::uint64_t>(n.as_integer()->get());
      has_seed = true;
    });
    if (has_seed) c.endpoint.seed = seed;
    r.finish();
  }
  return c;
}

RunConfig parse_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  RunConfig c = parse_config_string(text.str(), fs::absolute(path).parent_path());
  c.validate();
  return c;
}

void RunConfig::validate() const {
  encoder.validate();
  train.validate(encoder);
  const auto& s = data.split;
  if (!(s.train > 0 && s.val > 0 && s.test > 0) || std::abs(s.train + s.val + s.test - 1.0) > 1e-9) {
    throw ConfigError("data.train_ratio, data.val_ratio and data.test_ratio must be positive and sum to 1");
  }
  if (!(endpoint.timeout_seconds > 0)) throw ConfigError("endpoint.timeout_seconds must be > 0");
  if (endpoint.concurrency < 1) throw ConfigError("endpoint.concurrency must be >= 1");
  require_path(data.dataset, "data.dataset");
  require_path(data.bank, "data.bank");
  if (!data.layout.empty()) require_path(data.layout, "data.layout");
}

std::string to_toml(const RunConfig& c) {
  std::ostringstream o;
  auto list = [](const std::vector<std::string>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + quoted(v[i]);
    return s + "]";
  };
  o << "[data]\n"
    << "dataset = " << quoted(path_string(c.data.dataset)) << "\n"
    << "bank = " << quoted(path_string(c.data.bank)) << "\n"
    << "layout = " << quoted(path_string(c.data.layout)) << "\n"
    << "train_ratio = " << number(c.data.split.train) << "\n"
    << "val_ratio = " << number(c.data.split.val) << "\n"
    << "test_ratio = " << number(c.data.split.test) << "\n"
    << "split_seed = " << c.data.split_seed << "\n\n";
  const auto& e = c.encoder;
  o << "[encoder]\n"
    << "channels = " << e.channels << "\n"
    << "samples = " << e.samples << "\n"
    << "patch_len = " << e.patch_len << "\n"
    << "d_model = " << e.d_model << "\n"
    << "n_spatial_layers = " << e.n_spatial_layers << "\n"
    << "n_temporal_layers = " << e.n_temporal_layers << "\n"
    << "n_attn_heads = " << e.n_attn_heads << "\n"
    << "ff_mult = " << e.ff_mult << "\n"
    << "dropout = " << number(e.dropout) << "\n"
    << "proj_dim = " << e.proj_dim << "\n"
    << "head_categories = " << list(e.head_categories) << "\n"
    << "seed = " << e.seed << "\n\n";
  const auto& t = c.train;
  o << "[train]\n"
    << "batch_size = " << t.batch_size << "\n"
    << "epochs = " << t.epochs << "\n"
    << "learning_rate = " << number(t.learning_rate) << "\n"
    << "temperature = " << number(t.temperature) << "\n"
    << "learnable_temperature = " << (t.learnable_temperature ? "true" : "false") << "\n"
    << "mask_duplicate_positives = " << (t.mask_duplicate_positives ? "true" : "false") << "\n"
    << "loss_kind = " << quoted(std::string(to_string(t.loss_kind))) << "\n"
    << "active_heads = " << list(t.active_heads) << "\n"
    << "seed = " << t.seed << "\n"
    << "checkpoint_every = " << t.checkpoint_every << "\n"
    << "eval_topk = " << t.eval_topk << "\n\n";
  o << "[output]\n"
    << "dir = " << quoted(path_string(c.output_dir)) << "\n\n";
  o << "[endpoint]\n"
    << "url = " << quoted(c.endpoint.url) << "\n"
    << "timeout_seconds = " << number(c.endpoint.timeout_seconds) << "\n"
    << "concurrency = " << c.endpoint.concurrency << "\n";
  if (c.endpoint.seed) o << "seed = " << *c.endpoint.seed << "\n";
  return o.str();
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return fnv1a_hex(s.str());
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Dimension:
    case ErrorKind::Schema:
    case ErrorKind::Coverage:
    case ErrorKind::Lookup:
    case ErrorKind::Data:
    case ErrorKind::Layout:
    case ErrorKind::File: return 3;
    case ErrorKind::Transport: return 5;
    case ErrorKind::Contract:
    case ErrorKind::Numeric: return 4;
  }
  return 4;
}

nlohmann::ordered_json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["args"] = args;
  j["cwd"] = cwd;
  j["config"] = config_toml;
  j["config_hash"] = config_hash;
  j["seeds"] = seeds;
  j["versions"] = versions;
  j["outputs"] = nlohmann::ordered_json::array();
  for (const auto& o : outputs) j["outputs"].push_back({{"path", o.path}, {"bytes", o.bytes}, {"hash", o.hash}});
  return j;
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  try {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.args = j.at("args").get<std::vector<std::string>>();
    m.cwd = j.value("cwd", std::string{});
    m.config_toml = j.value("config", std::string{});
    m.config_hash = j.value("config_hash", std::string{});
    if (j.contains("seeds")) m.seeds = j.at("seeds");
    if (j.contains("versions")) m.versions = j.at("versions");
    for (const auto& o : j.at("outputs")) {
      m.outputs.push_back({o.at("path").get<std::string>(), o.at("bytes").get<std::uintmax_t>(), o.at("hash").get<std::string>()});
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("run manifest: ") + e.what());
  }
}

void save_manifest(const fs::path& path, const RunManifest& manifest) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write " + path.string());
  out << manifest.to_json().dump(2) << "\n";
}

RunManifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot read run manifest " + path.string());
  try {
    return RunManifest::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("run manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace neurosem
