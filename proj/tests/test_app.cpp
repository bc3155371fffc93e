#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "neurosem/app.hpp"
#include "neurosem/tensor.hpp"

using namespace neurosem;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("neurosem_test_app_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

int cli(const std::vector<std::string>& args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int rc = run_cli(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return rc;
}

std::string expect_config_error(const std::string& text) {
  try {
    parse_config_string(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no ConfigError for:\n" << text;
  return {};
}

}  // namespace

TEST(Config, MinimalFileTakesDefaults) {
  const RunConfig c = parse_config_string("[encoder]\nchannels = 8\n", "/base");
  EXPECT_EQ(c.encoder.channels, 8);
  EXPECT_EQ(c.encoder.d_model, 64);
  EXPECT_DOUBLE_EQ(c.train.temperature, 0.07);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 2e-4);
  EXPECT_EQ(c.output_dir, fs::path("/base/run"));
}

TEST(Config, MisspelledKeyNamed) {
  EXPECT_NE(expect_config_error("[train]\ntemprature = 0.1\n").find("train.temprature"), std::string::npos);
  EXPECT_NE(expect_config_error("[trian]\nepochs = 3\n").find("trian"), std::string::npos);
}

TEST(Config, TypeMismatchNamed) {
  EXPECT_NE(expect_config_error("[train]\nepochs = \"ten\"\n").find("epochs"), std::string::npos);
  EXPECT_NE(expect_config_error("[encoder]\nd_model = 1.5\n").find("d_model"), std::string::npos);
}

TEST(Config, RelativePathsResolveAgainstBase) {
  const RunConfig c = parse_config_string("[data]\ndataset = \"d/x.nsem\"\nbank = \"/abs/b.jsonl\"\n", "/cfg");
  EXPECT_EQ(c.data.dataset, fs::path("/cfg/d/x.nsem"));
  EXPECT_EQ(c.data.bank, fs::path("/abs/b.jsonl"));
}

TEST(Config, TomlRoundTrip) {
  RunConfig c = parse_config_string(
      "[data]\ndataset = \"a.nsem\"\nbank = \"b.jsonl\"\nsplit_seed = 9\n"
      "[train]\nepochs = 7\nloss_kind = \"mse\"\nactive_heads = [\"ObjectSnap\", \"MoodLens\"]\n"
      "[endpoint]\nurl = \"http://127.0.0.1:1/x\"\nseed = 3\n",
      "/r");
  c.train.learning_rate = 0.1 + 0.2;  // not exactly representable in short decimal
  const RunConfig back = parse_config_string(to_toml(c), "/elsewhere");
  EXPECT_EQ(back, c);
  EXPECT_EQ(to_toml(back), to_toml(c));
}

TEST(Config, ValidateRejectsBadRatiosAndMissingPaths) {
  RunConfig c = parse_config_string("[data]\ndataset = \"missing.nsem\"\nbank = \"missing.jsonl\"\n", "/nonexistent");
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_config_string("[data]\ntrain_ratio = 0.9\nval_ratio = 0.2\ntest_ratio = 0.1\n").validate(), ConfigError);
}

TEST(Hash, FnvKnownVectors) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
  EXPECT_EQ(fnv1a_hex("foobar"), "85944171f73967e8");
}

TEST(ExitCodes, Mapping) {
  EXPECT_EQ(exit_code(ErrorKind::Config), 2);
  for (auto k : {ErrorKind::Data, ErrorKind::Dimension, ErrorKind::Schema, ErrorKind::Coverage, ErrorKind::Lookup,
                 ErrorKind::Layout, ErrorKind::File}) {
    EXPECT_EQ(exit_code(k), 3);
  }
  for (auto k : {ErrorKind::Contract, ErrorKind::Numeric}) EXPECT_EQ(exit_code(k), 4);
  EXPECT_EQ(exit_code(ErrorKind::Transport), 5);
}

TEST(Manifest, JsonRoundTrip) {
  RunManifest m;
  m.command = "train";
  m.args = {"train", "--epochs", "2"};
  m.cwd = "/w";
  m.config_toml = "[train]\nepochs = 2\n";
  m.config_hash = fnv1a_hex(m.config_toml);
  m.seeds["train"] = 5;
  m.outputs.push_back({"checkpoints/final/params.nsem", 123, "00ff"});
  const fs::path p = scratch("manifest") / "m.json";
  save_manifest(p, m);
  const RunManifest back = load_manifest(p);
  EXPECT_EQ(back.to_json(), m.to_json());
}

TEST(Manifest, MalformedIsSchemaError) {
  const fs::path p = scratch("bad_manifest") / "m.json";
  std::ofstream(p) << "{\"command\": 3}";
  EXPECT_THROW(load_manifest(p), SchemaError);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({"train", "--no-such-flag"}), 2);
  EXPECT_EQ(cli({"bogus"}), 2);
}

TEST(Cli, MetricsFidOnIdenticalFeatures) {
  const fs::path d = scratch("fid");
  Mat<double> a(20, 3);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = std::sin(0.37 * static_cast<double>(i * i));
  save_nsem(d / "a.nsem", Tensor<double>::from_matrix(a));
  std::string out;
  ASSERT_EQ(cli({"metrics", "fid", "--a", (d / "a.nsem").string(), "--b", (d / "a.nsem").string()}, &out), 0);
  EXPECT_EQ(out, "0.0\n");
}

TEST(Cli, MissingFeatureFileExitsThree) {
  std::string err;
  EXPECT_EQ(cli({"metrics", "fid", "--a", "/nonexistent/a.nsem", "--b", "/nonexistent/b.nsem"}, nullptr, &err), 3);
  EXPECT_NE(err.find("metrics"), std::string::npos);
}

TEST(Cli, EndToEndSmallRun) {
  const fs::path d = scratch("e2e");
  const std::string data = (d / "data").string(), cfg = (d / "data" / "config.toml").string(), run = (d / "run").string();
  ASSERT_EQ(cli({"synth", "--classes", "3", "--epochs-per-class", "10", "--channels", "8", "--samples", "64", "--embed-dim",
                 "32", "--out", data}),
            0);
  for (const char* f : {"dataset.nsem", "bank.jsonl", "layout.csv", "config.toml", "manifests/synth.json"}) {
    EXPECT_TRUE(fs::exists(d / "data" / f)) << f;
  }
  ASSERT_EQ(cli({"train", "--config", cfg, "--epochs", "2", "--out", run}), 0);
  EXPECT_TRUE(fs::exists(d / "run" / "checkpoints" / "best"));
  EXPECT_TRUE(fs::exists(d / "run" / "logs" / "history.csv"));

  std::string out;
  ASSERT_EQ(cli({"retrieve", "--config", cfg, "--ckpt", (d / "run" / "checkpoints" / "best").string(), "--classify", "--out",
                 run},
                &out),
            0);
  EXPECT_NE(out.find("mean retrieval accuracy:"), std::string::npos);
  EXPECT_NE(out.find("classification accuracy:"), std::string::npos);
  EXPECT_TRUE(fs::exists(d / "run" / "manifests" / "retrieval.jsonl"));

  // A misspelled key in a config file exits with the config status.
  std::ofstream(d / "bad.toml") << "[train]\ntemprature = 0.1\n";
  std::string err;
  EXPECT_EQ(cli({"train", "--config", (d / "bad.toml").string()}, nullptr, &err), 2);
  EXPECT_NE(err.find("train.temprature"), std::string::npos);

  // Prompting without any endpoint configured is a config error.
  ::unsetenv("NEUROSEM_ENDPOINT");
  EXPECT_EQ(cli({"prompt", "--config", cfg, "--retrieval", (d / "run" / "manifests" / "retrieval.jsonl").string(), "--out",
                 run}),
            2);
}
