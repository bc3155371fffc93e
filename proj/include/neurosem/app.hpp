#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "neurosem/eeg_data.hpp"
#include "neurosem/encoder.hpp"
#include "neurosem/trainer.hpp"

namespace neurosem {

struct DataConfig {
  std::filesystem::path dataset;
  std::filesystem::path bank;
  std::filesystem::path layout;  // empty: default layout from channel names
  SplitRatios split;
  std::uint64_t split_seed = 0;

  bool operator==(const DataConfig& o) const {
    return dataset == o.dataset && bank == o.bank && layout == o.layout && split.train == o.split.train &&
           split.val == o.split.val && split.test == o.split.test && split_seed == o.split_seed;
  }
};

struct EndpointConfig {
  std::string url;  // empty: NEUROSEM_ENDPOINT
  double timeout_seconds = 30.0;
  int concurrency = 4;
  std::optional<std::uint64_t> seed;

  bool operator==(const EndpointConfig&) const = default;
};

struct RunConfig {
  EncoderConfig encoder;
  TrainConfig train;
  DataConfig data;
  std::filesystem::path output_dir = "run";
  EndpointConfig endpoint;

  /// Model constraints plus existence of every referenced path.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// TOML tables [data], [encoder], [train], [output], [endpoint]. Relative
/// paths resolve against `base_dir`. Unknown keys and type mismatches raise
/// ConfigError naming the key. Does not check that paths exist.
RunConfig parse_config_string(std::string_view toml_text, const std::filesystem::path& base_dir = {});
/// Parses and validates a config file.
RunConfig parse_config(const std::filesystem::path& path);

/// Effective configuration with every key written out and absolute paths.
std::string to_toml(const RunConfig& config);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

/// 0 ok, 2 config, 3 data, 4 runtime or numeric, 5 transport.
int exit_code(ErrorKind kind);

struct OutputRecord {
  std::string path;  // relative to the run directory
  std::uintmax_t bytes = 0;
  std::string hash;
};

struct RunManifest {
  std::string command;
  std::vector<std::string> args;  // argv after the program name
  std::string cwd;                // relative arguments resolve against this
  std::string config_toml;        // empty when the command takes no config
  std::string config_hash;
  nlohmann::ordered_json seeds = nlohmann::ordered_json::object();
  nlohmann::ordered_json versions = nlohmann::ordered_json::object();
  std::vector<OutputRecord> outputs;

  nlohmann::ordered_json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

void save_manifest(const std::filesystem::path& path, const RunManifest& manifest);
RunManifest load_manifest(const std::filesystem::path& path);

/// Subcommands: synth, train, ablation, retrieve, classify, prompt, saliency,
/// tsne, metrics, rerun. Returns the process exit status.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace neurosem
