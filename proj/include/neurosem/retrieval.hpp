#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "neurosem/caption_bank.hpp"
#include "neurosem/encoder.hpp"

namespace neurosem {

struct RankedCaption {
  std::size_t entry = 0;  // index into CaptionBank::entries()
  std::string id;
  double score = 0.0;
};

/// Top-k rows of `candidates` by cosine with `query`; ties by ascending id.
/// Scores are clamped to [-1, 1].
std::vector<RankedCaption> topk_captions(const RowVec<double>& query, const Mat<double>& candidates,
                                         const std::vector<std::string>& ids, int k);
/// Restricted to one category subset of the bank.
std::vector<RankedCaption> topk_captions(const RowVec<double>& query, const CaptionBank& bank,
                                         std::string_view category, int k);

struct HeadRetrieval {
  std::string head;
  std::vector<RankedCaption> captions;
};

/// One epoch's retrievals, heads in taxonomy order.
struct RetrievalResult {
  std::vector<HeadRetrieval> heads;
};

/// Row `row` of every head embedding against that head's category subset.
RetrievalResult retrieve(const HeadEmbeddings<float>& embeddings, Eigen::Index row, const CaptionBank& bank, int k);
std::vector<RetrievalResult> retrieve_all(const HeadEmbeddings<float>& embeddings, const CaptionBank& bank, int k);

struct PromptPolicy {
  enum class Kind { AllHeads, TopHeads };
  Kind kind = Kind::AllHeads;
  int top_heads = 2;

  static PromptPolicy all() { return {}; }
  static PromptPolicy top(int n) { return {Kind::TopHeads, n}; }
};

struct PromptSource {
  std::string head;
  std::string caption_id;
};

struct PromptBundle {
  std::string prompt;
  std::vector<PromptSource> sources;
  std::size_t epoch_index = 0;
};

/// Top-1 caption text per contributing head, ordered Low -> Mid -> High and
/// then by taxonomy position, joined with ", ", exact duplicates dropped.
PromptBundle assemble_prompt(const RetrievalResult& result, const CaptionBank& bank,
                             const PromptPolicy& policy = PromptPolicy::all(), std::size_t epoch_index = 0);

/// Majority vote over each head's top-1 caption class; ties go to the larger
/// summed cosine, then to the lower class.
int ensemble_classify(const RetrievalResult& result, const CaptionBank& bank);

struct DominanceReport {
  std::vector<std::string> heads;
  std::vector<std::size_t> counts;
  std::vector<double> fractions;
};

/// Per epoch, the head holding the globally best top-1 cosine scores one
/// count (ties go to the earlier taxonomy position).
DominanceReport head_dominance(const std::vector<RetrievalResult>& results, const Taxonomy& taxonomy);

void write_dominance_csv(const std::filesystem::path& path, const DominanceReport& report);

struct ManifestRow {
  std::size_t epoch = 0;
  int true_class = -1;
  int predicted_class = -1;
  RetrievalResult result;
  std::string prompt;
};

void write_retrieval_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_retrieval_manifest(const std::filesystem::path& path, const CaptionBank& bank);

struct DispatchOptions {
  std::string endpoint;  // empty: NEUROSEM_ENDPOINT
  double timeout_seconds = 30.0;
  int concurrency = 4;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir;
};

struct DispatchOutcome {
  std::size_t epoch_index = 0;
  bool ok = false;
  std::filesystem::path image_path;
  std::string error;
};

/// Explicit endpoint, else NEUROSEM_ENDPOINT; ConfigError when neither is set.
std::string resolve_endpoint(const std::string& flag_value);

/// POSTs {"prompt", "seed"?} and returns the PNG body. Throws TransportError
/// carrying the endpoint's response on any failure.
std::string dispatch_prompt(const PromptBundle& bundle, const std::string& endpoint_url, double timeout_seconds,
                            std::optional<std::uint64_t> seed = std::nullopt);

/// Dispatches every bundle with bounded concurrency and writes
/// epoch_<index>.png files. Failures are recorded per epoch, never thrown.
std::vector<DispatchOutcome> dispatch_all(const std::vector<PromptBundle>& bundles, const DispatchOptions& options);

}  // namespace neurosem
