#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "neurosem/tensor.hpp"

namespace neurosem {

enum class SemanticLevel { Low = 0, Mid = 1, High = 2 };

std::string_view to_string(SemanticLevel level);
SemanticLevel parse_level(std::string_view s);

struct CaptionCategory {
  std::string name;
  SemanticLevel level;
  bool operator==(const CaptionCategory&) const = default;
};

/// Ordered set of the ten caption categories. Order is the head order of the
/// encoder and the tie-break order for retrieval statistics.
class Taxonomy {
 public:
  static constexpr std::size_t kCategories = 10;
  static constexpr std::string_view kRequired[3] = {"ObjectSnap", "SpatialLink", "ThemeTag"};

  Taxonomy() = default;
  explicit Taxonomy(std::vector<CaptionCategory> categories);

  /// ObjectSnap, ColorField, ClarityCue | SceneFrame, SpatialLink, AngleView |
  /// MoodLens, ThemeTag, ActionPulse, SymbolCue.
  static Taxonomy defaults();

  const std::vector<CaptionCategory>& categories() const { return categories_; }
  std::vector<std::string> names() const;
  std::size_t size() const { return categories_.size(); }
  /// Throws LookupError for unknown names.
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;
  SemanticLevel level_of(std::string_view name) const { return categories_[index_of(name)].level; }

  bool operator==(const Taxonomy&) const = default;

 private:
  std::vector<CaptionCategory> categories_;
};

struct CaptionEntry {
  std::string id;
  int class_label = 0;
  std::string category;
  SemanticLevel level = SemanticLevel::Low;
  std::string text;
  RowVec<double> embedding;
};

/// Immutable, validated caption bank.
class CaptionBank {
 public:
  /// Validates ids, taxonomy membership, dimensions and (class, category)
  /// coverage; normalizes embeddings to unit norm.
  CaptionBank(std::vector<CaptionEntry> entries, Taxonomy taxonomy, int expected_classes = -1);

  const std::vector<CaptionEntry>& entries() const { return entries_; }
  const Taxonomy& taxonomy() const { return taxonomy_; }
  Eigen::Index dim() const { return dim_; }
  int classes() const { return classes_; }

  /// Entries of one category, ordered by id.
  std::vector<CaptionEntry> category_subset(std::string_view category) const;
  /// Indices into entries() for one category, ordered by id.
  const std::vector<std::size_t>& category_indices(std::string_view category) const;
  /// Row-stacked embeddings for category_indices(category).
  const Mat<double>& category_embeddings(std::string_view category) const;
  /// Entries for a (class, category) pair, ordered by id.
  const std::vector<std::size_t>& captions_for(int class_label, std::string_view category) const;

  int class_of(std::string_view caption_id) const;
  const CaptionEntry& entry(std::string_view caption_id) const;

 private:
  std::vector<CaptionEntry> entries_;
  Taxonomy taxonomy_;
  Eigen::Index dim_ = 0;
  int classes_ = 0;
  std::vector<std::vector<std::size_t>> by_category_;
  std::vector<Mat<double>> category_matrix_;
  std::vector<std::vector<std::vector<std::size_t>>> by_class_category_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
};

/// Reads the JSONL bank format, one entry per line:
/// {"id", "class_label", "category", "level", "text", "embedding"}.
CaptionBank parse_bank(std::istream& in, const Taxonomy& taxonomy = Taxonomy::defaults(), int expected_classes = -1);
CaptionBank load_bank(const std::filesystem::path& path, const Taxonomy& taxonomy = Taxonomy::defaults(),
                      int expected_classes = -1);

void write_bank(std::ostream& out, const CaptionBank& bank);
void save_bank(const std::filesystem::path& path, const CaptionBank& bank);

}  // namespace neurosem
