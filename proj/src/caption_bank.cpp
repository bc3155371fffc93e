#include "neurosem/caption_bank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"

namespace neurosem {

using json = nlohmann::json;

std::string_view to_string(SemanticLevel level) {
  switch (level) {
    case SemanticLevel::Low: return "low";
    case SemanticLevel::Mid: return "mid";
    case SemanticLevel::High: return "high";
  }
  return "low";
}

SemanticLevel parse_level(std::string_view s) {
  if (s == "low") return SemanticLevel::Low;
  if (s == "mid") return SemanticLevel::Mid;
  if (s == "high") return SemanticLevel::High;
  throw SchemaError("unknown semantic level '" + std::string(s) + "'");
}

Taxonomy::Taxonomy(std::vector<CaptionCategory> categories) : categories_(std::move(categories)) {
  if (categories_.size() != kCategories) {
    throw ConfigError("taxonomy must have exactly " + std::to_string(kCategories) + " categories, got " +
                      std::to_string(categories_.size()));
  }
  std::set<std::string> seen;
  for (const auto& c : categories_) {
    if (c.name.empty()) throw ConfigError("taxonomy category with empty name");
    if (!seen.insert(c.name).second) throw ConfigError("duplicate taxonomy category '" + c.name + "'");
  }
  for (auto required : kRequired) {
    if (!seen.contains(std::string(required))) {
      throw ConfigError("taxonomy is missing required category '" + std::string(required) + "'");
    }
  }
}

Taxonomy Taxonomy::defaults() {
  using L = SemanticLevel;
  return Taxonomy({{"ObjectSnap", L::Low},
                   {"ColorField", L::Low},
                   {"ClarityCue", L::Low},
                   {"SceneFrame", L::Mid},
                   {"SpatialLink", L::Mid},
                   {"AngleView", L::Mid},
                   {"MoodLens", L::High},
                   {"ThemeTag", L::High},
                   {"ActionPulse", L::High},
                   {"SymbolCue", L::High}});
}

std::vector<std::string> Taxonomy::names() const {
  std::vector<std::string> out;
  for (const auto& c : categories_) out.push_back(c.name);
  return out;
}

std::size_t Taxonomy::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < categories_.size(); ++i) {
    if (categories_[i].name == name) return i;
  }
  throw LookupError("unknown caption category '" + std::string(name) + "'");
}

bool Taxonomy::contains(std::string_view name) const {
  return std::any_of(categories_.begin(), categories_.end(), [&](const auto& c) { return c.name == name; });
}

CaptionBank::CaptionBank(std::vector<CaptionEntry> entries, Taxonomy taxonomy, int expected_classes)
    : entries_(std::move(entries)), taxonomy_(std::move(taxonomy)) {
  if (entries_.empty()) throw SchemaError("caption bank is empty");
  dim_ = entries_.front().embedding.size();
  if (dim_ < 2) throw DimensionError("embedding dimension must be >= 2, got " + std::to_string(dim_));

  int max_label = -1;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& e = entries_[i];
    if (!by_id_.emplace(e.id, i).second) throw SchemaError("duplicate caption id '" + e.id + "'");
    if (!taxonomy_.contains(e.category)) throw SchemaError("caption '" + e.id + "' has unknown category '" + e.category + "'");
    if (taxonomy_.level_of(e.category) != e.level) {
      throw SchemaError("caption '" + e.id + "' level '" + std::string(to_string(e.level)) +
                        "' does not match category " + e.category);
    }
    if (e.class_label < 0) throw SchemaError("caption '" + e.id + "' has negative class_label");
    if (e.embedding.size() != dim_) {
      throw DimensionError("caption '" + e.id + "' embedding has length " + std::to_string(e.embedding.size()) +
                           ", bank dimension is " + std::to_string(dim_));
    }
    if (!e.embedding.allFinite()) throw DataError("caption '" + e.id + "' embedding is not finite");
    const double norm = e.embedding.norm();
    if (norm == 0.0) throw DataError("caption '" + e.id + "' embedding is zero");
    // Already-unit vectors are kept as-is so that save/load is bit-exact.
    if (std::abs(norm - 1.0) > 1e-12) e.embedding /= norm;
    max_label = std::max(max_label, e.class_label);
  }
  classes_ = expected_classes > 0 ? expected_classes : max_label + 1;
  if (max_label >= classes_) {
    throw SchemaError("class_label " + std::to_string(max_label) + " outside [0, " + std::to_string(classes_) + ")");
  }

  const std::size_t n_cat = taxonomy_.size();
  by_category_.assign(n_cat, {});
  by_class_category_.assign(static_cast<std::size_t>(classes_), std::vector<std::vector<std::size_t>>(n_cat));
  std::vector<std::size_t> order(entries_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return entries_[a].id < entries_[b].id; });
  for (auto i : order) {
    const auto c = taxonomy_.index_of(entries_[i].category);
    by_category_[c].push_back(i);
    by_class_category_[static_cast<std::size_t>(entries_[i].class_label)][c].push_back(i);
  }

  std::string gaps;
  for (int k = 0; k < classes_; ++k) {
    for (std::size_t c = 0; c < n_cat; ++c) {
      if (by_class_category_[static_cast<std::size_t>(k)][c].empty()) {
        if (!gaps.empty()) gaps += ", ";
        gaps += "(" + std::to_string(k) + ", " + taxonomy_.categories()[c].name + ")";
      }
    }
  }
  if (!gaps.empty()) throw CoverageError("missing (class, category) pairs: " + gaps);

  category_matrix_.resize(n_cat);
  for (std::size_t c = 0; c < n_cat; ++c) {
    auto& m = category_matrix_[c];
    m.resize(static_cast<Eigen::Index>(by_category_[c].size()), dim_);
    for (std::size_t r = 0; r < by_category_[c].size(); ++r) {
      m.row(static_cast<Eigen::Index>(r)) = entries_[by_category_[c][r]].embedding;
    }
  }
}

std::vector<CaptionEntry> CaptionBank::category_subset(std::string_view category) const {
  std::vector<CaptionEntry> out;
  for (auto i : category_indices(category)) out.push_back(entries_[i]);
  return out;
}

const std::vector<std::size_t>& CaptionBank::category_indices(std::string_view category) const {
  return by_category_[taxonomy_.index_of(category)];
}

const Mat<double>& CaptionBank::category_embeddings(std::string_view category) const {
  return category_matrix_[taxonomy_.index_of(category)];
}

const std::vector<std::size_t>& CaptionBank::captions_for(int class_label, std::string_view category) const {
  if (class_label < 0 || class_label >= classes_) {
    throw CoverageError("class " + std::to_string(class_label) + " has no captions");
  }
  return by_class_category_[static_cast<std::size_t>(class_label)][taxonomy_.index_of(category)];
}

const CaptionEntry& CaptionBank::entry(std::string_view caption_id) const {
  auto it = by_id_.find(caption_id);
  if (it == by_id_.end()) throw LookupError("unknown caption id '" + std::string(caption_id) + "'");
  return entries_[it->second];
}

int CaptionBank::class_of(std::string_view caption_id) const { return entry(caption_id).class_label; }

namespace {

const json& field(const json& obj, const char* name, std::size_t line) {
  auto it = obj.find(name);
  if (it == obj.end()) {
    throw SchemaError("line " + std::to_string(line) + ": missing field '" + name + "'");
  }
  return *it;
}

std::string string_field(const json& obj, const char* name, std::size_t line) {
  const auto& v = field(obj, name, line);
  if (!v.is_string()) throw SchemaError("line " + std::to_string(line) + ": field '" + name + "' must be a string");
  return v.get<std::string>();
}

}  // namespace

CaptionBank parse_bank(std::istream& in, const Taxonomy& taxonomy, int expected_classes) {
  std::vector<CaptionEntry> entries;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw SchemaError("line " + std::to_string(line) + ": invalid JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw SchemaError("line " + std::to_string(line) + ": expected a JSON object");

    CaptionEntry e;
    e.id = string_field(obj, "id", line);
    const auto& label = field(obj, "class_label", line);
    if (!label.is_number_integer()) {
      throw SchemaError("line " + std::to_string(line) + ": field 'class_label' must be an integer");
    }
    e.class_label = label.get<int>();
    e.category = string_field(obj, "category", line);
    try {
      e.level = parse_level(string_field(obj, "level", line));
    } catch (const SchemaError& err) {
      throw SchemaError("line " + std::to_string(line) + ": " + err.what());
    }
    e.text = string_field(obj, "text", line);
    const auto& emb = field(obj, "embedding", line);
    if (!emb.is_array()) throw SchemaError("line " + std::to_string(line) + ": field 'embedding' must be an array");
    e.embedding.resize(static_cast<Eigen::Index>(emb.size()));
    for (std::size_t j = 0; j < emb.size(); ++j) {
      if (!emb[j].is_number()) {
        throw SchemaError("line " + std::to_string(line) + ": embedding values must be numbers");
      }
      e.embedding(static_cast<Eigen::Index>(j)) = emb[j].get<double>();
    }
    entries.push_back(std::move(e));
  }
  return CaptionBank(std::move(entries), taxonomy, expected_classes);
}

CaptionBank load_bank(const std::filesystem::path& path, const Taxonomy& taxonomy, int expected_classes) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open caption bank " + path.string());
  return parse_bank(in, taxonomy, expected_classes);
}

void write_bank(std::ostream& out, const CaptionBank& bank) {
  for (const auto& e : bank.entries()) {
    nlohmann::ordered_json obj;
    obj["id"] = e.id;
    obj["class_label"] = e.class_label;
    obj["category"] = e.category;
    obj["level"] = std::string(to_string(e.level));
    obj["text"] = e.text;
    obj["embedding"] = std::vector<double>(e.embedding.data(), e.embedding.data() + e.embedding.size());
    out << obj.dump() << '\n';
  }
}

void save_bank(const std::filesystem::path& path, const CaptionBank& bank) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write caption bank " + path.string());
  write_bank(out, bank);
}

}  // namespace neurosem
