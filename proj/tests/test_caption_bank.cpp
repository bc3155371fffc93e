#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "neurosem/caption_bank.hpp"
#include "neurosem/rng.hpp"

using namespace neurosem;

namespace {

std::string entry_line(const std::string& id, int cls, const std::string& cat, const std::string& level,
                       const std::vector<double>& emb) {
  std::ostringstream os;
  os << R"({"id": ")" << id << R"(", "class_label": )" << cls << R"(, "category": ")" << cat
     << R"(", "level": ")" << level << R"(", "text": "caption )" << id << R"(", "embedding": [)";
  for (std::size_t i = 0; i < emb.size(); ++i) os << (i ? ", " : "") << emb[i];
  os << "]}";
  return os.str();
}

std::string level_name(SemanticLevel l) { return std::string(to_string(l)); }

// classes x 10 categories, D = 8, one caption per pair unless skipped.
std::string complete_bank(int classes, int dim = 8, const std::string& skip_cat = "", int skip_class = -1) {
  std::ostringstream os;
  RngStream s = Rng(1).stream("bank");
  const auto taxonomy = Taxonomy::defaults();
  for (int c = 0; c < classes; ++c) {
    for (const auto& cat : taxonomy.categories()) {
      if (cat.name == skip_cat && c == skip_class) continue;
      std::vector<double> emb(static_cast<std::size_t>(dim));
      for (auto& v : emb) v = s.normal();
      os << entry_line("c" + std::to_string(c) + "_" + cat.name, c, cat.name, level_name(cat.level), emb) << "\n";
    }
  }
  return os.str();
}

}  // namespace

TEST(Taxonomy, DefaultHasTenCategoriesAcrossThreeLevels) {
  auto t = Taxonomy::defaults();
  ASSERT_EQ(t.size(), 10u);
  std::set<SemanticLevel> levels;
  for (const auto& c : t.categories()) levels.insert(c.level);
  EXPECT_EQ(levels.size(), 3u);
  EXPECT_EQ(t.level_of("ObjectSnap"), SemanticLevel::Low);
  EXPECT_EQ(t.level_of("SpatialLink"), SemanticLevel::Mid);
  EXPECT_EQ(t.level_of("ThemeTag"), SemanticLevel::High);
}

TEST(Taxonomy, RequiresCoreCategories) {
  auto cats = Taxonomy::defaults().categories();
  cats[7].name = "Theme";  // ThemeTag renamed
  EXPECT_THROW(Taxonomy{cats}, ConfigError);
  cats.pop_back();
  EXPECT_THROW(Taxonomy{cats}, ConfigError);
}

TEST(LoadBank, MinimalCompleteBank) {
  std::istringstream in(complete_bank(2));
  auto bank = parse_bank(in);
  EXPECT_EQ(bank.entries().size(), 20u);
  EXPECT_EQ(bank.dim(), 8);
  EXPECT_EQ(bank.classes(), 2);
  for (const auto& e : bank.entries()) EXPECT_NEAR(e.embedding.norm(), 1.0, 1e-4);
}

TEST(LoadBank, DimensionMismatchNamesId) {
  std::string text = complete_bank(2);
  text += entry_line("odd_one", 0, "ObjectSnap", "low", {1, 2, 3, 4, 5, 6, 7}) + "\n";
  std::istringstream in(text);
  try {
    parse_bank(in);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("odd_one"), std::string::npos);
  }
}

TEST(LoadBank, CoverageGapIsListed) {
  std::istringstream in(complete_bank(2, 8, "ThemeTag", 1));
  try {
    parse_bank(in);
    FAIL();
  } catch (const CoverageError& e) {
    EXPECT_NE(std::string(e.what()).find("(1, ThemeTag)"), std::string::npos);
  }
}

TEST(LoadBank, MissingFieldReportsLine) {
  std::string text = complete_bank(1);
  text += R"({"id": "x", "class_label": 0, "category": "ObjectSnap", "level": "low", "embedding": [1, 0]})";
  std::istringstream in(text);
  try {
    parse_bank(in);
    FAIL();
  } catch (const SchemaError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 11"), std::string::npos);
    EXPECT_NE(msg.find("text"), std::string::npos);
  }
}

TEST(LoadBank, DuplicateIdIsSchemaError) {
  std::string text = complete_bank(1);
  text += entry_line("c0_ObjectSnap", 0, "ObjectSnap", "low", {1, 0, 0, 0, 0, 0, 0, 0}) + "\n";
  std::istringstream in(text);
  EXPECT_THROW(parse_bank(in), SchemaError);
}

TEST(LoadBank, LevelMustMatchTaxonomy) {
  std::string text = complete_bank(1);
  text += entry_line("extra", 0, "ObjectSnap", "high", {1, 0, 0, 0, 0, 0, 0, 0}) + "\n";
  std::istringstream in(text);
  EXPECT_THROW(parse_bank(in), SchemaError);
}

TEST(CategorySubset, PartitionsTheBank) {
  std::string text = complete_bank(2);
  text += entry_line("c0_ObjectSnap_b", 0, "ObjectSnap", "low", {0, 1, 0, 0, 0, 0, 0, 0}) + "\n";
  std::istringstream in(text);
  auto bank = parse_bank(in);
  std::size_t total = 0;
  std::set<std::string> seen;
  for (const auto& name : bank.taxonomy().names()) {
    auto subset = bank.category_subset(name);
    total += subset.size();
    for (std::size_t i = 0; i < subset.size(); ++i) {
      EXPECT_EQ(subset[i].category, name);
      EXPECT_TRUE(seen.insert(subset[i].id).second);
      if (i) {
        EXPECT_LT(subset[i - 1].id, subset[i].id);
      }
    }
  }
  EXPECT_EQ(total, bank.entries().size());
  auto obj = bank.category_subset("ObjectSnap");
  EXPECT_EQ(obj.size(), 3u);
  EXPECT_THROW(bank.category_subset("Nope"), LookupError);
}

TEST(ClassOf, LookupByIdAndUnknownId) {
  std::string text = complete_bank(2);
  text += entry_line("c0_obj_0", 0, "ObjectSnap", "low", {0, 1, 0, 0, 0, 0, 0, 0}) + "\n";
  std::istringstream in(text);
  auto bank = parse_bank(in);
  EXPECT_EQ(bank.class_of("c0_obj_0"), 0);
  EXPECT_EQ(bank.class_of("c1_ThemeTag"), 1);
  EXPECT_THROW(bank.class_of("missing"), LookupError);
}

TEST(SaveBank, LoadSaveIsBitExact) {
  std::istringstream in(complete_bank(3, 16));
  auto bank = parse_bank(in);
  std::stringstream buf;
  write_bank(buf, bank);
  auto again = parse_bank(buf);
  ASSERT_EQ(again.entries().size(), bank.entries().size());
  for (std::size_t i = 0; i < bank.entries().size(); ++i) {
    const auto& a = bank.entries()[i];
    const auto& b = again.entries()[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.text, b.text);
    EXPECT_EQ(a.embedding, b.embedding);
  }
}
