#include "neurosem/saliency.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>

#include "neurosem/ops.hpp"
#include "support/gradcheck.hpp"

using namespace neurosem;
using neurosem::testing::random_matrix;

namespace {

std::vector<std::string> names(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("E" + std::to_string(i));
  return out;
}

Mat<double> tile_rows(const Mat<double>& a, Eigen::Index times) {
  Mat<double> out(a.rows() * times, a.cols());
  for (Eigen::Index b = 0; b < times; ++b) out.middleRows(b * a.rows(), a.rows()) = a;
  return out;
}

struct Fixture {
  SynthOutput synth;
  Checkpoint checkpoint;
};

Fixture small_model() {
  SynthSpec spec;
  spec.classes = 3;
  spec.epochs_per_class = 2;
  spec.channels = 6;
  spec.samples = 32;
  spec.sample_rate = 32;
  spec.embed_dim = 16;
  EncoderConfig c;
  c.channels = 6;
  c.samples = 32;
  c.patch_len = 8;
  c.d_model = 8;
  c.n_spatial_layers = 1;
  c.n_temporal_layers = 1;
  c.n_attn_heads = 2;
  c.ff_mult = 2;
  c.dropout = 0.1;
  c.proj_dim = 16;
  c.seed = 5;
  return {synth_generate(spec), {c, init_params<float>(c), {}}};
}

}  // namespace

TEST(ChannelScores, MeanAbsoluteOverBatchAndTime) {
  Mat<double> g(4, 3);  // two epochs of two channels
  g << 1, -2, 3,  //
      0, 0, 0,    //
      -1, 1, 1,   //
      0, 0, 6;
  const auto s = channel_scores(g, 2);
  EXPECT_DOUBLE_EQ(s[0], 9.0 / 6.0);
  EXPECT_DOUBLE_EQ(s[1], 1.0);
  EXPECT_THROW(channel_scores(g, 3), DimensionError);
}

TEST(LinearStandIn, TiledWeightsGiveMeanAbsoluteRowWeight) {
  RngStream s = Rng(1).stream("lin");
  const int C = 5, T = 12, B = 3;
  const Mat<double> a = random_matrix(C, T, s);
  const Mat<double> tiled = tile_rows(a, B);
  auto model = [&](Tape<double>& tape, const Var<double>& x) { return sum(hadamard(x, tape.constant(tiled))); };
  const auto map = compute_saliency(model, random_matrix(B * C, T, s), names(C));
  for (int c = 0; c < C; ++c) EXPECT_NEAR(map.per_channel[static_cast<std::size_t>(c)], a.row(c).cwiseAbs().mean(), 1e-12);
}

TEST(LinearStandIn, TemporalLinearLayerClosedForm) {
  RngStream s = Rng(2).stream("lin2");
  const int C = 4, T = 10, B = 2, K = 3;
  const Mat<double> w = random_matrix(K, T, s);
  const Mat<double> g = random_matrix(B * C, K, s);
  auto model = [&](Tape<double>& tape, const Var<double>& x) {
    return sum(hadamard(matmul(x, tape.constant(Mat<double>(w.transpose()))), tape.constant(g)));
  };
  const auto map = compute_saliency(model, random_matrix(B * C, T, s), names(C));
  // dL/dX = G W
  const Mat<double> grad = g * w;
  for (int c = 0; c < C; ++c) {
    double expect = 0;
    for (int b = 0; b < B; ++b) expect += grad.row(b * C + c).cwiseAbs().sum();
    EXPECT_NEAR(map.per_channel[static_cast<std::size_t>(c)], expect / (B * T), 1e-12);
  }
}

TEST(LinearStandIn, DeadChannelScoresZero) {
  RngStream s = Rng(3).stream("dead");
  const int C = 6, T = 8, B = 4;
  Mat<double> a = random_matrix(C, T, s);
  a.row(2).setZero();
  const Mat<double> tiled = tile_rows(a, B);
  auto model = [&](Tape<double>& tape, const Var<double>& x) {
    auto y = hadamard(x, tape.constant(tiled));
    return sum(hadamard(y, y));
  };
  const auto map = compute_saliency(model, random_matrix(B * C, T, s), names(C));
  EXPECT_EQ(map.per_channel[2], 0.0);
  for (int c = 0; c < C; ++c) {
    if (c != 2) EXPECT_GT(map.per_channel[static_cast<std::size_t>(c)], 0.0);
  }
}

TEST(EncoderSaliency, NonNegativeAndDeterministic) {
  auto f = small_model();
  const auto a = compute_saliency(f.checkpoint, f.synth.dataset, f.synth.bank);
  const auto b = compute_saliency(f.checkpoint, f.synth.dataset, f.synth.bank);
  ASSERT_EQ(a.per_channel.size(), 6u);
  EXPECT_EQ(a.per_channel, b.per_channel);
  EXPECT_EQ(a.head_scope, "all");
  for (double v : a.per_channel) {
    EXPECT_GE(v, 0.0);
    EXPECT_TRUE(std::isfinite(v));
  }
  EXPECT_GT(*std::max_element(a.per_channel.begin(), a.per_channel.end()), 0.0);
}

TEST(EncoderSaliency, InvariantToRawChannelScale) {
  auto f = small_model();
  const auto base = compute_saliency(f.checkpoint, f.synth.dataset, f.synth.bank);
  EegDataset scaled = f.synth.dataset;
  for (auto& e : scaled.epochs) {
    e.data.row(2) *= 25.0f;
    e.data.row(4) *= 0.04f;
  }
  const auto s = compute_saliency(f.checkpoint, scaled, f.synth.bank);
  for (std::size_t c = 0; c < base.per_channel.size(); ++c) {
    EXPECT_NEAR(s.per_channel[c], base.per_channel[c], 1e-3 * base.per_channel[c]) << "channel " << c;
  }
}

TEST(EncoderSaliency, ZeroedHeadProjectionGivesZeroScopedSaliency) {
  auto f = small_model();
  f.checkpoint.params.at("head.ThemeTag.weight").setZero();
  SaliencyOptions opt;
  opt.head_scope = "ThemeTag";
  const auto zeroed = compute_saliency(f.checkpoint, f.synth.dataset, f.synth.bank, opt);
  for (double v : zeroed.per_channel) EXPECT_EQ(v, 0.0);
  opt.head_scope = "MoodLens";
  const auto other = compute_saliency(f.checkpoint, f.synth.dataset, f.synth.bank, opt);
  EXPECT_GT(*std::max_element(other.per_channel.begin(), other.per_channel.end()), 0.0);
}

TEST(EncoderSaliency, ScopeErrors) {
  auto f = small_model();
  SaliencyOptions opt;
  opt.head_scope = "NoSuchHead";
  EXPECT_THROW(compute_saliency(f.checkpoint, f.synth.dataset, f.synth.bank, opt), ConfigError);
  EXPECT_THROW(compute_saliency(f.checkpoint, std::vector<const EegEpoch*>{}, f.synth.dataset.channel_names,
                                f.synth.bank),
               ContractError);
}

TEST(SaliencyCsv, RoundTrip) {
  SaliencyMap m{{0.5, 1e-9, 3.25}, {"Fz", "Cz", "Pz"}, "all"};
  const auto path = std::filesystem::temp_directory_path() / "neurosem_saliency.csv";
  write_saliency_csv(path, m);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "channel,score");
  const auto back = read_saliency_csv(path);
  EXPECT_EQ(back.channel_names, m.channel_names);
  EXPECT_EQ(back.per_channel, m.per_channel);
}

TEST(Ranking, DescendingWithIndexTies) {
  SaliencyMap m{{0.2, 0.9, 0.2, 0.5}, names(4), "all"};
  EXPECT_EQ(rank_channels(m), (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(Topomap, UniformScoresGiveUniformField) {
  const auto n = names(8);
  const auto layout = default_layout(n);
  SaliencyMap m{std::vector<double>(8, 0.7), n, "all"};
  const auto field = topomap_field(m, layout);
  int inside = 0;
  for (Eigen::Index i = 0; i < field.size(); ++i) {
    if (std::isnan(field.data()[i])) continue;
    ++inside;
    EXPECT_NEAR(field.data()[i], 0.7, 1e-12);
  }
  EXPECT_GT(inside, 3000);
  EXPECT_LT(inside, 64 * 64);
  const auto svg = topomap_svg(m, layout);
  std::set<std::string> fills;
  const std::regex cell("<rect x=\"[^\"]+\" y=\"[^\"]+\" width=\"5.00\" height=\"5.00\" fill=\"(#[0-9a-f]{6})\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), cell); it != std::sregex_iterator(); ++it) {
    fills.insert((*it)[1]);
  }
  EXPECT_EQ(fills.size(), 1u);
}

TEST(Topomap, HotChannelIsFieldMaximum) {
  const auto n = names(16);
  const auto layout = default_layout(n);
  for (std::size_t hot : {0u, 5u, 15u}) {
    SaliencyMap m{std::vector<double>(16, 0.0), n, "all"};
    m.per_channel[hot] = 1.0;
    const auto field = topomap_field(m, layout);
    Eigen::Index br = 0, bc = 0;
    double best = -1;
    for (Eigen::Index r = 0; r < field.rows(); ++r) {
      for (Eigen::Index c = 0; c < field.cols(); ++c) {
        if (!std::isnan(field(r, c)) && field(r, c) > best) {
          best = field(r, c);
          br = r;
          bc = c;
        }
      }
    }
    const auto& p = layout.positions.at(n[hot]);
    const double x = -1.0 + (static_cast<double>(bc) + 0.5) / 32.0, y = 1.0 - (static_cast<double>(br) + 0.5) / 32.0;
    EXPECT_LT(std::hypot(x - p.x(), y - p.y()), 2.0 / 64.0 * std::sqrt(2.0)) << "channel " << hot;
  }
}

TEST(Topomap, ByteIdenticalAcrossCalls) {
  const auto n = names(10);
  const auto layout = default_layout(n);
  SaliencyMap m{{0.1, 0.3, 0.2, 0.9, 0.4, 0.0, 0.5, 0.6, 0.7, 0.8}, n, "MoodLens"};
  const auto dir = std::filesystem::temp_directory_path();
  render_topomap(m, layout, dir / "neurosem_topo_a.svg");
  render_topomap(m, layout, dir / "neurosem_topo_b.svg");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), {});
  };
  const auto a = slurp(dir / "neurosem_topo_a.svg");
  EXPECT_EQ(a, slurp(dir / "neurosem_topo_b.svg"));
  EXPECT_NE(a.find("<svg"), std::string::npos);
  EXPECT_NE(a.find(">E3</text>"), std::string::npos);
}

TEST(Topomap, MissingChannelNamed) {
  const auto layout = default_layout(names(3));
  SaliencyMap m{{1, 2, 3, 4}, {"E0", "E1", "E2", "Oz"}, "all"};
  try {
    topomap_field(m, layout);
    ADD_FAILURE() << "expected LayoutError";
  } catch (const LayoutError& e) {
    EXPECT_NE(std::string(e.what()).find("Oz"), std::string::npos);
  }
}
