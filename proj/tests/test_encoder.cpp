#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "neurosem/encoder.hpp"
#include "neurosem/ops.hpp"
#include "support/gradcheck.hpp"

using namespace neurosem;
using neurosem::testing::gradcheck;
using neurosem::testing::random_matrix;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.channels = 4;
  c.samples = 32;
  c.patch_len = 8;
  c.d_model = 8;
  c.n_spatial_layers = 1;
  c.n_temporal_layers = 1;
  c.n_attn_heads = 2;
  c.ff_mult = 2;
  c.dropout = 0.0;
  c.proj_dim = 6;
  c.seed = 11;
  return c;
}

Mat<double> random_batch(const EncoderConfig& c, int batch, std::uint64_t seed) {
  RngStream s = Rng(seed).stream("batch");
  return random_matrix(Eigen::Index{batch} * c.channels, c.samples, s, -2.0, 2.0);
}

// Fixed random projection of every head output; keeps all coordinates in play.
Var<double> head_readout(Tape<double>& tape, const std::vector<Var<double>>& heads) {
  RngStream s = Rng(5).stream("readout");
  Var<double> total = tape.constant(Mat<double>::Zero(1, 1));
  for (const auto& h : heads) total = add(total, sum(hadamard(h, tape.constant(random_matrix(h.rows(), h.cols(), s)))));
  return total;
}

}  // namespace

TEST(EncoderConfig, ParamCountMatchesHandComputedTotal) {
  const auto c = tiny_config();
  // patch 4*8*8 + 8, channel table 4*8, temporal table 4*8,
  // per layer: attention 4*(64+8) + norms 4*8 + ff (8*16+16) + (16*8+8),
  // final norm 2*8, heads 10*(8*6 + 6).
  const std::size_t layer = 4 * (64 + 8) + 4 * 8 + (8 * 16 + 16) + (16 * 8 + 8);
  const std::size_t want = (4 * 8 * 8 + 8) + 32 + 32 + 2 * layer + 16 + 10 * (48 + 6);
  EXPECT_EQ(want, 2084u);
  EXPECT_EQ(init_params<float>(c).count(), want);
  EXPECT_EQ(expected_param_count(c), want);
}

TEST(EncoderConfig, DefaultShapes) {
  EncoderConfig c;
  EXPECT_EQ(c.head_dim(), 16);
  auto p = init_params<float>(c);
  EXPECT_EQ(p.count(), expected_param_count(c));
  for (const char* stage : {"spatial.0", "spatial.1", "temporal.0", "temporal.1"}) {
    EXPECT_EQ(p.at(std::string(stage) + ".attn.wq").rows(), 64);
    EXPECT_EQ(p.at(std::string(stage) + ".attn.wq").cols(), 64);
  }
  EXPECT_EQ(p.at("head.ThemeTag.weight").cols(), 512);
}

TEST(EncoderConfig, InvalidConfigNamesConstraint) {
  auto c = tiny_config();
  c.n_attn_heads = 3;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("n_attn_heads"), std::string::npos);
  }
  c = tiny_config();
  c.patch_len = 7;
  try {
    init_params<float>(c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("patch_len"), std::string::npos);
  }
  c = tiny_config();
  std::swap(c.head_categories[0], c.head_categories[1]);
  c.validate();
  EXPECT_THROW(c.validate_against(Taxonomy::defaults()), ConfigError);
}

TEST(EncoderConfig, JsonRoundTrip) {
  auto c = tiny_config();
  c.dropout = 0.25;
  EXPECT_EQ(encoder_config_from_json(nlohmann::json::parse(to_json(c).dump())), c);
}

TEST(InitParams, DeterministicPerSeedWithConventionalInit) {
  auto c = tiny_config();
  auto a = init_params<float>(c);
  auto b = init_params<float>(c);
  EXPECT_TRUE(a == b);
  c.seed = 12;
  EXPECT_FALSE(a == init_params<float>(c));
  EXPECT_EQ(a.at("patch.bias"), Mat<float>::Zero(1, 8));
  EXPECT_EQ(a.at("spatial.0.ln1.gamma"), Mat<float>::Ones(1, 8));
  const auto& w = a.at("spatial.0.ff.w1");
  EXPECT_LE(w.cwiseAbs().maxCoeff(), 0.04f);
  EXPECT_GT(w.cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Encode, ShapesAndUnitRows) {
  const auto c = tiny_config();
  auto p = init_params<double>(c);
  auto out = encode(random_batch(c, 3, 1), p, c);
  ASSERT_EQ(out.size(), 10u);
  for (const auto& e : out.embeddings) {
    EXPECT_EQ(e.rows(), 3);
    EXPECT_EQ(e.cols(), 6);
    for (Eigen::Index r = 0; r < e.rows(); ++r) EXPECT_NEAR(e.row(r).norm(), 1.0, 1e-4);
  }
  EXPECT_EQ(out.at("MoodLens").rows(), 3);
}

TEST(Encode, UnitRowsForExtremeInputs) {
  const auto c = tiny_config();
  auto p = init_params<float>(c);
  for (float s : {0.0f, 1e-6f, 1e4f}) {
    RngStream st = Rng(2).stream("x");
    Mat<float> x = (random_matrix(2 * c.channels, c.samples, st) * s).cast<float>();
    for (const auto& e : encode(x, p, c).embeddings) {
      for (Eigen::Index r = 0; r < e.rows(); ++r) EXPECT_NEAR(e.row(r).norm(), 1.0f, 1e-4f);
    }
  }
}

TEST(Encode, EvalModeIsBitIdentical) {
  auto c = tiny_config();
  c.dropout = 0.3;
  auto p = init_params<float>(c);
  Mat<float> x = random_batch(c, 4, 2).cast<float>();
  auto a = encode(x, p, c);
  auto b = encode(x, p, c);
  for (std::size_t h = 0; h < a.size(); ++h) EXPECT_EQ(a.embeddings[h], b.embeddings[h]);
  auto t = encode(x, p, c, true, 9);
  auto t2 = encode(x, p, c, true, 9);
  EXPECT_EQ(t.embeddings[0], t2.embeddings[0]);
  EXPECT_NE(t.embeddings[0], a.embeddings[0]);
}

TEST(Encode, BatchPermutationEquivariance) {
  const auto c = tiny_config();
  auto p = init_params<double>(c);
  const int B = 5;
  Mat<double> x = random_batch(c, B, 3);
  const std::vector<int> perm = {3, 0, 4, 1, 2};
  Mat<double> xp(x.rows(), x.cols());
  for (int i = 0; i < B; ++i) xp.middleRows(i * c.channels, c.channels) = x.middleRows(perm[i] * c.channels, c.channels);
  auto a = encode(x, p, c);
  auto b = encode(xp, p, c);
  for (std::size_t h = 0; h < a.size(); ++h) {
    for (int i = 0; i < B; ++i) {
      EXPECT_LT((b.embeddings[h].row(i) - a.embeddings[h].row(perm[i])).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Encode, ShapeMismatchIsDimensionError) {
  const auto c = tiny_config();
  auto p = init_params<float>(c);
  EXPECT_THROW(encode(Mat<float>(Mat<float>::Zero(5, c.samples)), p, c), DimensionError);
  EXPECT_THROW(encode(Mat<float>(Mat<float>::Zero(4, c.samples + 1)), p, c), DimensionError);
}

TEST(InputGradient, ConstantLossGivesZeroGradient) {
  const auto c = tiny_config();
  auto p = init_params<double>(c);
  auto r = encode_with_input_grad<double>(random_batch(c, 2, 4), p, c, [](Tape<double>& t, const auto&) {
    return t.constant(Mat<double>::Zero(1, 1));
  });
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.gradient.rows(), 2 * c.channels);
  EXPECT_EQ(r.gradient.cols(), c.samples);
  EXPECT_EQ(r.gradient.cwiseAbs().maxCoeff(), 0.0);
}

TEST(InputGradient, LinearStandInIsTransposedWeightTimesOutputGradient) {
  RngStream s = Rng(6).stream("lin");
  Mat<double> x = random_matrix(3, 5, s), w = random_matrix(5, 4, s), g = random_matrix(3, 4, s);
  Tape<double> t;
  auto xv = t.leaf(x);
  auto loss = sum(hadamard(matmul(xv, t.constant(w)), t.constant(g)));
  auto grads = t.backward(loss);
  EXPECT_LT((grads[xv] - g * w.transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(InputGradient, FullModelMatchesFiniteDifferences) {
  const auto c = tiny_config();
  auto p = init_params<double>(c);
  Mat<double> x = random_batch(c, 2, 7);
  auto r = encode_with_input_grad<double>(x, p, c, head_readout);

  RngStream pick = Rng(8).stream("coords");
  const double h = 1e-3;
  double worst = 0;
  for (int n = 0; n < 10; ++n) {
    const auto i = static_cast<Eigen::Index>(pick.below(static_cast<std::uint64_t>(x.size())));
    auto eval = [&](double delta) {
      Mat<double> xd = x;
      xd.data()[i] += delta;
      Tape<double> tape(false);
      auto g = build_encoder(tape, xd, p, c, false, nullptr, false, false);
      return head_readout(tape, g.heads).value()(0, 0);
    };
    const double numeric = (eval(h) - eval(-h)) / (2 * h);
    worst = std::max(worst, neurosem::testing::relative_error(r.gradient.data()[i], numeric));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(InputGradient, FullModelParameterGradients) {
  const auto c = tiny_config();
  auto p = init_params<double>(c);
  // Larger weights keep attention and GELU away from their linear regime.
  RngStream s = Rng(10).stream("perturb");
  for (auto& v : p.values()) v += random_matrix(v.rows(), v.cols(), s, -0.3, 0.3);
  std::vector<Mat<double>> inputs = p.values();
  inputs.push_back(random_batch(c, 2, 9));
  auto builder = [&](Tape<double>& tape, const std::vector<Var<double>>& vars) {
    std::vector<Var<double>> params(vars.begin(), vars.end() - 1);
    return head_readout(tape, encoder_heads(vars.back(), params, c, false, nullptr));
  };
  EXPECT_LT(gradcheck(builder, inputs, 40, 13).max_rel_error, 1e-4);
}

TEST(Checkpoint, SaveLoadRoundTrip) {
  const auto c = tiny_config();
  Checkpoint ck{c, init_params<float>(c), {3, {2.5, 2.0, 1.5}}};
  auto dir = std::filesystem::temp_directory_path() / "neurosem_tests" / "ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, ck);
  auto back = load_checkpoint(dir);
  EXPECT_EQ(back.config, c);
  EXPECT_TRUE(back.params == ck.params);
  EXPECT_EQ(back.meta.epoch, 3);
  EXPECT_EQ(back.meta.loss_history, ck.meta.loss_history);

  save_nsem(dir / "patch.bias.nsem", Tensor<float>::zeros({1, 9}));
  EXPECT_THROW(load_checkpoint(dir), DimensionError);
}
