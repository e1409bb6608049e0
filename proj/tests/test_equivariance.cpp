#include <gtest/gtest.h>

#include <sstream>

#include "tape/equivariance/equivariance.hpp"

using namespace tape;
using namespace tape::eq;
using model::ModelConfig;

namespace {

ModelConfig rope_model() {
  ModelConfig c;
  c.N = 48;
  c.C = 16;
  c.H = 2;
  c.M = 4;
  c.I = 8;
  c.depth = 2;
  c.vocab = 10;
  c.init_std = 0.2;
  return c;
}

std::vector<std::size_t> some_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  Rng r(seed);
  std::vector<std::size_t> t(n);
  for (auto& v : t) v = r.uniform_int(vocab);
  return t;
}

}  // namespace

TEST(SampleMask, RowsAreNeverEmpty) {
  Rng r(1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + r.uniform_int(12);
    const AttnMask m = sample_mask(n, r);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += m.m(i, j);
      EXPECT_GE(s, 1.0);
    }
  }
}

TEST(Harness, IdentityLayerHasZeroDeviation) {
  const Dims d;
  auto p = check_perm_equivariance(identity_layer, d, 10, 1e-8, 3);
  auto o = check_ortho_equivariance(identity_layer, d, 10, 1e-8, 3);
  EXPECT_EQ(p.max_dev(), 0.0);
  EXPECT_EQ(o.max_dev(), 0.0);
  EXPECT_TRUE(p.pass());
  EXPECT_TRUE(o.pass());
}

TEST(Harness, ZeroTrialsNeverPass) {
  EXPECT_FALSE(check_perm_equivariance(identity_layer, Dims{}, 0, 1e-8, 3).pass());
}

TEST(Harness, AbsolutePositionLayerIsCaught) {
  // Adds the token index to every feature: breaks permutation equivariance.
  LayerFn bad = [](const Tensor& x, const Tensor& e, const AttnMask&) {
    Tensor y = x;
    for (std::size_t i = 0; i < x.dim(0); ++i)
      for (std::size_t c = 0; c < x.dim(1); ++c) y(i, c) += double(i);
    return LayerOut{y, e, {}};
  };
  auto rep = check_perm_equivariance(bad, Dims{}, 5, 1e-8, 4);
  EXPECT_FALSE(rep.pass());
  EXPECT_GT(rep.max_f(), 1e-3);
}

TEST(Harness, ReportIsReproducibleFromSeed) {
  const auto c = suite_config();
  auto layer = tape_layer(model::init_weights(c, 5), c);
  auto a = check_ortho_equivariance(layer, Dims::of(c, 6), 4, 1e-8, 77);
  auto b = check_ortho_equivariance(layer, Dims::of(c, 6), 4, 1e-8, 77);
  ASSERT_EQ(a.trials.size(), b.trials.size());
  for (std::size_t t = 0; t < a.trials.size(); ++t) {
    EXPECT_EQ(a.trials[t].seed, b.trials[t].seed);
    EXPECT_EQ(a.trials[t].dev_g, b.trials[t].dev_g);
  }
  const auto j = a.to_json();
  EXPECT_EQ(j["check"], "ortho_equivariance");
  EXPECT_EQ(j["trials"], 4);
  EXPECT_TRUE(j.contains("worst_trial_seed"));
  std::ostringstream os;
  write_jsonl(os, j);
  EXPECT_EQ(os.str().back(), '\n');
  EXPECT_EQ(os.str().find('\n'), os.str().size() - 1);
}

TEST(TapeStack, PermutationEquivariantOverFiftyTrials) {
  const auto c = suite_config();
  auto rep = check_perm_equivariance(tape_layer(model::init_weights(c, 6), c), Dims::of(c, 8), 50, 1e-8, 6);
  EXPECT_TRUE(rep.pass()) << rep.to_json().dump();
}

TEST(TapeStack, OrthoEquivariantOverFiftyTrials) {
  const auto c = suite_config();
  auto rep = check_ortho_equivariance(tape_layer(model::init_weights(c, 7), c), Dims::of(c, 8), 50, 1e-8, 7);
  EXPECT_TRUE(rep.pass()) << rep.to_json().dump();
  // The outputs actually move with O, so this is not a vacuous pass.
  EXPECT_GT(rep.max_logits() + rep.max_g(), 0.0);
}

TEST(TapeStack, VariantsStayEquivariant) {
  for (auto param : {model::MlpParam::Shared, model::MlpParam::Full})
    for (auto res : {model::EResidual::Outer, model::EResidual::Inner})
      for (int toggles = 0; toggles < 4; ++toggles) {
        auto c = suite_config();
        c.mlp_param = param;
        c.e_residual = res;
        c.attn_path = toggles & 1;
        c.mlp_path = toggles & 2;
        auto layer = tape_layer(model::init_weights(c, 8), c);
        EXPECT_TRUE(check_perm_equivariance(layer, Dims::of(c, 6), 5, 1e-8, 8).pass());
        EXPECT_TRUE(check_ortho_equivariance(layer, Dims::of(c, 6), 5, 1e-8, 8).pass());
      }
}

TEST(Mutants, FlattenedPositionalFeaturesFail) {
  auto c = suite_config();
  c.mutation = model::Mutation::FlattenedPe;
  auto layer = tape_layer(model::init_weights(c, 9), c);
  auto perm = check_perm_equivariance(layer, Dims::of(c, 8), 10, 1e-8, 9);
  auto orth = check_ortho_equivariance(layer, Dims::of(c, 8), 10, 1e-8, 9);
  EXPECT_FALSE(perm.pass());
  EXPECT_FALSE(orth.pass());
  EXPECT_GT(perm.max_f(), 1e-4);
}

TEST(Mutants, RAxisPositionMlpFails) {
  auto c = suite_config();
  c.mutation = model::Mutation::RAxisMlp;
  auto layer = tape_layer(model::init_weights(c, 10), c);
  auto orth = check_ortho_equivariance(layer, Dims::of(c, 8), 10, 1e-8, 10);
  EXPECT_FALSE(orth.pass());
  EXPECT_GT(orth.max_g(), 1e-4);
}

TEST(Suite, DefaultSuitePasses) {
  SuiteOptions o;
  o.trials = 10;
  auto res = run_symmetry_suite(suite_config(), o);
  EXPECT_TRUE(res.pass());
  EXPECT_EQ(res.mutants.size(), 2u);
}

TEST(Shift, ZeroDeltaIsExact) {
  auto c = rope_model();
  auto w = model::init_weights(c, 11);
  auto rep = check_shift_invariance(w, c, some_tokens(10, c.vocab, 11), {0.0}, 1e-8, 0, 0);
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_EQ(rep.rows[0].max_logit_dev, 0.0);
}

TEST(Shift, IndexShiftLeavesLogitsUnchanged) {
  for (auto pe : {model::PeInit::Rope, model::PeInit::Fourier}) {
    auto c = rope_model();
    if (pe == model::PeInit::Fourier) {
      c.pe = pe;
      c.phi = model::PhiMode::Bilinear;
      c.L = 3;
      c.R = 4;
    }
    auto w = model::init_weights(c, 12);
    auto rep = check_shift_invariance(w, c, some_tokens(12, c.vocab, 12), {3.0, 17.0}, 1e-8, 0);
    EXPECT_TRUE(rep.pass());
    for (const auto& row : rep.rows) {
      if (row.protocol == "shift_ids") {
        EXPECT_LE(row.max_logit_dev, 1e-8);
        for (double g : row.layer_grid_dev) EXPECT_LE(g, 1e-8);
      } else {
        EXPECT_GT(row.max_logit_dev, 1e-6);
      }
    }
  }
}

TEST(Shift, FlattenedPositionalFeaturesAreNotShiftInvariant) {
  auto c = rope_model();
  c.mutation = model::Mutation::FlattenedPe;
  auto w = model::init_weights(c, 13);
  auto rep = check_shift_invariance(w, c, some_tokens(12, c.vocab, 13), {3.0}, 1e-8, 0, 0);
  EXPECT_FALSE(rep.pass());
}
