#include <gtest/gtest.h>

#include <set>

#include "tape/equivariance/equivariance.hpp"
#include "tape/nc1/nc1.hpp"

using namespace tape;
using namespace tape::nc1;

namespace {

WordProblemInstance inst(std::vector<int> u) { return WordProblemInstance{std::move(u)}; }

int id_of(int a, int b) {
  const auto& t = SwapTable::canonical();
  for (int id = 1; id <= 10; ++id)
    if (t.at(id).src == a && t.at(id).dst == b) return id;
  return -1;
}

// Adapts a construction layer to the harness layout E (N, 1, 1, L, R).
eq::LayerFn harness_layer(const ConstructedNet& net, int which) {
  return [net, which](const Tensor& x, const Tensor& e, const AttnMask& m) {
    const std::size_t n = e.dim(0);
    const Tensor e3 = e.reshape({n, e.dim(3), e.dim(4)});
    Nc1LayerOut o;
    switch (which) {
      case 1: o = layer1(net, x, e3, m); break;
      case 2: o = layer2(net, x, e3, m); break;
      case 3: o = layer3(net, x, e3, m); break;
      default: o = layer4(net, x, e3, m); break;
    }
    return eq::LayerOut{o.x, o.e.reshape({n, 1, 1, o.e.dim(1), o.e.dim(2)}), {}};
  };
}

}  // namespace

TEST(SwapTable, EveryPairExactlyOnce) {
  std::set<std::pair<int, int>> seen;
  for (int id = 1; id <= 10; ++id) {
    const auto s = SwapTable::canonical().at(id);
    EXPECT_LT(s.src, s.dst);
    EXPECT_GE(s.src, 1);
    EXPECT_LE(s.dst, 5);
    seen.insert({s.src, s.dst});
  }
  EXPECT_EQ(seen.size(), 10u);
  EXPECT_THROW(SwapTable::canonical().at(0), ContractError);
  EXPECT_THROW(SwapTable::canonical().at(11), ContractError);
}

TEST(SwapMatrix, OneTwoExchangesRows) {
  const Tensor s = swap_matrix(id_of(1, 2));
  const Tensor i5 = Tensor::identity(5);
  for (std::size_t c = 0; c < 5; ++c) {
    EXPECT_EQ(s(0, c), i5(1, c));
    EXPECT_EQ(s(1, c), i5(0, c));
    for (std::size_t r = 2; r < 5; ++r) EXPECT_EQ(s(r, c), i5(r, c));
  }
}

TEST(SwapMatrix, InvolutionWithNegativeDeterminant) {
  for (int id = 1; id <= 10; ++id) {
    const Tensor s = swap_matrix(id);
    EXPECT_EQ(max_abs_diff(matmul(s, s), Tensor::identity(5)), 0.0);
    EXPECT_NEAR(determinant(s), -1.0, 1e-15);
  }
}

TEST(SwapMatrix, MatchesHouseholderOfXiRow) {
  const Tensor xi = xi_table();
  for (int id = 1; id <= 10; ++id) {
    Tensor h = Tensor::identity(6);
    for (std::size_t a = 0; a < 6; ++a)
      for (std::size_t b = 0; b < 6; ++b) h(a, b) -= xi(id - 1, a) * xi(id - 1, b);
    const Tensor s = swap_matrix(id);
    for (std::size_t a = 0; a < 5; ++a)
      for (std::size_t b = 0; b < 5; ++b) EXPECT_EQ(h(a, b), s(a, b));
    EXPECT_EQ(h(5, 5), 1.0);
  }
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(xi(10, k), 0.0);
}

TEST(Oracle, BosAlone) { EXPECT_EQ(oracle_labels(inst({kBos})), std::vector<int>({1})); }

TEST(Oracle, RepeatedSwapCancels) {
  const int s = id_of(1, 2);
  EXPECT_EQ(oracle_labels(inst({kBos, s, s})), std::vector<int>({1, 0, 1}));
}

TEST(Oracle, ThreeCycleNeedsThreeSteps) {
  // (12)(13)(12)(13)(12)(13) = identity; intermediate prefixes are not.
  const int a = id_of(1, 2), b = id_of(1, 3);
  EXPECT_EQ(oracle_labels(inst({kBos, a, b, a, b, a, b})), std::vector<int>({1, 0, 0, 0, 0, 0, 1}));
}

TEST(Oracle, RejectsMalformedInstances) {
  EXPECT_THROW(oracle_labels(inst({})), ContractError);
  EXPECT_THROW(oracle_labels(inst({1, 2})), ContractError);
  EXPECT_THROW(oracle_labels(inst({kBos, kBos})), ContractError);
  EXPECT_THROW(oracle_labels(inst({kBos, 0})), ContractError);
}

TEST(Oracle, MatrixAndMapAgree) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng r(s);
    const auto li = gen_word_problem(64, r);
    EXPECT_EQ(li.labels, oracle_labels_by_map(li.instance)) << "seed " << s;
  }
}

TEST(Generator, SingleTokenIsBos) {
  Rng r(3);
  const auto li = gen_word_problem(1, r);
  EXPECT_EQ(li.instance.u, std::vector<int>({kBos}));
  EXPECT_EQ(li.labels, std::vector<int>({1}));
  EXPECT_THROW(gen_word_problem(0, r), ContractError);
}

TEST(Generator, SeededReproducibility) {
  Rng a(42), b(42);
  EXPECT_EQ(gen_word_problem(50, a).instance.u, gen_word_problem(50, b).instance.u);
}

TEST(Generator, IdsAreUniform) {
  Rng r(5);
  std::array<int, 11> hist{};
  const auto li = gen_word_problem(100001, r);
  for (std::size_t i = 1; i < li.instance.size(); ++i) hist[li.instance.u[i]]++;
  // 1e5 draws over 10 ids: sd per bin ~ 95.
  for (int id = 1; id <= 10; ++id) EXPECT_NEAR(hist[id], 10000, 500);
}

TEST(Generator, IdentityRateAtEvenAndOddLength) {
  // A product of k transpositions has parity k, so an odd count can never be
  // the identity; with an even count the walk mixes over the 60 even
  // permutations.
  const std::size_t samples = 100000;
  std::size_t hits_even = 0, hits_odd = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    Rng r(s, 17);
    hits_odd += gen_word_problem(20, r).labels.back();  // 19 transpositions
    Rng q(s, 18);
    hits_even += gen_word_problem(21, q).labels.back();  // 20 transpositions
  }
  EXPECT_EQ(hits_odd, 0u);
  const double p = 1.0 / 60.0;
  const double sd = std::sqrt(p * (1 - p) / double(samples));
  EXPECT_NEAR(double(hits_even) / double(samples), p, 4 * sd);
}

TEST(Wy, SingleRowIsExact) {
  const Tensor xi = Tensor::matrix({{0.3, -1.2, 0.7, 0.1, 2.0, -0.4}});
  EXPECT_EQ(wy_check(xi), 0.0);
}

TEST(Wy, TwoRowsMatchDirectProduct) {
  Rng r(7);
  for (int t = 0; t < 50; ++t) EXPECT_LE(wy_check(r.normal_tensor({2, 6})), 1e-12);
}

TEST(Wy, GaussianUpToThirtyTwo) {
  Rng r(8);
  for (std::size_t n = 1; n <= 32; ++n) {
    // Unit-norm rows keep each factor a reflection; raw Gaussian rows make the
    // products themselves grow like (|xi|^2 - 1)^N.
    Tensor xi = r.normal_tensor({n, 6});
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < 6; ++k) s += xi(i, k) * xi(i, k);
      for (std::size_t k = 0; k < 6; ++k) xi(i, k) *= std::sqrt(2.0 / s);
    }
    EXPECT_LE(wy_check(xi), 1e-8 * double(n)) << "n=" << n;
  }
}

TEST(Wy, InclusiveMaskBreaksTheIdentity) {
  Rng r(9);
  EXPECT_GT(wy_check(r.normal_tensor({4, 6}), WyMask::InclusiveLower), 1e-3);
}

TEST(Wy, SwapRowsGiveOraclePermutations) {
  Rng r(10);
  const auto li = gen_word_problem(32, r);
  const Tensor xi = xi_rows(li.instance);
  EXPECT_LE(wy_check(xi), 1e-10);
  const Tensor lhs = householder_prefix_products(xi);
  Tensor p = Tensor::identity(5);
  for (std::size_t i = 0; i < li.instance.size(); ++i) {
    if (li.instance.u[i] != kBos) p = matmul(p, swap_matrix(li.instance.u[i]));
    for (std::size_t a = 0; a < 5; ++a)
      for (std::size_t b = 0; b < 5; ++b) EXPECT_EQ(lhs(i, a, b), p(a, b));
    EXPECT_EQ(lhs(i, 5, 5), 1.0);
  }
}

TEST(Construction, WeightsAreDeterministic) {
  const auto a = build_construction(), b = build_construction();
  EXPECT_EQ(max_abs_diff(a.wq4, b.wq4), 0.0);
  EXPECT_EQ(max_abs_diff(a.xi, b.xi), 0.0);
  EXPECT_EQ(a.xi.dim(0), 11u);
  EXPECT_EQ(a.xi.dim(1), 6u);
}

TEST(Construction, LayerOneBosHasZeroTopRow) {
  const auto net = build_construction();
  const auto res = run_construction(net, inst({kBos, id_of(2, 4)}));
  const Tensor& e1 = res.layers[0].e;
  ASSERT_EQ(e1.dim(1), 8u);
  for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(e1(0, 0, c), 0.0);
  // Position 2 carries Xi of its token.
  EXPECT_EQ(e1(1, 0, 1), 1.0);
  EXPECT_EQ(e1(1, 0, 3), -1.0);
}

TEST(Construction, LayerShapesFollowTheRaggedL) {
  const auto net = build_construction();
  const auto res = run_construction(net, inst({kBos, 1, 2, 3}));
  const std::size_t L[4] = {8, 12, 6, 6};
  const std::size_t C[4] = {11, 12, 12, 1};
  for (int l = 0; l < 4; ++l) {
    EXPECT_EQ(res.layers[l].e.dim(1), L[l]);
    EXPECT_EQ(res.layers[l].x.dim(1), C[l]);
  }
}

TEST(Construction, LayerOneTokensAreUntouched) {
  // Identity mapping: W_V = 0 with residual, FFN with zero last layer.
  const auto net = build_construction();
  Rng r(11);
  const Tensor x = r.normal_tensor({5, 11});
  const auto o = layer1(net, x, r.normal_tensor({5, 17, 6}), AttnMask::causal(5));
  EXPECT_EQ(max_abs_diff(o.x, x), 0.0);
}

TEST(Construction, LayerThreeIsTheNeighbourhoodMean) {
  const auto net = build_construction();
  Rng r(12);
  const Tensor x = r.normal_tensor({6, 12}), e = r.normal_tensor({6, 12, 6});
  const AttnMask m = eq::sample_mask(6, r);
  const auto o = layer3(net, x, e, m);
  for (std::size_t i = 0; i < 6; ++i) {
    double cnt = 0.0, bos = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      cnt += m.m(i, j);
      bos += m.m(i, j) * x(j, 11);
    }
    EXPECT_NEAR(o.x(i, 0), x(i, 0) + bos / cnt, 1e-14);
    for (std::size_t k = 1; k < 12; ++k) EXPECT_EQ(o.x(i, k), x(i, k));
  }
}

TEST(Construction, LayerThreeGivesHouseholderProducts) {
  const auto net = build_construction();
  Rng r(13);
  const auto li = gen_word_problem(40, r);
  const auto res = run_construction(net, li.instance);
  const Tensor lhs = householder_prefix_products(xi_rows(li.instance));
  const Tensor& e3 = res.layers[2].e;
  for (std::size_t i = 0; i < li.instance.size(); ++i)
    for (std::size_t a = 0; a < 6; ++a)
      for (std::size_t b = 0; b < 6; ++b) EXPECT_NEAR(e3(i, b, a), lhs(i, a, b), 1e-10);
  // Position 1: the empty product.
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t b = 0; b < 6; ++b) EXPECT_NEAR(e3(0, a, b), a == b ? 1.0 : 0.0, 1e-15);
  // x after layer 3 carries 1/i in channel 0.
  for (std::size_t i = 0; i < 40; ++i) EXPECT_NEAR(res.layers[2].x(i, 0), 1.0 / double(i + 1), 1e-15);
}

TEST(Construction, BosLogitIsWeightedSumMinusThreshold) {
  const auto net = build_construction();
  Rng r(14);
  for (int t = 0; t < 20; ++t) {
    const auto li = gen_word_problem(30, r);
    const auto res = run_construction(net, li.instance);
    const auto sums = prefix_weighted_sums(li.instance);
    for (std::size_t i = 0; i < li.instance.size(); ++i) {
      EXPECT_NEAR(res.bos_logit[i], sums[i] - 54.5, 1e-9);
      for (std::size_t j = 1; j < li.instance.size(); ++j) EXPECT_EQ(res.layers[3].logits(i, j), 0.0);
    }
  }
}

TEST(Construction, WeightedSumPeaksOnlyAtIdentity) {
  // sum_v v*pi(v) == 55 iff pi is the identity, and at most 54 otherwise.
  std::array<int, 5> p = {1, 2, 3, 4, 5};
  int best_other = 0;
  do {
    int s = 0;
    for (int v = 0; v < 5; ++v) s += (v + 1) * p[v];
    const bool ident = p == std::array<int, 5>{1, 2, 3, 4, 5};
    if (ident) {
      EXPECT_EQ(s, 55);
    } else {
      best_other = std::max(best_other, s);
    }
  } while (std::next_permutation(p.begin(), p.end()));
  EXPECT_EQ(best_other, 54);
}

TEST(Run, BosAloneIsIdentity) {
  const auto res = run_construction(build_construction(), inst({kBos}));
  EXPECT_GT(res.scores[0], 0.0);
  EXPECT_EQ(res.decisions[0], 1);
}

TEST(Run, UnitValueGainZeroesTheBosScore) {
  ConstructionOptions o;
  o.value_gain = 1.0;
  const auto res = run_construction(build_construction(o), inst({kBos}));
  EXPECT_EQ(res.scores[0], 0.0);
}

TEST(Run, SingleSwapScoresExactlyZero) {
  const auto res = run_construction(build_construction(), inst({kBos, id_of(1, 2)}));
  EXPECT_EQ(res.scores[1], 0.0);
  EXPECT_EQ(res.decisions, std::vector<int>({1, 0}));
}

TEST(Run, ScoresLieInUnitInterval) {
  const auto net = build_construction();
  Rng r(15);
  const auto li = gen_word_problem(100, r);
  const auto res = run_construction(net, li.instance);
  for (std::size_t i = 0; i < 100; ++i) {
    EXPECT_GE(res.scores[i], 0.0);
    EXPECT_LE(res.scores[i], 1.0);
    if (!li.labels[i]) {
      EXPECT_EQ(res.scores[i], 0.0);
    }
  }
}

TEST(Run, AgreesWithOracleUpTo128) {
  const auto net = build_construction();
  for (std::uint64_t s = 0; s < 1000; ++s) {
    Rng r(s, 99);
    const std::size_t n = 1 + r.uniform_int(128);
    const auto li = gen_word_problem(n, r);
    ASSERT_EQ(run_construction(net, li.instance).decisions, li.labels) << "seed " << s << " n " << n;
  }
}

TEST(Run, MarginDecaysLikeOneOverI) {
  const auto net = build_construction();
  // Identity prefixes at every even position: swap the same pair twice.
  std::vector<int> u = {kBos};
  for (int k = 0; k < 100; ++k) {
    u.push_back(id_of(2, 5));
    u.push_back(id_of(2, 5));
  }
  const auto res = run_construction(net, inst(u));
  const double g = 1.25, ea = std::exp(0.5);
  for (std::size_t i = 0; i < u.size(); i += 2) {
    const double pos = double(i + 1);
    const double expected = g * ea / (ea + pos - 1) - 1.0 / pos;
    EXPECT_NEAR(res.pre_score[i], expected, 1e-12);
    EXPECT_GT(res.pre_score[i], 0.0);
    if (i >= 2) {
      EXPECT_LT(res.pre_score[i], res.pre_score[i - 2]);
    }
    // i * score tends to g e^{1/2} - 1 ~ 1.06.
    if (pos > 50) {
      EXPECT_GT(res.pre_score[i] * pos, 1.0);
      EXPECT_LT(res.pre_score[i] * pos, 1.1);
    }
  }
}

TEST(Run, CorruptedThresholdIsCaught) {
  const auto bad = corrupted_construction();
  Rng r(16);
  std::size_t mismatches = 0;
  for (int t = 0; t < 50; ++t) {
    const auto li = gen_word_problem(32, r);
    if (run_construction(bad, li.instance).decisions != li.labels) ++mismatches;
  }
  EXPECT_GT(mismatches, 0u);
}

TEST(Run, RejectsInvalidInstance) {
  EXPECT_THROW(run_construction(build_construction(), inst({3, 4})), ContractError);
}

TEST(Layers, EachLayerIsEquivariant) {
  const auto net = build_construction();
  for (int l = 1; l <= 4; ++l) {
    const eq::Dims d{8, ConstructedNet::kC[l - 1], 1, 1, ConstructedNet::kL[l - 1], 6};
    const auto layer = harness_layer(net, l);
    const auto p = eq::check_perm_equivariance(layer, d, 20, 1e-8, 100 + l);
    const auto o = eq::check_ortho_equivariance(layer, d, 20, 1e-8, 200 + l);
    EXPECT_TRUE(p.pass()) << "layer " << l << " " << p.to_json().dump();
    EXPECT_TRUE(o.pass()) << "layer " << l << " " << o.to_json().dump();
  }
}

TEST(Layers, RejectWrongShapes) {
  const auto net = build_construction();
  Rng r(17);
  EXPECT_THROW(layer2(net, r.normal_tensor({4, 11}), r.normal_tensor({4, 17, 6}), AttnMask::causal(4)),
               DimensionError);
}

TEST(Sweep, PerfectUpToConfiguredLength) {
  const auto net = build_construction();
  const auto rep = precision_sweep(net, doubling_lengths(8, 64), 50, 1);
  EXPECT_TRUE(rep.pass());
  EXPECT_FALSE(rep.first_failing_n().has_value());
  ASSERT_EQ(rep.rows.size(), 4u);
  for (const auto& row : rep.rows) {
    EXPECT_EQ(row.position_accuracy(), 1.0);
    EXPECT_EQ(row.max_nonidentity_score, 0.0);
    EXPECT_GT(row.min_identity_score, kDecisionEps);
  }
}

TEST(Sweep, CorruptionReportsFirstFailingLength) {
  // A lone BOS attends only to itself, so it still scores positive.
  const auto rep = precision_sweep(corrupted_construction(), {1, 8, 16}, 20, 1);
  ASSERT_TRUE(rep.first_failing_n().has_value());
  EXPECT_EQ(*rep.first_failing_n(), 8u);
  EXPECT_FALSE(rep.rows[0].has_bad);
  EXPECT_TRUE(rep.rows[1].has_bad);
}
