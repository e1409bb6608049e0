#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "tape/posenc/posenc.hpp"

using namespace tape;
using namespace tape::pe;

namespace {

// Direct 2x2 rotation [[cos a, -sin a], [sin a, cos a]].
Tensor rotation(double a) { return Tensor::matrix({{std::cos(a), -std::sin(a)}, {std::sin(a), std::cos(a)}}); }

Tensor block(const Tensor& t, std::size_t m) {
  const std::size_t r = t.dim(1), c = t.dim(2);
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = t(m, i, j);
  return out;
}

double max_offdiag_identity_error(const Tensor& t) {
  double e = 0.0;
  for (std::size_t m = 0; m < t.dim(0); ++m)
    e = std::max(e, max_abs_diff(block(t, m), Tensor::identity(t.dim(1))));
  return e;
}

}  // namespace

TEST(RopeSchedule, MagnitudesStrictlyDecreaseAndNonzero) {
  for (double sign : {1.0, -1.0}) {
    auto s = RopeSchedule::standard(16, 10000.0, sign);
    ASSERT_EQ(s.thetas.size(), 16u);
    for (std::size_t m = 0; m < 16; ++m) {
      EXPECT_NE(s.thetas[m], 0.0);
      EXPECT_EQ(std::signbit(s.thetas[m]), sign < 0);
      if (m) {
        EXPECT_LT(std::abs(s.thetas[m]), std::abs(s.thetas[m - 1]));
      }
    }
    EXPECT_EQ(std::abs(s.thetas[0]), 1.0);
  }
  EXPECT_THROW(RopeSchedule::standard(4, 10000.0, 0.5), ConfigError);
}

TEST(RopeInit, PositionZeroIsIdentity) {
  auto e = rope_init({0.0}, 3, RopeSchedule::standard(4));
  for (std::size_t h = 0; h < 3; ++h) EXPECT_EQ(max_offdiag_identity_error(e.slice(0, h)), 0.0);
}

TEST(RopeInit, SlicesAreRotationsSharedAcrossHeads) {
  auto s = RopeSchedule::standard(8);
  auto e = rope_init(arange_positions(20), 2, s);
  for (std::size_t i = 0; i < 20; ++i) {
    Tensor sl = e.slice(i, 0);
    EXPECT_EQ(sl, e.slice(i, 1));
    EXPECT_LE(max_offdiag_identity_error(bmm(sl, sl, false, true)), 1e-12);
    for (std::size_t m = 0; m < 8; ++m)
      EXPECT_LE(max_abs_diff(block(sl, m), rotation(s.thetas[m] * double(i))), 1e-15);
  }
}

TEST(RopeInit, GramIsRotationByAngleDifference) {
  auto s = RopeSchedule::standard(8);
  auto e = rope_init({0, 1, 3, 5, 11, 40}, 1, s);
  const std::vector<double> pos = {0, 1, 3, 5, 11, 40};
  for (std::size_t i = 0; i < pos.size(); ++i)
    for (std::size_t j = 0; j < pos.size(); ++j) {
      Tensor g = gram(e.slice(i), e.slice(j));
      for (std::size_t m = 0; m < 8; ++m)
        EXPECT_LE(max_abs_diff(block(g, m), rotation(s.thetas[m] * (pos[i] - pos[j]))), 1e-12);
    }
}

TEST(Gram, ThreeAndOneGiveRotationByTwoTheta) {
  auto s = RopeSchedule::standard(4);
  auto e = rope_init(arange_positions(4), 1, s);
  Tensor g = gram(e.slice(3), e.slice(1));
  for (std::size_t m = 0; m < 4; ++m) EXPECT_LE(max_abs_diff(block(g, m), rotation(2.0 * s.thetas[m])), 1e-12);
}

TEST(Gram, IdentityForOrthonormalRows) {
  Rng r(1);
  Tensor q = random_orthogonal(4, r);
  Tensor e({2, 3, 4});
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t l = 0; l < 3; ++l)
      for (std::size_t c = 0; c < 4; ++c) e(m, l, c) = q(l, c);
  EXPECT_LE(max_offdiag_identity_error(gram(e, e)), 1e-12);
}

TEST(Gram, InvariantUnderCommonOrthogonalMap) {
  Rng r(2);
  for (int t = 0; t < 100; ++t) {
    Tensor a = r.normal_tensor({3, 2, 5}), b = r.normal_tensor({3, 2, 5});
    Tensor o = random_orthogonal(5, r);
    EXPECT_LE(max_abs_diff(gram(right_multiply_last(a, o), right_multiply_last(b, o)), gram(a, b)), 1e-12);
  }
}

TEST(Gram, ShapeMismatchIsError) {
  EXPECT_THROW(gram(Tensor({2, 2, 2}), Tensor({2, 3, 2})), DimensionError);
}

TEST(FourierInit, ZeroWeightsGiveZeroTensor) {
  Rng r(3);
  auto s = FourierSchedule::sample(2, 3, 4, r);
  s.weights = Tensor::zeros(s.weights.shape());
  auto e = fourier_init(arange_positions(5), 2, s);
  EXPECT_EQ(e.values.max_abs(), 0.0);
}

TEST(FourierInit, ZeroFrequencyUnitWeight) {
  FourierSchedule s;
  s.freqs = Tensor::zeros({1, 3});
  s.weights = Tensor::ones({1, 1, 3});
  auto e = fourier_init({4.0, 9.0}, 1, s);
  const double k = std::sqrt(2.0 / 6.0);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_DOUBLE_EQ(e(i, 0, 0, 0, c), c % 2 == 0 ? k : 0.0);
}

TEST(FourierInit, OddRIsShapeError) {
  Rng r(4);
  EXPECT_THROW(FourierSchedule::sample(2, 2, 3, r), DimensionError);
}

TEST(FourierInit, DeterministicPerSeed) {
  Rng a(9), b(9);
  auto ea = fourier_init(arange_positions(6), 2, FourierSchedule::sample(3, 2, 4, a));
  auto eb = fourier_init(arange_positions(6), 2, FourierSchedule::sample(3, 2, 4, b));
  EXPECT_EQ(ea.values, eb.values);
}

TEST(PhaseShift, ZeroDeltaIsIdentity) {
  Rng r(5);
  EXPECT_EQ(max_offdiag_identity_error(phase_shift(RopeSchedule::standard(6), 0.0)), 0.0);
  EXPECT_EQ(max_offdiag_identity_error(phase_shift(FourierSchedule::sample(3, 2, 6, r), 0.0)), 0.0);
}

TEST(PhaseShift, RopeUnitShiftIsRotationByTheta) {
  auto s = RopeSchedule::standard(6);
  Tensor o = phase_shift(s, 1.0);
  for (std::size_t m = 0; m < 6; ++m) EXPECT_LE(max_abs_diff(block(o, m), rotation(s.thetas[m])), 1e-15);
}

TEST(PhaseShift, OrthogonalForBothSchedules) {
  Rng r(6);
  for (double d : {0.5, 1.0, 7.0, 100.0, -3.25}) {
    for (const Schedule& s : {Schedule(RopeSchedule::standard(5)), Schedule(FourierSchedule::sample(4, 3, 8, r))}) {
      Tensor o = phase_shift(s, d);
      EXPECT_LE(max_offdiag_identity_error(bmm(o, o, true, false)), 1e-12);
    }
  }
}

TEST(PhaseShift, NoClosedFormIsContractError) {
  EXPECT_THROW(phase_shift(Schedule{}, 1.0), ContractError);
}

// Shifting positions by delta equals right-multiplying by the phase shift.
TEST(PhaseShift, ShiftedInitEqualsRotatedInit) {
  Rng r(7);
  const auto pos = arange_positions(32);
  for (double d : {1.0, 7.0, 100.0, 0.37}) {
    std::vector<double> shifted = pos;
    for (double& p : shifted) p += d;
    auto rope = RopeSchedule::standard(8, 10000.0, -1.0);
    EXPECT_LE(max_abs_diff(rope_init(shifted, 2, rope).values,
                           apply_blockwise(rope_init(pos, 2, rope), phase_shift(rope, d)).values),
              1e-10);
    auto ff = FourierSchedule::sample(4, 3, 6, r);
    EXPECT_LE(max_abs_diff(fourier_init(shifted, 2, ff).values,
                           apply_blockwise(fourier_init(pos, 2, ff), phase_shift(ff, d)).values),
              1e-10);
  }
}

TEST(DotProductGrid, SingleToken) {
  auto e = rope_init({0.0}, 1, RopeSchedule::standard(3));
  Tensor g = pe_dot_product_grid(e);
  EXPECT_EQ(g.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(g(0, 0), 2.0);
}

TEST(DotProductGrid, RopeGridIsToeplitzAndSymmetric) {
  auto s = RopeSchedule::standard(8);
  auto e = rope_init(arange_positions(24), 2, s);
  Tensor g = pe_dot_product_grid(e);
  for (std::size_t i = 0; i < 24; ++i)
    for (std::size_t j = 0; j < 24; ++j) {
      const std::size_t lo = std::min(i, j);
      EXPECT_NEAR(g(i, j), g(i - lo, j - lo), 1e-10);
      EXPECT_NEAR(g(i, j), g(j, i), 1e-12);
      // Oracle: mean over m of 2 cos(theta_m (i - j)).
      double ref = 0.0;
      for (double th : s.thetas) ref += 2.0 * std::cos(th * (double(i) - double(j)));
      EXPECT_NEAR(g(i, j), ref / 8.0, 1e-12);
    }
}

TEST(DotProductGrid, CsvHasPositionHeaders) {
  auto e = rope_init({2.0, 5.0}, 1, RopeSchedule::standard(1));
  std::ostringstream os;
  write_pe_dot_products(os, pe_dot_product_grid(e), {2.0, 5.0}, {"layer=1"});
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "# layer=1");
  std::getline(is, line);
  EXPECT_EQ(line, "pos,2,5");
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 4), "2,2,");
}

TEST(DotProductGrid, UnwritablePathIsFileError) {
  auto e = rope_init({0.0}, 1, RopeSchedule::standard(1));
  EXPECT_THROW(export_pe_dot_products(e, {0.0}, "/nonexistent-dir/x.csv"), FileError);
}
