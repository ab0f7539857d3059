#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "mattn/filters.hpp"
#include "mattn/rope.hpp"
#include "mattn/selfcheck.hpp"

using namespace mattn;
using namespace mattn::filters;

namespace {

constexpr double kPi = std::numbers::pi;

Eigen::VectorXd sinusoid(double w, int n, double phase = 0.4) {
  Eigen::VectorXd x(n);
  for (int t = 0; t < n; ++t) x(t) = std::cos(w * t + phase);
  return x;
}

}  // namespace

TEST(DiffGain, Values) {
  EXPECT_NEAR(diff_gain(0.0), 0.0, 1e-15);
  EXPECT_NEAR(diff_gain(kPi), 2.0, 1e-15);
  EXPECT_NEAR(diff_gain(kPi / 2), std::sqrt(2.0), 1e-15);
}

TEST(MomentumGain, Values) {
  for (double g : {0.0, 0.3, 4.0}) EXPECT_NEAR(momentum_gain(0.0, g), 1.0, 1e-15);
  EXPECT_NEAR(momentum_gain(kPi, 0.2), 1.4, 1e-12);
  EXPECT_NEAR(momentum_gain(kPi, 1.0), 3.0, 1e-12);
  // |(1 + g) - g e^{-jw}| by complex arithmetic.
  for (double w : {0.1, 1.0, 2.5}) {
    const std::complex<double> h = 1.0 + 0.7 - 0.7 * std::polar(1.0, -w);
    EXPECT_NEAR(momentum_gain(w, 0.7), std::abs(h), 1e-13);
  }
}

TEST(EmaGain, Values) {
  EXPECT_NEAR(ema_gain(0.0, 0.7), 1.0, 1e-15);
  EXPECT_NEAR(ema_gain(kPi, 0.9), 0.1 / 1.9, 1e-12);
  EXPECT_NEAR(ema_gain(kPi, 0.5), 1.0 / 3.0, 1e-12);
}

TEST(EmaNyquist, PublishedTable) {
  EXPECT_NEAR(ema_nyquist(0.0), 1.0, 1e-15);
  EXPECT_NEAR(ema_nyquist(0.9), 0.053, 5e-4);
  EXPECT_NEAR(ema_nyquist(0.3), 0.538, 5e-4);
  EXPECT_NEAR(ema_nyquist(0.5), 0.333, 5e-4);
}

TEST(CascadeGain, ReducesAndMatchesComplexOracle) {
  for (double w : {0.0, 0.4, 1.9, kPi}) EXPECT_NEAR(cascade_gain(w, 0.6, 0.0), momentum_gain(w, 0.6), 1e-13);
  for (double g : {0.2, 1.0}) EXPECT_NEAR(cascade_gain(0.0, g, 0.5), 1.0, 1e-13);
  // 1 + g * H_ema(w) * H_diff(w) with H_ema = (1 - b) / (1 - b e^{-jw}).
  const double w = kPi, g = 0.5, b = 0.9;
  const std::complex<double> z = std::polar(1.0, -w);
  const std::complex<double> h = 1.0 + g * ((1 - b) / (1.0 - b * z)) * (1.0 - z);
  EXPECT_NEAR(cascade_gain(w, g, b), std::abs(h), 1e-12);
  EXPECT_NEAR(cascade_gain(w, g, b), 1.0 + 0.5 * (0.1 / 1.9) * 2, 1e-12);
}

TEST(Rotation, Properties) {
  EXPECT_TRUE(rotation(0.0).isApprox(Eigen::Matrix2d::Identity(), 1e-15));
  Eigen::Matrix2d quarter;
  quarter << 0, -1, 1, 0;
  EXPECT_LT((rotation(kPi / 2) - quarter).norm(), 1e-15);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-4, 4);
  for (int i = 0; i < 20; ++i) {
    const double a = u(rng), b = u(rng);
    EXPECT_LT((rotation(a) * rotation(b) - rotation(a + b)).norm(), 1e-12);
  }
}

TEST(RotationDiffNorm, Values) {
  EXPECT_NEAR(rotation_diff_norm(0.0), 0.0, 1e-15);
  EXPECT_NEAR(rotation_diff_norm(kPi), 2.0, 1e-12);
  EXPECT_NEAR(rotation_diff_norm(kPi / 3), 1.0, 1e-12);
  // Spectral norm from singular values of R - I.
  const Eigen::Matrix2d d = rotation(1.3) - Eigen::Matrix2d::Identity();
  EXPECT_NEAR(rotation_diff_norm(1.3), Eigen::JacobiSVD<Eigen::Matrix2d>(d).singularValues()(0), 1e-12);
}

TEST(MeasureGain, Trivial) {
  const Eigen::VectorXd x = sinusoid(0.9, 64);
  EXPECT_NEAR(measure_gain_dft(x, x, 0.9), 1.0, 1e-12);
  EXPECT_NEAR(measure_gain_dft(x, Eigen::VectorXd(3 * x), 0.9), 3.0, 1e-12);
  EXPECT_THROW(measure_gain_dft(Eigen::VectorXd::Zero(64), x, 0.9), UndefinedGainError);
}

TEST(MeasureGain, FirstDifferenceMatchesDiffGain) {
  for (int i = 1; i <= 32; ++i) {
    const double w = kPi * i / 32;
    const Eigen::VectorXd x = sinusoid(w, 100, i == 32 ? 0.0 : 0.4);
    const Eigen::VectorXd p = kinematic_momentum(x);
    EXPECT_NEAR(measure_gain_dft(x, p, w, 1), diff_gain(w), 1e-9) << "omega " << w;
  }
}

TEST(DftMagnitude, UnitImpulse) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(8);
  x(0) = 1;
  for (double w : {0.0, 1.0, kPi}) EXPECT_NEAR(dft_magnitude(x, w), 1.0, 1e-15);
}

TEST(ShearChecks, Residuals) {
  const auto zero = shear_checks(0.0);
  EXPECT_EQ(zero.det_residual, 0.0);
  EXPECT_EQ(zero.symplectic_residual, 0.0);
  EXPECT_LT(shear_checks(0.5).det_residual, 1e-15);
  EXPECT_LT(shear_checks(0.5).symplectic_residual, 1e-15);
  // Direct arithmetic: det [[1, g], [0, 1]] = 1 and M^T J M = J.
  EXPECT_LT(shear_checks(10.0).det_residual, 1e-12);
  EXPECT_LT(shear_checks(10.0).symplectic_residual, 1e-12);
}

TEST(FrequencyGrid, Uniform) {
  const auto g = FrequencyGrid::uniform(65);
  ASSERT_EQ(g.omegas.size(), 65u);
  EXPECT_EQ(g.omegas.front(), 0.0);
  EXPECT_EQ(g.omegas.back(), kPi);
}

TEST(FilterParams, Validation) {
  EXPECT_THROW((FilterParams{-1.0, 0.0, 1.0}.validate()), ConfigError);
  EXPECT_THROW((FilterParams{0.5, 1.0, 1.0}.validate()), ConfigError);
  EXPECT_THROW((FilterParams{0.5, 0.0, 0.0}.validate()), ConfigError);
  EXPECT_NO_THROW((FilterParams{0.5, 0.9, kPi}.validate()));
}

TEST(SelfCheck, AllPass) {
  for (const auto& row : filters_selfcheck()) EXPECT_TRUE(row.pass) << row.name << " " << row.error;
}
