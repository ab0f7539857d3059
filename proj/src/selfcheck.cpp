#include "mattn/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mattn/filters.hpp"
#include "mattn/rope.hpp"

namespace mattn {

namespace {

CheckRow row(std::string name, double error, double tol) { return {std::move(name), error, tol, error < tol}; }

}  // namespace

std::vector<CheckRow> filters_selfcheck() {
  using namespace filters;
  std::vector<CheckRow> rows;
  constexpr double pi = std::numbers::pi;

  // Closed-form momentum gain against the measured response of the operator.
  double worst = 0;
  const auto grid = FrequencyGrid::uniform(65);
  for (double gamma : {0.0, 0.2, 0.5, 1.0}) {
    for (double w : grid.omegas) {
      const Eigen::Index n = 256;
      Eigen::VectorXd x(n);
      for (Eigen::Index t = 0; t < n; ++t) x(t) = w == pi ? std::cos(w * t) : std::sin(w * t) + (w == 0 ? 1 : 0);
      const Eigen::VectorXd y = augment(x, MomentumParams{gamma, 0.0});
      worst = std::max(worst, std::abs(momentum_gain(w, gamma) - measure_gain_dft(x, y, w, 1)));
    }
  }
  rows.push_back(row("momentum_gain vs measured operator", worst, 1e-9));

  // EMA Nyquist attenuation against a directly evaluated transfer function.
  worst = 0;
  for (int i = 0; i <= 9; ++i) {
    const double beta = 0.1 * i;
    worst = std::max(worst, std::abs(ema_nyquist(beta) - ema_gain(pi, beta)));
  }
  rows.push_back(row("ema_nyquist vs ema_gain(pi)", worst, 1e-12));

  // Pre/post-RoPE momentum discrepancy per pair.
  worst = 0;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  for (double theta : {0.1, 0.5, 1.0, pi / 2, 3.0}) {
    const EncodingSpec enc = Monochromatic{theta};
    for (int s = 0; s < 20; ++s) {
      const Eigen::Index T = 12, d = 4;
      Eigen::MatrixXd q(T, d);
      for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = normal(rng);
      const auto pos = arange_positions(T);
      const MomentumParams mp{1.0, 0.0};
      const auto post = placed_qk<double>(q, q, pos, enc, Placement::PostRope, mp).q;
      const auto pre = placed_qk<double>(q, q, pos, enc, Placement::PreRope, mp).q;
      for (Eigen::Index t = 1; t < T; ++t) {
        for (Eigen::Index p = 0; p < d; p += 2) {
          const double got = (post.block(t, p, 1, 2) - pre.block(t, p, 1, 2)).norm();
          const double want = 2 * std::sin(theta / 2) * q.block(t - 1, p, 1, 2).norm();
          worst = std::max(worst, std::abs(got - want) / want);
        }
      }
    }
  }
  rows.push_back(row("Coriolis discrepancy 2 sin(theta/2)|x|", worst, 1e-9));

  worst = 0;
  for (double gamma : {0.0, 0.15, 0.5, 2.0, 10.0}) {
    const auto r = shear_checks(gamma);
    worst = std::max({worst, r.det_residual, r.symplectic_residual});
  }
  rows.push_back(row("shear det and symplectic residuals", worst, 1e-12));

  worst = 0;
  for (double theta : {0.1, 1.0, 2.0, pi}) {
    worst = std::max(worst, std::abs(rotation_diff_norm(theta) - 2 * std::sin(theta / 2)));
  }
  rows.push_back(row("||R(theta) - I|| = 2 sin(theta/2)", worst, 1e-12));

  worst = 0;
  for (double w : grid.omegas) {
    worst = std::max(worst, std::abs(cascade_gain(w, 0.7, 0.0) - momentum_gain(w, 0.7)));
  }
  rows.push_back(row("cascade_gain(beta = 0) = momentum_gain", worst, 1e-12));
  return rows;
}

}  // namespace mattn
