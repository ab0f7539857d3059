#pragma once

// Closed-form frequency responses of the sequence operators used by
// momentum attention, and an empirical single-frequency gain estimator that
// serves as their independent check.
//
// Conventions: omega is the normalized angular frequency in [0, pi]; a
// sequence operator acts along the time axis (rows of a T x d matrix).

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "mattn/errors.hpp"

namespace mattn::filters {

template <class Scalar>
using Rotation2 = Eigen::Matrix<Scalar, 2, 2>;

struct FrequencyGrid {
  std::vector<double> omegas;

  /// n points evenly spaced on [0, pi], endpoints included.
  static FrequencyGrid uniform(std::size_t n) {
    FrequencyGrid g;
    if (n == 1) {
      g.omegas = {0.0};
      return g;
    }
    g.omegas.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      g.omegas[i] = std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    return g;
  }
};

struct FilterParams {
  double gamma = 0.0;
  double beta = 0.0;
  double theta = 1.0;

  void validate() const {
    if (!(gamma >= 0)) throw ConfigError("gamma must be >= 0");
    if (!(beta >= 0 && beta < 1)) throw ConfigError("beta must lie in [0, 1)");
    if (!(theta > 0 && theta <= std::numbers::pi)) throw ConfigError("theta must lie in (0, pi]");
  }
};

/// |1 - e^{-j omega}|: the backward difference.
template <class Scalar>
Scalar diff_gain(Scalar omega) {
  using std::abs;
  using std::sin;
  return Scalar(2) * abs(sin(omega / Scalar(2)));
}

/// |1 + gamma (1 - e^{-j omega})| of x_t + gamma (x_t - x_{t-1}).
template <class Scalar>
Scalar momentum_gain(Scalar omega, Scalar gamma) {
  using std::sin;
  using std::sqrt;
  const Scalar s = sin(omega / Scalar(2));
  return sqrt(Scalar(1) + Scalar(4) * gamma * (Scalar(1) + gamma) * s * s);
}

/// Magnitude of (1 - beta) / (1 - beta e^{-j omega}).
template <class Scalar>
Scalar ema_gain(Scalar omega, Scalar beta) {
  using std::cos;
  using std::sqrt;
  return (Scalar(1) - beta) / sqrt(Scalar(1) - Scalar(2) * beta * cos(omega) + beta * beta);
}

template <class Scalar>
Scalar ema_nyquist(Scalar beta) {
  return (Scalar(1) - beta) / (Scalar(1) + beta);
}

/// |1 + gamma H_ema(omega) H_diff(omega)|: augmentation by EMA-smoothed
/// momentum. Band-shaped for beta > 0.
template <class Scalar>
Scalar cascade_gain(Scalar omega, Scalar gamma, Scalar beta) {
  using C = std::complex<Scalar>;
  const C z_inv = std::polar(Scalar(1), -omega);
  const C h_diff = C(1) - z_inv;
  const C h_ema = C(Scalar(1) - beta) / (C(1) - beta * z_inv);
  return std::abs(C(1) + gamma * h_ema * h_diff);
}

template <class Scalar>
Rotation2<Scalar> rotation(Scalar theta) {
  using std::cos;
  using std::sin;
  Rotation2<Scalar> r;
  r << cos(theta), -sin(theta), sin(theta), cos(theta);
  return r;
}

/// Largest singular value of a 2x2 matrix in closed form.
template <class Scalar>
Scalar spectral_norm_2x2(const Rotation2<Scalar>& m) {
  using std::sqrt;
  const Scalar e = (m(0, 0) + m(1, 1)) / Scalar(2);
  const Scalar f = (m(0, 0) - m(1, 1)) / Scalar(2);
  const Scalar g = (m(1, 0) + m(0, 1)) / Scalar(2);
  const Scalar h = (m(1, 0) - m(0, 1)) / Scalar(2);
  return sqrt(e * e + h * h) + sqrt(f * f + g * g);
}

/// ||I - R(-theta)||_2, the per-step rotational jitter of a rotary frame.
template <class Scalar>
Scalar rotation_diff_norm(Scalar theta) {
  return spectral_norm_2x2<Scalar>(Rotation2<Scalar>::Identity() - rotation<Scalar>(-theta));
}

/// Amplitude of the omega component of `seq` over samples [skip, T), by
/// least-squares projection onto {cos(omega t), sin(omega t)} with t the
/// absolute sample index. This is the single-bin inner product with
/// e^{-j omega t} corrected for the finite window, so a pure sinusoid at any
/// omega is measured exactly. omega == 0 returns |mean|.
template <class Derived>
typename Derived::Scalar sinusoid_amplitude(const Eigen::MatrixBase<Derived>& seq, typename Derived::Scalar omega,
                                            Eigen::Index skip = 0) {
  using Scalar = typename Derived::Scalar;
  using std::abs;
  using std::cos;
  using std::sin;
  using std::sqrt;
  const Eigen::Index n = seq.size() - skip;
  if (n < 3) throw DimensionError("sinusoid_amplitude needs at least 3 samples");
  if (omega == Scalar(0)) {
    Scalar m = 0;
    for (Eigen::Index t = skip; t < seq.size(); ++t) m += seq(t);
    return abs(m / Scalar(n));
  }
  Scalar cc = 0, ss = 0, cs = 0, yc = 0, ys = 0;
  for (Eigen::Index t = skip; t < seq.size(); ++t) {
    const Scalar c = cos(omega * Scalar(t));
    const Scalar s = sin(omega * Scalar(t));
    cc += c * c;
    ss += s * s;
    cs += c * s;
    yc += seq(t) * c;
    ys += seq(t) * s;
  }
  const Scalar det = cc * ss - cs * cs;
  // Near omega = pi the sine column vanishes and the 2x2 system is singular;
  // only the cosine (alternating) component is observable there.
  if (det <= Scalar(1e-9) * (cc + ss) * (cc + ss)) return abs(yc / cc);
  const Scalar a = (ss * yc - cs * ys) / det;
  const Scalar b = (cc * ys - cs * yc) / det;
  return sqrt(a * a + b * b);
}

/// Ratio of the omega-component amplitudes of output to input.
template <class DerivedIn, class DerivedOut>
typename DerivedIn::Scalar measure_gain_dft(const Eigen::MatrixBase<DerivedIn>& input,
                                            const Eigen::MatrixBase<DerivedOut>& output,
                                            typename DerivedIn::Scalar omega, Eigen::Index skip = 0) {
  using Scalar = typename DerivedIn::Scalar;
  if (input.size() != output.size()) throw DimensionError("measure_gain_dft: sequences differ in length");
  const Scalar a_in = sinusoid_amplitude(input, omega, skip);
  if (a_in < Scalar(1e-12)) throw UndefinedGainError("input has no energy at the probed frequency");
  return sinusoid_amplitude(output, omega, skip) / a_in;
}

/// Single-bin DFT magnitude |sum_t x_t e^{-j omega t}| (no window
/// correction). Used for spectra of attention rows.
template <class Derived>
typename Derived::Scalar dft_magnitude(const Eigen::MatrixBase<Derived>& seq, typename Derived::Scalar omega) {
  using Scalar = typename Derived::Scalar;
  std::complex<Scalar> acc(0);
  for (Eigen::Index t = 0; t < seq.size(); ++t) acc += seq(t) * std::polar(Scalar(1), -omega * Scalar(t));
  return std::abs(acc);
}

struct ShearResiduals {
  double det_residual = 0;
  double symplectic_residual = 0;
};

/// Residuals of the linear shear M = [[1, gamma], [0, 1]]: |det M - 1| and
/// ||M^T Omega M - Omega||_F with Omega the canonical symplectic form.
template <class Scalar = double>
ShearResiduals shear_checks(Scalar gamma) {
  Eigen::Matrix<Scalar, 2, 2> m;
  m << Scalar(1), gamma, Scalar(0), Scalar(1);
  Eigen::Matrix<Scalar, 2, 2> omega;
  omega << Scalar(0), Scalar(1), Scalar(-1), Scalar(0);
  using std::abs;
  return {static_cast<double>(abs(m.determinant() - Scalar(1))),
          static_cast<double>((m.transpose() * omega * m - omega).norm())};
}

}  // namespace mattn::filters
