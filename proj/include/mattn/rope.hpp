#pragma once

// Position encodings and the kinematic momentum operator.
//
// Sequences are T x d matrices with time along rows. Rotary variants rotate
// adjacent coordinate pairs (2m, 2m+1) by position * theta_m.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "mattn/errors.hpp"

namespace mattn {

template <class Scalar>
using SeqMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

struct MultiFrequency {
  double base = 10000.0;
};
struct Monochromatic {
  double theta = 0.1;
};
struct Bandpass {
  double theta = 0.1;
  double halfwidth_fraction = 0.2;
};
struct SinusoidalAdditive {
  double base = 10000.0;
};
struct NoPE {};

using EncodingSpec = std::variant<MultiFrequency, Monochromatic, Bandpass, SinusoidalAdditive, NoPE>;

enum class Placement { PostRope, PreRope, EmbeddingSpace, None };

struct MomentumParams {
  double gamma = 0.0;
  double beta = 0.0;

  void validate() const {
    if (!(gamma >= 0)) throw ConfigError("momentum gamma must be >= 0");
    if (!(beta >= 0 && beta < 1)) throw ConfigError("momentum beta must lie in [0, 1)");
  }
};

bool is_rotary(const EncodingSpec& spec);
void validate(const EncodingSpec& spec);
std::string encoding_name(const EncodingSpec& spec);
std::string to_string(Placement p);
Placement parse_placement(const std::string& name);

/// Per-pair rotation frequencies theta_m, m = 0 .. head_dim/2 - 1.
std::vector<double> rope_freqs(const EncodingSpec& spec, std::size_t head_dim);

/// Additive sinusoidal table PE[t, 2i] = sin(t w_i), PE[t, 2i+1] = cos(t w_i),
/// w_i = base^{-2i/d}.
Eigen::MatrixXd sinusoidal_table(std::size_t length, std::size_t d, double base);

/// Rotates each adjacent pair of row t by sign * positions[t] * freqs[m].
template <class Derived>
void rotate_pairs_inplace(Eigen::MatrixBase<Derived>& x, const std::vector<double>& freqs,
                          const std::vector<long>& positions, double sign = 1.0) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index pairs = static_cast<Eigen::Index>(freqs.size());
  if (x.cols() != 2 * pairs) throw DimensionError("rotary width does not match 2 x number of frequencies");
  if (static_cast<Eigen::Index>(positions.size()) != x.rows()) throw DimensionError("one position per row required");
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    for (Eigen::Index m = 0; m < pairs; ++m) {
      const double angle = sign * static_cast<double>(positions[static_cast<std::size_t>(t)]) *
                           freqs[static_cast<std::size_t>(m)];
      const Scalar c = Scalar(std::cos(angle)), s = Scalar(std::sin(angle));
      const Scalar a = x(t, 2 * m), b = x(t, 2 * m + 1);
      x(t, 2 * m) = c * a - s * b;
      x(t, 2 * m + 1) = s * a + c * b;
    }
  }
}

inline std::vector<long> arange_positions(Eigen::Index n) {
  std::vector<long> p(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = static_cast<long>(i);
  return p;
}

template <class Scalar>
SeqMatrix<Scalar> apply_encoding(const SeqMatrix<Scalar>& x, const std::vector<long>& positions,
                                 const EncodingSpec& spec) {
  SeqMatrix<Scalar> out = x;
  if (std::holds_alternative<NoPE>(spec)) return out;
  if (const auto* s = std::get_if<SinusoidalAdditive>(&spec)) {
    if (x.cols() % 2 != 0) throw DimensionError("sinusoidal encoding needs an even width");
    long max_pos = 0;
    for (long p : positions) max_pos = std::max(max_pos, p);
    const Eigen::MatrixXd pe = sinusoidal_table(static_cast<std::size_t>(max_pos + 1),
                                                static_cast<std::size_t>(x.cols()), s->base);
    for (Eigen::Index t = 0; t < x.rows(); ++t) out.row(t) += pe.row(positions[static_cast<std::size_t>(t)]).cast<Scalar>();
    return out;
  }
  rotate_pairs_inplace(out, rope_freqs(spec, static_cast<std::size_t>(x.cols())), positions, 1.0);
  return out;
}

/// p_0 = 0, p_t = x_t - x_{t-1}.
template <class Derived>
SeqMatrix<typename Derived::Scalar> kinematic_momentum(const Eigen::MatrixBase<Derived>& seq) {
  SeqMatrix<typename Derived::Scalar> p = SeqMatrix<typename Derived::Scalar>::Zero(seq.rows(), seq.cols());
  if (seq.rows() > 1) p.bottomRows(seq.rows() - 1) = seq.bottomRows(seq.rows() - 1) - seq.topRows(seq.rows() - 1);
  return p;
}

/// m_t = beta m_{t-1} + (1 - beta) p_t with m_{-1} = 0, i.e. the closed form
/// (1 - beta) sum_k beta^{t-k} p_k. beta = 0 returns p.
template <class Derived>
SeqMatrix<typename Derived::Scalar> ema_momentum(const Eigen::MatrixBase<Derived>& p, double beta) {
  using Scalar = typename Derived::Scalar;
  SeqMatrix<Scalar> m = p;
  if (beta == 0.0) return m;
  const Scalar b(beta), a(1.0 - beta);
  m.row(0) = a * p.row(0);
  for (Eigen::Index t = 1; t < p.rows(); ++t) m.row(t) = b * m.row(t - 1) + a * p.row(t);
  return m;
}

/// x + gamma * ema(kinematic_momentum(x)). Applied to query/key streams only.
template <class Derived>
SeqMatrix<typename Derived::Scalar> augment(const Eigen::MatrixBase<Derived>& x, const MomentumParams& params) {
  using Scalar = typename Derived::Scalar;
  SeqMatrix<Scalar> out = x;
  if (params.gamma == 0.0 || x.rows() == 0) return out;
  out += Scalar(params.gamma) * ema_momentum(kinematic_momentum(x), params.beta);
  return out;
}

/// Adjoint of `augment` (as a linear map along time) applied to `g`.
template <class Derived>
SeqMatrix<typename Derived::Scalar> augment_adjoint(const Eigen::MatrixBase<Derived>& g,
                                                    const MomentumParams& params) {
  using Scalar = typename Derived::Scalar;
  SeqMatrix<Scalar> out = g;
  const Eigen::Index T = g.rows();
  if (params.gamma == 0.0 || T == 0) return out;
  // E^T: anti-causal recursion.
  SeqMatrix<Scalar> a = g;
  if (params.beta != 0.0) {
    const Scalar b(params.beta), one_minus(1.0 - params.beta);
    a.row(T - 1) = g.row(T - 1);
    for (Eigen::Index t = T - 2; t >= 0; --t) a.row(t) = g.row(t) + b * a.row(t + 1);
    a *= one_minus;
  }
  // D^T: (D^T a)_t = a_t [t >= 1] - a_{t+1} [t + 1 < T].
  const Scalar gm(params.gamma);
  for (Eigen::Index t = 0; t < T; ++t) {
    if (t >= 1) out.row(t) += gm * a.row(t);
    if (t + 1 < T) out.row(t) -= gm * a.row(t + 1);
  }
  return out;
}

template <class Scalar>
struct PlacedQK {
  SeqMatrix<Scalar> q;
  SeqMatrix<Scalar> k;
};

/// Position-encodes and momentum-augments projected queries and keys in the
/// order dictated by `placement`. PostRope: encode, then augment. PreRope:
/// augment, then encode. None: encode only. EmbeddingSpace is an
/// embedding-stage switch and is rejected here.
template <class Scalar>
PlacedQK<Scalar> placed_qk(const SeqMatrix<Scalar>& raw_q, const SeqMatrix<Scalar>& raw_k,
                           const std::vector<long>& positions, const EncodingSpec& spec, Placement placement,
                           const MomentumParams& params) {
  switch (placement) {
    case Placement::PostRope:
      return {augment(apply_encoding(raw_q, positions, spec), params),
              augment(apply_encoding(raw_k, positions, spec), params)};
    case Placement::PreRope:
      return {apply_encoding<Scalar>(augment(raw_q, params), positions, spec),
              apply_encoding<Scalar>(augment(raw_k, params), positions, spec)};
    case Placement::None:
      return {apply_encoding(raw_q, positions, spec), apply_encoding(raw_k, positions, spec)};
    case Placement::EmbeddingSpace:
      break;
  }
  throw ContractError("embedding-space momentum is applied before the projections, not to Q/K");
}

template <class Scalar>
struct FourTerms {
  SeqMatrix<Scalar> t1, t2, t3, t4, score;
};

/// S = (Q + g P_Q)(K + g P_K)^T split into Q K^T, P_Q K^T, Q P_K^T, P_Q P_K^T.
template <class Scalar>
FourTerms<Scalar> four_term_decompose(const SeqMatrix<Scalar>& q, const SeqMatrix<Scalar>& k,
                                      const SeqMatrix<Scalar>& pq, const SeqMatrix<Scalar>& pk, Scalar gamma) {
  if (q.cols() != k.cols() || pq.rows() != q.rows() || pq.cols() != q.cols() || pk.rows() != k.rows() ||
      pk.cols() != k.cols()) {
    throw DimensionError("four_term_decompose: shapes disagree");
  }
  FourTerms<Scalar> r;
  r.t1 = q * k.transpose();
  r.t2 = pq * k.transpose();
  r.t3 = q * pk.transpose();
  r.t4 = pq * pk.transpose();
  r.score = r.t1 + gamma * (r.t2 + r.t3) + gamma * gamma * r.t4;
  return r;
}

}  // namespace mattn
