#include "mattn/forensics.hpp"

#include <cmath>
#include <random>

#include "mattn/filters.hpp"
#include "mattn/rope.hpp"

namespace mattn {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("pearson: inputs differ in length");
  if (a.size() < 3) throw ContractError("pearson needs at least 3 points");
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  const double scale_a = std::max(1.0, ma * ma) * n, scale_b = std::max(1.0, mb * mb) * n;
  if (saa <= 1e-24 * scale_a || sbb <= 1e-24 * scale_b) {
    throw DegenerateError("pearson: zero variance");
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

namespace {

std::optional<double> try_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  try {
    return pearson(a, b);
  } catch (const DegenerateError&) {
    return std::nullopt;
  }
}

Eigen::VectorXd random_unit(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = g(rng);
  return v / v.norm();
}

// Gain per omega for one amplitude, averaged over directions.
std::vector<double> probe_gains(const SeqFn& f, const std::vector<double>& omegas, const RowMatrix& base,
                                const std::vector<Eigen::VectorXd>& dirs, double amp, std::size_t skip) {
  const RowMatrix y0 = f(base);
  const Eigen::Index T = base.rows();
  std::vector<double> gains;
  for (double w : omegas) {
    Eigen::VectorXd wave(T);
    for (Eigen::Index t = 0; t < T; ++t) wave(t) = amp * (w == 0 ? 1.0 : std::sin(w * static_cast<double>(t)));
    // At omega = pi the sine vanishes on integer t; probe the cosine there.
    if (std::abs(w - std::numbers::pi) < 1e-12) {
      for (Eigen::Index t = 0; t < T; ++t) wave(t) = amp * std::cos(w * static_cast<double>(t));
    }
    const double a_in = filters::sinusoid_amplitude(wave, w, static_cast<Eigen::Index>(skip));
    if (a_in < 1e-12) throw UndefinedGainError("probe has no energy at omega = " + std::to_string(w));
    double g = 0;
    for (const auto& u : dirs) {
      const RowMatrix x = base + wave * u.transpose();
      const RowMatrix dy = f(x) - y0;
      if (!dy.allFinite()) throw NonFiniteError("bode_extract: non-finite layer output");
      double sq = 0;
      for (Eigen::Index c = 0; c < dy.cols(); ++c) {
        const double a = filters::sinusoid_amplitude(dy.col(c), w, static_cast<Eigen::Index>(skip));
        sq += a * a;
      }
      g += std::sqrt(sq) / a_in;
    }
    gains.push_back(g / static_cast<double>(dirs.size()));
  }
  return gains;
}

}  // namespace

BodeResult bode_extract(const SeqFn& layer_fn, const std::vector<double>& omegas, const RowMatrix& base_point,
                        const BodeOptions& options) {
  if (omegas.empty()) throw ContractError("bode_extract: no frequencies");
  if (options.n_directions == 0) throw ContractError("bode_extract: n_directions must be positive");
  BodeResult r;
  r.mode = "probe";
  r.omegas = omegas;
  double amp = options.amplitude;
  if (amp <= 0) {
    const double rms = std::sqrt(base_point.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(1, base_point.size())));
    amp = 1e-2 * (rms > 0 ? rms : 1.0);
  }
  std::mt19937_64 rng(options.seed);
  std::vector<Eigen::VectorXd> dirs;
  for (std::size_t i = 0; i < options.n_directions; ++i) dirs.push_back(random_unit(rng, base_point.cols()));

  r.measured = probe_gains(layer_fn, omegas, base_point, dirs, amp, options.skip);
  if (options.check_linearity) {
    for (std::size_t h = 0; h < options.max_halvings; ++h) {
      const auto half = probe_gains(layer_fn, omegas, base_point, dirs, amp / 2, options.skip);
      bool stable = true;
      for (std::size_t i = 0; i < half.size(); ++i) {
        if (std::abs(half[i] - r.measured[i]) > 0.05 * std::max(std::abs(r.measured[i]), 1e-12)) stable = false;
      }
      if (stable) break;
      amp /= 2;
      r.measured = half;
    }
  }
  r.probe_amplitude = amp;
  for (double w : omegas) r.theory.push_back(filters::cascade_gain(w, options.gamma, options.beta));
  r.pearson_r = try_pearson(r.measured, r.theory);
  return r;
}

std::vector<double> attention_spectrum(const RowMatrix& attention, const std::vector<double>& omegas,
                                       std::size_t min_len) {
  std::vector<double> spec(omegas.size(), 0.0);
  std::size_t rows = 0;
  for (Eigen::Index t = 0; t < attention.rows(); ++t) {
    const Eigen::Index len = std::min<Eigen::Index>(t + 1, attention.cols());
    if (static_cast<std::size_t>(len) < min_len) continue;
    const Eigen::VectorXd row = attention.row(t).head(len).transpose();
    for (std::size_t i = 0; i < omegas.size(); ++i) spec[i] += filters::dft_magnitude(row, omegas[i]);
    ++rows;
  }
  if (rows == 0) throw DegenerateError("attention_spectrum: no row reaches min_len");
  for (double& s : spec) s /= static_cast<double>(rows);
  return spec;
}

BodeResult spectrum_ratio(const std::vector<double>& momentum_spectrum, const std::vector<double>& baseline_spectrum,
                          const std::vector<double>& omegas, double gamma, double beta) {
  if (momentum_spectrum.size() != omegas.size() || baseline_spectrum.size() != omegas.size()) {
    throw DimensionError("spectrum_ratio: spectra and omegas differ in length");
  }
  BodeResult r;
  r.mode = "spectrum_ratio";
  r.omegas = omegas;
  for (std::size_t i = 0; i < omegas.size(); ++i) {
    if (baseline_spectrum[i] < 1e-12) throw UndefinedGainError("baseline spectrum vanishes at a probed frequency");
    r.measured.push_back(momentum_spectrum[i] / baseline_spectrum[i]);
    r.theory.push_back(filters::cascade_gain(omegas[i], gamma, beta));
  }
  r.pearson_r = try_pearson(r.measured, r.theory);
  return r;
}

double spectral_entropy(const std::vector<double>& spectrum) {
  double total = 0;
  for (double s : spectrum) {
    if (!(s >= 0)) throw ContractError("spectral_entropy: negative spectrum entry");
    total += s;
  }
  if (!(total > 0)) throw DegenerateError("spectral_entropy: all-zero spectrum");
  double h = 0;
  for (double s : spectrum) {
    if (s > 0) h -= (s / total) * std::log(s / total);
  }
  return h;
}

SeqFn encoded_query_map(const ModelConfig& config) {
  return [config](const RowMatrix& z) -> RowMatrix {
    const Eigen::MatrixXd zc = z;
    const MomentumParams& mp = config.momentum;
    switch (config.placement) {
      case Placement::PostRope:
        return augment(zc, mp);
      case Placement::PreRope: {
        if (!is_rotary(config.encoding)) return augment(zc, mp);
        const auto freqs = rope_freqs(config.encoding, static_cast<std::size_t>(z.cols()));
        const auto pos = arange_positions(static_cast<std::size_t>(z.rows()));
        Eigen::MatrixXd u = zc;
        rotate_pairs_inplace(u, freqs, pos, -1.0);
        Eigen::MatrixXd out = augment(u, mp);
        rotate_pairs_inplace(out, freqs, pos, 1.0);
        return out;
      }
      case Placement::EmbeddingSpace:
      case Placement::None:
        break;
    }
    return z;
  };
}

SeqFn attention_sublayer_fn(const ModelState& state, std::size_t layer) {
  return [&state, layer](const RowMatrix& x) { return attention_sublayer(state, x, layer); };
}

double energy_ratio(const VecFn& f, const Eigen::VectorXd& x, double eps, std::size_t n_probes, std::uint64_t seed) {
  if (!(eps > 0)) throw ContractError("energy_ratio: eps must be positive");
  if (n_probes == 0) throw ContractError("energy_ratio: n_probes must be positive");
  std::mt19937_64 rng(seed);
  const Eigen::VectorXd y0 = f(x);
  double total = 0;
  for (std::size_t i = 0; i < n_probes; ++i) {
    const Eigen::VectorXd v = random_unit(rng, x.size());
    const Eigen::VectorXd dy = f(x + eps * v) - y0;
    if (!dy.allFinite()) throw NonFiniteError("energy_ratio: non-finite output");
    total += dy.norm() / eps;
  }
  return total / static_cast<double>(n_probes);
}

SubspaceJacobian subspace_jacobian(const VecFn& f, const Eigen::VectorXd& x, std::size_t dims, double eps) {
  if (dims == 0 || dims > static_cast<std::size_t>(x.size())) throw ContractError("subspace_jacobian: bad dims");
  if (!(eps > 0)) throw ContractError("subspace_jacobian: eps must be positive");
  const auto k = static_cast<Eigen::Index>(dims);
  const Eigen::VectorXd y0 = f(x);
  if (y0.size() < k) throw DimensionError("subspace_jacobian: output smaller than dims");
  Eigen::MatrixXd J(k, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    Eigen::VectorXd xp = x;
    xp(j) += eps;
    const Eigen::VectorXd dy = f(xp) - y0;
    if (!dy.allFinite()) throw NonFiniteError("subspace_jacobian: non-finite output");
    J.col(j) = dy.head(k) / eps;
  }
  SubspaceJacobian out;
  out.dims = dims;
  out.reliable = dims == static_cast<std::size_t>(x.size());
  out.det_residual = std::abs(Eigen::PartialPivLU<Eigen::MatrixXd>(J).determinant() - 1.0);
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(J);
  const auto& s = svd.singularValues();
  const double smax = s(0), smin = s(s.size() - 1);
  out.condition_number = smin <= smax * std::numeric_limits<double>::epsilon() ? std::numeric_limits<double>::infinity()
                                                                                 : smax / smin;
  return out;
}

StabilityReport stability_report(const VecFn& f, const Eigen::VectorXd& x, std::size_t dims, double eps,
                                 std::size_t n_probes, std::uint64_t seed) {
  StabilityReport r;
  r.energy_ratio = energy_ratio(f, x, eps, n_probes, seed);
  const auto jac = subspace_jacobian(f, x, dims, eps);
  r.det_residual = jac.det_residual;
  r.condition_number = jac.condition_number;
  r.subspace_dim = dims;
  r.probe_eps = eps;
  r.n_probes = n_probes;
  r.reliability_flag = jac.reliable ? "reliable" : "leakage-suspect";
  return r;
}

VecFn flatten(const SeqFn& f, std::size_t rows, std::size_t cols) {
  return [f, rows, cols](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    if (static_cast<std::size_t>(v.size()) != rows * cols) throw DimensionError("flatten: wrong vector length");
    const RowMatrix x = ConstMatrixView(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const RowMatrix y = f(x);
    return Eigen::Map<const Eigen::VectorXd>(y.data(), y.size());
  };
}

PowerLawFit power_law_fit(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) throw ContractError("power_law_fit needs at least 3 points");
  std::vector<double> lx, ly;
  for (const auto& [n, y] : points) {
    if (!(n > 0) || !(y > 0)) throw DegenerateError("power_law_fit: N and y must be positive");
    lx.push_back(std::log(n));
    ly.push_back(std::log(y));
  }
  const auto m = static_cast<double>(lx.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= m;
  my /= m;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx <= 0) throw DegenerateError("power_law_fit: all N equal");
  const double slope = sxy / sxx;
  PowerLawFit fit;
  fit.alpha = -slope;
  fit.y0 = std::exp(my - slope * mx);
  double ss_res = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double e = ly[i] - (my + slope * (lx[i] - mx));
    ss_res += e * e;
  }
  fit.r_squared = syy > 0 ? 1.0 - ss_res / syy : 1.0;
  return fit;
}

NoiseGainReport noise_gain_report(const std::vector<std::pair<double, double>>& theta_gain) {
  if (theta_gain.size() < 3) throw ContractError("noise_gain_report needs at least 3 theta values");
  NoiseGainReport r;
  std::vector<double> gain;
  for (const auto& [theta, g] : theta_gain) {
    r.noise.push_back(filters::rotation_diff_norm(theta));
    gain.push_back(g);
  }
  r.pearson_r = pearson(r.noise, gain);
  const auto n = static_cast<double>(gain.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < gain.size(); ++i) {
    mx += r.noise[i];
    my += gain[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < gain.size(); ++i) {
    sxx += (r.noise[i] - mx) * (r.noise[i] - mx);
    sxy += (r.noise[i] - mx) * (gain[i] - my);
  }
  r.fit_slope = sxy / sxx;
  r.fit_intercept = my - r.fit_slope * mx;
  return r;
}

}  // namespace mattn
