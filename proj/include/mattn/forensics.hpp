#pragma once

// Spectral and geometric diagnostics of sequence maps and trained layers.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mattn/model.hpp"
#include "mattn/tensor.hpp"

namespace mattn {

/// A map from a T x d sequence (time along rows) to a T x d' sequence.
using SeqFn = std::function<RowMatrix(const RowMatrix&)>;
/// A map between flat vectors.
using VecFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct BodeOptions {
  /// Probe amplitude; 0 selects 1e-2 x RMS of the base point.
  double amplitude = 0;
  std::size_t n_directions = 4;
  std::uint64_t seed = 0;
  /// Leading samples excluded from the fit (boundary transient).
  std::size_t skip = 1;
  /// Re-measure at half amplitude and keep halving while any gain moves by
  /// more than 5% (up to `max_halvings` times).
  bool check_linearity = true;
  std::size_t max_halvings = 4;
  /// Theory curve: cascade_gain(omega, gamma, beta).
  double gamma = 0;
  double beta = 0;
};

struct BodeResult {
  std::string mode;  // "probe" or "spectrum_ratio"
  std::vector<double> omegas, measured, theory;
  /// Absent when either curve is constant.
  std::optional<double> pearson_r;
  double probe_amplitude = 0;
};

/// Small-signal probe: for each omega and each random unit direction u,
/// feeds base + A sin(omega t) u through `layer_fn`, and measures the
/// omega-amplitude of the output difference (L2 over output channels)
/// relative to A. Gains are averaged over directions.
BodeResult bode_extract(const SeqFn& layer_fn, const std::vector<double>& omegas, const RowMatrix& base_point,
                        const BodeOptions& options = {});

/// Mean over attention rows of length >= min_len of the single-bin DFT
/// magnitude of the row (as a signal over key positions) at each omega.
std::vector<double> attention_spectrum(const RowMatrix& attention, const std::vector<double>& omegas,
                                       std::size_t min_len = 8);

/// Spectrum-ratio reading: G(omega) = S_momentum / S_baseline of attention
/// spectra, compared against momentum_gain(omega, gamma).
BodeResult spectrum_ratio(const std::vector<double>& momentum_spectrum, const std::vector<double>& baseline_spectrum,
                          const std::vector<double>& omegas, double gamma, double beta = 0);

/// -sum p log p over the normalized spectrum.
double spectral_entropy(const std::vector<double>& spectrum);

/// The query stream of one head, as seen where scores are computed (after
/// encoding and momentum), as a map of the stream it acts on. Post-RoPE the
/// map is the momentum operator; pre-RoPE it is R_t M(R_t^{-1} .), which
/// carries the commutator error. Input and output are T x head_dim.
SeqFn encoded_query_map(const ModelConfig& config);

/// Attention sublayer of `layer` as a sequence map (input after its pre-norm).
SeqFn attention_sublayer_fn(const ModelState& state, std::size_t layer);

/// Mean over `n_probes` random unit directions v of ||F(x + eps v) - F(x)|| / eps.
double energy_ratio(const VecFn& f, const Eigen::VectorXd& x, double eps = 1e-4, std::size_t n_probes = 16,
                    std::uint64_t seed = 0);

struct SubspaceJacobian {
  double det_residual = 0;
  /// sigma_max / sigma_min; +infinity when singular to machine precision.
  double condition_number = 0;
  std::size_t dims = 0;
  /// False when dims < full dimension: the determinant of a block of a
  /// larger Jacobian does not measure volume change (leakage).
  bool reliable = true;
};

/// Forward-difference Jacobian on the leading `dims` coordinates.
SubspaceJacobian subspace_jacobian(const VecFn& f, const Eigen::VectorXd& x, std::size_t dims, double eps = 1e-4);

struct StabilityReport {
  double energy_ratio = 0;
  double det_residual = 0;
  double condition_number = 0;
  std::size_t subspace_dim = 0;
  double probe_eps = 0;
  std::size_t n_probes = 0;
  std::string reliability_flag;  // "reliable" or "leakage-suspect"
};

StabilityReport stability_report(const VecFn& f, const Eigen::VectorXd& x, std::size_t dims, double eps = 1e-4,
                                 std::size_t n_probes = 16, std::uint64_t seed = 0);

/// Flattens a sequence map into a vector map (row-major).
VecFn flatten(const SeqFn& f, std::size_t rows, std::size_t cols);

struct PowerLawFit {
  double y0 = 0, alpha = 0, r_squared = 0;
};

/// Least squares of log y = log y0 - alpha log N.
PowerLawFit power_law_fit(const std::vector<std::pair<double, double>>& points);

struct NoiseGainReport {
  double pearson_r = 0, fit_slope = 0, fit_intercept = 0;
  std::vector<double> noise;
};

/// Correlates the rotational noise 2 sin(theta/2) with observed gains, and
/// fits gain = slope * noise + intercept.
NoiseGainReport noise_gain_report(const std::vector<std::pair<double, double>>& theta_gain);

}  // namespace mattn
