#include "mattn/rope.hpp"

#include <numbers>

namespace mattn {

bool is_rotary(const EncodingSpec& spec) {
  return std::holds_alternative<MultiFrequency>(spec) || std::holds_alternative<Monochromatic>(spec) ||
         std::holds_alternative<Bandpass>(spec);
}

void validate(const EncodingSpec& spec) {
  std::visit(
      [](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, MultiFrequency> || std::is_same_v<S, SinusoidalAdditive>) {
          if (!(s.base > 1)) throw ConfigError("encoding base must exceed 1");
        } else if constexpr (std::is_same_v<S, Monochromatic>) {
          if (!(s.theta > 0 && s.theta <= std::numbers::pi)) throw ConfigError("theta must lie in (0, pi]");
        } else if constexpr (std::is_same_v<S, Bandpass>) {
          if (!(s.theta > 0 && s.theta <= std::numbers::pi)) throw ConfigError("theta must lie in (0, pi]");
          if (!(s.halfwidth_fraction > 0 && s.halfwidth_fraction < 1)) {
            throw ConfigError("bandpass halfwidth_fraction must lie in (0, 1)");
          }
        }
      },
      spec);
}

std::string encoding_name(const EncodingSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::string {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, MultiFrequency>) return "rope";
        if constexpr (std::is_same_v<S, Monochromatic>) return "mono";
        if constexpr (std::is_same_v<S, Bandpass>) return "bandpass";
        if constexpr (std::is_same_v<S, SinusoidalAdditive>) return "sinusoidal";
        return "nope";
      },
      spec);
}

std::string to_string(Placement p) {
  switch (p) {
    case Placement::PostRope:
      return "post_rope";
    case Placement::PreRope:
      return "pre_rope";
    case Placement::EmbeddingSpace:
      return "embedding";
    case Placement::None:
      return "none";
  }
  return "none";
}

Placement parse_placement(const std::string& name) {
  if (name == "post_rope") return Placement::PostRope;
  if (name == "pre_rope") return Placement::PreRope;
  if (name == "embedding") return Placement::EmbeddingSpace;
  if (name == "none") return Placement::None;
  throw ConfigError("unknown placement '" + name + "' (post_rope, pre_rope, embedding, none)");
}

std::vector<double> rope_freqs(const EncodingSpec& spec, std::size_t head_dim) {
  if (head_dim % 2 != 0) throw DimensionError("rotary head_dim must be even, got " + std::to_string(head_dim));
  if (!is_rotary(spec)) throw ContractError(encoding_name(spec) + " encoding has no rotary frequencies");
  validate(spec);
  const std::size_t pairs = head_dim / 2;
  std::vector<double> f(pairs);
  if (const auto* mf = std::get_if<MultiFrequency>(&spec)) {
    for (std::size_t m = 0; m < pairs; ++m) {
      f[m] = std::pow(mf->base, -2.0 * static_cast<double>(m) / static_cast<double>(head_dim));
    }
  } else if (const auto* mono = std::get_if<Monochromatic>(&spec)) {
    std::fill(f.begin(), f.end(), mono->theta);
  } else {
    const auto& bp = std::get<Bandpass>(spec);
    const double lo = bp.theta * (1.0 - bp.halfwidth_fraction);
    const double hi = bp.theta * (1.0 + bp.halfwidth_fraction);
    for (std::size_t m = 0; m < pairs; ++m) {
      f[m] = pairs == 1 ? bp.theta : lo + (hi - lo) * static_cast<double>(m) / static_cast<double>(pairs - 1);
    }
  }
  return f;
}

Eigen::MatrixXd sinusoidal_table(std::size_t length, std::size_t d, double base) {
  Eigen::MatrixXd pe(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(d));
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double w = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      pe(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(2 * i)) = std::sin(static_cast<double>(t) * w);
      pe(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(2 * i + 1)) = std::cos(static_cast<double>(t) * w);
    }
  }
  return pe;
}

}  // namespace mattn
