#pragma once

// Differentiable sequence operators used by the attention layer. Inputs are
// batched head-major activations of shape [B*T, H*dh]: row b*T + t holds
// time step t of sequence b, columns h*dh .. h*dh+dh-1 hold head h.

#include <vector>

#include "mattn/rope.hpp"
#include "mattn/tensor.hpp"

namespace mattn {

struct SeqLayout {
  std::size_t batch = 1;
  std::size_t seq_len = 1;
  std::size_t n_heads = 1;
};

/// Per-pair cos/sin of t * theta_m for t in [0, T).
struct RotaryTable {
  std::size_t seq_len = 0;
  std::size_t pairs = 0;
  std::vector<double> cos, sin;

  static RotaryTable build(const std::vector<double>& freqs, std::size_t seq_len);
};

/// Rotates every head of every time step by +t*theta (inverse = false) or
/// -t*theta (inverse = true).
Tensor rotary(const Tensor& x, const SeqLayout& layout, const RotaryTable& table, bool inverse = false);

/// Time-axis augmentation x + gamma * ema(x_t - x_{t-1}) within each
/// sequence; every column is treated as an independent channel.
Tensor momentum_augment(const Tensor& x, const SeqLayout& layout, const MomentumParams& params);

/// Causal softmax(Q K^T / sqrt(dh)) V per sequence and head. When
/// `weights_out` is non-null it receives the [B, H, T, T] attention
/// probabilities.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, const SeqLayout& layout,
                        std::vector<double>* weights_out = nullptr);

}  // namespace mattn
