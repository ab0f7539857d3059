#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mattn/rope.hpp"
#include "mattn/seq_ops.hpp"
#include "mattn/tensor.hpp"

namespace mattn {

enum class NormKind { RMS, LayerNorm };
enum class FfnActivation { GeLU, SwiGLU };

std::string to_string(NormKind k);
std::string to_string(FfnActivation a);
NormKind parse_norm_kind(const std::string& s);
FfnActivation parse_ffn_activation(const std::string& s);

/// Full architectural description of a decoder-only toy transformer.
///
/// Defaults: pre-norm blocks with RMSNorm and SwiGLU, no projection biases,
/// untied output head, no dropout. `ffn_bias` and `tied_head` exist so the
/// small published configurations can be reproduced parameter-for-parameter
/// (see `presets`).
struct ModelConfig {
  std::size_t vocab = 64;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 1;
  std::size_t d_ff = 256;
  std::size_t max_seq = 64;
  EncodingSpec encoding = MultiFrequency{};
  Placement placement = Placement::PostRope;
  MomentumParams momentum;
  NormKind norm_kind = NormKind::RMS;
  FfnActivation ffn_activation = FfnActivation::SwiGLU;
  bool ffn_bias = false;
  bool tied_head = false;
  double dropout = 0.0;
  double norm_eps = 1e-5;
  double init_std = 0.02;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return n_heads ? d_model / n_heads : 0; }
  void validate() const;
};

namespace presets {
/// 1 layer, d 64, 4 heads, d_ff 256, vocab 64: LayerNorm + GeLU with FFN
/// biases and a tied head.
ModelConfig single_layer_induction();
/// 4 layers, d 128, 4 heads, d_ff 512, vocab 200, LayerNorm + GeLU with FFN
/// biases, untied head.
ModelConfig beta_sweep();
/// 4 layers, d 256, 8 heads, d_ff 1024, vocab 1000, RMSNorm + SwiGLU, tied.
ModelConfig anchored_chains();
}  // namespace presets

/// Parameters keyed by name, in a fixed creation order.
struct ModelState {
  ModelConfig config;
  std::vector<std::pair<std::string, Tensor>> params;

  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const;
  std::size_t parameter_count() const;
  std::vector<Tensor> tensors() const;
};

/// Parameter count implied by a configuration (no allocation).
std::size_t count_parameters(const ModelConfig& config);

/// Deterministic initialization from `config.seed`: N(0, init_std) for
/// matrices, residual-output matrices additionally scaled by
/// 1/sqrt(2 n_layers); norm gains 1, biases 0.
ModelState build(const ModelConfig& config);

struct ForwardOptions {
  /// Rows of the flattened [B*T] positions for which logits are needed;
  /// null means every position.
  const std::vector<std::size_t>* logit_rows = nullptr;
  /// Required when config.dropout > 0 and gradients are enabled.
  std::mt19937_64* dropout_rng = nullptr;
  /// Receives per-layer [B, H, T, T] attention probabilities when non-null.
  std::vector<std::vector<double>>* attention_out = nullptr;
};

/// Logits [rows x vocab] for `tokens` laid out as batch x seq_len.
Tensor forward(const ModelState& state, std::span<const std::int64_t> tokens, std::size_t batch,
               std::size_t seq_len, const ForwardOptions& options = {});

/// Post-softmax causal attention of one head for a single sequence.
RowMatrix attention_weights(const ModelState& state, std::span<const std::int64_t> tokens, std::size_t layer,
                            std::size_t head);

/// Inputs to the attention sublayer of `layer` (after its pre-norm) for a
/// single sequence, T x d_model.
RowMatrix attention_input(const ModelState& state, std::span<const std::int64_t> tokens, std::size_t layer);

/// The attention sublayer of `layer` as a map from its (normed) input
/// sequence to its output, T x d_model -> T x d_model.
RowMatrix attention_sublayer(const ModelState& state, const RowMatrix& input, std::size_t layer);

/// Checkpoint = `<stem>.json` manifest (format, version, config, tensor
/// table) + `<stem>.bin` raw little-endian float64 payload.
void save_checkpoint(const ModelState& state, const std::filesystem::path& stem);
ModelState load_checkpoint(const std::filesystem::path& manifest);

}  // namespace mattn
