#include "mattn/model.hpp"

#include <algorithm>
#include <cmath>

namespace mattn {

std::string to_string(NormKind k) { return k == NormKind::RMS ? "rms" : "layer_norm"; }
std::string to_string(FfnActivation a) { return a == FfnActivation::GeLU ? "gelu" : "swiglu"; }

NormKind parse_norm_kind(const std::string& s) {
  if (s == "rms") return NormKind::RMS;
  if (s == "layer_norm") return NormKind::LayerNorm;
  throw ConfigError("unknown norm_kind '" + s + "' (rms, layer_norm)");
}

FfnActivation parse_ffn_activation(const std::string& s) {
  if (s == "gelu") return FfnActivation::GeLU;
  if (s == "swiglu") return FfnActivation::SwiGLU;
  throw ConfigError("unknown ffn_activation '" + s + "' (gelu, swiglu)");
}

void ModelConfig::validate() const {
  if (vocab == 0 || d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0 || max_seq == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (is_rotary(encoding) && head_dim() % 2 != 0) throw ConfigError("rotary encodings need an even head_dim");
  if (std::holds_alternative<SinusoidalAdditive>(encoding) && d_model % 2 != 0) {
    throw ConfigError("sinusoidal encoding needs an even d_model");
  }
  mattn::validate(encoding);
  momentum.validate();
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(norm_eps >= 0)) throw ConfigError("norm_eps must be >= 0");
  if (!(init_std > 0)) throw ConfigError("init_std must be positive");
}

namespace presets {

ModelConfig single_layer_induction() {
  ModelConfig c;
  c.vocab = 64;
  c.d_model = 64;
  c.n_heads = 4;
  c.n_layers = 1;
  c.d_ff = 256;
  c.max_seq = 64;
  c.norm_kind = NormKind::LayerNorm;
  c.ffn_activation = FfnActivation::GeLU;
  c.ffn_bias = true;
  c.tied_head = true;
  return c;
}

ModelConfig beta_sweep() {
  ModelConfig c = single_layer_induction();
  c.vocab = 200;
  c.d_model = 128;
  c.n_layers = 4;
  c.d_ff = 512;
  c.tied_head = false;
  return c;
}

ModelConfig anchored_chains() {
  ModelConfig c;
  c.vocab = 1000;
  c.d_model = 256;
  c.n_heads = 8;
  c.n_layers = 4;
  c.d_ff = 1024;
  c.max_seq = 512;
  c.norm_kind = NormKind::RMS;
  c.ffn_activation = FfnActivation::SwiGLU;
  c.tied_head = true;
  return c;
}

}  // namespace presets

namespace {

struct ParamSpec {
  std::string name;
  Shape shape;
  enum class Init { Normal, ResidualOut, Ones, Zeros } init;
};

std::vector<ParamSpec> parameter_layout(const ModelConfig& c) {
  using I = ParamSpec::Init;
  std::vector<ParamSpec> specs;
  const std::size_t d = c.d_model, f = c.d_ff;
  const bool ln = c.norm_kind == NormKind::LayerNorm;
  auto norm = [&](const std::string& prefix) {
    specs.push_back({prefix + ".gain", {d}, I::Ones});
    if (ln) specs.push_back({prefix + ".bias", {d}, I::Zeros});
  };
  specs.push_back({"tok_emb", {c.vocab, d}, I::Normal});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l);
    norm(p + ".norm1");
    specs.push_back({p + ".attn.wq", {d, d}, I::Normal});
    specs.push_back({p + ".attn.wk", {d, d}, I::Normal});
    specs.push_back({p + ".attn.wv", {d, d}, I::Normal});
    specs.push_back({p + ".attn.wo", {d, d}, I::ResidualOut});
    norm(p + ".norm2");
    specs.push_back({p + ".ffn.w1", {d, f}, I::Normal});
    if (c.ffn_bias) specs.push_back({p + ".ffn.b1", {f}, I::Zeros});
    if (c.ffn_activation == FfnActivation::SwiGLU) {
      specs.push_back({p + ".ffn.w3", {d, f}, I::Normal});
      if (c.ffn_bias) specs.push_back({p + ".ffn.b3", {f}, I::Zeros});
    }
    specs.push_back({p + ".ffn.w2", {f, d}, I::ResidualOut});
    if (c.ffn_bias) specs.push_back({p + ".ffn.b2", {d}, I::Zeros});
  }
  norm("final_norm");
  if (!c.tied_head) specs.push_back({"head", {d, c.vocab}, I::Normal});
  return specs;
}

Tensor apply_norm(const ModelState& s, const std::string& prefix, const Tensor& x) {
  if (s.config.norm_kind == NormKind::RMS) return rms_norm(x, s.at(prefix + ".gain"), s.config.norm_eps);
  return layer_norm(x, s.at(prefix + ".gain"), s.at(prefix + ".bias"), s.config.norm_eps);
}

Tensor linear(const ModelState& s, const Tensor& x, const std::string& w, const std::string& b) {
  Tensor y = matmul(x, s.at(w));
  if (s.config.ffn_bias && s.contains(b)) y = add_row_vector(y, s.at(b));
  return y;
}

void check_tokens(const ModelConfig& c, std::span<const std::int64_t> tokens, std::size_t batch,
                  std::size_t seq_len) {
  if (tokens.size() != batch * seq_len) {
    throw DimensionError("expected " + std::to_string(batch * seq_len) + " tokens, got " +
                         std::to_string(tokens.size()));
  }
  if (seq_len == 0 || seq_len > c.max_seq) {
    throw DimensionError("sequence length " + std::to_string(seq_len) + " outside (0, " + std::to_string(c.max_seq) +
                         "]");
  }
  for (auto t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= c.vocab) {
      throw IndexError("token " + std::to_string(t) + " outside vocabulary of " + std::to_string(c.vocab));
    }
  }
}

// Token embeddings plus additive encoding and embedding-space momentum.
Tensor embed(const ModelState& s, std::span<const std::int64_t> tokens, std::size_t batch, std::size_t seq_len) {
  const ModelConfig& c = s.config;
  Tensor x = embedding(s.at("tok_emb"), tokens, {batch * seq_len});
  if (const auto* sa = std::get_if<SinusoidalAdditive>(&c.encoding)) {
    const Eigen::MatrixXd pe = sinusoidal_table(seq_len, c.d_model, sa->base);
    std::vector<double> tiled(batch * seq_len * c.d_model);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < seq_len; ++t) {
        for (std::size_t j = 0; j < c.d_model; ++j) {
          tiled[(b * seq_len + t) * c.d_model + j] =
              pe(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j));
        }
      }
    }
    x = add(x, Tensor::from(x.shape(), std::move(tiled)));
  }
  if (c.placement == Placement::EmbeddingSpace) x = momentum_augment(x, {batch, seq_len, 1}, c.momentum);
  return x;
}

// Queries/keys after encoding and (head-space) momentum.
std::pair<Tensor, Tensor> encode_qk(const ModelConfig& c, Tensor q, Tensor k, const SeqLayout& layout,
                                    const RotaryTable* table) {
  auto rot = [&](const Tensor& t) { return table ? rotary(t, layout, *table) : t; };
  auto mom = [&](const Tensor& t) { return momentum_augment(t, layout, c.momentum); };
  switch (c.placement) {
    case Placement::PostRope:
      return {mom(rot(q)), mom(rot(k))};
    case Placement::PreRope:
      return {rot(mom(q)), rot(mom(k))};
    case Placement::None:
    case Placement::EmbeddingSpace:
      break;
  }
  return {rot(q), rot(k)};
}

Tensor attention_block(const ModelState& s, std::size_t l, const Tensor& h, const SeqLayout& layout,
                       const RotaryTable* table, std::vector<double>* weights) {
  const std::string p = "layers." + std::to_string(l) + ".attn.";
  Tensor q = matmul(h, s.at(p + "wq"));
  Tensor k = matmul(h, s.at(p + "wk"));
  Tensor v = matmul(h, s.at(p + "wv"));
  auto [qh, kh] = encode_qk(s.config, q, k, layout, table);
  return matmul(causal_attention(qh, kh, v, layout, weights), s.at(p + "wo"));
}

Tensor ffn_block(const ModelState& s, std::size_t l, const Tensor& h) {
  const std::string p = "layers." + std::to_string(l) + ".ffn.";
  if (s.config.ffn_activation == FfnActivation::GeLU) {
    return linear(s, gelu(linear(s, h, p + "w1", p + "b1")), p + "w2", p + "b2");
  }
  Tensor gate = silu(linear(s, h, p + "w1", p + "b1"));
  Tensor up = linear(s, h, p + "w3", p + "b3");
  return linear(s, mul(gate, up), p + "w2", p + "b2");
}

std::optional<RotaryTable> rotary_table(const ModelConfig& c, std::size_t seq_len) {
  if (!is_rotary(c.encoding)) return std::nullopt;
  return RotaryTable::build(rope_freqs(c.encoding, c.head_dim()), seq_len);
}

}  // namespace

const Tensor& ModelState::at(const std::string& name) const {
  for (const auto& [n, t] : params) {
    if (n == name) return t;
  }
  throw IndexError("no parameter named '" + name + "'");
}

Tensor& ModelState::at(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ModelState&>(*this).at(name));
}

bool ModelState::contains(const std::string& name) const {
  return std::any_of(params.begin(), params.end(), [&](const auto& p) { return p.first == name; });
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

std::vector<Tensor> ModelState::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

std::size_t count_parameters(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& spec : parameter_layout(config)) n += numel(spec.shape);
  return n;
}

ModelState build(const ModelConfig& config) {
  config.validate();
  ModelState state;
  state.config = config;
  std::mt19937_64 rng(config.seed);
  const double residual_std = config.init_std / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  for (const auto& spec : parameter_layout(config)) {
    Tensor t;
    switch (spec.init) {
      case ParamSpec::Init::Normal:
        t = Tensor::randn(spec.shape, config.init_std, rng, true);
        break;
      case ParamSpec::Init::ResidualOut:
        t = Tensor::randn(spec.shape, residual_std, rng, true);
        break;
      case ParamSpec::Init::Ones:
        t = Tensor::full(spec.shape, 1.0, true);
        break;
      case ParamSpec::Init::Zeros:
        t = Tensor::zeros(spec.shape, true);
        break;
    }
    state.params.emplace_back(spec.name, std::move(t));
  }
  return state;
}

Tensor forward(const ModelState& state, std::span<const std::int64_t> tokens, std::size_t batch,
               std::size_t seq_len, const ForwardOptions& options) {
  const ModelConfig& c = state.config;
  check_tokens(c, tokens, batch, seq_len);
  const bool use_dropout = c.dropout > 0 && grad_enabled();
  if (use_dropout && !options.dropout_rng) throw ContractError("dropout enabled but no generator supplied");

  const SeqLayout layout{batch, seq_len, c.n_heads};
  const auto table = rotary_table(c, seq_len);
  if (options.attention_out) options.attention_out->assign(c.n_layers, {});

  Tensor x = embed(state, tokens, batch, seq_len);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l);
    std::vector<double>* weights = options.attention_out ? &(*options.attention_out)[l] : nullptr;
    Tensor a = attention_block(state, l, apply_norm(state, p + ".norm1", x), layout, table ? &*table : nullptr,
                               weights);
    if (use_dropout) a = dropout(a, c.dropout, *options.dropout_rng);
    x = add(x, a);
    // Everything after the last attention is row-wise, so only the rows
    // that need logits are carried forward.
    if (options.logit_rows && l + 1 == c.n_layers) x = select_rows(x, *options.logit_rows);
    Tensor f = ffn_block(state, l, apply_norm(state, p + ".norm2", x));
    if (use_dropout) f = dropout(f, c.dropout, *options.dropout_rng);
    x = add(x, f);
  }
  x = apply_norm(state, "final_norm", x);
  return c.tied_head ? matmul_transposed(x, state.at("tok_emb")) : matmul(x, state.at("head"));
}

RowMatrix attention_weights(const ModelState& state, std::span<const std::int64_t> tokens, std::size_t layer,
                            std::size_t head) {
  const ModelConfig& c = state.config;
  if (layer >= c.n_layers) throw IndexError("layer " + std::to_string(layer) + " out of range");
  if (head >= c.n_heads) throw IndexError("head " + std::to_string(head) + " out of range");
  NoGradGuard no_grad;
  std::vector<std::vector<double>> weights;
  ForwardOptions opt;
  opt.attention_out = &weights;
  forward(state, tokens, 1, tokens.size(), opt);
  const auto T = static_cast<Eigen::Index>(tokens.size());
  return ConstMatrixView(weights[layer].data() + static_cast<Eigen::Index>(head) * T * T, T, T);
}

RowMatrix attention_input(const ModelState& state, std::span<const std::int64_t> tokens, std::size_t layer) {
  const ModelConfig& c = state.config;
  if (layer >= c.n_layers) throw IndexError("layer " + std::to_string(layer) + " out of range");
  check_tokens(c, tokens, 1, tokens.size());
  NoGradGuard no_grad;
  const std::size_t T = tokens.size();
  const SeqLayout layout{1, T, c.n_heads};
  const auto table = rotary_table(c, T);
  Tensor x = embed(state, tokens, 1, T);
  for (std::size_t l = 0; l < layer; ++l) {
    const std::string p = "layers." + std::to_string(l);
    x = add(x, attention_block(state, l, apply_norm(state, p + ".norm1", x), layout, table ? &*table : nullptr,
                               nullptr));
    x = add(x, ffn_block(state, l, apply_norm(state, p + ".norm2", x)));
  }
  return apply_norm(state, "layers." + std::to_string(layer) + ".norm1", x).to_matrix();
}

RowMatrix attention_sublayer(const ModelState& state, const RowMatrix& input, std::size_t layer) {
  const ModelConfig& c = state.config;
  if (layer >= c.n_layers) throw IndexError("layer " + std::to_string(layer) + " out of range");
  if (static_cast<std::size_t>(input.cols()) != c.d_model) throw DimensionError("sublayer input width != d_model");
  NoGradGuard no_grad;
  const std::size_t T = static_cast<std::size_t>(input.rows());
  const auto table = rotary_table(c, T);
  return attention_block(state, layer, Tensor::from_matrix(input), {1, T, c.n_heads}, table ? &*table : nullptr,
                         nullptr)
      .to_matrix();
}

}  // namespace mattn
