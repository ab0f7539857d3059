#include "mattn/training.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "mattn/config_io.hpp"
#include "mattn/seeding.hpp"

namespace mattn {

std::string to_string(Schedule s) { return s == Schedule::Cosine ? "cosine" : "constant"; }
std::string to_string(TrainMode m) { return m == TrainMode::Steps ? "steps" : "epochs"; }

Schedule parse_schedule(const std::string& s) {
  if (s == "cosine") return Schedule::Cosine;
  if (s == "constant") return Schedule::Constant;
  throw ConfigError("unknown schedule '" + s + "' (cosine, constant)");
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "steps") return TrainMode::Steps;
  if (s == "epochs") return TrainMode::Epochs;
  throw ConfigError("unknown mode '" + s + "' (steps, epochs)");
}

std::size_t TrainConfig::total_steps() const {
  if (mode == TrainMode::Steps) return steps;
  const std::size_t per_epoch = batch_size ? (train_samples + batch_size - 1) / batch_size : 0;
  return epochs * per_epoch;
}

void TrainConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (mode == TrainMode::Epochs && (epochs == 0 || train_samples == 0)) {
    throw ConfigError("epochs mode needs epochs > 0 and train_samples > 0");
  }
  if (warmup_steps > total_steps()) throw ConfigError("warmup_steps exceeds the total number of steps");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (!(grad_clip >= 0)) throw ConfigError("grad_clip must be >= 0 (0 disables clipping)");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  if (eval_samples == 0) throw ConfigError("eval_samples must be positive");
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  if (step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.schedule == Schedule::Constant) return cfg.lr;
  const std::size_t total = cfg.total_steps();
  const std::size_t decay = total > cfg.warmup_steps ? total - cfg.warmup_steps : 1;
  const double progress = static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(decay);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

AdamW::AdamW(std::vector<Tensor> params, double beta1, double beta2, double eps, double weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    const std::vector<double> g = p.grad();
    auto w = p.mutable_data();
    const double decay = p.rank() >= 2 ? 1.0 - lr * wd_ : 1.0;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1, vhat = v[j] / bc2;
      w[j] = w[j] * decay - lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) {
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= s;
    }
  }
  return norm;
}

EvalMetrics summarize(const std::vector<double>& losses, const std::vector<bool>& correct,
                      const std::vector<int>& k) {
  EvalMetrics m;
  m.n_targets = losses.size();
  if (losses.empty()) return m;
  double total = 0, hits = 0;
  std::array<double, kLossByKBuckets> by_k{};
  std::array<std::size_t, kLossByKBuckets> n_k{};
  double rep = 0;
  std::size_t n_rep = 0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    total += losses[i];
    hits += correct[i] ? 1.0 : 0.0;
    if (k[i] >= 1) {
      rep += losses[i];
      ++n_rep;
    }
    if (k[i] >= 0 && static_cast<std::size_t>(k[i]) < kLossByKBuckets) {
      by_k[static_cast<std::size_t>(k[i])] += losses[i];
      ++n_k[static_cast<std::size_t>(k[i])];
    }
  }
  const auto n = static_cast<double>(losses.size());
  m.accuracy = hits / n;
  m.mean_loss = total / n;
  for (std::size_t b = 0; b < kLossByKBuckets; ++b) {
    if (n_k[b]) m.loss_by_k[b] = by_k[b] / static_cast<double>(n_k[b]);
  }
  m.L_new = m.loss_by_k[0];
  m.L_second = m.loss_by_k[1];
  if (n_rep) m.L_rep = rep / static_cast<double>(n_rep);
  if (m.L_new && m.L_second) m.gap = *m.L_new - *m.L_second;
  return m;
}

namespace {

struct Batch {
  std::vector<std::int64_t> tokens;
  std::vector<std::size_t> rows;
  std::vector<std::int64_t> targets;
  std::vector<int> k;
  std::size_t batch = 0, seq_len = 0;
};

Batch make_batch(const std::vector<const TaskSample*>& samples) {
  Batch b;
  b.batch = samples.size();
  b.seq_len = samples.front()->tokens.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const TaskSample& s = *samples[i];
    if (s.tokens.size() != b.seq_len) throw DimensionError("samples in one batch differ in length");
    b.tokens.insert(b.tokens.end(), s.tokens.begin(), s.tokens.end());
    for (std::size_t j = 0; j < s.targets.size(); ++j) {
      b.rows.push_back(i * b.seq_len + s.target_positions[j]);
      b.targets.push_back(s.targets[j]);
      b.k.push_back(s.occurrence_count[j]);
    }
  }
  return b;
}

std::size_t argmax_row(const ConstMatrixView& logits, Eigen::Index r) {
  Eigen::Index best;
  logits.row(r).maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

void check_task_fits(const ModelConfig& model, const TaskSpec& task) {
  validate(task);
  if (required_vocab(task) > static_cast<std::int64_t>(model.vocab)) {
    throw ConfigError("task " + task_name(task) + " needs vocab >= " + std::to_string(required_vocab(task)) +
                      ", model has " + std::to_string(model.vocab));
  }
  if (sequence_length(task) > model.max_seq) {
    throw ConfigError("task sequences of length " + std::to_string(sequence_length(task)) + " exceed max_seq " +
                      std::to_string(model.max_seq));
  }
}

// Draws `n` samples from stream (seed, tag, index) that are absent from
// `excluded`.
std::vector<TaskSample> fresh_samples(const TaskSpec& task, std::uint64_t seed, std::string_view tag,
                                      std::uint64_t index, std::size_t n,
                                      const std::unordered_set<std::uint64_t>& excluded) {
  std::vector<TaskSample> out;
  out.reserve(n);
  for (std::uint64_t attempt = 0; out.size() < n; ++attempt) {
    if (attempt > 1000) throw GenerationError("cannot draw training samples disjoint from the evaluation set");
    auto drawn = generate(task, derive_seed(seed, tag, index * 1000003ULL + attempt), n - out.size());
    for (auto& s : drawn) {
      if (!excluded.count(sample_hash(s))) out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace

EvalMetrics evaluate(const ModelState& state, const std::vector<TaskSample>& samples, std::size_t batch_size) {
  NoGradGuard no_grad;
  std::vector<double> losses;
  std::vector<bool> correct;
  std::vector<int> k;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::vector<const TaskSample*> chunk;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) chunk.push_back(&samples[i]);
    const Batch b = make_batch(chunk);
    ForwardOptions opt;
    opt.logit_rows = &b.rows;
    const Tensor logits = forward(state, b.tokens, b.batch, b.seq_len, opt);
    const CrossEntropy ce = cross_entropy_logits(logits, b.targets);
    const ConstMatrixView lm = logits.matrix();
    for (std::size_t i = 0; i < b.targets.size(); ++i) {
      losses.push_back(ce.per_position[i]);
      correct.push_back(argmax_row(lm, static_cast<Eigen::Index>(i)) == static_cast<std::size_t>(b.targets[i]));
      k.push_back(b.k[i]);
    }
  }
  return summarize(losses, correct, k);
}

std::vector<TaskSample> eval_set(const TaskSpec& task, const TrainConfig& cfg) {
  return generate(task, derive_seed(cfg.seed, "eval"), cfg.eval_samples);
}

TrainOutput train_model(const ModelConfig& model_cfg, const TaskSpec& task, const TrainConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  model_cfg.validate();
  check_task_fits(model_cfg, task);

  ModelConfig init_cfg = model_cfg;
  init_cfg.seed = derive_seed(cfg.seed, "init");
  TrainOutput out{{}, build(init_cfg)};
  ModelState& state = out.state;
  RunResult& result = out.result;
  result.config = to_json(RunSpec{model_cfg, task, cfg});
  result.seed = cfg.seed;
  result.parameter_count = state.parameter_count();

  const auto held_out = eval_set(task, cfg);
  std::unordered_set<std::uint64_t> excluded;
  for (const auto& s : held_out) excluded.insert(sample_hash(s));

  std::vector<TaskSample> dataset;
  if (cfg.mode == TrainMode::Epochs) dataset = fresh_samples(task, cfg.seed, "train", 0, cfg.train_samples, excluded);

  const std::vector<Tensor> params = state.tensors();
  AdamW opt(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay);
  std::mt19937_64 dropout_rng(derive_seed(cfg.seed, "dropout"));
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<std::size_t> order(dataset.size());

  const std::size_t total = cfg.total_steps();
  const std::size_t every = cfg.eval_every ? cfg.eval_every : std::max<std::size_t>(1, total / 40);
  const std::size_t per_epoch = cfg.mode == TrainMode::Epochs ? (dataset.size() + cfg.batch_size - 1) / cfg.batch_size : 0;

  result.initial = evaluate(state, held_out);
  double window_loss = 0;
  std::size_t window_n = 0;
  std::vector<TaskSample> streamed;
  for (std::size_t step = 0; step < total; ++step) {
    std::vector<const TaskSample*> chunk;
    if (cfg.mode == TrainMode::Steps) {
      streamed = fresh_samples(task, cfg.seed, "train", step, cfg.batch_size, excluded);
      for (const auto& s : streamed) chunk.push_back(&s);
    } else {
      const std::size_t in_epoch = step % per_epoch;
      if (in_epoch == 0) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
      }
      const std::size_t lo = in_epoch * cfg.batch_size;
      for (std::size_t i = lo; i < std::min(dataset.size(), lo + cfg.batch_size); ++i) chunk.push_back(&dataset[order[i]]);
    }
    const Batch b = make_batch(chunk);

    double loss_value = 0;
    try {
      for (auto p : params) p.zero_grad();
      ForwardOptions fo;
      fo.logit_rows = &b.rows;
      fo.dropout_rng = &dropout_rng;
      const Tensor logits = forward(state, b.tokens, b.batch, b.seq_len, fo);
      const CrossEntropy ce = cross_entropy_logits(logits, b.targets);
      loss_value = ce.loss.item();
      ce.loss.backward();
      clip_grad_norm(params, cfg.grad_clip);
      opt.step(learning_rate(cfg, step));
      for (const auto& p : params) {
        for (double w : p.data()) {
          if (!std::isfinite(w)) throw NonFiniteError("non-finite parameter after update");
        }
      }
    } catch (const NonFiniteError& e) {
      throw DivergedError(step, e.what());
    }
    window_loss += loss_value;
    ++window_n;

    if ((step + 1) % every == 0 || step + 1 == total) {
      CurvePoint cp;
      cp.step = step + 1;
      cp.train_loss = window_loss / static_cast<double>(window_n);
      cp.eval = evaluate(state, held_out);
      result.curves.push_back(cp);
      window_loss = 0;
      window_n = 0;
    }
  }
  result.final_metrics = result.curves.empty() ? result.initial : result.curves.back().eval;
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

RunResult train(const ModelConfig& model_cfg, const TaskSpec& task, const TrainConfig& train_cfg) {
  return train_model(model_cfg, task, train_cfg).result;
}

CriticalGamma detect_critical_gamma(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) throw ContractError("detect_critical_gamma needs at least 3 points");
  CriticalGamma out;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const double dg = points[i + 1].first - points[i].first;
    if (!(dg > 0)) throw ContractError("gamma values must be strictly ascending");
    const double slope = std::abs((points[i + 1].second - points[i].second) / dg);
    if (slope > out.max_slope) {
      out.max_slope = slope;
      out.gamma_c = 0.5 * (points[i].first + points[i + 1].first);
    }
  }
  out.transition = out.max_slope >= 1e-6;
  if (!out.transition) out.gamma_c = 0;
  return out;
}

namespace {

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::optional<double> opt_from(const nlohmann::ordered_json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

EvalMetrics metrics_from_json(const nlohmann::ordered_json& j) {
  EvalMetrics m;
  m.accuracy = j.at("accuracy").get<double>();
  m.mean_loss = j.at("mean_loss").get<double>();
  m.n_targets = j.at("n_targets").get<std::size_t>();
  m.L_new = opt_from(j.at("L_new"));
  m.L_second = opt_from(j.at("L_second"));
  m.L_rep = opt_from(j.at("L_rep"));
  m.gap = opt_from(j.at("gap"));
  const auto& lk = j.at("loss_by_k");
  for (std::size_t b = 0; b < kLossByKBuckets && b < lk.size(); ++b) m.loss_by_k[b] = opt_from(lk[b]);
  return m;
}

std::string csv_value(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  return std::string(buf, std::to_chars(buf, buf + sizeof buf, *v).ptr);
}

}  // namespace

nlohmann::ordered_json to_json(const EvalMetrics& m) {
  nlohmann::ordered_json j;
  j["accuracy"] = m.accuracy;
  j["mean_loss"] = m.mean_loss;
  j["n_targets"] = m.n_targets;
  j["L_new"] = opt_json(m.L_new);
  j["L_second"] = opt_json(m.L_second);
  j["L_rep"] = opt_json(m.L_rep);
  j["gap"] = opt_json(m.gap);
  auto lk = nlohmann::ordered_json::array();
  for (const auto& v : m.loss_by_k) lk.push_back(opt_json(v));
  j["loss_by_k"] = lk;
  return j;
}

nlohmann::ordered_json to_json(const RunResult& r) {
  nlohmann::ordered_json j;
  j["format"] = "mattn-run";
  j["version"] = 1;
  j["config"] = r.config;
  j["seed"] = r.seed;
  j["parameter_count"] = r.parameter_count;
  j["status"] = r.status;
  j["diverged_step"] = r.diverged_step ? nlohmann::ordered_json(*r.diverged_step) : nlohmann::ordered_json(nullptr);
  j["error"] = r.error;
  j["initial"] = to_json(r.initial);
  auto curves = nlohmann::ordered_json::array();
  for (const auto& c : r.curves) {
    nlohmann::ordered_json cj;
    cj["step"] = c.step;
    cj["train_loss"] = c.train_loss;
    cj["eval"] = to_json(c.eval);
    curves.push_back(cj);
  }
  j["curves"] = curves;
  j["final"] = to_json(r.final_metrics);
  return j;
}

RunResult run_result_from_json(const nlohmann::ordered_json& j) {
  RunResult r;
  r.config = j.at("config");
  r.seed = j.at("seed").get<std::uint64_t>();
  r.parameter_count = j.at("parameter_count").get<std::size_t>();
  r.status = j.at("status").get<std::string>();
  if (!j.at("diverged_step").is_null()) r.diverged_step = j.at("diverged_step").get<std::size_t>();
  r.error = j.at("error").get<std::string>();
  r.initial = metrics_from_json(j.at("initial"));
  for (const auto& cj : j.at("curves")) {
    CurvePoint c;
    c.step = cj.at("step").get<std::size_t>();
    c.train_loss = cj.at("train_loss").get<double>();
    c.eval = metrics_from_json(cj.at("eval"));
    r.curves.push_back(c);
  }
  r.final_metrics = metrics_from_json(j.at("final"));
  return r;
}

std::string curves_csv(const RunResult& r) {
  std::ostringstream os;
  os << "step,train_loss,accuracy,L_new,L_second,L_rep,gap";
  for (std::size_t b = 0; b < kLossByKBuckets; ++b) os << ",k" << b;
  os << '\n';
  for (const auto& c : r.curves) {
    os << c.step << ',' << csv_value(c.train_loss) << ',' << csv_value(c.eval.accuracy) << ','
       << csv_value(c.eval.L_new) << ',' << csv_value(c.eval.L_second) << ',' << csv_value(c.eval.L_rep) << ','
       << csv_value(c.eval.gap);
    for (const auto& v : c.eval.loss_by_k) os << ',' << csv_value(v);
    os << '\n';
  }
  return os.str();
}

}  // namespace mattn
