#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mattn/model.hpp"
#include "mattn/tasks.hpp"

namespace mattn {

enum class Schedule { Cosine, Constant };
enum class TrainMode { Steps, Epochs };

std::string to_string(Schedule s);
std::string to_string(TrainMode m);
Schedule parse_schedule(const std::string& s);
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::Steps;
  /// Steps mode: optimizer steps over freshly generated batches.
  std::size_t steps = 2000;
  /// Epochs mode: passes over a fixed set of `train_samples`.
  std::size_t epochs = 0;
  std::size_t train_samples = 0;
  std::size_t batch_size = 32;
  double lr = 3e-4;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 100;
  Schedule schedule = Schedule::Cosine;
  double grad_clip = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  double adam_eps = 1e-8;
  std::size_t eval_samples = 500;
  /// 0 selects max(1, total_steps / 40).
  std::size_t eval_every = 0;
  std::uint64_t seed = 0;

  std::size_t total_steps() const;
  void validate() const;
};

/// Learning rate at optimizer step `step` (0-based): linear warmup to `lr`,
/// then cosine decay to 0 over the remaining steps (or constant).
double learning_rate(const TrainConfig& cfg, std::size_t step);

/// Decoupled-weight-decay Adam. Weight decay touches rank >= 2 parameters
/// only (embeddings and projection matrices; not gains or biases).
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, double beta1, double beta2, double eps, double weight_decay);
  void step(double lr);
  std::size_t step_count() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_, wd_;
  std::size_t t_ = 0;
};

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

inline constexpr std::size_t kLossByKBuckets = 20;

struct EvalMetrics {
  double accuracy = 0;
  double mean_loss = 0;
  std::size_t n_targets = 0;
  /// Mean loss at k = 0 / k = 1 / k >= 1; absent when the bucket is empty.
  std::optional<double> L_new, L_second, L_rep;
  /// L_new - L_second.
  std::optional<double> gap;
  std::array<std::optional<double>, kLossByKBuckets> loss_by_k{};
};

/// Loss bucketing from per-target losses, predictions and counts.
EvalMetrics summarize(const std::vector<double>& losses, const std::vector<bool>& correct,
                      const std::vector<int>& k);

/// Accuracy and loss decomposition of `state` on `samples` (no gradients).
EvalMetrics evaluate(const ModelState& state, const std::vector<TaskSample>& samples, std::size_t batch_size = 64);

struct CurvePoint {
  std::size_t step = 0;
  /// Mean training loss over the steps since the previous record.
  double train_loss = 0;
  EvalMetrics eval;
};

struct RunResult {
  nlohmann::ordered_json config;
  std::uint64_t seed = 0;
  std::size_t parameter_count = 0;
  std::string status = "ok";
  std::optional<std::size_t> diverged_step;
  std::string error;
  EvalMetrics initial;
  std::vector<CurvePoint> curves;
  EvalMetrics final_metrics;
  /// Wall-clock seconds; kept out of the JSON so results stay byte-identical.
  double wall_seconds = 0;
};

struct TrainOutput {
  RunResult result;
  ModelState state;
};

/// Full run: held-out evaluation set and training stream from disjoint seed
/// streams of `train_cfg.seed`; model initialized from a seed derived from
/// it. A non-finite loss throws DivergedError with the step index.
TrainOutput train_model(const ModelConfig& model_cfg, const TaskSpec& task, const TrainConfig& train_cfg);
RunResult train(const ModelConfig& model_cfg, const TaskSpec& task, const TrainConfig& train_cfg);

/// Fixed-seed held-out set used by `train` for evaluation.
std::vector<TaskSample> eval_set(const TaskSpec& task, const TrainConfig& cfg);

struct CriticalGamma {
  bool transition = false;
  double gamma_c = 0;
  double max_slope = 0;
};

/// Midpoint of the earliest interval maximizing |d acc / d gamma|; no
/// transition when the steepest slope is below 1e-6.
CriticalGamma detect_critical_gamma(const std::vector<std::pair<double, double>>& points);

nlohmann::ordered_json to_json(const EvalMetrics& m);
nlohmann::ordered_json to_json(const RunResult& r);
RunResult run_result_from_json(const nlohmann::ordered_json& j);
/// Curve CSV: step,train_loss,accuracy,L_new,L_second,L_rep,gap,k0..k19.
std::string curves_csv(const RunResult& r);

}  // namespace mattn
