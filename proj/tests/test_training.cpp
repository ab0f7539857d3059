#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "mattn/training.hpp"

using namespace mattn;

namespace {

ModelConfig small_model(double gamma = 0.0) {
  ModelConfig c;
  c.vocab = 8;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 32;
  c.max_seq = 16;
  c.momentum = {gamma, 0.0};
  return c;
}

TaskSpec copy_task() {
  Induction t;
  t.vocab = 8;
  t.period_choices = {2, 3};
  t.length = 12;
  return t;
}

TrainConfig short_run(std::size_t steps = 40) {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = 8;
  c.lr = 3e-3;
  c.warmup_steps = 5;
  c.eval_samples = 64;
  c.eval_every = 10;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Schedule, WarmupThenCosine) {
  TrainConfig c;
  c.lr = 1.0;
  c.steps = 110;
  c.warmup_steps = 10;
  EXPECT_NEAR(learning_rate(c, 0), 0.1, 1e-15);
  EXPECT_NEAR(learning_rate(c, 9), 1.0, 1e-15);
  EXPECT_NEAR(learning_rate(c, 10), 1.0, 1e-15);
  EXPECT_NEAR(learning_rate(c, 60), 0.5, 1e-12);
  EXPECT_NEAR(learning_rate(c, 35), 0.5 * (1 + std::cos(std::numbers::pi * 0.25)), 1e-12);
  EXPECT_NEAR(learning_rate(c, 110), 0.0, 1e-15);
  c.schedule = Schedule::Constant;
  EXPECT_EQ(learning_rate(c, 80), 1.0);
}

TEST(TrainConfigValidation, Errors) {
  TrainConfig c;
  c.steps = 5;
  c.warmup_steps = 10;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.mode = TrainMode::Epochs;
  EXPECT_THROW(c.validate(), ConfigError);
  c.epochs = 2;
  c.train_samples = 64;
  c.batch_size = 16;
  c.warmup_steps = 0;
  EXPECT_EQ(c.total_steps(), 8u);
}

TEST(AdamW, FirstStepMatchesHandComputation) {
  Tensor w = Tensor::from({2, 1}, {1.0, -2.0}, true);
  Tensor b = Tensor::from({1}, {0.5}, true);
  sum(add(mul(w, w), Tensor::zeros({2, 1}))).backward();
  sum(scale(b, 3.0)).backward();
  AdamW opt({w, b}, 0.9, 0.95, 1e-8, 0.1);
  opt.step(0.01);
  // Bias-corrected first step moves each weight by lr * sign(g); decay
  // applies to the matrix only.
  EXPECT_NEAR(w[0], 1.0 * (1 - 0.001) - 0.01, 1e-9);
  EXPECT_NEAR(w[1], -2.0 * (1 - 0.001) + 0.01, 1e-9);
  EXPECT_NEAR(b[0], 0.5 - 0.01, 1e-9);
  EXPECT_EQ(opt.step_count(), 1u);
}

TEST(ClipGradNorm, ScalesJointly) {
  Tensor a = Tensor::from({2}, {0, 0}, true), b = Tensor::from({1}, {0}, true);
  sum(add(scale(a, 3.0), Tensor::zeros({2}))).backward();
  sum(scale(b, 4.0)).backward();
  // Grads (3, 3) and (4): norm sqrt(34).
  EXPECT_NEAR(clip_grad_norm({a, b}, 1.0), std::sqrt(34.0), 1e-12);
  const double s = 1.0 / std::sqrt(34.0);
  EXPECT_NEAR(a.grad()[0], 3 * s, 1e-12);
  EXPECT_NEAR(b.grad()[0], 4 * s, 1e-12);
}

TEST(Summarize, Buckets) {
  const std::vector<double> loss{1, 2, 3, 4, 5};
  const std::vector<bool> ok{true, false, true, true, false};
  const std::vector<int> k{0, 0, 1, 2, 25};
  const EvalMetrics m = summarize(loss, ok, k);
  EXPECT_EQ(m.n_targets, 5u);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.6);
  EXPECT_DOUBLE_EQ(m.mean_loss, 3.0);
  EXPECT_DOUBLE_EQ(*m.L_new, 1.5);
  EXPECT_DOUBLE_EQ(*m.L_second, 3.0);
  EXPECT_DOUBLE_EQ(*m.gap, -1.5);
  EXPECT_DOUBLE_EQ(*m.L_rep, 4.0);
  EXPECT_DOUBLE_EQ(*m.loss_by_k[2], 4.0);
  EXPECT_FALSE(m.loss_by_k[3].has_value());
  const EvalMetrics none = summarize({1.0}, {true}, {0});
  EXPECT_FALSE(none.L_rep.has_value());
  EXPECT_FALSE(none.gap.has_value());
}

TEST(CriticalGamma, Detection) {
  const auto c = detect_critical_gamma({{0, 0.05}, {0.5, 0.06}, {1.0, 0.6}, {1.5, 0.62}});
  EXPECT_TRUE(c.transition);
  EXPECT_DOUBLE_EQ(c.gamma_c, 0.75);
  EXPECT_NEAR(c.max_slope, 1.08, 1e-12);
  EXPECT_FALSE(detect_critical_gamma({{0, 0.3}, {1, 0.3}, {2, 0.3}}).transition);
  EXPECT_THROW(detect_critical_gamma({{0, 0}, {1, 1}}), ContractError);
  EXPECT_THROW(detect_critical_gamma({{0, 0}, {0, 1}, {1, 1}}), ContractError);
}

TEST(Train, LearnsAndIsDeterministic) {
  const RunResult a = train(small_model(0.3), copy_task(), short_run(150));
  EXPECT_EQ(a.status, "ok");
  EXPECT_GT(a.final_metrics.accuracy, a.initial.accuracy + 0.2);
  EXPECT_EQ(a.curves.size(), 15u);
  EXPECT_EQ(a.curves.back().step, 150u);
  const RunResult b = train(small_model(0.3), copy_task(), short_run(150));
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  TrainConfig other = short_run(150);
  other.seed = 4;
  EXPECT_NE(to_json(train(small_model(0.3), copy_task(), other)).dump(), to_json(a).dump());
}

TEST(Train, JsonAndCsvRoundTrip) {
  const RunResult r = train(small_model(), copy_task(), short_run());
  const RunResult back = run_result_from_json(to_json(r));
  EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
  const std::string csv = curves_csv(r);
  std::istringstream in(csv);
  std::string header;
  std::getline(in, header);
  std::string expect = "step,train_loss,accuracy,L_new,L_second,L_rep,gap";
  for (int k = 0; k < 20; ++k) expect += ",k" + std::to_string(k);
  EXPECT_EQ(header, expect);
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) lines += !line.empty();
  EXPECT_EQ(lines, r.curves.size());
}

TEST(Train, EvalSetIsFixedAndDisjointFromTraining) {
  const TrainConfig c = short_run();
  const auto a = eval_set(copy_task(), c), b = eval_set(copy_task(), c);
  ASSERT_EQ(a.size(), c.eval_samples);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].tokens, b[i].tokens);
}

TEST(Train, DivergenceIsReported) {
  TrainConfig c = short_run(30);
  c.lr = 1e200;
  c.grad_clip = 0;
  c.warmup_steps = 0;
  c.schedule = Schedule::Constant;
  EXPECT_THROW(train(small_model(), copy_task(), c), DivergedError);
}

TEST(Train, VocabTooSmallIsConfigError) {
  ModelConfig m = small_model();
  m.vocab = 4;
  EXPECT_THROW(train(m, copy_task(), short_run()), ConfigError);
}
