#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "mattn/errors.hpp"
#include "mattn/tasks.hpp"

using namespace mattn;

namespace {

std::vector<TaskSpec> all_specs() {
  AnchoredChains ac;
  ac.vocab = 60;
  ac.anchor_id = 60;
  ac.chain_len = 4;
  ac.chains_per_seq = 3;
  ac.seq_len = 48;
  return {AssocRecall{}, Induction{}, ac, Majority{}, Parity{}, GlobalCount{}};
}

// Occurrence count oracle written independently of the library scan.
int count_upto(const TaskSample& s, std::size_t i) {
  int k = 0;
  for (std::size_t t = 0; t <= s.target_positions[i]; ++t) k += s.tokens[t] == s.targets[i];
  return k;
}

}  // namespace

TEST(Tasks, ShapesVocabAndCounts) {
  for (const auto& spec : all_specs()) {
    const auto samples = generate(spec, 7, 40);
    ASSERT_EQ(samples.size(), 40u);
    const auto vocab = required_vocab(spec);
    for (const auto& s : samples) {
      EXPECT_EQ(s.tokens.size(), sequence_length(spec)) << task_name(spec);
      EXPECT_EQ(s.task_tag, task_name(spec));
      ASSERT_EQ(s.targets.size(), s.target_positions.size());
      ASSERT_EQ(s.occurrence_count.size(), s.targets.size());
      EXPECT_FALSE(s.targets.empty());
      for (auto t : s.tokens) {
        EXPECT_GE(t, 0);
        EXPECT_LT(t, vocab);
      }
      for (std::size_t i = 0; i < s.targets.size(); ++i) {
        EXPECT_LT(s.targets[i], vocab);
        EXPECT_LT(s.target_positions[i], s.tokens.size());
        EXPECT_EQ(s.occurrence_count[i], count_upto(s, i));
      }
      EXPECT_EQ(recount_occurrences(s), s.occurrence_count);
    }
  }
}

TEST(Tasks, DeterministicAndSeedSensitive) {
  for (const auto& spec : all_specs()) {
    const auto a = generate(spec, 11, 20), b = generate(spec, 11, 20), c = generate(spec, 12, 20);
    std::size_t differ = 0;
    for (std::size_t i = 0; i < 20; ++i) {
      EXPECT_EQ(a[i].tokens, b[i].tokens);
      EXPECT_EQ(a[i].targets, b[i].targets);
      differ += a[i].tokens != c[i].tokens;
    }
    EXPECT_GT(differ, 0u) << task_name(spec);
  }
}

TEST(AssocRecallTask, TargetIsPairedValue) {
  const AssocRecall spec{6, 1, 20, 30, 40, true};
  for (const auto& s : gen_assoc_recall(spec, 3, 100)) {
    const auto q = s.tokens.back();
    std::set<std::int64_t> keys;
    std::int64_t paired = -1;
    for (std::size_t i = 0; i + 1 < s.tokens.size(); i += 2) {
      keys.insert(s.tokens[i]);
      EXPECT_GE(s.tokens[i], 1);
      EXPECT_LT(s.tokens[i], 20);
      EXPECT_GE(s.tokens[i + 1], 30);
      EXPECT_LT(s.tokens[i + 1], 40);
      if (s.tokens[i] == q) paired = s.tokens[i + 1];
    }
    EXPECT_EQ(keys.size(), 6u);
    ASSERT_EQ(s.targets.size(), 1u);
    EXPECT_EQ(s.targets[0], paired);
    EXPECT_EQ(s.target_positions[0], s.tokens.size() - 1);
    EXPECT_GE(s.occurrence_count[0], 1);
  }
  EXPECT_THROW(gen_assoc_recall({4, 1, 50, 40, 60, true}, 0, 1), ConfigError);
  EXPECT_THROW(gen_assoc_recall({10, 1, 5, 10, 20, true}, 0, 1), GenerationError);
}

TEST(InductionTask, NextTokenOfPeriodicPattern) {
  for (const auto& s : gen_induction(Induction{}, 5, 50)) {
    for (std::size_t i = 0; i < s.targets.size(); ++i) EXPECT_EQ(s.targets[i], s.tokens[s.target_positions[i] + 1]);
    // Supervision starts after the first full period; the period divides
    // into a repeating tiling.
    const std::size_t first = s.target_positions.front();
    const std::size_t period = first + 1;
    for (std::size_t t = period; t < s.tokens.size(); ++t) EXPECT_EQ(s.tokens[t], s.tokens[t - period]);
  }
}

TEST(MajorityTask, TargetIsUniqueMode) {
  const Majority spec{5, 21};
  for (const auto& s : gen_majority(spec, 9, 100)) {
    std::map<std::int64_t, int> freq;
    for (std::size_t t = 0; t + 1 < s.tokens.size(); ++t) ++freq[s.tokens[t]];
    EXPECT_EQ(s.tokens.back(), 5);
    int best = 0, ties = 0;
    std::int64_t arg = -1;
    for (auto [tok, c] : freq) {
      if (c > best) {
        best = c;
        arg = tok;
        ties = 1;
      } else if (c == best) {
        ++ties;
      }
    }
    EXPECT_EQ(ties, 1);
    EXPECT_EQ(s.targets[0], arg);
  }
}

TEST(ParityTask, TargetIsXor) {
  for (const auto& s : gen_parity(Parity{12}, 4, 100)) {
    int ones = 0;
    for (std::size_t t = 0; t < 12; ++t) ones += s.tokens[t] == 1;
    EXPECT_EQ(s.tokens.back(), 2);
    EXPECT_EQ(s.targets[0], ones % 2);
  }
}

TEST(GlobalCountTask, TargetEncodesCount) {
  const GlobalCount spec{6, 10};
  for (const auto& s : gen_global_count(spec, 2, 100)) {
    const auto q = s.tokens.back();
    int c = 0;
    for (std::size_t t = 0; t < 10; ++t) c += s.tokens[t] == q;
    EXPECT_EQ(s.tokens[10], 6);
    EXPECT_EQ(s.targets[0], 6 + 1 + c);
  }
}

TEST(AnchoredChainsTask, ChainsFollowAnchorsAndFirstVisitIsNovel) {
  const AnchoredChains spec = std::get<AnchoredChains>(all_specs()[2]);
  std::size_t repeats = 0;
  for (const auto& s : gen_anchored_chains(spec, 8, 60)) {
    for (std::size_t i = 0; i < s.targets.size(); ++i) {
      EXPECT_EQ(s.targets[i], s.tokens[s.target_positions[i] + 1]);
      // Each supervised run starts right after an anchor.
      if (i % spec.chain_len == 0) EXPECT_EQ(s.tokens[s.target_positions[i]], spec.anchor_id);
      // The first visit of a chain predicts a token never seen before.
      const auto& t = s.tokens;
      const bool seen_before =
          std::find(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(s.target_positions[i]) + 1, s.targets[i]) !=
          t.begin() + static_cast<std::ptrdiff_t>(s.target_positions[i]) + 1;
      EXPECT_EQ(seen_before, s.occurrence_count[i] > 0);
      repeats += s.occurrence_count[i] > 0;
    }
  }
  EXPECT_GT(repeats, 0u);
  AnchoredChains bad = spec;
  bad.anchor_id = 5;
  EXPECT_THROW(validate(TaskSpec{bad}), ConfigError);
}

TEST(Tasks, HashAndJsonlRoundTrip) {
  const auto samples = generate(AssocRecall{}, 1, 30);
  std::set<std::uint64_t> hashes;
  for (const auto& s : samples) hashes.insert(sample_hash(s));
  EXPECT_EQ(hashes.size(), 30u);
  EXPECT_EQ(sample_hash(samples[0]), sample_hash(generate(AssocRecall{}, 1, 1)[0]));

  const auto path = std::filesystem::temp_directory_path() / "mattn_tasks_roundtrip.jsonl";
  write_jsonl(samples, path);
  const auto back = read_jsonl(path);
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].tokens, samples[i].tokens);
    EXPECT_EQ(back[i].targets, samples[i].targets);
    EXPECT_EQ(back[i].target_positions, samples[i].target_positions);
    EXPECT_EQ(back[i].occurrence_count, samples[i].occurrence_count);
    EXPECT_EQ(back[i].task_tag, samples[i].task_tag);
  }
  std::filesystem::remove(path);
}
