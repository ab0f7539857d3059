#pragma once

// Synthetic in-context-learning tasks. Every generator is a pure function of
// (spec, seed, n): content tokens come first in the vocabulary, task markers
// (SEP, anchors, count tokens) are appended after them.

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace mattn {

struct TaskSample {
  std::vector<std::int64_t> tokens;
  /// Position whose logits predict the matching entry of `targets`.
  std::vector<std::size_t> target_positions;
  std::vector<std::int64_t> targets;
  /// Times the target token already appeared in `tokens` up to and including
  /// its target position.
  std::vector<int> occurrence_count;
  std::string task_tag;
};

/// [K_0, V_0, ..., K_{n-1}, V_{n-1}, Q]; target at Q is the paired value.
struct AssocRecall {
  std::size_t n_pairs = 8;
  std::int64_t key_lo = 1, key_hi = 100;
  std::int64_t val_lo = 100, val_hi = 200;
  /// When false, keys and values may share a range (values are then drawn
  /// independently; only keys are unique).
  bool disjoint = true;
};

/// A random pattern of a sampled period, tiled to `length`.
struct Induction {
  std::int64_t vocab = 64;
  std::vector<std::size_t> period_choices{2, 3, 4};
  std::size_t length = 32;
};

/// Chains [anchor, c_1, ..., c_L] inserted into a noise stream and replayed.
struct AnchoredChains {
  std::int64_t vocab = 998;
  std::int64_t anchor_id = 999;
  std::size_t chain_len = 10;
  std::size_t chains_per_seq = 4;
  double insert_p = 0.4;
  double query_p = 0.4;
  double noise_p = 0.2;
  std::size_t seq_len = 128;
};

/// Content, SEP; target at SEP is the most frequent content token.
struct Majority {
  std::int64_t vocab = 8;
  std::size_t length = 32;
};

/// Bits (tokens 0/1), SEP; target at SEP is the parity bit.
struct Parity {
  std::size_t length = 16;
};

/// Content, SEP, q; target at q is the count token vocab + 1 + #q.
struct GlobalCount {
  std::int64_t vocab = 8;
  std::size_t length = 16;
};

using TaskSpec = std::variant<AssocRecall, Induction, AnchoredChains, Majority, Parity, GlobalCount>;

std::string task_name(const TaskSpec& spec);
void validate(const TaskSpec& spec);
/// Smallest model vocabulary that can represent every token and target.
std::int64_t required_vocab(const TaskSpec& spec);
/// Length of every generated sequence.
std::size_t sequence_length(const TaskSpec& spec);

std::vector<TaskSample> gen_assoc_recall(const AssocRecall& spec, std::uint64_t seed, std::size_t n);
std::vector<TaskSample> gen_induction(const Induction& spec, std::uint64_t seed, std::size_t n);
std::vector<TaskSample> gen_anchored_chains(const AnchoredChains& spec, std::uint64_t seed, std::size_t n);
std::vector<TaskSample> gen_majority(const Majority& spec, std::uint64_t seed, std::size_t n);
std::vector<TaskSample> gen_parity(const Parity& spec, std::uint64_t seed, std::size_t n);
std::vector<TaskSample> gen_global_count(const GlobalCount& spec, std::uint64_t seed, std::size_t n);
std::vector<TaskSample> generate(const TaskSpec& spec, std::uint64_t seed, std::size_t n);

/// Recomputes occurrence counts by linear scan.
std::vector<int> recount_occurrences(const TaskSample& s);

/// Hash of the token sequence, for train/test disjointness.
std::uint64_t sample_hash(const TaskSample& s);

/// One JSON object per line: tokens, targets, target_positions, k, task_tag.
void write_jsonl(const std::vector<TaskSample>& samples, const std::filesystem::path& path);
std::vector<TaskSample> read_jsonl(const std::filesystem::path& path);

}  // namespace mattn
