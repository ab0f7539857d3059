#include "mattn/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_set>

#include <json.hpp>

#include "mattn/errors.hpp"

namespace mattn {

namespace {

using Rng = std::mt19937_64;

std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi_exclusive) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi_exclusive - 1)(rng);
}

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

void supervise(TaskSample& s, std::size_t position, std::int64_t target) {
  s.target_positions.push_back(position);
  s.targets.push_back(target);
}

void finish(TaskSample& s, std::string tag) {
  s.task_tag = std::move(tag);
  s.occurrence_count = recount_occurrences(s);
}

// Draws `count` distinct values from [lo, hi) by partial Fisher-Yates.
std::vector<std::int64_t> distinct(Rng& rng, std::int64_t lo, std::int64_t hi, std::size_t count) {
  std::vector<std::int64_t> pool(static_cast<std::size_t>(hi - lo));
  std::iota(pool.begin(), pool.end(), lo);
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                        static_cast<std::int64_t>(pool.size())));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace

std::string task_name(const TaskSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::string {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, AssocRecall>) return "assoc_recall";
        if constexpr (std::is_same_v<S, Induction>) return "induction";
        if constexpr (std::is_same_v<S, AnchoredChains>) return "anchored_chains";
        if constexpr (std::is_same_v<S, Majority>) return "majority";
        if constexpr (std::is_same_v<S, Parity>) return "parity";
        return "global_count";
      },
      spec);
}

void validate(const TaskSpec& spec) {
  std::visit(
      [](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, AssocRecall>) {
          if (s.n_pairs == 0) throw ConfigError("assoc_recall: n_pairs must be positive");
          if (s.key_lo < 0 || s.key_hi <= s.key_lo || s.val_lo < 0 || s.val_hi <= s.val_lo) {
            throw ConfigError("assoc_recall: empty or negative key/value range");
          }
          if (s.disjoint && s.key_lo < s.val_hi && s.val_lo < s.key_hi) {
            throw ConfigError("assoc_recall: key and value ranges overlap");
          }
          if (static_cast<std::size_t>(s.key_hi - s.key_lo) < s.n_pairs) {
            throw GenerationError("assoc_recall: key range holds fewer than n_pairs distinct keys");
          }
        } else if constexpr (std::is_same_v<S, Induction>) {
          if (s.vocab < 2) throw ConfigError("induction: vocab must be >= 2");
          if (s.period_choices.empty()) throw ConfigError("induction: period_choices is empty");
          for (auto p : s.period_choices) {
            if (p == 0 || p >= s.length) throw ConfigError("induction: every period must lie in [1, length)");
            if (static_cast<std::int64_t>(p) > s.vocab) throw ConfigError("induction: period exceeds vocab");
          }
        } else if constexpr (std::is_same_v<S, AnchoredChains>) {
          if (s.chain_len == 0 || s.chains_per_seq == 0) throw ConfigError("anchored_chains: empty chains");
          if (s.anchor_id >= 0 && s.anchor_id < s.vocab) {
            throw ConfigError("anchored_chains: anchor_id lies inside the content range");
          }
          if (s.anchor_id < 0) throw ConfigError("anchored_chains: anchor_id must be >= 0");
          for (double p : {s.insert_p, s.query_p, s.noise_p}) {
            if (!(p >= 0)) throw ConfigError("anchored_chains: probabilities must be >= 0");
          }
          if (!(s.insert_p > 0)) throw ConfigError("anchored_chains: insert_p must be positive");
          if (s.seq_len < s.chain_len + 2) throw GenerationError("anchored_chains: seq_len cannot hold one chain");
          if (static_cast<std::size_t>(s.vocab) < s.chains_per_seq * s.chain_len + 1) {
            throw GenerationError("anchored_chains: content vocab too small for unique chain tokens");
          }
        } else if constexpr (std::is_same_v<S, Majority>) {
          if (s.vocab < 2 || s.length == 0) throw ConfigError("majority: vocab >= 2 and length >= 1 required");
        } else if constexpr (std::is_same_v<S, Parity>) {
          if (s.length == 0) throw ConfigError("parity: length must be positive");
        } else {
          if (s.vocab < 1 || s.length == 0) throw ConfigError("global_count: vocab and length must be positive");
        }
      },
      spec);
}

std::int64_t required_vocab(const TaskSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::int64_t {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, AssocRecall>) {
          return std::max(s.key_hi, s.val_hi);
        } else if constexpr (std::is_same_v<S, Induction>) {
          return s.vocab;
        } else if constexpr (std::is_same_v<S, AnchoredChains>) {
          return std::max(s.vocab, s.anchor_id + 1);
        } else if constexpr (std::is_same_v<S, Majority>) {
          return s.vocab + 1;
        } else if constexpr (std::is_same_v<S, Parity>) {
          return 3;
        } else {
          return s.vocab + 1 + static_cast<std::int64_t>(s.length) + 1;
        }
      },
      spec);
}

std::size_t sequence_length(const TaskSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::size_t {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, AssocRecall>) {
          return 2 * s.n_pairs + 1;
        } else if constexpr (std::is_same_v<S, Induction>) {
          return s.length;
        } else if constexpr (std::is_same_v<S, AnchoredChains>) {
          return s.seq_len;
        } else if constexpr (std::is_same_v<S, GlobalCount>) {
          return s.length + 2;
        } else {
          return s.length + 1;
        }
      },
      spec);
}

std::vector<TaskSample> gen_assoc_recall(const AssocRecall& spec, std::uint64_t seed, std::size_t n) {
  validate(spec);
  Rng rng(seed);
  std::vector<TaskSample> out(n);
  for (auto& s : out) {
    const auto keys = distinct(rng, spec.key_lo, spec.key_hi, spec.n_pairs);
    std::vector<std::int64_t> vals(spec.n_pairs);
    for (auto& v : vals) v = uniform_int(rng, spec.val_lo, spec.val_hi);
    for (std::size_t i = 0; i < spec.n_pairs; ++i) {
      s.tokens.push_back(keys[i]);
      s.tokens.push_back(vals[i]);
    }
    const auto q = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(spec.n_pairs)));
    s.tokens.push_back(keys[q]);
    supervise(s, s.tokens.size() - 1, vals[q]);
    finish(s, "assoc_recall");
  }
  return out;
}

std::vector<TaskSample> gen_induction(const Induction& spec, std::uint64_t seed, std::size_t n) {
  validate(spec);
  Rng rng(seed);
  std::vector<TaskSample> out(n);
  for (auto& s : out) {
    const std::size_t period =
        spec.period_choices[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(spec.period_choices.size())))];
    const auto pattern = distinct(rng, 0, spec.vocab, period);
    for (std::size_t t = 0; t < spec.length; ++t) s.tokens.push_back(pattern[t % period]);
    // Once one full period has been seen every next token is determined.
    for (std::size_t t = period - 1; t + 1 < spec.length; ++t) supervise(s, t, s.tokens[t + 1]);
    finish(s, "induction");
  }
  return out;
}

std::vector<TaskSample> gen_anchored_chains(const AnchoredChains& spec, std::uint64_t seed, std::size_t n) {
  validate(spec);
  Rng rng(seed);
  const double total_p = spec.insert_p + spec.query_p + spec.noise_p;
  std::vector<TaskSample> out(n);
  for (auto& s : out) {
    std::vector<std::vector<std::int64_t>> chains;
    std::unordered_set<std::int64_t> seen;

    auto fresh_token = [&](const std::unordered_set<std::int64_t>& exclude) {
      const std::size_t free = static_cast<std::size_t>(spec.vocab) - exclude.size();
      if (free == 0) throw GenerationError("anchored_chains: no free content token left");
      auto r = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(free)));
      for (std::int64_t tok = 0; tok < spec.vocab; ++tok) {
        if (exclude.count(tok)) continue;
        if (r-- == 0) return tok;
      }
      throw GenerationError("anchored_chains: token sampling failed");
    };
    auto emit_chain = [&](const std::vector<std::int64_t>& chain) {
      s.tokens.push_back(spec.anchor_id);
      for (auto tok : chain) {
        supervise(s, s.tokens.size() - 1, tok);
        s.tokens.push_back(tok);
        seen.insert(tok);
      }
    };
    std::unordered_set<std::int64_t> chain_tokens;

    while (s.tokens.size() < spec.seq_len) {
      const std::size_t room = spec.seq_len - s.tokens.size();
      const double r = uniform01(rng) * total_p;
      const bool fits = room >= spec.chain_len + 1;
      if (r < spec.insert_p && fits && chains.size() < spec.chains_per_seq) {
        // New chains avoid every token already in the sequence, so the first
        // visit of a chain is genuinely novel (k = 0).
        std::unordered_set<std::int64_t> exclude = seen;
        std::vector<std::int64_t> chain;
        for (std::size_t i = 0; i < spec.chain_len; ++i) {
          chain.push_back(fresh_token(exclude));
          exclude.insert(chain.back());
        }
        chain_tokens.insert(chain.begin(), chain.end());
        chains.push_back(chain);
        emit_chain(chain);
      } else if (r >= spec.insert_p && r < spec.insert_p + spec.query_p && fits && !chains.empty()) {
        const auto c = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(chains.size())));
        emit_chain(chains[c]);
      } else {
        const auto tok = fresh_token(chain_tokens);
        s.tokens.push_back(tok);
        seen.insert(tok);
      }
    }
    finish(s, "anchored_chains");
  }
  return out;
}

std::vector<TaskSample> gen_majority(const Majority& spec, std::uint64_t seed, std::size_t n) {
  validate(spec);
  Rng rng(seed);
  std::vector<TaskSample> out(n);
  for (auto& s : out) {
    std::vector<std::size_t> counts;
    std::int64_t winner = 0;
    for (;;) {
      s.tokens.assign(spec.length, 0);
      counts.assign(static_cast<std::size_t>(spec.vocab), 0);
      for (auto& t : s.tokens) {
        t = uniform_int(rng, 0, spec.vocab);
        ++counts[static_cast<std::size_t>(t)];
      }
      const auto best = std::max_element(counts.begin(), counts.end());
      if (std::count(counts.begin(), counts.end(), *best) == 1) {
        winner = best - counts.begin();
        break;
      }
    }
    s.tokens.push_back(spec.vocab);  // SEP
    supervise(s, s.tokens.size() - 1, winner);
    finish(s, "majority");
  }
  return out;
}

std::vector<TaskSample> gen_parity(const Parity& spec, std::uint64_t seed, std::size_t n) {
  validate(spec);
  Rng rng(seed);
  std::vector<TaskSample> out(n);
  for (auto& s : out) {
    std::int64_t parity = 0;
    for (std::size_t t = 0; t < spec.length; ++t) {
      s.tokens.push_back(uniform_int(rng, 0, 2));
      parity ^= s.tokens.back();
    }
    s.tokens.push_back(2);  // SEP
    supervise(s, s.tokens.size() - 1, parity);
    finish(s, "parity");
  }
  return out;
}

std::vector<TaskSample> gen_global_count(const GlobalCount& spec, std::uint64_t seed, std::size_t n) {
  validate(spec);
  Rng rng(seed);
  std::vector<TaskSample> out(n);
  for (auto& s : out) {
    for (std::size_t t = 0; t < spec.length; ++t) s.tokens.push_back(uniform_int(rng, 0, spec.vocab));
    const std::int64_t q = uniform_int(rng, 0, spec.vocab);
    const auto count = std::count(s.tokens.begin(), s.tokens.end(), q);
    s.tokens.push_back(spec.vocab);  // SEP
    s.tokens.push_back(q);
    supervise(s, s.tokens.size() - 1, spec.vocab + 1 + count);
    finish(s, "global_count");
  }
  return out;
}

std::vector<TaskSample> generate(const TaskSpec& spec, std::uint64_t seed, std::size_t n) {
  return std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, AssocRecall>) return gen_assoc_recall(s, seed, n);
        if constexpr (std::is_same_v<S, Induction>) return gen_induction(s, seed, n);
        if constexpr (std::is_same_v<S, AnchoredChains>) return gen_anchored_chains(s, seed, n);
        if constexpr (std::is_same_v<S, Majority>) return gen_majority(s, seed, n);
        if constexpr (std::is_same_v<S, Parity>) return gen_parity(s, seed, n);
        if constexpr (std::is_same_v<S, GlobalCount>) return gen_global_count(s, seed, n);
      },
      spec);
}

std::vector<int> recount_occurrences(const TaskSample& s) {
  std::vector<int> k;
  k.reserve(s.targets.size());
  for (std::size_t i = 0; i < s.targets.size(); ++i) {
    const auto end = s.tokens.begin() + static_cast<std::ptrdiff_t>(s.target_positions[i]) + 1;
    k.push_back(static_cast<int>(std::count(s.tokens.begin(), end, s.targets[i])));
  }
  return k;
}

std::uint64_t sample_hash(const TaskSample& s) {
  // FNV-1a over the token bytes.
  std::uint64_t h = 1469598103934665603ULL;
  for (auto t : s.tokens) {
    auto v = static_cast<std::uint64_t>(t);
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xff;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

void write_jsonl(const std::vector<TaskSample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["tokens"] = s.tokens;
    j["targets"] = s.targets;
    j["target_positions"] = s.target_positions;
    j["k"] = s.occurrence_count;
    j["task_tag"] = s.task_tag;
    out << j.dump() << '\n';
  }
}

std::vector<TaskSample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<TaskSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    TaskSample s;
    j.at("tokens").get_to(s.tokens);
    j.at("targets").get_to(s.targets);
    j.at("target_positions").get_to(s.target_positions);
    j.at("k").get_to(s.occurrence_count);
    j.at("task_tag").get_to(s.task_tag);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace mattn
