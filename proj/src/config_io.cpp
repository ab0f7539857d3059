#include "mattn/config_io.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace mattn {

namespace {

// Strict field reader: every key must be consumed by exactly one getter.
class Reader {
 public:
  Reader(const Json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw ConfigError("[" + section_ + "] must be a table");
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    const Json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("expected a number");
        out = v.get<double>();
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("expected true/false");
        out = v.get<bool>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("expected a string");
        out = v.get<std::string>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("expected an integer");
        if (std::is_unsigned_v<T> && v.get<std::int64_t>() < 0 && !v.is_number_unsigned()) {
          throw ConfigError("expected a non-negative integer");
        }
        out = v.get<T>();
      } else {
        out = v.get<T>();
      }
    } catch (const ConfigError& e) {
      throw ConfigError(section_ + "." + key + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(section_ + "." + key + ": " + e.what());
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw ConfigError("unknown key '" + section_ + "." + k + "'");
    }
  }

  void mark(const char* key) { used_.insert(key); }

 private:
  const Json& j_;
  std::string section_;
  std::set<std::string> used_;
};

ModelConfig preset(const std::string& name) {
  if (name == "single_layer_induction") return presets::single_layer_induction();
  if (name == "beta_sweep") return presets::beta_sweep();
  if (name == "anchored_chains") return presets::anchored_chains();
  throw ConfigError("model.preset: unknown preset '" + name +
                    "' (single_layer_induction, beta_sweep, anchored_chains)");
}

}  // namespace

Json to_json(const ModelConfig& c) {
  Json j;
  j["vocab"] = c.vocab;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["n_layers"] = c.n_layers;
  j["d_ff"] = c.d_ff;
  j["max_seq"] = c.max_seq;
  j["encoding"] = encoding_name(c.encoding);
  double base = 10000.0, theta = 0.1, halfwidth = 0.2;
  if (const auto* mf = std::get_if<MultiFrequency>(&c.encoding)) base = mf->base;
  if (const auto* sa = std::get_if<SinusoidalAdditive>(&c.encoding)) base = sa->base;
  if (const auto* mono = std::get_if<Monochromatic>(&c.encoding)) theta = mono->theta;
  if (const auto* bp = std::get_if<Bandpass>(&c.encoding)) {
    theta = bp->theta;
    halfwidth = bp->halfwidth_fraction;
  }
  j["rope_base"] = base;
  j["theta"] = theta;
  j["halfwidth"] = halfwidth;
  j["placement"] = to_string(c.placement);
  j["gamma"] = c.momentum.gamma;
  j["beta"] = c.momentum.beta;
  j["norm"] = to_string(c.norm_kind);
  j["ffn"] = to_string(c.ffn_activation);
  j["ffn_bias"] = c.ffn_bias;
  j["tied_head"] = c.tied_head;
  j["dropout"] = c.dropout;
  j["norm_eps"] = c.norm_eps;
  j["init_std"] = c.init_std;
  return j;
}

ModelConfig model_config_from_json(const Json& j) {
  Reader r(j, "model");
  std::string preset_name;
  r.get("preset", preset_name);
  ModelConfig c = preset_name.empty() ? ModelConfig{} : preset(preset_name);
  r.get("vocab", c.vocab);
  r.get("d_model", c.d_model);
  r.get("n_heads", c.n_heads);
  r.get("n_layers", c.n_layers);
  r.get("d_ff", c.d_ff);
  r.get("max_seq", c.max_seq);

  std::string enc = encoding_name(c.encoding);
  r.get("encoding", enc);
  double base = 10000.0, theta = 0.1, halfwidth = 0.2;
  r.get("rope_base", base);
  r.get("theta", theta);
  r.get("halfwidth", halfwidth);
  if (enc == "rope") c.encoding = MultiFrequency{base};
  else if (enc == "mono") c.encoding = Monochromatic{theta};
  else if (enc == "bandpass") c.encoding = Bandpass{theta, halfwidth};
  else if (enc == "sinusoidal") c.encoding = SinusoidalAdditive{base};
  else if (enc == "nope") c.encoding = NoPE{};
  else throw ConfigError("model.encoding: unknown encoding '" + enc + "' (rope, mono, bandpass, sinusoidal, nope)");

  std::string s = to_string(c.placement);
  r.get("placement", s);
  c.placement = parse_placement(s);
  r.get("gamma", c.momentum.gamma);
  r.get("beta", c.momentum.beta);
  s = to_string(c.norm_kind);
  r.get("norm", s);
  c.norm_kind = parse_norm_kind(s);
  s = to_string(c.ffn_activation);
  r.get("ffn", s);
  c.ffn_activation = parse_ffn_activation(s);
  r.get("ffn_bias", c.ffn_bias);
  r.get("tied_head", c.tied_head);
  r.get("dropout", c.dropout);
  r.get("norm_eps", c.norm_eps);
  r.get("init_std", c.init_std);
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return c;
}

Json to_json(const TaskSpec& t) {
  Json j;
  j["kind"] = task_name(t);
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, AssocRecall>) {
          j["n_pairs"] = s.n_pairs;
          j["key_lo"] = s.key_lo;
          j["key_hi"] = s.key_hi;
          j["val_lo"] = s.val_lo;
          j["val_hi"] = s.val_hi;
          j["disjoint"] = s.disjoint;
        } else if constexpr (std::is_same_v<S, Induction>) {
          j["vocab"] = s.vocab;
          j["periods"] = s.period_choices;
          j["length"] = s.length;
        } else if constexpr (std::is_same_v<S, AnchoredChains>) {
          j["vocab"] = s.vocab;
          j["anchor_id"] = s.anchor_id;
          j["chain_len"] = s.chain_len;
          j["chains_per_seq"] = s.chains_per_seq;
          j["insert_p"] = s.insert_p;
          j["query_p"] = s.query_p;
          j["noise_p"] = s.noise_p;
          j["seq_len"] = s.seq_len;
        } else if constexpr (std::is_same_v<S, Parity>) {
          j["length"] = s.length;
        } else {
          j["vocab"] = s.vocab;
          j["length"] = s.length;
        }
      },
      t);
  return j;
}

TaskSpec task_spec_from_json(const Json& j) {
  Reader r(j, "task");
  std::string kind = "assoc_recall";
  r.get("kind", kind);
  TaskSpec out;
  if (kind == "assoc_recall") {
    AssocRecall s;
    r.get("n_pairs", s.n_pairs);
    r.get("key_lo", s.key_lo);
    r.get("key_hi", s.key_hi);
    r.get("val_lo", s.val_lo);
    r.get("val_hi", s.val_hi);
    r.get("disjoint", s.disjoint);
    out = s;
  } else if (kind == "induction") {
    Induction s;
    r.get("vocab", s.vocab);
    r.get("periods", s.period_choices);
    r.get("length", s.length);
    out = s;
  } else if (kind == "anchored_chains") {
    AnchoredChains s;
    r.get("vocab", s.vocab);
    r.get("anchor_id", s.anchor_id);
    r.get("chain_len", s.chain_len);
    r.get("chains_per_seq", s.chains_per_seq);
    r.get("insert_p", s.insert_p);
    r.get("query_p", s.query_p);
    r.get("noise_p", s.noise_p);
    r.get("seq_len", s.seq_len);
    out = s;
  } else if (kind == "majority") {
    Majority s;
    r.get("vocab", s.vocab);
    r.get("length", s.length);
    out = s;
  } else if (kind == "parity") {
    Parity s;
    r.get("length", s.length);
    out = s;
  } else if (kind == "global_count") {
    GlobalCount s;
    r.get("vocab", s.vocab);
    r.get("length", s.length);
    out = s;
  } else {
    throw ConfigError("task.kind: unknown task '" + kind +
                      "' (assoc_recall, induction, anchored_chains, majority, parity, global_count)");
  }
  r.finish();
  try {
    validate(out);
  } catch (const Error& e) {
    throw ConfigError(std::string("task: ") + e.what());
  }
  return out;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["mode"] = to_string(c.mode);
  j["steps"] = c.steps;
  j["epochs"] = c.epochs;
  j["train_samples"] = c.train_samples;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["warmup_steps"] = c.warmup_steps;
  j["schedule"] = to_string(c.schedule);
  j["grad_clip"] = c.grad_clip;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["eval_samples"] = c.eval_samples;
  j["eval_every"] = c.eval_every;
  j["seed"] = c.seed;
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  Reader r(j, "train");
  TrainConfig c;
  std::string s = to_string(c.mode);
  r.get("mode", s);
  c.mode = parse_train_mode(s);
  r.get("steps", c.steps);
  r.get("epochs", c.epochs);
  r.get("train_samples", c.train_samples);
  r.get("batch_size", c.batch_size);
  r.get("lr", c.lr);
  r.get("weight_decay", c.weight_decay);
  r.get("warmup_steps", c.warmup_steps);
  s = to_string(c.schedule);
  r.get("schedule", s);
  c.schedule = parse_schedule(s);
  r.get("grad_clip", c.grad_clip);
  r.get("adam_beta1", c.adam_beta1);
  r.get("adam_beta2", c.adam_beta2);
  r.get("adam_eps", c.adam_eps);
  r.get("eval_samples", c.eval_samples);
  r.get("eval_every", c.eval_every);
  r.get("seed", c.seed);
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  return c;
}

Json to_json(const RunSpec& r) {
  Json j;
  j["model"] = to_json(r.model);
  j["task"] = to_json(r.task);
  j["train"] = to_json(r.train);
  return j;
}

RunSpec run_spec_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("run configuration must be a table");
  for (const auto& [k, v] : j.items()) {
    if (k != "model" && k != "task" && k != "train") throw ConfigError("unknown section '" + k + "'");
  }
  const Json empty = Json::object();
  RunSpec r;
  r.model = model_config_from_json(j.contains("model") ? j.at("model") : empty);
  r.task = task_spec_from_json(j.contains("task") ? j.at("task") : empty);
  r.train = train_config_from_json(j.contains("train") ? j.at("train") : empty);
  return r;
}

void apply_override(Json& spec, const std::string& key, const Json& value, const Json& library) {
  if (key == "task") {
    if (!value.is_string()) throw ConfigError("task axis values must be task names");
    const std::string name = value.get<std::string>();
    if (library.contains("tasks") && library.at("tasks").contains(name)) {
      spec["task"] = library.at("tasks").at(name);
      if (!spec["task"].contains("kind")) spec["task"]["kind"] = name;
    } else {
      spec["task"] = Json{{"kind", name}};
    }
    return;
  }
  const auto dot = key.find('.');
  if (dot != std::string::npos) {
    const std::string section = key.substr(0, dot), field = key.substr(dot + 1);
    if (section != "model" && section != "task" && section != "train") {
      throw ConfigError("unknown section in key '" + key + "'");
    }
    spec[section][field] = value;
    return;
  }
  // A plain key goes to every section whose schema (defaults included) has it.
  const RunSpec current = run_spec_from_json(spec);
  const Json full = to_json(current);
  bool applied = false;
  for (const char* section : {"model", "task", "train"}) {
    if (full.at(section).contains(key)) {
      spec[section][key] = value;
      applied = true;
    }
  }
  if (!applied) throw ConfigError("unknown key '" + key + "'");
}

// ---------------------------------------------------------------------------
// TOML subset.

namespace {

class TomlParser {
 public:
  TomlParser(std::string_view text, std::string source) : src_(text), source_(std::move(source)) {}

  Json parse() {
    Json root = Json::object();
    Json* table = &root;
    while (skip_blank_lines()) {
      if (peek() == '[') {
        ++pos_;
        skip_ws();
        const auto path = key_path();
        skip_ws();
        expect(']');
        table = &root;
        for (const auto& part : path) {
          Json& next = (*table)[part];
          if (next.is_null()) next = Json::object();
          if (!next.is_object()) fail("'" + part + "' is not a table");
          table = &next;
        }
      } else {
        const auto path = key_path();
        skip_ws();
        expect('=');
        skip_ws();
        Json value = parse_value();
        Json* t = table;
        for (std::size_t i = 0; i + 1 < path.size(); ++i) {
          Json& next = (*t)[path[i]];
          if (next.is_null()) next = Json::object();
          t = &next;
        }
        if (t->contains(path.back())) fail("duplicate key '" + path.back() + "'");
        (*t)[path.back()] = std::move(value);
      }
      end_of_line();
    }
    return root;
  }

 private:
  std::string_view src_;
  std::string source_;
  std::size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    std::size_t line = 1;
    for (std::size_t i = 0; i < pos_ && i < src_.size(); ++i) line += src_[i] == '\n';
    throw ConfigError(source_ + ":" + std::to_string(line) + ": " + msg);
  }

  char peek() const { return pos_ < src_.size() ? src_[pos_] : '\0'; }
  bool done() const { return pos_ >= src_.size(); }

  void skip_ws() {
    while (!done() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }

  void skip_comment() {
    if (peek() == '#') {
      while (!done() && peek() != '\n') ++pos_;
    }
  }

  // Skips whitespace, comments and newlines; false at end of input.
  bool skip_blank_lines() {
    for (;;) {
      skip_ws();
      skip_comment();
      if (done()) return false;
      if (peek() == '\n' || peek() == '\r') {
        ++pos_;
        continue;
      }
      return true;
    }
  }

  void end_of_line() {
    skip_ws();
    skip_comment();
    if (peek() == '\r') ++pos_;
    if (!done() && peek() != '\n') fail("unexpected trailing characters");
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::vector<std::string> key_path() {
    std::vector<std::string> parts;
    for (;;) {
      skip_ws();
      if (peek() == '"' || peek() == '\'') {
        parts.push_back(parse_string());
      } else {
        const std::size_t start = pos_;
        while (!done() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) ++pos_;
        if (pos_ == start) fail("expected a key");
        parts.emplace_back(src_.substr(start, pos_ - start));
      }
      skip_ws();
      if (peek() != '.') break;
      ++pos_;
    }
    return parts;
  }

  std::string parse_string() {
    const char quote = peek();
    ++pos_;
    std::string out;
    while (!done() && peek() != quote) {
      char c = src_[pos_++];
      if (c == '\n') fail("newline in string");
      if (c == '\\' && quote == '"') {
        if (done()) fail("unterminated escape");
        const char e = src_[pos_++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      }
      out.push_back(c);
    }
    if (done()) fail("unterminated string");
    ++pos_;
    return out;
  }

  Json parse_value() {
    const char c = peek();
    if (c == '"' || c == '\'') return parse_string();
    if (c == '[') {
      ++pos_;
      Json arr = Json::array();
      for (;;) {
        skip_blank_lines();
        if (peek() == ']') {
          ++pos_;
          return arr;
        }
        arr.push_back(parse_value());
        skip_blank_lines();
        if (peek() == ',') {
          ++pos_;
        } else if (peek() != ']') {
          fail("expected ',' or ']' in array");
        }
      }
    }
    const std::size_t start = pos_;
    while (!done() && peek() != ',' && peek() != ']' && peek() != '#' && peek() != '\n' && peek() != '\r' &&
           peek() != ' ' && peek() != '\t') {
      ++pos_;
    }
    std::string tok(src_.substr(start, pos_ - start));
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::string digits;
    for (char ch : tok) {
      if (ch != '_') digits.push_back(ch);
    }
    if (digits.empty()) fail("expected a value");
    const bool is_float = digits.find_first_of(".eE") != std::string::npos || digits == "inf" || digits == "nan";
    if (!is_float) {
      std::int64_t v = 0;
      const char* b = digits.data() + (digits[0] == '+' ? 1 : 0);
      auto [p, ec] = std::from_chars(b, digits.data() + digits.size(), v);
      if (ec != std::errc() || p != digits.data() + digits.size()) fail("malformed value '" + tok + "'");
      return v;
    }
    try {
      std::size_t used = 0;
      const double v = std::stod(digits, &used);
      if (used != digits.size()) fail("malformed number '" + tok + "'");
      return v;
    } catch (const std::logic_error&) {
      fail("malformed number '" + tok + "'");
    }
  }
};

}  // namespace

Json parse_toml(std::string_view text, const std::string& source) { return TomlParser(text, source).parse(); }

Json load_toml(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_toml(ss.str(), path.string());
}

}  // namespace mattn
