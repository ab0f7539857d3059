#pragma once

// Configuration records <-> JSON trees, and a reader for the TOML subset used
// by config files. Every record has a flat key set; parsing is strict and
// names the offending key on error.
//
// Config file layout:
//
//   [model]   vocab, d_model, n_heads, n_layers, d_ff, max_seq, encoding,
//             rope_base, theta, halfwidth, placement, gamma, beta, norm, ffn,
//             ffn_bias, tied_head, dropout, norm_eps, init_std, preset
//   [task]    kind plus the fields of that task
//   [train]   mode, steps, epochs, train_samples, batch_size, lr, ...
//
// Supported TOML: [section] and [a.b] headers, dotted keys, # comments,
// integers, floats, booleans, basic and literal strings, and (possibly
// multi-line) arrays of scalars.

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "mattn/model.hpp"
#include "mattn/tasks.hpp"
#include "mattn/training.hpp"

namespace mattn {

using Json = nlohmann::ordered_json;

Json to_json(const ModelConfig& c);
/// Starts from `preset` when given, then applies the remaining keys.
ModelConfig model_config_from_json(const Json& j);

Json to_json(const TaskSpec& t);
TaskSpec task_spec_from_json(const Json& j);

Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

struct RunSpec {
  ModelConfig model;
  TaskSpec task;
  TrainConfig train;
};

Json to_json(const RunSpec& r);
/// Missing sections take their defaults.
RunSpec run_spec_from_json(const Json& j);

Json parse_toml(std::string_view text, const std::string& source = "<config>");
Json load_toml(const std::filesystem::path& path);

/// Sets `key` (plain or `section.key`) to `value` in a run-configuration tree. A
/// plain key is applied to every section that has it; unknown keys throw.
/// The key `task` replaces the task section by `tasks.<value>` from
/// `library` when present, otherwise by {kind = value}.
void apply_override(Json& run_spec, const std::string& key, const Json& value, const Json& library = Json::object());

}  // namespace mattn
