#pragma once

// Declarative experiment grids.
//
// Sweep file (TOML subset, see config_io.hpp):
//
//   name = "beta_mini"
//   base_seed = 0
//   seed_axes = ["seed"]      # optional: axes entering the cell seed
//   [model] / [task] / [train]  base run configuration
//   [tasks.<name>]            task library for a `task` axis
//   [fixed]                   scalar overrides, plain or section.key
//   [grid]                    axis = [values...]; `seed` is a replicate label
//
// A cell's run uses train.seed = derive_seed(base_seed, name + coords), where
// coords lists the seed axes (all axes by default) as key=value pairs in key
// order, so a cell's result does not depend on its position in the grid.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mattn/config_io.hpp"
#include "mattn/training.hpp"

namespace mattn {

struct SweepAxis {
  std::string key;
  std::vector<Json> values;
};

struct SweepGrid {
  std::string name = "sweep";
  std::uint64_t base_seed = 0;
  Json base = Json::object();
  Json library = Json::object();
  std::vector<SweepAxis> axes;
  /// Empty means every axis.
  std::vector<std::string> seed_axes;

  std::size_t size() const;
};

SweepGrid sweep_from_json(const Json& j);
SweepGrid load_sweep(const std::filesystem::path& path);
Json to_json(const SweepGrid& g);

struct SweepCell {
  std::size_t index = 0;
  /// One value per axis, in axis order.
  std::vector<Json> coords;
  std::uint64_t seed = 0;
  Json spec;
};

std::vector<SweepCell> expand(const SweepGrid& grid);

struct CellResult {
  SweepCell cell;
  std::string status = "ok";  // ok | failed
  std::string error_class;
  std::string error;
  std::optional<RunResult> run;
};

struct GroupStats {
  /// Coordinates with the replicate (`seed`) axis removed.
  std::vector<Json> coords;
  std::size_t n = 0, n_failed = 0;
  double mean_acc = 0, std_acc = 0, sem_acc = 0;
  std::optional<double> mean_L_rep;
};

struct SweepResult {
  SweepGrid grid;
  std::vector<CellResult> cells;
  std::vector<GroupStats> groups;
};

struct SweepOptions {
  std::size_t parallelism = 1;
  /// When set, cells are appended to <out>/<name>.cells.jsonl as they finish
  /// (and reused from it on restart); the CSV and JSON aggregate are written
  /// at the end.
  std::optional<std::filesystem::path> out_dir;
};

/// Runs every cell. Diverged or invalid cells are recorded as failed; more
/// than half failing raises an Error after outputs are written.
SweepResult run_sweep(const SweepGrid& grid, const SweepOptions& options = {});

/// Groups over all axes but `seed`; recomputable from the cells.
std::vector<GroupStats> aggregate(const SweepGrid& grid, const std::vector<CellResult>& cells);

/// (mean_a - mean_b) / s_pooled with
/// s_pooled = sqrt(((n_a - 1) s_a^2 + (n_b - 1) s_b^2) / (n_a + n_b - 2)).
double cohens_d(const std::vector<double>& a, const std::vector<double>& b);

struct GainRow {
  std::size_t cell = 0;
  std::vector<Json> coords;
  double accuracy = 0;
  /// Absent when the matched baseline cell is missing or failed.
  std::optional<double> gain;
};

/// Per-cell accuracy minus the accuracy of the cell with identical
/// coordinates except `axis` = `baseline_value`.
std::vector<GainRow> gain_table(const SweepResult& result, const std::string& axis = "gamma",
                                const Json& baseline_value = 0.0);

Json to_json(const SweepResult& r);
std::string sweep_csv(const SweepResult& r);
void write_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace mattn
