#include "mattn/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

#include "mattn/config_io.hpp"
#include "mattn/filters.hpp"
#include "mattn/forensics.hpp"
#include "mattn/report.hpp"
#include "mattn/seeding.hpp"
#include "mattn/selfcheck.hpp"
#include "mattn/sweeps.hpp"

namespace mattn {

namespace {

namespace fs = std::filesystem;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "results";
  std::size_t parallelism = 1;
  std::string input;
};

/// Splits a config tree into its run configuration and one extra tool section,
/// rejecting unknown keys of that section.
struct ToolConfig {
  Json run = Json::object();
  Json tool = Json::object();
};

ToolConfig split_config(const Json& j, const std::string& section, const std::set<std::string>& keys) {
  ToolConfig c;
  for (const auto& [k, v] : j.items()) {
    if (k == section) {
      if (!v.is_object()) throw ConfigError("[" + section + "] must be a table");
      for (const auto& [tk, tv] : v.items()) {
        if (!keys.contains(tk)) throw ConfigError("unknown key '" + section + "." + tk + "'");
      }
      c.tool = v;
    } else {
      c.run[k] = v;
    }
  }
  return c;
}

template <class T>
T tool_get(const Json& tool, const std::string& section, const std::string& key, T fallback) {
  if (!tool.contains(key)) return fallback;
  try {
    return tool.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(section + "." + key + ": wrong value type");
  }
}

Json load_config(const Flags& f) {
  if (f.config.empty()) throw ConfigError("--config is required");
  return load_toml(f.config);
}

RunSpec run_spec(const Json& j, const Flags& f) {
  RunSpec spec = run_spec_from_json(j);
  if (f.seed) spec.train.seed = *f.seed;
  return spec;
}

std::string stem_of(const std::string& config) { return fs::path(config).stem().string(); }

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  write_atomic(path, content);
}

/// Loads the checkpoint named in the tool section (relative to the config
/// file) or trains the configured run.
ModelState obtain_model(const ToolConfig& c, const std::string& section, const Flags& f, const RunSpec& spec,
                        std::ostream& out) {
  const auto ckpt = tool_get<std::string>(c.tool, section, "checkpoint", "");
  if (!ckpt.empty()) {
    fs::path p(ckpt);
    if (p.is_relative()) p = fs::path(f.config).parent_path() / p;
    return load_checkpoint(p);
  }
  out << "training model (seed " << spec.train.seed << ")\n";
  return train_model(spec.model, spec.task, spec.train).state;
}

RowMatrix base_point(const ModelState& state, const RunSpec& spec, std::size_t sample, std::size_t layer) {
  TrainConfig cfg = spec.train;
  cfg.eval_samples = std::max(cfg.eval_samples, sample + 1);
  const auto samples = eval_set(spec.task, cfg);
  return attention_input(state, samples.at(sample).tokens, layer);
}

int cmd_train(const Flags& f, std::ostream& out) {
  const RunSpec spec = run_spec(load_config(f), f);
  const auto output = train_model(spec.model, spec.task, spec.train);
  const fs::path dir(f.out);
  const std::string name = stem_of(f.config);
  write_file(dir / (name + ".json"), to_json(output.result).dump(2) + "\n");
  write_file(dir / (name + ".curve.csv"), curves_csv(output.result));
  save_checkpoint(output.state, dir / (name + ".ckpt"));
  out << "parameters " << output.result.parameter_count << "\n";
  out << "accuracy " << output.result.final_metrics.accuracy << "\n";
  out << "wrote " << (dir / (name + ".json")).string() << "\n";
  return 0;
}

int cmd_sweep(const Flags& f, std::ostream& out) {
  SweepGrid grid = sweep_from_json(load_config(f));
  if (f.seed) grid.base_seed = *f.seed;
  SweepOptions opt;
  opt.parallelism = f.parallelism;
  if (const char* env = std::getenv("THREADS_OVERRIDE"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError("THREADS_OVERRIDE must be a positive integer");
    opt.parallelism = static_cast<std::size_t>(v);
  }
  if (opt.parallelism < 1) throw ConfigError("--parallelism must be >= 1");
  opt.out_dir = fs::path(f.out);
  out << "sweep " << grid.name << ": " << grid.size() << " cells, parallelism " << opt.parallelism << "\n";
  const auto result = run_sweep(grid, opt);
  for (const auto& g : result.groups) {
    std::string label;
    std::size_t ai = 0;
    for (const auto& a : grid.axes) {
      if (a.key == "seed") continue;
      label += a.key + "=" + g.coords[ai++].dump() + " ";
    }
    out << label << "acc " << g.mean_acc << " sem " << g.sem_acc << " failed " << g.n_failed << "/" << g.n << "\n";
  }
  out << "wrote " << (*opt.out_dir / (grid.name + ".json")).string() << "\n";
  return 0;
}

int cmd_bode(const Flags& f, std::ostream& out) {
  const auto c = split_config(load_config(f), "bode",
                              {"checkpoint", "layer", "n_omegas", "n_directions", "amplitude", "sample"});
  const RunSpec spec = run_spec(c.run, f);
  const ModelState state = obtain_model(c, "bode", f, spec, out);
  const auto layer = tool_get<std::size_t>(c.tool, "bode", "layer", 0);
  const auto n = tool_get<std::size_t>(c.tool, "bode", "n_omegas", 32);
  if (n < 2) throw ConfigError("bode.n_omegas must be >= 2");
  BodeOptions opt;
  opt.n_directions = tool_get<std::size_t>(c.tool, "bode", "n_directions", 4);
  opt.amplitude = tool_get<double>(c.tool, "bode", "amplitude", 0.0);
  opt.seed = derive_seed(spec.train.seed, "bode");
  opt.gamma = state.config.momentum.gamma;
  opt.beta = state.config.momentum.beta;
  const auto x = base_point(state, spec, tool_get<std::size_t>(c.tool, "bode", "sample", 0), layer);
  std::vector<double> omegas;
  for (std::size_t i = 1; i <= n; ++i) omegas.push_back(std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  const auto r = bode_extract(attention_sublayer_fn(state, layer), omegas, x, opt);
  const fs::path dir(f.out);
  const std::string name = stem_of(f.config);
  write_file(dir / (name + ".json"), to_json(r).dump(2) + "\n");
  write_file(dir / (name + ".csv"), bode_csv(r));
  out << "pearson_r " << (r.pearson_r ? std::to_string(*r.pearson_r) : std::string("undefined")) << "\n";
  return 0;
}

int cmd_stability(const Flags& f, std::ostream& out) {
  const auto c =
      split_config(load_config(f), "stability", {"checkpoint", "layer", "dims", "eps", "n_probes", "sample"});
  const RunSpec spec = run_spec(c.run, f);
  const ModelState state = obtain_model(c, "stability", f, spec, out);
  const auto layer = tool_get<std::size_t>(c.tool, "stability", "layer", 0);
  const auto x = base_point(state, spec, tool_get<std::size_t>(c.tool, "stability", "sample", 0), layer);
  const auto fn = flatten(attention_sublayer_fn(state, layer), static_cast<std::size_t>(x.rows()),
                          static_cast<std::size_t>(x.cols()));
  const Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
  const auto r = stability_report(fn, flat, tool_get<std::size_t>(c.tool, "stability", "dims", 16),
                                  tool_get<double>(c.tool, "stability", "eps", 1e-4),
                                  tool_get<std::size_t>(c.tool, "stability", "n_probes", 16),
                                  derive_seed(spec.train.seed, "stability"));
  const fs::path dir(f.out);
  write_file(dir / (stem_of(f.config) + ".json"), to_json(r).dump(2) + "\n");
  out << "energy_ratio " << r.energy_ratio << "\ndet_residual " << r.det_residual << "\ncondition_number "
      << r.condition_number << "\nreliability " << r.reliability_flag << "\n";
  return 0;
}

int cmd_fit_scaling(const Flags& f, std::ostream& out) {
  if (f.input.empty()) throw ConfigError("--input is required");
  std::ifstream in(f.input);
  if (!in) throw ConfigError("cannot read " + f.input);
  std::vector<std::pair<double, double>> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string a, b;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    try {
      pts.emplace_back(std::stod(a), std::stod(b));
    } catch (const std::exception&) {
      if (lineno == 1) continue;  // header
      throw ConfigError(f.input + ":" + std::to_string(lineno) + ": expected two numbers");
    }
  }
  const auto fit = power_law_fit(pts);
  out << std::fixed << std::setprecision(3) << "alpha=" << fit.alpha << " gamma0=" << fit.y0 << "\n"
      << std::setprecision(6) << "alpha " << fit.alpha << "\ngamma0 " << fit.y0 << "\nr_squared " << fit.r_squared
      << "\n";
  if (!f.out.empty()) {
    Json j{{"format", "mattn-scaling-fit"}, {"version", 1}, {"alpha", fit.alpha}, {"gamma0", fit.y0},
           {"r_squared", fit.r_squared}, {"n_points", pts.size()}};
    write_file(fs::path(f.out) / "scaling_fit.json", j.dump(2) + "\n");
  }
  return 0;
}

int cmd_verify_filters(std::ostream& out) {
  bool all = true;
  out << std::left << std::setw(44) << "check" << std::setw(14) << "max error" << std::setw(10) << "tol"
      << "result\n";
  for (const auto& r : filters_selfcheck()) {
    out << std::setw(44) << r.name << std::setw(14) << std::setprecision(3) << std::scientific << r.error
        << std::setw(10) << std::setprecision(0) << r.tolerance << (r.pass ? "PASS" : "FAIL") << "\n";
    all = all && r.pass;
  }
  return all ? 0 : 1;
}

int cmd_gen_data(const Flags& f, std::ostream& out) {
  const auto c = split_config(load_config(f), "data", {"n_samples"});
  const RunSpec spec = run_spec(c.run, f);
  const auto n = tool_get<std::size_t>(c.tool, "data", "n_samples", 1000);
  const auto seed = f.seed.value_or(spec.train.seed);
  const auto samples = generate(spec.task, seed, n);
  const fs::path path = fs::path(f.out) / (task_name(spec.task) + ".jsonl");
  fs::create_directories(path.parent_path());
  write_jsonl(samples, path);
  out << "wrote " << samples.size() << " samples to " << path.string() << "\n";
  return 0;
}

int cmd_report(const Flags& f, std::ostream& out) {
  if (f.input.empty()) throw ConfigError("--input is required");
  const auto written = write_report(f.input, f.out.empty() ? f.input : f.out);
  for (const auto& p : written) out << "wrote " << p.string() << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Momentum-augmented attention lab"};
  app.require_subcommand(1, 1);
  Flags f;
  auto add_common = [&](CLI::App* sub, bool config, bool seed, bool parallelism) {
    if (config) sub->add_option("--config", f.config, "Config file (TOML)")->required();
    if (seed) sub->add_option("--seed", f.seed, "Seed overriding the config");
    sub->add_option("--out", f.out, "Output directory");
    if (parallelism) sub->add_option("--parallelism", f.parallelism, "Concurrent sweep cells");
  };
  auto* train_cmd = app.add_subcommand("train", "Train one configuration");
  add_common(train_cmd, true, true, false);
  auto* sweep_cmd = app.add_subcommand("sweep", "Run an experiment grid");
  add_common(sweep_cmd, true, true, true);
  auto* bode_cmd = app.add_subcommand("bode", "Bode extraction of an attention sublayer");
  add_common(bode_cmd, true, true, false);
  auto* stab_cmd = app.add_subcommand("stability", "Energy ratio and subspace Jacobian");
  add_common(stab_cmd, true, true, false);
  auto* fit_cmd = app.add_subcommand("fit-scaling", "Power-law fit of critical gamma against depth");
  fit_cmd->add_option("--input", f.input, "CSV with columns N,gamma")->required();
  fit_cmd->add_option("--out", f.out, "Output directory");
  auto* verify_cmd = app.add_subcommand("verify-filters", "Filter invariant suite");
  auto* gen_cmd = app.add_subcommand("gen-data", "Export task samples as JSONL");
  add_common(gen_cmd, true, true, false);
  auto* report_cmd = app.add_subcommand("report", "Plot-ready CSVs from a results directory");
  report_cmd->add_option("--input", f.input, "Results directory")->required();
  report_cmd->add_option("--out", f.out, "Output directory (default: the input directory)");

  if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
    err << "usage error: unknown command '" << argv[1] << "'\n";
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  }
  if (fit_cmd->parsed() && fit_cmd->count("--out") == 0) f.out.clear();
  if (report_cmd->parsed() && report_cmd->count("--out") == 0) f.out.clear();

  try {
    if (train_cmd->parsed()) return cmd_train(f, out);
    if (sweep_cmd->parsed()) return cmd_sweep(f, out);
    if (bode_cmd->parsed()) return cmd_bode(f, out);
    if (stab_cmd->parsed()) return cmd_stability(f, out);
    if (fit_cmd->parsed()) return cmd_fit_scaling(f, out);
    if (verify_cmd->parsed()) return cmd_verify_filters(out);
    if (gen_cmd->parsed()) return cmd_gen_data(f, out);
    if (report_cmd->parsed()) return cmd_report(f, out);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int cli_main(int argc, char** argv) { return cli_main(argc, argv, std::cout, std::cerr); }

}  // namespace mattn
