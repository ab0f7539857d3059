#include "mattn/sweeps.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "mattn/seeding.hpp"

namespace mattn {

std::size_t SweepGrid::size() const {
  std::size_t n = 1;
  for (const auto& a : axes) n *= a.values.size();
  return n;
}

SweepGrid sweep_from_json(const Json& j) {
  SweepGrid g;
  Json base = Json::object();
  for (const auto& [key, v] : j.items()) {
    if (key == "name") {
      if (!v.is_string()) throw ConfigError("name must be a string");
      g.name = v.get<std::string>();
    } else if (key == "base_seed") {
      if (!v.is_number_integer()) throw ConfigError("base_seed must be an integer");
      g.base_seed = v.get<std::uint64_t>();
    } else if (key == "seed_axes") {
      if (!v.is_array()) throw ConfigError("seed_axes must be a list of axis names");
      for (const auto& a : v) g.seed_axes.push_back(a.get<std::string>());
    } else if (key == "model" || key == "task" || key == "train") {
      base[key] = v;
    } else if (key == "tasks") {
      g.library["tasks"] = v;
    } else if (key != "fixed" && key != "grid") {
      throw ConfigError("unknown sweep key '" + key + "'");
    }
  }
  if (j.contains("fixed")) {
    for (const auto& [key, v] : j.at("fixed").items()) {
      if (v.is_array() || v.is_object()) throw ConfigError("fixed." + key + " must be a scalar");
      apply_override(base, key, v, g.library);
    }
  }
  g.base = base;
  run_spec_from_json(g.base);  // validates the base configuration
  if (j.contains("grid")) {
    for (const auto& [key, v] : j.at("grid").items()) {
      if (!v.is_array() || v.empty()) throw ConfigError("grid." + key + " must be a non-empty list");
      g.axes.push_back({key, std::vector<Json>(v.begin(), v.end())});
    }
  }
  for (const auto& s : g.seed_axes) {
    bool found = false;
    for (const auto& a : g.axes) found = found || a.key == s;
    if (!found) throw ConfigError("seed_axes names unknown axis '" + s + "'");
  }
  return g;
}

SweepGrid load_sweep(const std::filesystem::path& path) { return sweep_from_json(load_toml(path)); }

Json to_json(const SweepGrid& g) {
  Json j;
  j["name"] = g.name;
  j["base_seed"] = g.base_seed;
  j["seed_axes"] = g.seed_axes;
  j["base"] = g.base;
  Json axes = Json::object();
  for (const auto& a : g.axes) axes[a.key] = a.values;
  j["grid"] = axes;
  return j;
}

namespace {

bool is_seed_axis(const SweepGrid& g, const std::string& key) {
  if (g.seed_axes.empty()) return true;
  return std::find(g.seed_axes.begin(), g.seed_axes.end(), key) != g.seed_axes.end();
}

std::string coord_key(const SweepGrid& g, const std::vector<Json>& coords, bool seed_axes_only) {
  std::map<std::string, std::string> kv;
  for (std::size_t i = 0; i < g.axes.size(); ++i) {
    if (!seed_axes_only || is_seed_axis(g, g.axes[i].key)) kv[g.axes[i].key] = coords[i].dump();
  }
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + ";";
  return out;
}

std::string error_class(const std::exception& e) {
  if (dynamic_cast<const DivergedError*>(&e)) return "diverged";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const GenerationError*>(&e)) return "generation";
  if (dynamic_cast<const NonFiniteError*>(&e)) return "non_finite";
  return "error";
}

CellResult run_cell(const SweepCell& cell) {
  CellResult r;
  r.cell = cell;
  try {
    const RunSpec spec = run_spec_from_json(cell.spec);
    r.run = train(spec.model, spec.task, spec.train);
  } catch (const std::exception& e) {
    r.status = "failed";
    r.error_class = error_class(e);
    r.error = e.what();
  }
  return r;
}

Json cell_json(const SweepGrid& g, const CellResult& c) {
  Json j;
  j["sweep"] = g.name;
  j["cell"] = c.cell.index;
  j["key"] = coord_key(g, c.cell.coords, false);
  Json coords = Json::object();
  for (std::size_t i = 0; i < g.axes.size(); ++i) coords[g.axes[i].key] = c.cell.coords[i];
  j["coords"] = coords;
  j["seed"] = c.cell.seed;
  j["status"] = c.status;
  j["error_class"] = c.error_class;
  j["error"] = c.error;
  j["run"] = c.run ? to_json(*c.run) : Json(nullptr);
  return j;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_var(const std::vector<double>& v) {
  if (v.size() < 2) return 0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

std::string csv_num(double v) {
  char buf[32];
  return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

std::string csv_field(const Json& v) {
  std::string s = v.is_string() ? v.get<std::string>() : v.dump();
  if (s.find_first_of(",\"\n") != std::string::npos) {
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  }
  return s;
}

}  // namespace

std::vector<SweepCell> expand(const SweepGrid& grid) {
  std::vector<SweepCell> cells;
  const std::size_t n = grid.size();
  for (std::size_t idx = 0; idx < n; ++idx) {
    SweepCell c;
    c.index = idx;
    std::size_t rem = idx;
    c.coords.resize(grid.axes.size());
    // Last axis varies fastest.
    for (std::size_t a = grid.axes.size(); a-- > 0;) {
      c.coords[a] = grid.axes[a].values[rem % grid.axes[a].values.size()];
      rem /= grid.axes[a].values.size();
    }
    c.spec = grid.base;
    for (std::size_t a = 0; a < grid.axes.size(); ++a) {
      if (grid.axes[a].key == "seed") continue;
      apply_override(c.spec, grid.axes[a].key, c.coords[a], grid.library);
    }
    c.seed = derive_seed(grid.base_seed, grid.name + "|" + coord_key(grid, c.coords, true));
    c.spec["train"]["seed"] = c.seed;
    cells.push_back(std::move(c));
  }
  return cells;
}

std::vector<GroupStats> aggregate(const SweepGrid& grid, const std::vector<CellResult>& cells) {
  std::map<std::string, std::size_t> index;
  std::vector<GroupStats> groups;
  std::vector<std::vector<double>> accs, reps;
  for (const auto& c : cells) {
    std::vector<Json> coords;
    std::string key;
    for (std::size_t a = 0; a < grid.axes.size(); ++a) {
      if (grid.axes[a].key == "seed") continue;
      coords.push_back(c.cell.coords[a]);
      key += grid.axes[a].key + "=" + c.cell.coords[a].dump() + ";";
    }
    auto [it, inserted] = index.emplace(key, groups.size());
    if (inserted) {
      groups.push_back({});
      groups.back().coords = coords;
      accs.emplace_back();
      reps.emplace_back();
    }
    GroupStats& g = groups[it->second];
    ++g.n;
    if (c.status != "ok" || !c.run) {
      ++g.n_failed;
      continue;
    }
    accs[it->second].push_back(c.run->final_metrics.accuracy);
    if (c.run->final_metrics.L_rep) reps[it->second].push_back(*c.run->final_metrics.L_rep);
  }
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (accs[i].empty()) continue;
    groups[i].mean_acc = mean_of(accs[i]);
    groups[i].std_acc = std::sqrt(sample_var(accs[i]));
    groups[i].sem_acc = groups[i].std_acc / std::sqrt(static_cast<double>(accs[i].size()));
    if (!reps[i].empty()) groups[i].mean_L_rep = mean_of(reps[i]);
  }
  return groups;
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

SweepResult run_sweep(const SweepGrid& grid, const SweepOptions& options) {
  if (options.parallelism == 0) throw ConfigError("parallelism must be >= 1");
  const auto cells = expand(grid);
  SweepResult result;
  result.grid = grid;
  result.cells.resize(cells.size());
  std::vector<bool> done(cells.size(), false);

  std::filesystem::path jsonl;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    jsonl = *options.out_dir / (grid.name + ".cells.jsonl");
    // Resume: reuse finished cells whose coordinates and seed still match.
    std::ifstream in(jsonl);
    std::string line;
    while (in && std::getline(in, line)) {
      if (line.empty()) continue;
      Json j;
      try {
        j = Json::parse(line);
      } catch (const nlohmann::json::exception&) {
        continue;  // torn final line from an interrupted run
      }
      const auto idx = j.value("cell", std::size_t{0});
      if (idx >= cells.size() || j.value("key", "") != coord_key(grid, cells[idx].coords, false) ||
          j.value("seed", std::uint64_t{0}) != cells[idx].seed || j.value("sweep", "") != grid.name) {
        continue;
      }
      CellResult c;
      c.cell = cells[idx];
      c.status = j.at("status").get<std::string>();
      c.error_class = j.at("error_class").get<std::string>();
      c.error = j.at("error").get<std::string>();
      if (!j.at("run").is_null()) c.run = run_result_from_json(j.at("run"));
      result.cells[idx] = std::move(c);
      done[idx] = true;
    }
  }

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!done[i]) todo.push_back(i);
  }

  std::mutex mu;
  std::condition_variable cv;
  std::deque<CellResult> finished;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= todo.size()) return;
      CellResult r = run_cell(cells[todo[k]]);
      {
        std::lock_guard<std::mutex> lock(mu);
        finished.push_back(std::move(r));
      }
      cv.notify_one();
    }
  };
  const std::size_t n_workers = std::min(options.parallelism, std::max<std::size_t>(1, todo.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);

  // The calling thread is the only writer.
  std::ofstream log;
  if (options.out_dir) log.open(jsonl, std::ios::app);
  for (std::size_t received = 0; received < todo.size(); ++received) {
    std::unique_lock<std::mutex> lock(mu);
    cv.wait(lock, [&] { return !finished.empty(); });
    CellResult r = std::move(finished.front());
    finished.pop_front();
    lock.unlock();
    if (log.is_open()) {
      log << cell_json(grid, r).dump() << '\n';
      log.flush();
    }
    const std::size_t idx = r.cell.index;
    result.cells[idx] = std::move(r);
  }
  for (auto& t : pool) t.join();

  result.groups = aggregate(grid, result.cells);
  if (options.out_dir) {
    write_atomic(*options.out_dir / (grid.name + ".csv"), sweep_csv(result));
    write_atomic(*options.out_dir / (grid.name + ".json"), to_json(result).dump(2) + "\n");
  }
  std::size_t failed = 0;
  for (const auto& c : result.cells) failed += c.status != "ok";
  if (2 * failed > result.cells.size()) {
    throw Error("sweep " + grid.name + ": " + std::to_string(failed) + " of " + std::to_string(result.cells.size()) +
                " cells failed");
  }
  return result;
}

double cohens_d(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw ContractError("cohens_d needs at least 2 values per group");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double pooled = std::sqrt(((na - 1) * sample_var(a) + (nb - 1) * sample_var(b)) / (na + nb - 2));
  if (!(pooled > 0)) throw DegenerateError("cohens_d: zero pooled standard deviation");
  return (mean_of(a) - mean_of(b)) / pooled;
}

std::vector<GainRow> gain_table(const SweepResult& result, const std::string& axis, const Json& baseline_value) {
  const auto& axes = result.grid.axes;
  std::size_t ax = axes.size();
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i].key == axis) ax = i;
  }
  if (ax == axes.size()) throw ContractError("gain_table: no axis named '" + axis + "'");
  std::map<std::string, const CellResult*> by_coords;
  auto key_without = [&](const std::vector<Json>& coords) {
    std::string k;
    for (std::size_t i = 0; i < coords.size(); ++i) {
      if (i != ax) k += coords[i].dump() + ";";
    }
    return k;
  };
  for (const auto& c : result.cells) {
    if (c.cell.coords[ax] == baseline_value) by_coords[key_without(c.cell.coords)] = &c;
  }
  std::vector<GainRow> rows;
  for (const auto& c : result.cells) {
    if (c.status != "ok" || !c.run) continue;
    GainRow row;
    row.cell = c.cell.index;
    row.coords = c.cell.coords;
    row.accuracy = c.run->final_metrics.accuracy;
    const auto it = by_coords.find(key_without(c.cell.coords));
    if (it != by_coords.end() && it->second->status == "ok" && it->second->run) {
      row.gain = row.accuracy - it->second->run->final_metrics.accuracy;
    }
    rows.push_back(row);
  }
  return rows;
}

Json to_json(const SweepResult& r) {
  Json j;
  j["format"] = "mattn-sweep";
  j["version"] = 1;
  j["grid"] = to_json(r.grid);
  auto cells = Json::array();
  for (const auto& c : r.cells) cells.push_back(cell_json(r.grid, c));
  j["cells"] = cells;
  auto groups = Json::array();
  std::vector<std::string> keys;
  for (const auto& a : r.grid.axes) {
    if (a.key != "seed") keys.push_back(a.key);
  }
  for (const auto& g : r.groups) {
    Json gj;
    Json coords = Json::object();
    for (std::size_t i = 0; i < keys.size(); ++i) coords[keys[i]] = g.coords[i];
    gj["coords"] = coords;
    gj["n"] = g.n;
    gj["n_failed"] = g.n_failed;
    gj["mean_acc"] = g.mean_acc;
    gj["std_acc"] = g.std_acc;
    gj["sem_acc"] = g.sem_acc;
    gj["mean_L_rep"] = g.mean_L_rep ? Json(*g.mean_L_rep) : Json(nullptr);
    groups.push_back(gj);
  }
  j["groups"] = groups;

  bool has_gamma = false;
  for (const auto& a : r.grid.axes) has_gamma = has_gamma || a.key == "gamma";
  if (has_gamma) {
    auto gains = Json::array();
    for (const auto& row : gain_table(r, "gamma", 0.0)) {
      gains.push_back({{"cell", row.cell}, {"gain", row.gain ? Json(*row.gain) : Json(nullptr)}});
    }
    j["gain_over_gamma0"] = gains;
  }
  return j;
}

std::string sweep_csv(const SweepResult& r) {
  std::ostringstream os;
  os << "cell";
  for (const auto& a : r.grid.axes) os << ',' << a.key;
  os << ",run_seed,status,accuracy,mean_loss,L_new,L_second,L_rep,gap,error_class\n";
  auto opt = [](const std::optional<double>& v) { return v ? csv_num(*v) : std::string(); };
  for (const auto& c : r.cells) {
    os << c.cell.index;
    for (const auto& v : c.cell.coords) os << ',' << csv_field(v);
    os << ',' << c.cell.seed << ',' << c.status;
    if (c.run) {
      const auto& m = c.run->final_metrics;
      os << ',' << csv_num(m.accuracy) << ',' << csv_num(m.mean_loss) << ',' << opt(m.L_new) << ','
         << opt(m.L_second) << ',' << opt(m.L_rep) << ',' << opt(m.gap);
    } else {
      os << ",,,,,,";
    }
    os << ',' << c.error_class << '\n';
  }
  return os.str();
}

}  // namespace mattn
