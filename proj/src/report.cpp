#include "mattn/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "mattn/sweeps.hpp"

namespace mattn {

namespace {

// Shortest text that reads back to the same double.
std::string num(double v) {
  char buf[32];
  return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

std::string cell(const Json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return num(v.get<double>());
  return v.dump();
}

Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json vec(const std::vector<double>& v) { return Json(v); }

std::string coords_label(const Json& coords, const std::vector<std::string>& skip) {
  std::string s;
  for (const auto& [k, v] : coords.items()) {
    if (std::find(skip.begin(), skip.end(), k) != skip.end()) continue;
    if (!s.empty()) s += ".";
    s += k + "=" + cell(v);
  }
  return s;
}

bool is_baseline(const Json& coords) {
  if (coords.contains("gamma") && coords.at("gamma").is_number() && coords.at("gamma").get<double>() == 0) return true;
  return coords.contains("placement") && coords.at("placement") == "none";
}

void emit(const std::filesystem::path& path, const std::string& content, std::vector<std::filesystem::path>& written) {
  write_atomic(path, content);
  written.push_back(path);
}

void report_sweep(const Json& j, const std::string& stem, const std::filesystem::path& out,
                  std::vector<std::filesystem::path>& written) {
  const Json& groups = j.at("groups");
  const Json& grid = j.at("grid").at("grid");
  const bool has_gamma = grid.contains("gamma"), has_theta = grid.contains("theta");

  if (has_gamma) {
    std::ostringstream os;
    std::vector<std::string> other;
    for (const auto& [k, v] : grid.items()) {
      if (k != "gamma" && k != "seed") other.push_back(k);
    }
    for (const auto& k : other) os << k << ',';
    os << "gamma,mean_acc,sem\n";
    for (const auto& g : groups) {
      for (const auto& k : other) os << cell(g.at("coords").at(k)) << ',';
      os << cell(g.at("coords").at("gamma")) << ',' << num(g.at("mean_acc")) << ',' << num(g.at("sem_acc")) << '\n';
    }
    emit(out / (stem + ".acc_vs_gamma.csv"), os.str(), written);
  }

  if (has_gamma && has_theta) {
    std::map<std::string, Json> split;
    for (const auto& g : groups) {
      const auto label = coords_label(g.at("coords"), {"theta", "gamma"});
      if (!split.contains(label)) split[label] = Json::array();
      split[label].push_back(g);
    }
    for (const auto& [label, gs] : split) {
      const std::string name = stem + ".heatmap" + (label.empty() ? "" : "." + label) + ".csv";
      emit(out / name, heatmap_csv(gs), written);
    }
  }

  // Loss by occurrence depth, momentum groups against the pooled baseline.
  std::vector<std::vector<double>> base_sum(kLossByKBuckets);
  std::map<std::string, std::vector<std::vector<double>>> mom;
  for (const auto& c : j.at("cells")) {
    if (c.at("status") != "ok" || c.at("run").is_null()) continue;
    const Json& lk = c.at("run").at("final").at("loss_by_k");
    auto& target = is_baseline(c.at("coords")) ? base_sum
                                              : mom.try_emplace(coords_label(c.at("coords"), {"seed"}),
                                                                std::vector<std::vector<double>>(kLossByKBuckets))
                                                    .first->second;
    for (std::size_t k = 0; k < kLossByKBuckets && k < lk.size(); ++k) {
      if (!lk[k].is_null()) target[k].push_back(lk[k].get<double>());
    }
  }
  auto mean = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  bool any_base = false;
  for (const auto& b : base_sum) any_base = any_base || !b.empty();
  if (any_base) {
    for (const auto& [label, buckets] : mom) {
      std::ostringstream os;
      os << "k,baseline,momentum,delta\n";
      for (std::size_t k = 0; k < kLossByKBuckets; ++k) {
        const auto b = mean(base_sum[k]), m = mean(buckets[k]);
        if (!b && !m) continue;
        os << k + 1 << ',' << (b ? num(*b) : "") << ',' << (m ? num(*m) : "") << ','
           << (b && m ? num(*m - *b) : "") << '\n';
      }
      emit(out / (stem + ".loss_by_depth." + label + ".csv"), os.str(), written);
    }
  }
}

}  // namespace

Json to_json(const BodeResult& r) {
  Json j;
  j["format"] = "mattn-bode";
  j["version"] = 1;
  j["mode"] = r.mode;
  j["omegas"] = vec(r.omegas);
  j["measured"] = vec(r.measured);
  j["theory"] = vec(r.theory);
  j["pearson_r"] = opt(r.pearson_r);
  j["probe_amplitude"] = r.probe_amplitude;
  return j;
}

std::string bode_csv(const BodeResult& r) {
  std::ostringstream os;
  os << "omega,measured,theory\n";
  for (std::size_t i = 0; i < r.omegas.size(); ++i) {
    os << num(r.omegas[i]) << ',' << num(r.measured[i]) << ',' << num(r.theory[i]) << '\n';
  }
  return os.str();
}

Json to_json(const StabilityReport& r) {
  Json j;
  j["format"] = "mattn-stability";
  j["version"] = 1;
  j["energy_ratio"] = r.energy_ratio;
  j["det_residual"] = r.det_residual;
  j["condition_number"] = std::isfinite(r.condition_number) ? Json(r.condition_number) : Json("inf");
  j["subspace_dim"] = r.subspace_dim;
  j["probe_eps"] = r.probe_eps;
  j["n_probes"] = r.n_probes;
  j["reliability_flag"] = r.reliability_flag;
  return j;
}

std::string heatmap_csv(const Json& groups) {
  std::ostringstream os;
  os << "theta,gamma,mean_acc,sem\n";
  for (const auto& g : groups) {
    os << cell(g.at("coords").at("theta")) << ',' << cell(g.at("coords").at("gamma")) << ','
       << num(g.at("mean_acc")) << ',' << num(g.at("sem_acc")) << '\n';
  }
  return os.str();
}

std::vector<std::filesystem::path> write_report(const std::filesystem::path& results_dir,
                                                const std::filesystem::path& out_dir) {
  if (!std::filesystem::is_directory(results_dir)) throw Error("no results directory " + results_dir.string());
  std::vector<std::filesystem::path> inputs;
  for (const auto& e : std::filesystem::directory_iterator(results_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") inputs.push_back(e.path());
  }
  std::sort(inputs.begin(), inputs.end());
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& path : inputs) {
    std::ifstream in(path);
    Json j;
    try {
      j = Json::parse(in);
    } catch (const nlohmann::json::exception&) {
      continue;
    }
    if (!j.is_object() || !j.contains("format")) continue;
    const std::string stem = path.stem().string();
    const std::string format = j.at("format").get<std::string>();
    if (format == "mattn-run") {
      emit(out_dir / (stem + ".curve.csv"), curves_csv(run_result_from_json(j)), written);
    } else if (format == "mattn-sweep") {
      report_sweep(j, stem, out_dir, written);
    } else if (format == "mattn-bode") {
      BodeResult r;
      r.omegas = j.at("omegas").get<std::vector<double>>();
      r.measured = j.at("measured").get<std::vector<double>>();
      r.theory = j.at("theory").get<std::vector<double>>();
      emit(out_dir / (stem + ".bode.csv"), bode_csv(r), written);
    }
  }
  if (written.empty()) throw Error("no run, sweep or bode results in " + results_dir.string());
  return written;
}

}  // namespace mattn
