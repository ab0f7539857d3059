#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mattn/report.hpp"
#include "mattn/sweeps.hpp"

using namespace mattn;
namespace fs = std::filesystem;

namespace {

const char* kSweep = R"(
name = "unit"
base_seed = 5
[model]
vocab = 32
d_model = 8
n_heads = 2
d_ff = 16
max_seq = 16
[task]
kind = "assoc_recall"
n_pairs = 3
key_lo = 1
key_hi = 16
val_lo = 16
val_hi = 32
[train]
steps = 6
batch_size = 4
warmup_steps = 1
eval_samples = 16
[fixed]
beta = 0.0
[grid]
gamma = [0.0, 0.5]
seed = [1, 2]
)";

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Sweep, ParseAndExpandOrder) {
  const SweepGrid g = sweep_from_json(parse_toml(kSweep));
  EXPECT_EQ(g.name, "unit");
  EXPECT_EQ(g.size(), 4u);
  const auto cells = expand(g);
  ASSERT_EQ(cells.size(), 4u);
  // Last axis fastest.
  EXPECT_EQ(cells[0].coords[0], 0.0);
  EXPECT_EQ(cells[0].coords[1], 1);
  EXPECT_EQ(cells[1].coords[1], 2);
  EXPECT_EQ(cells[2].coords[0], 0.5);
  EXPECT_EQ(cells[3].spec["model"]["gamma"], 0.5);
  EXPECT_EQ(cells[3].spec["model"]["beta"], 0.0);
  std::set<std::uint64_t> seeds;
  for (const auto& c : cells) {
    seeds.insert(c.seed);
    EXPECT_EQ(c.spec["train"]["seed"].get<std::uint64_t>(), c.seed);
  }
  EXPECT_EQ(seeds.size(), 4u);
}

TEST(Sweep, CellSeedIndependentOfGridPosition) {
  Json j = parse_toml(kSweep);
  const auto a = expand(sweep_from_json(j));
  j["grid"]["gamma"] = Json::array({1.0, 0.5, 0.0});
  const auto b = expand(sweep_from_json(j));
  // (gamma = 0.5, seed = 2) sits at index 3 in a and index 3 in b; (0.0, 1)
  // moves from 0 to 4.
  EXPECT_EQ(a[0].seed, b[4].seed);
  EXPECT_EQ(a[3].seed, b[3].seed);
}

TEST(Sweep, SeedAxesRestrictSeedDerivation) {
  Json j = parse_toml(kSweep);
  j["seed_axes"] = Json::array({"seed"});
  const auto cells = expand(sweep_from_json(j));
  // Cells sharing a replicate label share a seed across gamma.
  EXPECT_EQ(cells[0].seed, cells[2].seed);
  EXPECT_NE(cells[0].seed, cells[1].seed);
}

TEST(Sweep, ConfigErrorsNameTheKey) {
  Json j = parse_toml(kSweep);
  j["gird"] = Json::object();
  try {
    sweep_from_json(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("gird"), std::string::npos);
  }
  Json k = parse_toml(kSweep);
  k["grid"]["gamma"] = 0.5;
  EXPECT_THROW(sweep_from_json(k), ConfigError);
}

TEST(CohensD, Oracle) {
  const std::vector<double> a{2, 4, 6}, b{1, 2, 3};
  // means 4 and 2, variances 4 and 1 -> s_pooled = sqrt(2.5).
  EXPECT_NEAR(cohens_d(a, b), 2.0 / std::sqrt(2.5), 1e-12);
  EXPECT_NEAR(cohens_d(b, a), -2.0 / std::sqrt(2.5), 1e-12);
}

TEST(Aggregate, GroupsOverSeed) {
  const SweepGrid g = sweep_from_json(parse_toml(kSweep));
  const auto cells = expand(g);
  std::vector<CellResult> results;
  const double acc[] = {0.1, 0.3, 0.6, 0.8};
  for (std::size_t i = 0; i < cells.size(); ++i) {
    CellResult r;
    r.cell = cells[i];
    r.run = RunResult{};
    r.run->final_metrics.accuracy = acc[i];
    results.push_back(r);
  }
  results[3].status = "failed";
  results[3].run.reset();
  const auto groups = aggregate(g, results);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[0].coords.size(), 1u);
  EXPECT_EQ(groups[0].n, 2u);
  EXPECT_NEAR(groups[0].mean_acc, 0.2, 1e-12);
  // Sample standard deviation of {0.1, 0.3}.
  EXPECT_NEAR(groups[0].std_acc, std::sqrt(0.02), 1e-12);
  EXPECT_NEAR(groups[0].sem_acc, std::sqrt(0.02) / std::sqrt(2.0), 1e-12);
  EXPECT_EQ(groups[1].n_failed, 1u);
  EXPECT_NEAR(groups[1].mean_acc, 0.6, 1e-12);

  SweepResult sr{g, results, groups};
  // Failed cells have no accuracy and are left out of the gain table.
  const auto gains = gain_table(sr);
  ASSERT_EQ(gains.size(), 3u);
  EXPECT_NEAR(*gains[0].gain, 0.0, 1e-12);
  EXPECT_NEAR(*gains[1].gain, 0.0, 1e-12);
  EXPECT_EQ(gains[2].cell, 2u);
  EXPECT_NEAR(*gains[2].gain, 0.5, 1e-12);
}

TEST(Sweep, RunsWritesAndResumes) {
  const fs::path out = fresh_dir("mattn_unit_sweep");
  const SweepGrid g = sweep_from_json(parse_toml(kSweep));
  SweepOptions o;
  o.parallelism = 2;
  o.out_dir = out;
  const SweepResult r = run_sweep(g, o);
  ASSERT_EQ(r.cells.size(), 4u);
  for (const auto& c : r.cells) EXPECT_EQ(c.status, "ok") << c.error;
  ASSERT_TRUE(fs::exists(out / "unit.csv"));
  ASSERT_TRUE(fs::exists(out / "unit.json"));
  ASSERT_TRUE(fs::exists(out / "unit.cells.jsonl"));
  const std::string csv = slurp(out / "unit.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "cell,gamma,seed,run_seed,status,accuracy,mean_loss,L_new,L_second,L_rep,gap,error_class");
  const Json agg = Json::parse(slurp(out / "unit.json"));
  EXPECT_EQ(agg["format"], "mattn-sweep");
  EXPECT_EQ(agg["groups"].size(), 2u);

  // A rerun reuses every logged cell and reproduces the outputs exactly.
  const std::string json_before = slurp(out / "unit.json");
  const SweepResult again = run_sweep(g, o);
  EXPECT_EQ(slurp(out / "unit.json"), json_before);
  EXPECT_EQ(slurp(out / "unit.csv"), csv);
  EXPECT_EQ(to_json(again).dump(), to_json(r).dump());

  // Report tables from the sweep output.
  const fs::path rep = fresh_dir("mattn_unit_report");
  const auto written = write_report(out, rep);
  EXPECT_FALSE(written.empty());
  EXPECT_TRUE(fs::exists(rep / "unit.acc_vs_gamma.csv"));
  EXPECT_THROW(write_report(fresh_dir("mattn_unit_empty"), rep), Error);
}

TEST(Sweep, FailedCellsAreRecorded) {
  Json j = parse_toml(kSweep);
  j["grid"]["gamma"] = Json::array({0.0, -1.0});
  const SweepResult r = run_sweep(sweep_from_json(j));
  std::size_t failed = 0;
  for (const auto& c : r.cells) {
    if (c.status == "failed") {
      ++failed;
      EXPECT_EQ(c.error_class, "config");
    }
  }
  EXPECT_EQ(failed, 2u);
  j["grid"]["gamma"] = Json::array({-1.0, -2.0});
  EXPECT_THROW(run_sweep(sweep_from_json(j)), Error);
}

TEST(ReportTables, HeatmapCsv) {
  const Json groups = Json::array({
      {{"coords", {{"theta", 0.1}, {"gamma", 0.0}}}, {"mean_acc", 0.25}, {"sem_acc", 0.01}},
      {{"coords", {{"theta", 0.1}, {"gamma", 1.0}}}, {"mean_acc", 0.5}, {"sem_acc", 0.02}},
  });
  const std::string csv = heatmap_csv(groups);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "theta,gamma,mean_acc,sem");
  EXPECT_NE(csv.find("0.1,1,0.5,0.02"), std::string::npos) << csv;
}
