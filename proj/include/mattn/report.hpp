#pragma once

// Serialization of diagnostics and plot-ready tables assembled from a
// results directory.
//
// Tables written by write_report (one per input file or group):
//   <run>.curve.csv                   step,train_loss,accuracy,L_new,L_second,L_rep,gap,k0..k19
//   <sweep>.acc_vs_gamma.csv          <other axes>,gamma,mean_acc,sem
//   <sweep>.heatmap[.<coords>].csv    theta,gamma,mean_acc,sem
//   <sweep>.loss_by_depth.<coords>.csv  k,baseline,momentum,delta
//   <bode>.bode.csv                   omega,measured,theory
//
// Loss by depth pools every cell with gamma = 0 or placement = "none" as the
// baseline and writes one table per remaining group; k is the occurrence
// bucket (1-based, last bucket open-ended).

#include <filesystem>
#include <string>
#include <vector>

#include "mattn/config_io.hpp"
#include "mattn/forensics.hpp"

namespace mattn {

Json to_json(const BodeResult& r);
std::string bode_csv(const BodeResult& r);
Json to_json(const StabilityReport& r);

/// theta,gamma,mean_acc,sem from sweep-aggregate groups (JSON form).
std::string heatmap_csv(const Json& groups);

/// Reads every *.json under `results_dir` (non-recursive) and writes the
/// tables above into `out_dir`. Returns the written paths in order. Throws
/// Error when no recognized result file is present.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& results_dir,
                                                const std::filesystem::path& out_dir);

}  // namespace mattn
