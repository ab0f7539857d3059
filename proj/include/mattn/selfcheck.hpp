#pragma once

// Invariant suite of the filter and operator layer, as run by
// `mattn verify-filters`.

#include <string>
#include <vector>

namespace mattn {

struct CheckRow {
  std::string name;
  /// Worst observed error.
  double error = 0;
  double tolerance = 0;
  bool pass = false;
};

std::vector<CheckRow> filters_selfcheck();

}  // namespace mattn
