#pragma once

// Command-line entry point.
//
//   mattn <command> [--config PATH] [--seed INT] [--out DIR] [--parallelism INT]
//
// Commands: train, sweep, bode, stability, fit-scaling, verify-filters,
// gen-data, report. Exit status 0 on success, 1 when a run fails, 2 on a
// usage or configuration error. THREADS_OVERRIDE, when set, replaces the
// sweep parallelism; it never changes results.

#include <iosfwd>

namespace mattn {

int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err);
int cli_main(int argc, char** argv);

}  // namespace mattn
