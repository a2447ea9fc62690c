#pragma once

// Command-line driver. Subcommands: gen-data, condense, ablate, baseline,
// eval, report. All artifacts of a run live under one output directory:
//
//   data.pvdc                         generated dataset
//   condensed/<name>.pvsc             condensed set (prism or ablation tag)
//   condensed/<name>.insertions.csv   insertion log
//   condensed/<name>.loss.csv         matching-loss trace
//   frames/<name>/*.ppm               key-frame dumps
//   coresets/<method>.csv             coreset selections
//   eval/<method>.csv, .runs.csv, .histogram.csv, .per_class.csv
//   report.csv, histogram.csv, per_class.csv
//   ablation.csv
//   timing.log                        wall-clock sidecar, not deterministic
//
// Exit codes: 0 success, 1 other failure, 2 config or usage error,
// 3 numeric abort, 4 missing artifact.

#include <ostream>

namespace prism {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitMissing = 4;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace prism
