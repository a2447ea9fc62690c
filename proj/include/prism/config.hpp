#pragma once

// Run configuration: a line-oriented text format with [section] headers
// and key = value entries. '#' starts a comment. Lists are comma separated.
//
//   [run]       seed, methods, out
//   [dataset]   frames, height, width, channels, train_per_class,
//               test_per_class, programs (law:axis[:sprite] list),
//               program.<i>.speed / .amplitude / .sprite overrides
//   [model]     arch, width1, width2, kernel          (matching network)
//   [condense]  vpc, epsilon, learning_rate, momentum, real_batch,
//               iterations, warmup_fraction, cooldown_fraction,
//               check_period, insertion, criterion, l2_threshold,
//               max_keys, key_gradient, matcher_reset_period,
//               matcher_learning_rate, flip
//   [eval]      epochs, learning_rate, momentum, batch_size, repeats,
//               flip, architectures
//
// Every key is optional except dataset.programs.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "prism/condenser.hpp"
#include "prism/eval_harness.hpp"
#include "prism/model_zoo.hpp"
#include "prism/videogen.hpp"

namespace prism {

struct DatasetConfig {
  Geometry geometry;
  std::vector<MotionProgram> programs;
  Index train_per_class = 64;
  Index test_per_class = 32;
  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct RunConfig {
  DatasetConfig dataset;
  Architecture matcher_arch = Architecture::kConv3dMicro;
  std::array<Index, 2> matcher_widths{8, 16};
  Index matcher_kernel = 3;
  CondenseConfig condense;
  EvalProtocol eval;
  std::vector<std::string> methods{"prism", "random", "herding", "kcenter"};
  std::string output_dir = "run";
  std::uint64_t seed = 0;

  void validate() const;
  ModelSpec matcher_spec() const;
  // Seeds of the independent per-purpose streams.
  std::uint64_t data_seed() const;
  std::uint64_t condense_seed() const;
  std::uint64_t coreset_seed() const;
  std::uint64_t eval_seed() const;
  // Condensation config with its seed filled in from the global seed.
  CondenseConfig seeded_condense() const;
};

// Defaults with the built-in six-class benchmark program list.
RunConfig default_run_config();

/// Throws ConfigError with "origin:line:" context on malformed input,
/// unknown sections or keys, bad values, or a missing program list.
RunConfig parse_config(std::string_view text, const std::string& origin = "config");
RunConfig load_config(const std::string& path);
std::string to_text(const RunConfig& config);

// "law[:x|y][:square|disk]"
MotionProgram parse_program(std::string_view entry, int class_id);
std::string program_entry(const MotionProgram& program);

}  // namespace prism
