#pragma once

// Command implementations behind the `shiftbnn` executable. Each returns a
// process exit code and writes human-readable progress to `out`.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "shiftbnn/train.hpp"

namespace shiftbnn {

struct RunConfig {
  std::string model = "b-mlp";
  /// Directory with MNIST IDX files, a CIFAR-10 binary directory, or
  /// "synthetic". Empty picks a default for the model.
  std::string dataset;
  TrainConfig train;
  /// A number, or "1/N" for one over the training-set size.
  std::string kl_weight = "1";
  std::size_t train_limit = 0;  // 0 keeps every example
  std::size_t test_limit = 0;
  std::size_t progress_every = 0;  // steps between progress lines; 0 = quiet

  std::size_t steps = 50;  // verify-equivalence
  std::string corrupt_taps;
  std::string eps_log_dir;

  std::string out;     // checkpoint path
  std::string log;     // training log path (default: <out>.log)
  std::string report;  // cost-report CSV path

  bool eps_double_read = false;
  std::vector<std::string> cost_models;
  std::vector<std::uint64_t> cost_samples;
};

int run_train(const RunConfig& cfg, std::ostream& out);
int run_verify_equivalence(const RunConfig& cfg, std::ostream& out);
int run_cost_report(const RunConfig& cfg, std::ostream& out);
int run_rng_selftest(const RunConfig& cfg, std::ostream& out);

/// Parses `args` (without the program name) and dispatches. Library errors
/// are reported on `err` and mapped to exit code 2 (configuration/input) or
/// 3 (non-finite loss).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Reads a flat `key = value` file ('#' starts a comment). Throws ConfigError.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path);

/// Train and test split for a model, resolved from RunConfig::dataset.
struct DataSplit {
  Dataset train;
  Dataset test;
};
DataSplit load_data(const RunConfig& cfg, const Network& network);

}  // namespace shiftbnn
