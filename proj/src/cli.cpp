#include <CLI11.hpp>

#include <ostream>

#include "shiftbnn/app.hpp"
#include "shiftbnn/error.hpp"

namespace shiftbnn {

namespace {

const std::map<std::string, EpsilonStrategy> kStrategies = {{"store", EpsilonStrategy::Store},
                                                            {"shift", EpsilonStrategy::Shift}};
const std::map<std::string, GradMode> kGradModes = {{"paper", GradMode::PaperDpu},
                                                    {"exact", GradMode::Exact}};
const std::map<std::string, Precision> kPrecisions = {{"fp32", Precision::FP32},
                                                      {"fp64", Precision::FP64}};

void add_training_options(CLI::App& cmd, RunConfig& cfg) {
  TrainConfig& t = cfg.train;
  cmd.add_option("--model", cfg.model, "b-mlp, toy-conv or b-lenet")->capture_default_str();
  cmd.add_option("--dataset", cfg.dataset,
                 "MNIST IDX directory, CIFAR-10 binary directory, or 'synthetic'");
  cmd.add_option("--samples", t.samples, "weight samples per step (S)")->capture_default_str();
  cmd.add_option("--strategy", t.strategy, "epsilon strategy")
      ->transform(CLI::CheckedTransformer(kStrategies, CLI::ignore_case))
      ->default_str("shift");
  cmd.add_option("--grad-mode", t.grad_mode, "prior/posterior gradient")
      ->transform(CLI::CheckedTransformer(kGradModes, CLI::ignore_case))
      ->default_str("paper");
  cmd.add_option("--precision", t.precision, "storage precision")
      ->transform(CLI::CheckedTransformer(kPrecisions, CLI::ignore_case))
      ->default_str("fp32");
  cmd.add_option("--epochs", t.epochs)->capture_default_str();
  cmd.add_option("--lr", t.lr)->capture_default_str();
  cmd.add_option("--batch", t.batch, "minibatch size (B)")->capture_default_str();
  cmd.add_option("--seed", t.master_seed, "master seed")->capture_default_str();
  cmd.add_option("--threads", t.threads, "sample-parallel workers")->capture_default_str();
  cmd.add_option("--sigma-prior", t.sigma_prior)->capture_default_str();
  cmd.add_option("--sigma-init", t.sigma_init)->capture_default_str();
  cmd.add_option("--grng-width", t.grng_width, "LFSR width in bits")->capture_default_str();
  cmd.add_option("--kl-weight", cfg.kl_weight, "posterior/prior weight: a number or 1/N")
      ->capture_default_str();
  cmd.add_option("--train-limit", cfg.train_limit, "use only the first N training examples");
  cmd.add_option("--test-limit", cfg.test_limit, "use only the first N test examples");
  cmd.add_option("--out", cfg.out, "checkpoint path");
}

// Config keys become flags placed right after the subcommand name, so any
// flag given on the command line (which comes later) takes precedence.
std::vector<std::string> expand_config(const std::vector<std::string>& args, CLI::App& app) {
  std::string path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (path.empty() || rest.empty()) return rest;
  CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(rest.front());
  } catch (const CLI::OptionNotFound&) {
    throw Error(ErrorCode::ConfigError, "--config needs a command before it");
  }
  std::vector<std::string> injected;
  for (const auto& [key, value] : read_config_file(path)) {
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr)
      throw Error(ErrorCode::ConfigError, "unknown config key '" + key + "' for " + rest.front());
    if (opt->get_expected_min() == 0) {
      if (value == "true" || value == "1" || value == "yes") injected.push_back("--" + key);
    } else {
      injected.push_back("--" + key);
      injected.push_back(value);
    }
  }
  rest.insert(rest.begin() + 1, injected.begin(), injected.end());
  return rest;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Bayesian network training with reversible LFSR epsilon retrieval", "shiftbnn"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.add_option("--config", "flat key = value file; command-line flags override it");

  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  add_training_options(*train, cfg);
  train->add_option("--log", cfg.log, "training log path (default <out>.log)");
  train->add_option("--progress", cfg.progress_every, "print a line every N steps");

  auto* verify = app.add_subcommand("verify-equivalence",
                                    "run STORE and SHIFT side by side and compare them");
  add_training_options(*verify, cfg);
  verify->add_option("--steps", cfg.steps)->capture_default_str();
  verify->add_option("--eps-log", cfg.eps_log_dir, "write first-step epsilon logs here");
  verify->add_option("--corrupt-taps", cfg.corrupt_taps)->group("");

  auto* report = app.add_subcommand("cost-report", "traffic, footprint, latency and energy");
  report->add_option("--model", cfg.cost_models, "presets (default: all five)");
  report->add_option("--samples", cfg.cost_samples, "sample counts (default 8 16 32 64 128)");
  report->add_option("--report", cfg.report, "CSV output path");
  report->add_flag("--eps-double-read", cfg.eps_double_read,
                   "count the eps read in both BW and GC");
  for (auto* opt : {report->get_option("--model"), report->get_option("--samples")})
    opt->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)->delimiter(',');

  auto* selftest = app.add_subcommand("rng-selftest", "quick LFSR/GRNG sanity checks");
  selftest->add_option("--seed", cfg.train.master_seed)->capture_default_str();

  try {
    auto expanded = expand_config(args, app);
    std::reverse(expanded.begin(), expanded.end());
    app.parse(expanded);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  } catch (const Error& e) {
    err << e.what() << '\n';
    return 2;
  }

  if (*verify && verify->get_option("--model")->count() == 0) cfg.model = "toy-conv";

  try {
    if (*train) return run_train(cfg, out);
    if (*verify) return run_verify_equivalence(cfg, out);
    if (*report) return run_cost_report(cfg, out);
    if (*selftest) return run_rng_selftest(cfg, out);
  } catch (const Error& e) {
    err << e.what() << '\n';
    return e.code() == ErrorCode::NonFiniteLoss ? 3 : 2;
  }
  return 2;
}

}  // namespace shiftbnn
