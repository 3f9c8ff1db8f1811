#include "shiftbnn/app.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "shiftbnn/cost_model.hpp"
#include "shiftbnn/error.hpp"

namespace shiftbnn {

namespace fs = std::filesystem;

namespace {

Dataset slice(const Dataset& d, std::size_t begin, std::size_t end) {
  Dataset out;
  out.shape = d.shape;
  out.classes = d.classes;
  const std::size_t feat = d.features();
  out.images.assign(d.images.begin() + static_cast<std::ptrdiff_t>(begin * feat),
                    d.images.begin() + static_cast<std::ptrdiff_t>(end * feat));
  out.labels.assign(d.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    d.labels.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

void limit(Dataset& d, std::size_t n) {
  if (n != 0 && n < d.size()) d = slice(d, 0, n);
}

std::string default_dataset(const std::string& model) {
  if (model == "b-mlp") return "data/mnist";
  if (model == "b-lenet") return "data/cifar-10-batches-bin";
  return "synthetic";
}

double resolve_kl_weight(const std::string& spec, std::size_t train_size) {
  if (spec == "1/N") return 1.0 / static_cast<double>(std::max<std::size_t>(train_size, 1));
  try {
    std::size_t used = 0;
    const double v = std::stod(spec, &used);
    if (used == spec.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::ConfigError, "kl-weight must be a number or 1/N, got '" + spec + "'");
}

TapSet parse_taps(const std::string& text, int width) {
  std::vector<int> taps;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      taps.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigError, "bad tap list '" + text + "'");
    }
  }
  return TapSet(width, taps);
}

// Offset of the first differing byte, or npos when identical.
std::size_t first_difference(const std::vector<char>& a, const std::vector<char>& b) {
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i)
    if (a[i] != b[i]) return i;
  return a.size() == b.size() ? std::string::npos : n;
}

}  // namespace

DataSplit load_data(const RunConfig& cfg, const Network& network) {
  const std::string source = cfg.dataset.empty() ? default_dataset(cfg.model) : cfg.dataset;
  DataSplit split;
  if (source == "synthetic") {
    SyntheticSpec spec;
    spec.seed = cfg.train.master_seed;
    spec.shape = network.input_shape();
    spec.classes = network.classes();
    const std::size_t n_train = cfg.train_limit ? cfg.train_limit : 512;
    const std::size_t n_test = cfg.test_limit ? cfg.test_limit : 256;
    spec.count = n_train + n_test;
    const Dataset all = make_synthetic(spec);
    split.train = slice(all, 0, n_train);
    split.test = slice(all, n_train, all.size());
    return split;
  }
  const fs::path dir(source);
  if (fs::exists(dir / "data_batch_1.bin")) {
    std::vector<fs::path> batches;
    for (int i = 1; i <= 5; ++i) batches.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    split.train = load_cifar10(batches);
    split.test = load_cifar10({dir / "test_batch.bin"});
  } else {
    split.train = load_mnist(dir, true);
    split.test = load_mnist(dir, false);
  }
  limit(split.train, cfg.train_limit);
  limit(split.test, cfg.test_limit);
  const auto features = network.input_size();
  if (split.train.features() != features || split.train.classes > network.classes())
    throw Error(ErrorCode::ShapeMismatch,
                "dataset '" + source + "' does not fit model " + network.name());
  return split;
}

int run_train(const RunConfig& cfg, std::ostream& out) {
  cfg.train.validate();
  const Network network = Network::preset(cfg.model);
  const DataSplit data = load_data(cfg, network);
  TrainConfig tc = cfg.train;
  tc.kl_weight = resolve_kl_weight(cfg.kl_weight, data.train.size());
  tc.validate();

  BayesNet net = BayesNet::initialize(network, tc.master_seed, tc.sigma_init);
  Trainer trainer(net, tc);

  const std::string ckpt = cfg.out.empty() ? cfg.model + ".sbnn" : cfg.out;
  const std::string log_path = cfg.log.empty() ? ckpt + ".log" : cfg.log;
  std::ofstream log(log_path);
  if (!log) throw Error(ErrorCode::IoError, "cannot open log " + log_path);
  log << "epoch,step,loss,val_acc\n";

  out << "train " << cfg.model << ": " << data.train.size() << " examples, S=" << tc.samples
      << ", B=" << tc.batch << ", lr=" << tc.lr << ", kl_weight=" << tc.kl_weight << '\n';
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> idx;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto order = shuffled_indices(data.train.size(), tc.master_seed * 1000003ull + epoch);
    double loss_sum = 0.0;
    std::size_t steps = 0, correct = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch) {
      const std::size_t end = std::min(order.size(), start + tc.batch);
      idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                 order.begin() + static_cast<std::ptrdiff_t>(end));
      const StepResult r = trainer.train_step(make_batch(data.train, idx));
      if (!std::isfinite(r.loss.total))
        throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", step " +
                                                  std::to_string(trainer.step()) +
                                                  ": loss is not finite");
      loss_sum += r.loss.total;
      correct += r.correct;
      ++steps;
      if (cfg.progress_every && trainer.step() % cfg.progress_every == 0)
        out << "  step " << trainer.step() << " loss " << r.loss.total << " (nll "
            << r.loss.likelihood_nll << ")\n"
            << std::flush;
    }
    const double val = trainer.evaluate(data.test);
    const double mean_loss = loss_sum / static_cast<double>(std::max<std::size_t>(steps, 1));
    log << epoch << ',' << trainer.step() << ',' << std::setprecision(9) << mean_loss << ','
        << val << '\n'
        << std::flush;
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << "epoch " << epoch << " step " << trainer.step() << " loss " << mean_loss
        << " train_acc "
        << static_cast<double>(correct) / static_cast<double>(data.train.size()) << " val_acc "
        << val << " (" << std::fixed << std::setprecision(1) << secs << " s)"
        << std::defaultfloat << std::setprecision(6) << '\n'
        << std::flush;
  }
  save_checkpoint(net, ckpt);
  out << "checkpoint " << ckpt << "\nlog " << log_path << '\n';
  return 0;
}

int run_verify_equivalence(const RunConfig& cfg, std::ostream& out) {
  const Network network = Network::preset(cfg.model);
  const DataSplit data = load_data(cfg, network);

  TrainConfig base = cfg.train;
  base.kl_weight = resolve_kl_weight(cfg.kl_weight, data.train.size());
  base.trace_retrievals = true;
  TrainConfig store_cfg = base, shift_cfg = base;
  store_cfg.strategy = EpsilonStrategy::Store;
  shift_cfg.strategy = EpsilonStrategy::Shift;
  if (!cfg.corrupt_taps.empty())
    shift_cfg.corrupt_reverse_taps = parse_taps(cfg.corrupt_taps, base.grng_width);

  BayesNet store_net = BayesNet::initialize(network, base.master_seed, base.sigma_init);
  BayesNet shift_net = store_net;
  Trainer store_tr(store_net, store_cfg);
  Trainer shift_tr(shift_net, shift_cfg);
  GradAccum store_acc(store_net), shift_acc(shift_net);

  const auto order = shuffled_indices(data.train.size(), base.master_seed);
  std::size_t cursor = 0, compared = 0;
  bool diverged = false;
  std::vector<std::size_t> idx;
  std::vector<EpsLog> generated(base.samples);

  for (std::size_t step = 0; step < cfg.steps && !diverged; ++step) {
    idx.clear();
    for (std::size_t j = 0; j < base.batch; ++j) idx.push_back(order[cursor++ % order.size()]);
    const Batch batch = make_batch(data.train, idx);

    store_tr.forward_pass(batch);
    shift_tr.forward_pass(batch);
    for (std::size_t i = 0; i < base.samples; ++i) generated[i] = store_tr.samples()[i].log;
    store_tr.backward_pass(store_acc);
    shift_tr.backward_pass(shift_acc);

    for (std::size_t i = 0; i < base.samples && !diverged; ++i) {
      const auto& log = generated[i].counts;
      const auto& a = store_tr.samples()[i].retrieval_trace;
      const auto& b = shift_tr.samples()[i].retrieval_trace;
      if (a.size() != log.size() || b.size() != log.size()) {
        out << "DIVERGENCE step " << step << " sample " << i << ": retrieved " << b.size()
            << " epsilons, generated " << log.size() << '\n';
        diverged = true;
        break;
      }
      for (std::size_t r = 0; r < log.size(); ++r) {
        const auto expected = log[log.size() - 1 - r];
        if (a[r] != expected || b[r] != expected) {
          out << "DIVERGENCE step " << step << " sample " << i << " retrieval " << r
              << ": logged count " << expected << ", store " << a[r] << ", shift " << b[r]
              << '\n';
          diverged = true;
          break;
        }
      }
      compared += log.size();
      if (!cfg.eps_log_dir.empty() && step == 0) {
        fs::create_directories(cfg.eps_log_dir);
        generated[i].write(fs::path(cfg.eps_log_dir) /
                           ("sample" + std::to_string(i) + ".epsl"));
      }
    }
    store_tr.apply_update(store_acc);
    shift_tr.apply_update(shift_acc);
  }

  const auto a = checkpoint_bytes(store_net);
  const auto b = checkpoint_bytes(shift_net);
  if (!cfg.out.empty()) {
    save_checkpoint(store_net, cfg.out + ".store.sbnn");
    save_checkpoint(shift_net, cfg.out + ".shift.sbnn");
  }
  const std::size_t diff = first_difference(a, b);
  if (diff != std::string::npos) {
    out << "DIVERGENCE checkpoint byte " << diff << " of " << a.size() << '\n';
    diverged = true;
  }
  if (diverged) return 1;
  out << "equivalent: " << cfg.model << ", " << cfg.steps << " steps, S=" << base.samples
      << ", " << compared << " retrievals matched, checkpoints identical (" << a.size()
      << " bytes)\n";
  return 0;
}

int run_cost_report(const RunConfig& cfg, std::ostream& out) {
  cost::CostParams params;
  params.eps_double_read = cfg.eps_double_read;
  const auto models = cfg.cost_models.empty() ? cost::ModelSpec::preset_names() : cfg.cost_models;
  const std::vector<std::uint64_t> samples =
      cfg.cost_samples.empty() ? std::vector<std::uint64_t>{8, 16, 32, 64, 128} : cfg.cost_samples;

  std::vector<cost::TrafficReport> reports;
  out << "model,S,eps_share,store_over_shift_bytes,bnn_over_dnn_bytes,footprint_reduction,"
         "speedup,energy_ratio\n";
  out << std::setprecision(4);
  for (const auto& name : models) {
    const auto spec = cost::ModelSpec::preset(name);
    auto dnn = cost::traffic_per_iteration(spec, 1, cost::Strategy::Dnn, params);
    for (const auto s : samples) {
      auto store = cost::traffic_per_iteration(spec, s, cost::Strategy::Store, params);
      auto shift = cost::traffic_per_iteration(spec, s, cost::Strategy::Shift, params);
      const auto fp_store = cost::footprint(spec, s, cost::Strategy::Store, params);
      const auto fp_shift = cost::footprint(spec, s, cost::Strategy::Shift, params);
      const auto le_store = cost::latency_energy(store, params);
      const auto le_shift = cost::latency_energy(shift, params);
      out << name << ',' << s << ',' << store.eps_share() << ','
          << static_cast<double>(store.total_bytes()) / static_cast<double>(shift.total_bytes())
          << ','
          << static_cast<double>(store.total_bytes()) / static_cast<double>(dnn.total_bytes())
          << ','
          << 1.0 - static_cast<double>(fp_shift.total()) / static_cast<double>(fp_store.total())
          << ',' << le_store.cycles / le_shift.cycles << ','
          << le_store.energy_pj / le_shift.energy_pj << '\n';
      const std::string tag = name + "-" + std::to_string(s);
      store.model = tag;
      shift.model = tag;
      reports.push_back(std::move(store));
      reports.push_back(std::move(shift));
    }
    reports.push_back(std::move(dnn));
  }
  const std::string csv = cost::to_csv(reports);
  if (!cfg.report.empty()) {
    std::ofstream f(cfg.report);
    if (!f) throw Error(ErrorCode::IoError, "cannot open report " + cfg.report);
    f << csv;
    out << "report " << cfg.report << '\n';
  } else {
    out << '\n' << csv;
  }
  return 0;
}

int run_rng_selftest(const RunConfig& cfg, std::ostream& out) {
  int failures = 0;
  const auto check = [&](const std::string& name, bool ok) {
    out << (ok ? "PASS " : "FAIL ") << name << '\n';
    if (!ok) ++failures;
  };

  {
    const TapSet taps = TapSet::default_for(8);
    bool ok = true;
    for (std::uint64_t s = 1; s < 256; ++s) {
      LfsrState st(taps, s);
      const auto before = st.to_words();
      st.shift_forward();
      st.shift_reverse();
      ok = ok && st.to_words() == before;
    }
    check("width 8 forward/reverse involution over all 255 states", ok);
  }
  for (int width : {4, 8, 12, 16, 20}) {
    const TapSet taps = TapSet::default_for(width);
    LfsrState st(taps, 1);
    const LfsrState start = st;
    std::uint64_t period = 0;
    do {
      st.shift_forward();
      ++period;
    } while (!st.same_pattern(start) && period <= (1ull << width));
    check("width " + std::to_string(width) + " period 2^n - 1",
          period == (1ull << width) - 1);
  }
  {
    GrngStream g(cfg.train.master_seed, 0, TapSet::default_for(256));
    bool ok = true;
    std::uint64_t state = cfg.train.master_seed;
    for (int i = 0; i < 100000; ++i) {
      state = state * 6364136223846793005ull + 1442695040888963407ull;
      if ((state >> 63) != 0 || g.position() == 0)
        g.generate_forward();
      else
        g.retrieve_backward();
      ok = ok && g.running_sum() == popcount_state(g.lfsr());
    }
    check("running sum equals popcount over 1e5 mixed shifts", ok);
  }
  {
    // Consecutive draws share 255 of 256 register bits, so only every
    // 256th draw enters the estimate; those windows are disjoint.
    GrngStream g(cfg.train.master_seed, 1, TapSet::default_for(256));
    double sum = 0.0, sq = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
      for (int skip = 0; skip < 255; ++skip) g.generate_forward();
      const double e = g.generate_forward().value;
      sum += e;
      sq += e * e;
    }
    const double mean = sum / n, var = sq / n - mean * mean;
    out << "  mean " << mean << " variance " << var << '\n';
    check("epsilon moments (|mean| <= 0.02, variance in [0.96, 1.04])",
          std::abs(mean) <= 0.02 && var >= 0.96 && var <= 1.04);
  }
  return failures == 0 ? 0 : 1;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::ConfigError, "cannot read config file " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  std::size_t lineno = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::ConfigError,
                  path + ":" + std::to_string(lineno) + ": expected key = value");
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    std::replace(key.begin(), key.end(), '_', '-');
    entries.emplace_back(std::move(key), std::move(value));
  }
  return entries;
}

}  // namespace shiftbnn
