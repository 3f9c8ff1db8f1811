#include <doctest.h>

#include <cmath>
#include <vector>

#include "shiftbnn/error.hpp"
#include "shiftbnn/train.hpp"

using namespace shiftbnn;

namespace {

// Two-class classifier on a single scalar input: two weights in total.
Network scalar_net() { return Network("scalar", {1, 1, 1}, {LayerSpec::fc(2, false)}); }

Batch single_example(double x, std::size_t label) {
  Batch b;
  b.size = 1;
  b.inputs = {x};
  b.labels = {label};
  return b;
}

Batch synthetic_batch(const Network& net, std::size_t size, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.seed = seed;
  spec.shape = net.input_shape();
  spec.classes = net.classes();
  spec.count = size;
  const Dataset d = make_synthetic(spec);
  std::vector<std::size_t> idx(size);
  for (std::size_t i = 0; i < size; ++i) idx[i] = i;
  return make_batch(d, idx);
}

// Epsilons the trainer draws for `sample` on its first step, regenerated
// from a fresh stream in forward order.
std::vector<std::vector<double>> first_step_epsilons(const BayesNet& net, const TrainConfig& cfg,
                                                     std::size_t sample) {
  GrngStream stream(cfg.master_seed, sample, cfg.taps());
  std::vector<std::vector<double>> eps;
  for (const auto& p : net.params) {
    std::vector<double> layer(p.mu.size());
    for (auto& e : layer) e = stream.generate_forward().value;
    eps.push_back(std::move(layer));
  }
  return eps;
}

}  // namespace

TEST_CASE("sampling and prior gradient examples") {
  CHECK(sample_weight(0.5, 0.1, {0.0, 128}) == 0.5);
  CHECK(sample_weight(0.5, 0.1, {1.0, 136}) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(sample_weight(0.0, 1.0, {standardize(136, 256), 136}) == 1.0);

  CHECK(dpu_grad(0.3, 1.0, {0.0, 128}, GradMode::PaperDpu, 0.5) == doctest::Approx(1.2).epsilon(1e-15));
  CHECK(dpu_grad(0.0, 1.0, {0.7, 0}, GradMode::PaperDpu, 0.5) == 0.0);
  CHECK(dpu_grad(1.0, 1.0, {1.0, 136}, GradMode::Exact, 0.5) == 3.0);
}

TEST_CASE("exact prior gradient matches finite differences of the log densities") {
  // f(w) = log q(w | mu, sigma) - log P(w) with the sampled w; d f / d w.
  const double mu = 0.2, sigma = 0.3, sigma_c = 0.5;
  const auto f = [&](double w) {
    const double z = (w - mu) / sigma;
    return -std::log(sigma) - 0.5 * z * z + std::log(sigma_c) + w * w / (2 * sigma_c * sigma_c);
  };
  for (double e : {-1.5, -0.25, 0.0, 0.75, 2.0}) {
    const double w = mu + e * sigma, h = 1e-6;
    const double fd = (f(w + h) - f(w - h)) / (2 * h);
    CHECK(dpu_grad(w, sigma, {e, 0}, GradMode::Exact, sigma_c) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("gradient accumulation examples") {
  auto net = BayesNet::initialize(scalar_net(), 1, 0.1);
  GradAccum acc(net);
  TrainConfig cfg;
  cfg.kl_weight = 0.0;
  acc.update_gradients(0, 0, weight_contribution(0.2, 0.0, 0.1, {0.0, 128}, cfg));
  CHECK(acc.dmu[0][0] == 0.2);
  CHECK(acc.dsigma[0][0] == 0.0);
  acc.update_gradients(0, 1, weight_contribution(0.2, 0.0, 0.1, {-1.0, 120}, cfg));
  CHECK(acc.dsigma[0][1] == -0.2);
  acc.zero();
  CHECK(acc.dmu[0][0] == 0.0);

  // S = 2 with contributions 0.2 (eps 0) and 0.4 (eps 1): the update uses
  // the sample mean, so mu moves by lr * 0.3 and sigma by lr * 0.2.
  cfg.samples = 2;
  cfg.lr = 1.0;
  cfg.precision = Precision::FP64;
  net.params[0].mu = {1.0, 1.0};
  net.params[0].sigma = {1.0, 1.0};
  Trainer trainer(net, cfg);
  GradAccum two(net);
  two.update_gradients(0, 0, weight_contribution(0.2, 0.0, 1.0, {0.0, 128}, cfg));
  two.update_gradients(0, 0, weight_contribution(0.4, 0.0, 1.0, {1.0, 136}, cfg));
  CHECK(two.dmu[0][0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(two.dsigma[0][0] == doctest::Approx(0.4).epsilon(1e-15));
  trainer.apply_update(two);
  CHECK(net.params[0].mu[0] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(net.params[0].sigma[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(two.dmu[0][0] == 0.0);
}

TEST_CASE("scalar network step matches a hand calculation") {
  auto net = BayesNet::initialize(scalar_net(), 1, 0.1);
  net.params[0].mu = {0.3, -0.2};
  net.params[0].sigma = {0.1, 0.05};
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.precision = Precision::FP64;
  Trainer trainer(net, cfg);
  const double x = 0.8;
  const auto eps = first_step_epsilons(net, cfg, 0)[0];

  const double w0 = 0.3 + eps[0] * 0.1, w1 = -0.2 + eps[1] * 0.05;
  const double z0 = w0 * x, z1 = w1 * x;
  const double p0 = std::exp(z0) / (std::exp(z0) + std::exp(z1));
  const double g0 = (p0 - 1.0) * x, g1 = (1.0 - p0) * x;  // label 0
  const double d0 = g0 + w0 / 0.25, d1 = g1 + w1 / 0.25;
  const double mu0 = 0.3 - 0.1 * d0, mu1 = -0.2 - 0.1 * d1;
  const double s0 = std::max(0.1 - 0.1 * d0 * eps[0], 1e-6);
  const double s1 = std::max(0.05 - 0.1 * d1 * eps[1], 1e-6);

  trainer.train_step(single_example(x, 0));
  CHECK(net.params[0].mu[0] == doctest::Approx(mu0).epsilon(1e-12));
  CHECK(net.params[0].mu[1] == doctest::Approx(mu1).epsilon(1e-12));
  CHECK(net.params[0].sigma[0] == doctest::Approx(s0).epsilon(1e-12));
  CHECK(net.params[0].sigma[1] == doctest::Approx(s1).epsilon(1e-12));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  auto net = BayesNet::initialize(Network::preset("toy-conv"), 2, 0.05);
  const auto before = checkpoint_bytes(net);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.samples = 2;
  Trainer trainer(net, cfg);
  const Batch b = synthetic_batch(net.network, 1, 3);
  for (int i = 0; i < 3; ++i) trainer.train_step(b);
  CHECK(checkpoint_bytes(net) == before);
}

TEST_CASE("zero sigma silences sampling") {
  Network net_spec("identity", {1, 1, 4}, {LayerSpec::fc(4, false)});
  auto net = BayesNet::initialize(net_spec, 1, 0.1);
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t i = 0; i < 4; ++i) net.params[0].mu[o * 4 + i] = o == i ? 1.0 : 0.0;
  net.params[0].sigma.assign(16, 0.0);
  TrainConfig cfg;
  cfg.precision = Precision::FP64;
  Trainer trainer(net, cfg);
  Batch b;
  b.size = 1;
  b.inputs = {0.1, 0.4, 0.2, 0.9};
  b.labels = {3};
  trainer.forward_pass(b);
  CHECK(trainer.samples()[0].caches.back().output == b.inputs);
}

TEST_CASE("loss decomposition and agreement with the frozen-epsilon objective") {
  auto net = BayesNet::initialize(Network::preset("toy-conv"), 4, 0.05);
  TrainConfig cfg;
  cfg.samples = 3;
  cfg.batch = 2;
  cfg.precision = Precision::FP64;
  cfg.kl_weight = 0.01;
  Trainer trainer(net, cfg);
  const Batch b = synthetic_batch(net.network, 2, 5);
  trainer.forward_pass(b);
  for (const auto& s : trainer.samples())
    CHECK(s.loss.total == s.loss.log_posterior + s.loss.neg_log_prior + s.loss.likelihood_nll);
  const LossBreakdown mean = trainer.last_loss();
  CHECK(mean.total == mean.log_posterior + mean.neg_log_prior + mean.likelihood_nll);

  std::vector<std::vector<std::vector<double>>> eps;
  for (std::size_t i = 0; i < cfg.samples; ++i) eps.push_back(first_step_epsilons(net, cfg, i));
  CHECK(objective_with_epsilons(net, b, cfg, eps) == doctest::Approx(mean.total).epsilon(1e-12));
}

TEST_CASE("backward pass restores streams and conserves counts") {
  auto net = BayesNet::initialize(Network::preset("toy-conv"), 6, 0.05);
  TrainConfig cfg;
  cfg.samples = 3;
  Trainer trainer(net, cfg);
  const Batch b = synthetic_batch(net.network, 1, 7);
  GradAccum acc(net);
  trainer.forward_pass(b);
  for (const auto& s : trainer.samples()) {
    CHECK(s.stream.position() == static_cast<std::int64_t>(net.network.total_weights()));
    for (const auto& seg : s.ledger.segments())
      CHECK(seg.count == net.network.layers()[seg.layer_id].weight_count());
  }
  trainer.backward_pass(acc);
  for (const auto& s : trainer.samples()) CHECK(s.stream.position() == s.pre_forward_position);
  CHECK_THROWS_AS(trainer.backward_pass(acc), Error);
}

TEST_CASE("store and shift give identical trajectories, also across thread counts") {
  const auto run = [](EpsilonStrategy strategy, std::size_t threads, Precision precision) {
    auto net = BayesNet::initialize(Network::preset("toy-conv"), 8, 0.02);
    TrainConfig cfg;
    cfg.samples = 3;
    cfg.batch = 2;
    cfg.lr = 0.05;
    cfg.strategy = strategy;
    cfg.threads = threads;
    cfg.precision = precision;
    Trainer trainer(net, cfg);
    for (std::uint64_t step = 0; step < 6; ++step)
      trainer.train_step(synthetic_batch(net.network, 2, 100 + step));
    return checkpoint_bytes(net);
  };
  for (Precision p : {Precision::FP32, Precision::FP64}) {
    const auto shift = run(EpsilonStrategy::Shift, 1, p);
    CHECK(run(EpsilonStrategy::Store, 1, p) == shift);
    CHECK(run(EpsilonStrategy::Shift, 3, p) == shift);
  }
}

TEST_CASE("sigma stays above its floor") {
  auto net = BayesNet::initialize(scalar_net(), 1, 1e-6);
  TrainConfig cfg;
  cfg.lr = 50.0;
  cfg.sigma_init = 1e-6;
  Trainer trainer(net, cfg);
  for (int i = 0; i < 5; ++i) trainer.train_step(single_example(1.0, static_cast<std::size_t>(i % 2)));
  for (double s : net.params[0].sigma) CHECK(s >= static_cast<double>(static_cast<float>(1e-6)));
}

TEST_CASE("same seed gives the same losses") {
  const auto losses = [] {
    auto net = BayesNet::initialize(Network::preset("toy-conv"), 1, 0.01);
    TrainConfig cfg;
    cfg.samples = 2;
    cfg.lr = 0.01;
    Trainer trainer(net, cfg);
    std::vector<double> out;
    for (std::uint64_t i = 0; i < 4; ++i)
      out.push_back(trainer.train_step(synthetic_batch(net.network, 1, i)).loss.total);
    return out;
  };
  CHECK(losses() == losses());
}

TEST_CASE("corrupted reverse taps break retrieval") {
  auto net = BayesNet::initialize(Network::preset("toy-conv"), 1, 0.01);
  TrainConfig cfg;
  cfg.trace_retrievals = true;
  cfg.corrupt_reverse_taps = TapSet(256, {245, 251, 254, 256});
  Trainer trainer(net, cfg);
  trainer.forward_pass(synthetic_batch(net.network, 1, 1));
  GradAccum acc(net);
  trainer.backward_pass(acc);
  const auto& s = trainer.samples()[0];
  CHECK(s.stream.position() == 0);
  CHECK(s.stream.lfsr().to_words() != GrngStream(1, 0, cfg.taps()).lfsr().to_words());
}

TEST_CASE("configuration validation") {
  const auto rejects = [](auto mutate) {
    TrainConfig cfg;
    mutate(cfg);
    try {
      cfg.validate();
    } catch (const Error& e) {
      return e.code() == ErrorCode::ConfigError;
    }
    return false;
  };
  CHECK(rejects([](TrainConfig& c) { c.samples = 0; }));
  CHECK(rejects([](TrainConfig& c) { c.lr = -1.0; }));
  CHECK(rejects([](TrainConfig& c) { c.sigma_prior = 0.0; }));
  CHECK(rejects([](TrainConfig& c) { c.batch = 0; }));
  CHECK(rejects([](TrainConfig& c) { c.grng_width = 17; }));
  CHECK(rejects([](TrainConfig& c) { c.sigma_init = 1e-9; }));
  CHECK_FALSE(rejects([](TrainConfig&) {}));
}

TEST_CASE("non-finite likelihood stops training") {
  auto net = BayesNet::initialize(scalar_net(), 1, 0.1);
  net.params[0].mu = {std::nan(""), 0.0};
  TrainConfig cfg;
  Trainer trainer(net, cfg);
  try {
    trainer.train_step(single_example(1.0, 0));
    FAIL("expected NonFiniteLoss");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteLoss);
  }
}

TEST_CASE("posterior-mean evaluation") {
  auto net = BayesNet::initialize(scalar_net(), 1, 0.1);
  net.params[0].mu = {1.0, -1.0};
  Trainer trainer(net, TrainConfig{});
  Dataset d;
  d.shape = {1, 1, 1};
  d.classes = 2;
  d.images = {1.0f, -1.0f, 2.0f, -0.5f};
  d.labels = {0, 1, 0, 0};
  CHECK(trainer.evaluate(d) == 0.75);
}
