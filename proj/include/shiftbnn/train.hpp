#pragma once

// Bayes-by-Backprop training with S weight samples per step.
//
// Every sample i owns a GrngStream. Forward sampling draws one epsilon per
// weight (w = mu + eps * sigma) in the canonical order recorded by the
// sample's GenerationLedger. The backward pass walks layers last to first
// and gets each layer's epsilons back in exactly reversed order, either by
// reverse-shifting the stream (SHIFT) or by popping the epsilon log (STORE).
// Each retrieved kernel or row is rebuilt, used for the data error and the
// weight gradient, and dropped; no epsilon survives past its layer visit.
// Both strategies execute the same arithmetic, so their parameter
// trajectories are bit-identical.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "shiftbnn/dataset.hpp"
#include "shiftbnn/grng.hpp"
#include "shiftbnn/ledger.hpp"
#include "shiftbnn/model.hpp"

namespace shiftbnn {

enum class GradMode { PaperDpu, Exact };
enum class EpsilonStrategy { Store, Shift };
enum class Precision { FP32, FP64 };

struct TrainConfig {
  std::size_t samples = 1;
  double lr = 1e-3;
  double sigma_prior = 0.5;
  std::size_t batch = 1;
  GradMode grad_mode = GradMode::PaperDpu;
  EpsilonStrategy strategy = EpsilonStrategy::Shift;
  std::uint64_t master_seed = 1;
  std::size_t epochs = 20;
  /// Multiplies the posterior and prior terms of the loss. 1 is the plain
  /// per-example objective; 1/N spreads the complexity cost over N examples.
  double kl_weight = 1.0;
  Precision precision = Precision::FP32;
  double sigma_min = 1e-6;
  double sigma_init = 1e-3;
  int grng_width = 256;
  std::size_t threads = 1;
  /// Fault injection for equivalence checks: reverse shifting uses these
  /// taps instead of the forward ones.
  std::optional<TapSet> corrupt_reverse_taps;
  /// Record every retrieved epsilon count (per sample, retrieval order).
  bool trace_retrievals = false;

  /// Throws ConfigError.
  void validate() const;
  TapSet taps() const { return TapSet::default_for(grng_width); }
};

struct LossBreakdown {
  double likelihood_nll = 0.0;
  double log_posterior = 0.0;  // sum log q(w | mu, sigma), kl-weighted
  double neg_log_prior = 0.0;  // -sum log P(w), kl-weighted
  double total = 0.0;          // sum of the three
};

/// Contribution of one sampled weight to (d mu, d sigma).
struct WeightGrad {
  double mu;
  double sigma;
};

double sample_weight(double mu, double sigma, const Epsilon& eps) noexcept;

/// Derivative of (log q - log P) with respect to the sampled weight.
/// PaperDpu: w / sigma_c^2. Exact: w / sigma_c^2 - eps / sigma.
double dpu_grad(double w, double sigma, const Epsilon& eps, GradMode mode,
                double sigma_prior) noexcept;

/// Chain rule through w = mu + eps * sigma for the full per-weight gradient
/// `dw` (likelihood + weighted dpu). Exact mode adds the direct
/// d/dmu, d/dsigma terms of log q so the result is the true gradient.
WeightGrad weight_contribution(double likelihood_grad, double w, double sigma, const Epsilon& eps,
                               const TrainConfig& cfg) noexcept;

struct GradAccum {
  std::vector<std::vector<double>> dmu;
  std::vector<std::vector<double>> dsigma;

  explicit GradAccum(const BayesNet& net);
  GradAccum() = default;
  void update_gradients(std::size_t layer, std::size_t index, const WeightGrad& g) noexcept {
    dmu[layer][index] += g.mu;
    dsigma[layer][index] += g.sigma;
  }
  void zero();
  bool operator==(const GradAccum&) const = default;
};

/// Per-layer forward state one sample keeps for its backward pass.
struct LayerCache {
  std::vector<double> input;   // feature-major [in_size][batch]
  std::vector<double> output;  // feature-major, post-activation
  std::vector<std::vector<std::size_t>> argmax;  // pool: per example
};

struct SampleState {
  std::size_t sample_id = 0;
  GrngStream stream;
  GenerationLedger ledger;
  EpsLog log;  // STORE only
  std::vector<LayerCache> caches;
  std::vector<double> logits_grad;  // feature-major [classes][batch]
  LossBreakdown loss;
  std::int64_t pre_forward_position = 0;
  std::vector<std::uint16_t> retrieval_trace;
  std::vector<std::size_t> predictions;
};

struct StepResult {
  LossBreakdown loss;  // mean over samples
  std::size_t correct = 0;  // argmax of the sample-averaged logits
};

class Trainer {
 public:
  Trainer(BayesNet& net, TrainConfig cfg);

  /// Forward over every sample; leaves caches for backward_pass.
  void forward_pass(const Batch& batch);
  /// Reverse replay over every sample into `accum` (ascending sample
  /// order). Restores each SHIFT stream to its pre-forward position.
  void backward_pass(GradAccum& accum);
  /// mu -= lr * dmu / S, sigma -= lr * dsigma / S, sigma clamped.
  void apply_update(GradAccum& accum);

  StepResult train_step(const Batch& batch);

  /// Accuracy with the posterior mean weights.
  double evaluate(const Dataset& data, std::size_t batch = 256) const;

  const std::vector<SampleState>& samples() const noexcept { return samples_; }
  std::vector<SampleState>& samples() noexcept { return samples_; }
  std::uint64_t step() const noexcept { return step_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  const BayesNet& net() const noexcept { return *net_; }
  /// Loss of the last forward pass, averaged over samples.
  LossBreakdown last_loss() const;

 private:
  void forward_sample(SampleState& s, const Batch& batch);
  void backward_sample(SampleState& s, GradAccum& accum);
  void reseed_streams();
  double store(double v) const noexcept;

  BayesNet* net_;
  TrainConfig cfg_;
  std::vector<SampleState> samples_;
  std::size_t batch_size_ = 0;
  std::vector<std::size_t> labels_;
  std::vector<double> log_sigma_sums_;  // per layer, refreshed every forward pass
  std::uint64_t step_ = 0;
  bool forward_done_ = false;
};

/// Mean-weight forward pass; returns feature-major logits.
std::vector<double> predict_mean(const BayesNet& net, const Batch& batch);

/// Scalar objective (1/S) * sum_i L_i for fixed epsilons, in the same
/// arithmetic as training. Used for finite-difference checks.
double objective_with_epsilons(const BayesNet& net, const Batch& batch, const TrainConfig& cfg,
                               const std::vector<std::vector<std::vector<double>>>& eps);

}  // namespace shiftbnn
