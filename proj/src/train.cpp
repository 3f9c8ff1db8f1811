#include "shiftbnn/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <thread>

#include "shiftbnn/error.hpp"

namespace shiftbnn {

namespace {

double round_to(Precision p, double v) noexcept {
  return p == Precision::FP32 ? static_cast<double>(static_cast<float>(v)) : v;
}

void round_all(Precision p, std::vector<double>& v) noexcept {
  if (p == Precision::FP32)
    for (auto& x : v) x = round_to(p, x);
}

// Copies example b of a feature-major matrix into a contiguous vector.
std::vector<double> gather_example(const std::vector<double>& fm, std::size_t features,
                                   std::size_t batch, std::size_t b) {
  std::vector<double> out(features);
  for (std::size_t f = 0; f < features; ++f) out[f] = fm[f * batch + b];
  return out;
}

void scatter_example(std::span<const double> values, std::size_t batch, std::size_t b,
                     std::vector<double>& fm) {
  for (std::size_t f = 0; f < values.size(); ++f) fm[f * batch + b] = values[f];
}

std::vector<double> to_batch_major(const std::vector<double>& fm, std::size_t features,
                                   std::size_t batch) {
  std::vector<double> out(fm.size());
  for (std::size_t f = 0; f < features; ++f)
    for (std::size_t b = 0; b < batch; ++b) out[b * features + f] = fm[f * batch + b];
  return out;
}

std::vector<std::size_t> dims_of(const Shape3& s) { return {s[0], s[1], s[2]}; }

/// Supplies the weights of a layer right before that layer runs.
using WeightSource = std::function<std::span<const double>(std::size_t layer)>;

/// Runs every layer over a feature-major batch and leaves the caches the
/// backward pass needs. Returns the logits (feature-major).
std::vector<double> run_layers(const Network& net, const std::vector<double>& inputs,
                               std::size_t batch, const WeightSource& weights, Precision prec,
                               std::vector<LayerCache>& caches) {
  const auto& layers = net.layers();
  caches.resize(layers.size());
  std::vector<double> current = inputs;
  round_all(prec, current);

  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSpec& spec = layers[l];
    LayerCache& cache = caches[l];
    cache.input = std::move(current);
    cache.argmax.clear();
    std::vector<double> out(spec.out_size() * batch, 0.0);

    switch (spec.kind) {
      case LayerKind::FC: {
        const auto w = weights(l);
        fc_forward_batch(w, spec.out_channels, spec.in_size(), cache.input, batch, out);
        break;
      }
      case LayerKind::Conv: {
        const auto w = weights(l);
        const Tensor kernels({spec.out_channels, spec.in_shape[0], spec.kernel, spec.kernel},
                             std::vector<double>(w.begin(), w.end()));
        for (std::size_t b = 0; b < batch; ++b) {
          const Tensor x(dims_of(spec.in_shape),
                         gather_example(cache.input, spec.in_size(), batch, b));
          const Tensor y = conv_forward(x, kernels, spec.conv_geometry());
          scatter_example(y.span(), batch, b, out);
        }
        break;
      }
      case LayerKind::Pool: {
        cache.argmax.resize(batch);
        for (std::size_t b = 0; b < batch; ++b) {
          const Tensor x(dims_of(spec.in_shape),
                         gather_example(cache.input, spec.in_size(), batch, b));
          auto pooled = maxpool_forward(x, spec.kernel, spec.stride);
          scatter_example(pooled.output.span(), batch, b, out);
          cache.argmax[b] = std::move(pooled.argmax);
        }
        break;
      }
    }
    if (spec.relu)
      for (auto& v : out) v = v > 0.0 ? v : 0.0;
    round_all(prec, out);
    cache.output = out;
    current = std::move(out);
  }
  return current;
}

struct LikelihoodResult {
  double nll = 0.0;
  std::vector<double> grad;  // feature-major, already divided by the batch size
};

LikelihoodResult batch_likelihood(const std::vector<double>& logits, std::size_t classes,
                                  const std::vector<std::size_t>& labels) {
  const std::size_t batch = labels.size();
  LikelihoodResult r;
  r.grad.assign(logits.size(), 0.0);
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto z = gather_example(logits, classes, batch, b);
    const auto x = softmax_xent(z, labels[b]);
    r.nll += x.loss;
    for (std::size_t c = 0; c < classes; ++c) r.grad[c * batch + b] = x.grad[c] * inv_batch;
  }
  r.nll *= inv_batch;
  return r;
}

std::size_t argmax_of(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// Running sums of the per-weight log-density terms of one sample.
struct DensityTerms {
  double log_q = 0.0;
  double neg_log_p = 0.0;

  // The sigma-only part of log q is shared by all samples of a step, so it
  // is summed once per layer rather than once per draw.
  void add_layer(std::size_t count, double sum_log_sigma, double sigma_prior) noexcept {
    const double n = static_cast<double>(count);
    log_q += -n * kHalfLog2Pi - sum_log_sigma;
    neg_log_p += n * (kHalfLog2Pi + std::log(sigma_prior));
  }
  void add_draw(double eps, double w, double sigma_prior) noexcept {
    log_q -= 0.5 * eps * eps;
    neg_log_p += w * w / (2.0 * sigma_prior * sigma_prior);
  }
};

LossBreakdown make_loss(double nll, const DensityTerms& d, double kl_weight) {
  LossBreakdown l;
  l.likelihood_nll = nll;
  l.log_posterior = kl_weight * d.log_q;
  l.neg_log_prior = kl_weight * d.neg_log_p;
  l.total = l.log_posterior + l.neg_log_prior + l.likelihood_nll;
  return l;
}

double sum_log(const std::vector<double>& v) {
  double t = 0.0;
  for (double x : v) t += std::log(x);
  return t;
}

void mask_relu(std::vector<double>& err, const std::vector<double>& output) {
  for (std::size_t i = 0; i < err.size(); ++i)
    if (!(output[i] > 0.0)) err[i] = 0.0;
}

}  // namespace

void TrainConfig::validate() const {
  const auto fail = [](const std::string& what) { throw Error(ErrorCode::ConfigError, what); };
  if (samples < 1) fail("samples must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr must be a finite non-negative number");
  if (!(sigma_prior > 0.0)) fail("sigma_prior must be > 0");
  if (batch < 1) fail("batch must be >= 1");
  if (!(kl_weight >= 0.0)) fail("kl_weight must be >= 0");
  if (!(sigma_min > 0.0)) fail("sigma_min must be > 0");
  if (!(sigma_init >= sigma_min)) fail("sigma_init must be >= sigma_min");
  if (threads < 1) fail("threads must be >= 1");
  try {
    (void)taps();
  } catch (const Error& e) {
    fail(e.what());
  }
  if (corrupt_reverse_taps && corrupt_reverse_taps->width() != grng_width)
    fail("corrupt taps must match the generator width");
}

double sample_weight(double mu, double sigma, const Epsilon& eps) noexcept {
  return mu + eps.value * sigma;
}

double dpu_grad(double w, double sigma, const Epsilon& eps, GradMode mode,
                double sigma_prior) noexcept {
  const double prior_term = w / (sigma_prior * sigma_prior);
  return mode == GradMode::PaperDpu ? prior_term : prior_term - eps.value / sigma;
}

WeightGrad weight_contribution(double likelihood_grad, double w, double sigma, const Epsilon& eps,
                               const TrainConfig& cfg) noexcept {
  const double e = eps.value;
  const double dw =
      likelihood_grad + cfg.kl_weight * dpu_grad(w, sigma, eps, cfg.grad_mode, cfg.sigma_prior);
  if (cfg.grad_mode == GradMode::PaperDpu) return {dw, dw * e};
  return {dw + cfg.kl_weight * e / sigma, dw * e + cfg.kl_weight * (e * e - 1.0) / sigma};
}

GradAccum::GradAccum(const BayesNet& net) {
  dmu.resize(net.params.size());
  dsigma.resize(net.params.size());
  for (std::size_t l = 0; l < net.params.size(); ++l) {
    dmu[l].assign(net.params[l].mu.size(), 0.0);
    dsigma[l].assign(net.params[l].sigma.size(), 0.0);
  }
}

void GradAccum::zero() {
  for (auto& v : dmu) std::fill(v.begin(), v.end(), 0.0);
  for (auto& v : dsigma) std::fill(v.begin(), v.end(), 0.0);
}

Trainer::Trainer(BayesNet& net, TrainConfig cfg) : net_(&net), cfg_(std::move(cfg)) {
  cfg_.validate();
  const TapSet taps = cfg_.taps();
  samples_.reserve(cfg_.samples);
  for (std::size_t i = 0; i < cfg_.samples; ++i)
    samples_.push_back(SampleState{i, GrngStream(cfg_.master_seed, i, taps),
                                   GenerationLedger(i, 0), EpsLog{cfg_.grng_width, {}},
                                   {}, {}, {}, 0, {}, {}});
}

double Trainer::store(double v) const noexcept { return round_to(cfg_.precision, v); }

void Trainer::forward_sample(SampleState& s, const Batch& batch) {
  const Network& network = net_->network;
  s.pre_forward_position = s.stream.position();
  s.ledger.clear(s.pre_forward_position);
  s.log.counts.clear();
  s.retrieval_trace.clear();

  DensityTerms density;
  std::vector<double> sampled;
  const bool keep_log = cfg_.strategy == EpsilonStrategy::Store;

  const WeightSource source = [&](std::size_t l) -> std::span<const double> {
    const LayerSpec& spec = network.layers()[l];
    const WeightParams& p = net_->params[l];
    const std::size_t count = spec.weight_count();
    sampled.resize(count);
    const std::int64_t start = s.stream.position();
    for (std::size_t j = 0; j < count; ++j) {
      const Epsilon eps = s.stream.generate_forward();
      if (keep_log) s.log.counts.push_back(static_cast<std::uint16_t>(eps.count));
      sampled[j] = store(sample_weight(p.mu[j], p.sigma[j], eps));
      density.add_draw(eps.value, sampled[j], cfg_.sigma_prior);
    }
    density.add_layer(count, log_sigma_sums_[l], cfg_.sigma_prior);
    s.ledger.record_segment({l, s.sample_id, spec.geometry(), count, start});
    return sampled;
  };

  const auto logits = run_layers(network, batch.inputs, batch.size, source, cfg_.precision,
                                 s.caches);
  auto lik = batch_likelihood(logits, network.classes(), batch.labels);
  s.logits_grad = std::move(lik.grad);
  s.loss = make_loss(lik.nll, density, cfg_.kl_weight);
  s.predictions.resize(batch.size);
  for (std::size_t b = 0; b < batch.size; ++b)
    s.predictions[b] = argmax_of(gather_example(logits, network.classes(), batch.size, b));
}

void Trainer::backward_sample(SampleState& s, GradAccum& accum) {
  const Network& network = net_->network;
  const auto& layers = network.layers();
  const std::size_t batch = batch_size_;
  const bool shift = cfg_.strategy == EpsilonStrategy::Shift;
  if (shift && cfg_.corrupt_reverse_taps) s.stream.retap(*cfg_.corrupt_reverse_taps);

  const auto fetch = [&]() -> Epsilon {
    Epsilon e;
    if (shift) {
      e = s.stream.retrieve_backward();
    } else {
      if (s.log.counts.empty())
        throw Error(ErrorCode::UnderflowBeforeSeed, "epsilon log exhausted");
      const int c = s.log.counts.back();
      s.log.counts.pop_back();
      e = {standardize(c, cfg_.grng_width), c};
    }
    if (cfg_.trace_retrievals) s.retrieval_trace.push_back(static_cast<std::uint16_t>(e.count));
    return e;
  };

  ReplayCursor cursor(s.ledger);
  std::vector<double> err = s.logits_grad;

  for (std::size_t l = layers.size(); l-- > 0;) {
    const LayerSpec& spec = layers[l];
    const LayerCache& cache = s.caches[l];
    if (spec.relu) mask_relu(err, cache.output);
    const bool propagate = l > 0;
    std::vector<double> in_err(propagate ? spec.in_size() * batch : 0, 0.0);

    switch (spec.kind) {
      case LayerKind::Pool: {
        for (std::size_t b = 0; b < batch; ++b) {
          const Tensor g(dims_of(spec.out_shape), gather_example(err, spec.out_size(), batch, b));
          const Tensor back = maxpool_backward(g, cache.argmax[b], dims_of(spec.in_shape));
          scatter_example(back.span(), batch, b, in_err);
        }
        break;
      }
      case LayerKind::FC: {
        const SegmentRecord& seg = cursor.begin_layer(l);
        const WeightParams& p = net_->params[l];
        const std::size_t in = spec.in_size();
        const auto input_bm = to_batch_major(cache.input, in, batch);
        // Rows come back in groups of up to four (still strictly in reverse
        // generation order) so the kernels can share memory passes.
        constexpr std::size_t kGroup = 4;
        std::vector<double> rows(kGroup * in), grads(kGroup * in);
        std::vector<Epsilon> eps(kGroup * in);
        std::array<const double*, kGroup> row_ptr{}, err_ptr{};
        std::array<double*, kGroup> grad_ptr{};
        std::array<std::size_t, kGroup> row_id{};
        std::uint64_t retrieved = 0;
        std::size_t filled = 0;

        const auto flush = [&] {
          if (filled == 0) return;
          if (propagate)
            fc_accumulate_rows_data_error({row_ptr.data(), filled}, {err_ptr.data(), filled}, in,
                                          batch, in_err);
          std::fill(grads.begin(), grads.begin() + static_cast<std::ptrdiff_t>(filled * in), 0.0);
          fc_accumulate_rows_weight_grad({err_ptr.data(), filled}, batch, input_bm, in,
                                         {grad_ptr.data(), filled});
          for (std::size_t j = 0; j < filled; ++j) {
            const std::size_t base = row_id[j] * in;
            const double* row = rows.data() + j * in;
            const double* grad = grads.data() + j * in;
            const Epsilon* e = eps.data() + j * in;
            for (std::size_t i = 0; i < in; ++i)
              accum.update_gradients(
                  l, base + i, weight_contribution(grad[i], row[i], p.sigma[base + i], e[i], cfg_));
          }
          filled = 0;
        };

        for (const ReplayBlock blk : reverse_blocks(seg.geometry)) {
          const std::size_t base = blk.m * in;
          double* row = rows.data() + filled * in;
          Epsilon* e = eps.data() + filled * in;
          for (std::size_t i = in; i-- > 0;) {
            e[i] = fetch();
            row[i] = store(sample_weight(p.mu[base + i], p.sigma[base + i], e[i]));
          }
          retrieved += in;
          row_ptr[filled] = row;
          err_ptr[filled] = err.data() + blk.m * batch;
          grad_ptr[filled] = grads.data() + filled * in;
          row_id[filled] = blk.m;
          if (++filled == kGroup) flush();
        }
        flush();
        cursor.end_layer(retrieved);
        break;
      }
      case LayerKind::Conv: {
        const SegmentRecord& seg = cursor.begin_layer(l);
        const WeightParams& p = net_->params[l];
        const ConvGeometry g = spec.conv_geometry();
        const std::size_t n_in = spec.in_shape[0], in_h = spec.in_shape[1],
                          in_w = spec.in_shape[2];
        const std::size_t out_h = spec.out_shape[1], out_w = spec.out_shape[2];
        const std::size_t in_plane = in_h * in_w, out_plane = out_h * out_w;
        const std::size_t kk = spec.kernel * spec.kernel;

        const auto err_bm = to_batch_major(err, spec.out_size(), batch);
        const auto input_bm = to_batch_major(cache.input, spec.in_size(), batch);
        std::vector<IntermittentAccumulator> partials;
        if (propagate)
          for (std::size_t b = 0; b < batch; ++b)
            partials.emplace_back(n_in, in_h, in_w, spec.kernel, spec.stride, spec.pad);

        std::vector<double> rotated(kk), grad(kk);
        std::vector<Epsilon> eps(kk);
        std::uint64_t retrieved = 0;
        for (const ReplayBlock blk : reverse_blocks(seg.geometry)) {
          const std::size_t base = (blk.m * n_in + blk.n) * kk;
          // Arrival j lands in rotated slot j, i.e. original slot kk - 1 - j.
          for (std::size_t j = 0; j < kk; ++j) {
            const std::size_t k = kk - 1 - j;
            eps[j] = fetch();
            rotated[j] = store(sample_weight(p.mu[base + k], p.sigma[base + k], eps[j]));
          }
          retrieved += kk;
          std::fill(grad.begin(), grad.end(), 0.0);
          for (std::size_t b = 0; b < batch; ++b) {
            const std::span<const double> e_map(err_bm.data() + b * spec.out_size() +
                                                    blk.m * out_plane,
                                                out_plane);
            if (propagate) partials[b].consume(blk.n, rotated, e_map, out_h, out_w);
            const std::span<const double> d_map(input_bm.data() + b * spec.in_size() +
                                                    blk.n * in_plane,
                                                in_plane);
            accumulate_kernel_weight_grad(d_map, in_h, in_w, e_map, out_h, out_w, g, grad);
          }
          for (std::size_t k = 0; k < kk; ++k) {
            const std::size_t j = kk - 1 - k;
            accum.update_gradients(
                l, base + k,
                weight_contribution(grad[k], rotated[j], p.sigma[base + k], eps[j], cfg_));
          }
        }
        cursor.end_layer(retrieved);
        for (std::size_t b = 0; b < partials.size(); ++b)
          scatter_example(partials[b].buffers(), batch, b, in_err);
        break;
      }
    }
    round_all(cfg_.precision, in_err);
    err = std::move(in_err);
  }

  if (!cursor.complete())
    throw Error(ErrorCode::LedgerMismatch, "backward replay did not consume every segment");
  if (shift && cfg_.corrupt_reverse_taps) s.stream.retap(cfg_.taps());
  if (shift && s.stream.position() != s.pre_forward_position)
    throw Error(ErrorCode::LedgerMismatch, "stream not restored to its pre-forward position");
  if (!shift && !s.log.counts.empty())
    throw Error(ErrorCode::LedgerMismatch, "epsilon log not fully consumed");
}

namespace {

// Runs fn(i) for i in [0, count) on up to `threads` workers.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(threads, count);
  std::vector<std::exception_ptr> errors(count);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < count; i += workers) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

void Trainer::forward_pass(const Batch& batch) {
  if (batch.size == 0 || batch.labels.size() != batch.size ||
      batch.inputs.size() != batch.size * net_->network.input_size())
    throw Error(ErrorCode::ShapeMismatch, "batch does not match the network input");
  batch_size_ = batch.size;
  labels_ = batch.labels;
  log_sigma_sums_.resize(net_->params.size());
  for (std::size_t l = 0; l < net_->params.size(); ++l)
    log_sigma_sums_[l] = sum_log(net_->params[l].sigma);
  parallel_for(samples_.size(), cfg_.threads, [&](std::size_t i) { forward_sample(samples_[i], batch); });
  for (const auto& s : samples_)
    if (!std::isfinite(s.loss.likelihood_nll))
      throw Error(ErrorCode::NonFiniteLoss,
                  "non-finite loss at step " + std::to_string(step_) + ", sample " +
                      std::to_string(s.sample_id));
  forward_done_ = true;
}

void Trainer::backward_pass(GradAccum& accum) {
  if (!forward_done_) throw Error(ErrorCode::LedgerMismatch, "backward pass without forward pass");
  if (cfg_.threads <= 1 || samples_.size() <= 1) {
    for (auto& s : samples_) backward_sample(s, accum);
  } else {
    // Each sample's contributions land in a zeroed private buffer, so adding
    // the buffers in sample order repeats the sequential sums exactly.
    std::vector<GradAccum> parts(samples_.size(), GradAccum(*net_));
    parallel_for(samples_.size(), cfg_.threads,
                 [&](std::size_t i) { backward_sample(samples_[i], parts[i]); });
    for (const auto& part : parts)
      for (std::size_t l = 0; l < accum.dmu.size(); ++l)
        for (std::size_t j = 0; j < accum.dmu[l].size(); ++j) {
          accum.dmu[l][j] += part.dmu[l][j];
          accum.dsigma[l][j] += part.dsigma[l][j];
        }
  }
  forward_done_ = false;
}

void Trainer::apply_update(GradAccum& accum) {
  const double scale = cfg_.lr / static_cast<double>(samples_.size());
  for (std::size_t l = 0; l < net_->params.size(); ++l) {
    auto& p = net_->params[l];
    for (std::size_t j = 0; j < p.mu.size(); ++j) {
      p.mu[j] = store(p.mu[j] - scale * accum.dmu[l][j]);
      p.sigma[j] = store(std::max(p.sigma[j] - scale * accum.dsigma[l][j], cfg_.sigma_min));
    }
  }
  accum.zero();
  ++step_;
  reseed_streams();
}

void Trainer::reseed_streams() {
  const TapSet taps = cfg_.taps();
  for (auto& s : samples_)
    s.stream = GrngStream(cfg_.master_seed, step_ * samples_.size() + s.sample_id, taps);
}

StepResult Trainer::train_step(const Batch& batch) {
  GradAccum accum(*net_);
  forward_pass(batch);
  StepResult r;
  r.loss = last_loss();
  const std::size_t classes = net_->network.classes();
  std::vector<double> mean_logits(classes * batch.size, 0.0);
  for (const auto& s : samples_)
    for (std::size_t i = 0; i < mean_logits.size(); ++i) mean_logits[i] += s.caches.back().output[i];
  for (std::size_t b = 0; b < batch.size; ++b)
    if (argmax_of(gather_example(mean_logits, classes, batch.size, b)) == batch.labels[b])
      ++r.correct;
  backward_pass(accum);
  apply_update(accum);
  return r;
}

LossBreakdown Trainer::last_loss() const {
  LossBreakdown m;
  for (const auto& s : samples_) {
    m.likelihood_nll += s.loss.likelihood_nll;
    m.log_posterior += s.loss.log_posterior;
    m.neg_log_prior += s.loss.neg_log_prior;
  }
  const double inv = 1.0 / static_cast<double>(samples_.size());
  m.likelihood_nll *= inv;
  m.log_posterior *= inv;
  m.neg_log_prior *= inv;
  m.total = m.log_posterior + m.neg_log_prior + m.likelihood_nll;
  return m;
}

double Trainer::evaluate(const Dataset& data, std::size_t batch) const {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  const std::size_t classes = net_->network.classes();
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const std::size_t end = std::min(data.size(), start + batch);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const Batch b = make_batch(data, idx);
    const auto logits = predict_mean(*net_, b);
    for (std::size_t j = 0; j < b.size; ++j)
      if (argmax_of(gather_example(logits, classes, b.size, j)) == b.labels[j]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<double> predict_mean(const BayesNet& net, const Batch& batch) {
  std::vector<LayerCache> caches;
  const WeightSource source = [&](std::size_t l) -> std::span<const double> {
    return net.params[l].mu;
  };
  return run_layers(net.network, batch.inputs, batch.size, source, Precision::FP64, caches);
}

double objective_with_epsilons(const BayesNet& net, const Batch& batch, const TrainConfig& cfg,
                               const std::vector<std::vector<std::vector<double>>>& eps) {
  if (eps.size() != cfg.samples)
    throw Error(ErrorCode::ShapeMismatch, "one epsilon set per sample required");
  double total = 0.0;
  std::vector<LayerCache> caches;
  std::vector<double> sampled;
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    DensityTerms density;
    const WeightSource source = [&](std::size_t l) -> std::span<const double> {
      const auto& p = net.params[l];
      const auto& e = eps[i][l];
      if (e.size() != p.mu.size())
        throw Error(ErrorCode::ShapeMismatch, "epsilon count does not match layer weights");
      sampled.resize(e.size());
      for (std::size_t j = 0; j < e.size(); ++j) {
        sampled[j] = round_to(cfg.precision, p.mu[j] + e[j] * p.sigma[j]);
        density.add_draw(e[j], sampled[j], cfg.sigma_prior);
      }
      density.add_layer(e.size(), sum_log(p.sigma), cfg.sigma_prior);
      return sampled;
    };
    const auto logits = run_layers(net.network, batch.inputs, batch.size, source, cfg.precision,
                                   caches);
    const auto lik = batch_likelihood(logits, net.network.classes(), batch.labels);
    total += make_loss(lik.nll, density, cfg.kl_weight).total;
  }
  return total / static_cast<double>(cfg.samples);
}

}  // namespace shiftbnn
