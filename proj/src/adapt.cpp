#include "clipot/adapt.hpp"

#include "clipot/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

namespace clipot {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_batch(ConstRefMat x) {
  if (x.cols() < 1) throw Error(ErrorCode::EmptyBatch, "batch has no columns");
}

void finish(BatchResult& result, const PrototypeBank& bank, const MatrixXd& z, double tau) {
  result.predictions = predict(bank, z, tau);
  result.hard_labels = argmax_columns(result.predictions);
}

// Sum of B-rescaled codes over all templates, divided by M.
MatrixXd averaged_targets(const PrototypeBank& bank, ConstRefMat z, const AdaptConfig& cfg,
                          const std::vector<int>& order) {
  MatrixXd sum = MatrixXd::Zero(bank.classes(), z.cols());
  for (int m : order) sum += column_targets(template_plan(bank, m, z, cfg));
  return sum / static_cast<double>(order.size());
}

std::vector<int> identity_order(int count) {
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  return order;
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::clip_ot: return "clip_ot";
    case Variant::training_free: return "training_free";
    case Variant::avg_template: return "avg_template";
    case Variant::tent: return "tent";
    case Variant::zero_shot: return "zero_shot";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::clip_ot, Variant::training_free, Variant::avg_template,
                    Variant::tent, Variant::zero_shot}) {
    if (name == to_string(v)) return v;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown variant '" + std::string(name) + "'");
}

void AdaptConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw Error(ErrorCode::InvalidConfig, "epsilon must be positive");
  }
  if (sinkhorn_iters < 1) throw Error(ErrorCode::InvalidConfig, "sinkhorn_iters must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw Error(ErrorCode::InvalidConfig, "lr must be non-negative");
  }
  if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw Error(ErrorCode::InvalidTemperature, "tau must be positive");
  }
}

SinkhornConfig AdaptConfig::sinkhorn() const {
  return SinkhornConfig{epsilon, sinkhorn_iters, stabilization, nan_policy};
}

TransportPlan<double> template_plan(const PrototypeBank& bank, int m, ConstRefMat z,
                                    const AdaptConfig& cfg) {
  MatrixXd scores = similarity(bank, m, z);
  if (cfg.kernel_uses_temperature) scores /= cfg.tau;
  return sinkhorn(scores, cfg.sinkhorn());
}

MatrixXd column_targets(const TransportPlan<double>& plan) {
  return plan.q * static_cast<double>(plan.batch());
}

std::vector<int> template_permutation(int count, std::mt19937_64& rng) {
  return random_permutation(count, rng);
}

BatchResult infer(const ToyEncoder& encoder, const LayerNormState& state,
                  const PrototypeBank& bank, ConstRefMat x, double tau) {
  const auto start = Clock::now();
  check_batch(x);
  BatchResult result;
  finish(result, bank, encoder.forward(state, x).z, tau);
  result.wall_time = seconds_since(start);
  return result;
}

BatchResult infer_embeddings(const PrototypeBank& bank, ConstRefMat z, double tau) {
  const auto start = Clock::now();
  check_batch(z);
  BatchResult result;
  finish(result, bank, z, tau);
  result.wall_time = seconds_since(start);
  return result;
}

BatchResult run_clip_ot(const ToyEncoder& encoder, LayerNormState& state,
                        const PrototypeBank& bank, ConstRefMat x, const AdaptConfig& cfg,
                        std::mt19937_64& rng) {
  const auto start = Clock::now();
  cfg.validate();
  check_batch(x);
  BatchResult result;
  result.template_order = template_permutation(bank.templates(), rng);

  for (int m : result.template_order) {
    const MatrixXd z = encoder.forward(state, x).z;
    const auto ot_start = Clock::now();
    const MatrixXd targets = column_targets(template_plan(bank, m, z, cfg));
    result.sinkhorn_time += seconds_since(ot_start);

    const LossAndGrad step = encoder.cross_entropy(state, x, targets, bank, cfg.tau);
    result.loss_trace.push_back(step.loss);
    state = sgd_step(state, step.grads, cfg.lr);
  }

  finish(result, bank, encoder.forward(state, x).z, cfg.tau);
  result.wall_time = seconds_since(start);
  return result;
}

BatchResult run_training_free(const ToyEncoder& encoder, const LayerNormState& state,
                              const PrototypeBank& bank, ConstRefMat x,
                              const AdaptConfig& cfg) {
  const auto start = Clock::now();
  check_batch(x);
  BatchResult result = training_free_embeddings(bank, encoder.forward(state, x).z, cfg);
  result.wall_time = seconds_since(start);
  return result;
}

BatchResult training_free_embeddings(const PrototypeBank& bank, ConstRefMat z,
                                     const AdaptConfig& cfg) {
  const auto start = Clock::now();
  cfg.validate();
  check_batch(z);
  BatchResult result;
  result.template_order = identity_order(bank.templates());
  result.predictions = averaged_targets(bank, z, cfg, result.template_order);
  result.hard_labels = argmax_columns(result.predictions);
  result.wall_time = seconds_since(start);
  result.sinkhorn_time = result.wall_time;
  return result;
}

BatchResult run_avg_template(const ToyEncoder& encoder, LayerNormState& state,
                             const PrototypeBank& bank, ConstRefMat x, const AdaptConfig& cfg,
                             std::mt19937_64& rng) {
  const auto start = Clock::now();
  cfg.validate();
  check_batch(x);
  BatchResult result;
  result.template_order = template_permutation(bank.templates(), rng);

  const MatrixXd z = encoder.forward(state, x).z;
  const auto ot_start = Clock::now();
  const MatrixXd targets = averaged_targets(bank, z, cfg, result.template_order);
  result.sinkhorn_time = seconds_since(ot_start);

  const LossAndGrad step = encoder.cross_entropy(state, x, targets, bank, cfg.tau);
  result.loss_trace.push_back(step.loss);
  state = sgd_step(state, step.grads, cfg.lr);

  finish(result, bank, encoder.forward(state, x).z, cfg.tau);
  result.wall_time = seconds_since(start);
  return result;
}

BatchResult run_tent(const ToyEncoder& encoder, LayerNormState& state,
                     const PrototypeBank& bank, ConstRefMat x, const AdaptConfig& cfg) {
  const auto start = Clock::now();
  cfg.validate();
  check_batch(x);
  BatchResult result;
  const LossAndGrad step = encoder.entropy(state, x, bank, cfg.tau);
  result.loss_trace.push_back(step.loss);
  state = sgd_step(state, step.grads, cfg.lr);

  finish(result, bank, encoder.forward(state, x).z, cfg.tau);
  result.wall_time = seconds_since(start);
  return result;
}

Adapter::Adapter(const ToyEncoder& encoder, const PrototypeBank& bank, AdaptConfig cfg)
    : encoder_(encoder),
      bank_(bank),
      cfg_(cfg),
      state_(encoder.initial_state()),
      rng_(cfg.seed) {
  cfg_.validate();
  if (bank_.dim() != encoder_.spec().d_out) {
    throw Error(ErrorCode::ShapeMismatch, "prototype dimension differs from encoder output");
  }
}

BatchResult Adapter::process(ConstRefMat x) {
  switch (cfg_.variant) {
    case Variant::clip_ot: return run_clip_ot(encoder_, state_, bank_, x, cfg_, rng_);
    case Variant::training_free: return run_training_free(encoder_, state_, bank_, x, cfg_);
    case Variant::avg_template: return run_avg_template(encoder_, state_, bank_, x, cfg_, rng_);
    case Variant::tent: return run_tent(encoder_, state_, bank_, x, cfg_);
    case Variant::zero_shot: return infer(encoder_, state_, bank_, x, cfg_.tau);
  }
  throw Error(ErrorCode::InvalidConfig, "unhandled variant");
}

void Adapter::reset() {
  state_ = clipot::reset(state_);
  rng_.seed(cfg_.seed);
}

}  // namespace clipot
