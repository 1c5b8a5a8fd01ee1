#ifndef CLIPOT_ADAPT_HPP_
#define CLIPOT_ADAPT_HPP_

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "clipot/encoder.hpp"
#include "clipot/ot_assign.hpp"
#include "clipot/prototypes.hpp"

namespace clipot {

enum class Variant { clip_ot, training_free, avg_template, tent, zero_shot };

std::string_view to_string(Variant v);
/// Throws InvalidConfig on an unknown name.
Variant parse_variant(std::string_view name);

struct AdaptConfig {
  double epsilon = 0.7;
  int sinkhorn_iters = 3;
  double lr = 1e-4;
  int batch_size = 128;
  double tau = 0.01;
  std::uint64_t seed = 0;
  Variant variant = Variant::clip_ot;
  Stabilization stabilization = Stabilization::shifted;
  NanPolicy nan_policy = NanPolicy::error;
  // Sinkhorn runs on the logits S / tau rather than the raw cosines S.
  bool kernel_uses_temperature = true;

  void validate() const;
  SinkhornConfig sinkhorn() const;
};

struct BatchResult {
  MatrixXd predictions;             // K x B, column-stochastic
  VectorXi hard_labels;             // argmax per column, lowest index on ties
  std::vector<double> loss_trace;   // one entry per LN update
  std::vector<int> template_order;  // templates in the order they were used
  double wall_time = 0.0;           // seconds
  double sinkhorn_time = 0.0;       // seconds spent producing codes
};

/// Balanced code for template `m` (or `kAveragedPrototypes`) on embeddings `z`.
TransportPlan<double> template_plan(const PrototypeBank& bank, int m, ConstRefMat z,
                                    const AdaptConfig& cfg);

/// Plan columns rescaled by B so each one is a distribution over classes.
MatrixXd column_targets(const TransportPlan<double>& plan);

/// Seeded random permutation of {0, ..., count - 1}.
std::vector<int> template_permutation(int count, std::mt19937_64& rng);

/// Zero-shot inference; no state change.
BatchResult infer(const ToyEncoder& encoder, const LayerNormState& state,
                  const PrototypeBank& bank, ConstRefMat x, double tau);

/// Zero-shot inference on precomputed embeddings.
BatchResult infer_embeddings(const PrototypeBank& bank, ConstRefMat z, double tau);

/// Multi-template distillation: for every template in a random order, code
/// the current embeddings with Sinkhorn, then take one SGD step on the pseudo
/// cross-entropy against averaged-prototype predictions. Ends with inference
/// under the updated state.
BatchResult run_clip_ot(const ToyEncoder& encoder, LayerNormState& state,
                        const PrototypeBank& bank, ConstRefMat x, const AdaptConfig& cfg,
                        std::mt19937_64& rng);

/// Predictions are the template-averaged, column-rescaled codes of the frozen
/// embeddings. `state` is read only.
BatchResult run_training_free(const ToyEncoder& encoder, const LayerNormState& state,
                              const PrototypeBank& bank, ConstRefMat x,
                              const AdaptConfig& cfg);

/// Training-free codes computed directly on precomputed embeddings.
BatchResult training_free_embeddings(const PrototypeBank& bank, ConstRefMat z,
                                     const AdaptConfig& cfg);

/// One SGD step against the template-averaged code, then inference.
BatchResult run_avg_template(const ToyEncoder& encoder, LayerNormState& state,
                             const PrototypeBank& bank, ConstRefMat x, const AdaptConfig& cfg,
                             std::mt19937_64& rng);

/// One SGD step on the prediction entropy, then inference.
BatchResult run_tent(const ToyEncoder& encoder, LayerNormState& state,
                     const PrototypeBank& bank, ConstRefMat x, const AdaptConfig& cfg);

/// One adaptation stream: owns its LN state and RNG, adapts cumulatively
/// across batches until `reset`.
class Adapter {
 public:
  Adapter(const ToyEncoder& encoder, const PrototypeBank& bank, AdaptConfig cfg);

  BatchResult process(ConstRefMat x);
  /// Restores gamma = 1, beta = 0 and reseeds the RNG.
  void reset();

  const LayerNormState& state() const { return state_; }
  const AdaptConfig& config() const { return cfg_; }

 private:
  const ToyEncoder& encoder_;
  const PrototypeBank& bank_;
  AdaptConfig cfg_;
  LayerNormState state_;
  std::mt19937_64 rng_;
};

}  // namespace clipot

#endif  // CLIPOT_ADAPT_HPP_
