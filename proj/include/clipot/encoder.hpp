#ifndef CLIPOT_ENCODER_HPP_
#define CLIPOT_ENCODER_HPP_

#include <cstdint>
#include <optional>
#include <vector>

#include "clipot/prototypes.hpp"
#include "clipot/types.hpp"

namespace clipot {

/// Toy visual encoder: `layers` blocks of
///   frozen linear -> LayerNorm(gamma, beta) -> tanh-GELU,
/// followed by per-column L2 normalization. Block widths are
/// d_hidden for every block but the last, which maps to d_out.
struct ToyEncoderSpec {
  int d_in = 64;
  int d_hidden = 64;
  int d_out = 32;
  int layers = 2;
  std::uint64_t seed = 0;

  void validate() const;
  /// Output width of every block.
  std::vector<int> widths() const;

  /// Square encoder whose embeddings live in the same space as its inputs.
  static ToyEncoderSpec square(int d, std::uint64_t seed, int layers = 2) {
    return ToyEncoderSpec{d, d, d, layers, seed};
  }
};

/// Trainable LayerNorm affine parameters, one gamma/beta pair per block.
struct LayerNormState {
  std::vector<VectorXd> gamma;
  std::vector<VectorXd> beta;

  bool operator==(const LayerNormState& other) const;
};

/// Unit-norm embeddings with optional ground-truth labels (evaluation only).
struct EmbeddingBatch {
  MatrixXd z;
  std::optional<VectorXi> labels;
};

struct LossAndGrad {
  double loss = 0.0;
  LayerNormState grads;
};

class ToyEncoder {
 public:
  static constexpr double kLayerNormEps = 1e-5;
  static constexpr double kLogFloor = 1e-12;

  explicit ToyEncoder(ToyEncoderSpec spec);

  const ToyEncoderSpec& spec() const { return spec_; }
  /// Frozen linear maps, block order. Never modified after construction.
  const std::vector<MatrixXd>& weights() const { return weights_; }

  /// gamma = 1, beta = 0 in every block.
  LayerNormState initial_state() const;

  EmbeddingBatch forward(const LayerNormState& ln, ConstRefMat x) const;

  /// Mean pseudo cross-entropy  -1/B sum_i sum_k q_ki log p_ki  with
  /// p = predict(bank, forward(x), tau) and `targets` held constant, plus its
  /// exact gradient w.r.t. every gamma and beta.
  LossAndGrad cross_entropy(const LayerNormState& ln, ConstRefMat x, ConstRefMat targets,
                            const PrototypeBank& bank, double tau) const;

  /// Mean Shannon entropy of the predictions and its gradient (TENT objective).
  LossAndGrad entropy(const LayerNormState& ln, ConstRefMat x, const PrototypeBank& bank,
                      double tau) const;

 private:
  struct Cache;

  Cache run(const LayerNormState& ln, ConstRefMat x) const;
  LayerNormState backward(const LayerNormState& ln, const Cache& cache,
                          const MatrixXd& grad_z) const;
  void check_state(const LayerNormState& ln) const;

  ToyEncoderSpec spec_;
  std::vector<MatrixXd> weights_;
};

/// ln - lr * grads.
LayerNormState sgd_step(const LayerNormState& ln, const LayerNormState& grads, double lr);

/// Same shapes as `ln`, gamma = 1 and beta = 0.
LayerNormState reset(const LayerNormState& ln);

}  // namespace clipot

#endif  // CLIPOT_ENCODER_HPP_
