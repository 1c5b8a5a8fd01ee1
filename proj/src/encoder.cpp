#include "clipot/encoder.hpp"

#include <cmath>
#include <random>
#include <string>
#include <utility>

namespace clipot {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double gelu(double y) {
  return 0.5 * y * (1.0 + std::tanh(kGeluC * (y + kGeluA * y * y * y)));
}

double gelu_grad(double y) {
  const double t = std::tanh(kGeluC * (y + kGeluA * y * y * y));
  return 0.5 * (1.0 + t) + 0.5 * y * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * y * y);
}

}  // namespace

void ToyEncoderSpec::validate() const {
  if (d_in < 1 || d_hidden < 1 || d_out < 1 || layers < 1) {
    throw Error(ErrorCode::InvalidConfig, "encoder dimensions and layer count must be >= 1");
  }
}

std::vector<int> ToyEncoderSpec::widths() const {
  std::vector<int> w(static_cast<std::size_t>(layers), d_hidden);
  w.back() = d_out;
  return w;
}

bool LayerNormState::operator==(const LayerNormState& other) const {
  if (gamma.size() != other.gamma.size() || beta.size() != other.beta.size()) return false;
  for (std::size_t l = 0; l < gamma.size(); ++l) {
    if (gamma[l].size() != other.gamma[l].size() || gamma[l] != other.gamma[l]) return false;
  }
  for (std::size_t l = 0; l < beta.size(); ++l) {
    if (beta[l].size() != other.beta[l].size() || beta[l] != other.beta[l]) return false;
  }
  return true;
}

// Frozen maps start near the (rectangular) identity so an untouched encoder
// roughly preserves input directions.
ToyEncoder::ToyEncoder(ToyEncoderSpec spec) : spec_(spec) {
  spec_.validate();
  std::mt19937_64 rng(spec_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  int fan_in = spec_.d_in;
  for (int width : spec_.widths()) {
    MatrixXd w = MatrixXd::Identity(width, fan_in);
    const double scale = 0.1 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) += scale * normal(rng);
    }
    weights_.push_back(std::move(w));
    fan_in = width;
  }
}

LayerNormState ToyEncoder::initial_state() const {
  LayerNormState ln;
  for (int width : spec_.widths()) {
    ln.gamma.push_back(VectorXd::Ones(width));
    ln.beta.push_back(VectorXd::Zero(width));
  }
  return ln;
}

void ToyEncoder::check_state(const LayerNormState& ln) const {
  const auto widths = spec_.widths();
  if (ln.gamma.size() != widths.size() || ln.beta.size() != widths.size()) {
    throw Error(ErrorCode::ShapeMismatch, "LayerNorm state has the wrong number of blocks");
  }
  for (std::size_t l = 0; l < widths.size(); ++l) {
    if (ln.gamma[l].size() != widths[l] || ln.beta[l].size() != widths[l]) {
      throw Error(ErrorCode::ShapeMismatch,
                  "LayerNorm block " + std::to_string(l) + " has the wrong width");
    }
  }
}

struct ToyEncoder::Cache {
  struct Block {
    MatrixXd input;     // h_{l-1}
    MatrixXd xhat;      // normalized pre-activations
    VectorXd inv_std;   // per column
    MatrixXd y;         // gamma * xhat + beta
  };
  std::vector<Block> blocks;
  VectorXd norms;
  MatrixXd z;
};

ToyEncoder::Cache ToyEncoder::run(const LayerNormState& ln, ConstRefMat x) const {
  check_state(ln);
  if (x.rows() != spec_.d_in) {
    throw Error(ErrorCode::ShapeMismatch, "input has " + std::to_string(x.rows()) +
                                              " rows, encoder expects " +
                                              std::to_string(spec_.d_in));
  }
  if (x.cols() < 1) throw Error(ErrorCode::EmptyBatch, "input batch is empty");

  Cache cache;
  MatrixXd h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Cache::Block block;
    block.input = std::move(h);
    MatrixXd a = weights_[l] * block.input;
    const double n = static_cast<double>(a.rows());
    const Eigen::RowVectorXd mean = a.colwise().sum() / n;
    a.rowwise() -= mean;
    const Eigen::RowVectorXd var = a.array().square().colwise().sum() / n;
    block.inv_std = (var.array() + kLayerNormEps).rsqrt().transpose();
    block.xhat = a * block.inv_std.asDiagonal();
    block.y = (block.xhat.array().colwise() * ln.gamma[l].array()).colwise() +
              ln.beta[l].array();
    h = block.y.unaryExpr([](double v) { return gelu(v); });
    cache.blocks.push_back(std::move(block));
  }
  cache.norms = h.colwise().norm().transpose();
  if (cache.norms.minCoeff() < 1e-300) {
    throw Error(ErrorCode::ZeroVector, "encoder produced a zero embedding");
  }
  cache.z = h * cache.norms.cwiseInverse().asDiagonal();
  return cache;
}

EmbeddingBatch ToyEncoder::forward(const LayerNormState& ln, ConstRefMat x) const {
  return EmbeddingBatch{run(ln, x).z, std::nullopt};
}

LayerNormState ToyEncoder::backward(const LayerNormState& ln, const Cache& cache,
                                    const MatrixXd& grad_z) const {
  LayerNormState grads;
  grads.gamma.resize(weights_.size());
  grads.beta.resize(weights_.size());

  // Through z = h / |h|:  dh = (g - z (z^T g)) / |h|.
  const Eigen::RowVectorXd zg = cache.z.cwiseProduct(grad_z).colwise().sum();
  MatrixXd grad_h = grad_z - cache.z * zg.asDiagonal();
  grad_h = grad_h * cache.norms.cwiseInverse().asDiagonal();

  for (std::size_t l = weights_.size(); l-- > 0;) {
    const auto& block = cache.blocks[l];
    const MatrixXd slope = block.y.unaryExpr([](double v) { return gelu_grad(v); });
    const MatrixXd grad_y = grad_h.cwiseProduct(slope);
    grads.gamma[l] = grad_y.cwiseProduct(block.xhat).rowwise().sum();
    grads.beta[l] = grad_y.rowwise().sum();
    if (l == 0) break;

    // LayerNorm backward, per column over the feature axis.
    const MatrixXd grad_xhat = grad_y.array().colwise() * ln.gamma[l].array();
    const double n = static_cast<double>(grad_xhat.rows());
    const Eigen::RowVectorXd mean_g = grad_xhat.colwise().sum() / n;
    const Eigen::RowVectorXd mean_gx = grad_xhat.cwiseProduct(block.xhat).colwise().sum() / n;
    MatrixXd grad_a = grad_xhat;
    grad_a.rowwise() -= mean_g;
    grad_a -= block.xhat * mean_gx.asDiagonal();
    grad_a = grad_a * block.inv_std.asDiagonal();

    grad_h = weights_[l].transpose() * grad_a;
  }
  return grads;
}

LossAndGrad ToyEncoder::cross_entropy(const LayerNormState& ln, ConstRefMat x,
                                      ConstRefMat targets, const PrototypeBank& bank,
                                      double tau) const {
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidTemperature, "tau must be positive");
  const Cache cache = run(ln, x);
  const auto B = cache.z.cols();
  if (targets.rows() != bank.classes() || targets.cols() != B) {
    throw Error(ErrorCode::ShapeMismatch, "targets must be K x B");
  }
  const MatrixXd p = predict(bank, cache.z, tau);

  // Entries at the log floor contribute a constant, so only the unfloored
  // set A enters the gradient:  dL/dl_j = p_j sum_{k in A} q_k - q_j [j in A].
  double loss = 0.0;
  MatrixXd grad_logits(p.rows(), B);
  for (Eigen::Index i = 0; i < B; ++i) {
    double active_mass = 0.0;
    for (Eigen::Index k = 0; k < p.rows(); ++k) {
      const double pk = p(k, i);
      const double qk = targets(k, i);
      if (pk > kLogFloor) {
        loss -= qk * std::log(pk);
        active_mass += qk;
        grad_logits(k, i) = -qk;
      } else {
        loss -= qk * std::log(kLogFloor);
        grad_logits(k, i) = 0.0;
      }
    }
    grad_logits.col(i) += active_mass * p.col(i);
  }
  loss /= static_cast<double>(B);
  if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteLoss, "cross-entropy is not finite");

  grad_logits /= static_cast<double>(B);
  const MatrixXd grad_z = bank.averaged() * grad_logits / tau;
  return LossAndGrad{loss, backward(ln, cache, grad_z)};
}

LossAndGrad ToyEncoder::entropy(const LayerNormState& ln, ConstRefMat x,
                                const PrototypeBank& bank, double tau) const {
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidTemperature, "tau must be positive");
  const Cache cache = run(ln, x);
  const auto B = cache.z.cols();
  const MatrixXd logits = similarity(bank, kAveragedPrototypes, cache.z) / tau;
  const MatrixXd log_p = log_softmax_columns(logits);
  const MatrixXd p = log_p.array().exp().matrix();
  const MatrixXd p_log_p = p.cwiseProduct(log_p);

  // H_i = -sum_k p_k log p_k;  dH_i/dl_j = -p_j (log p_j + H_i).
  const Eigen::RowVectorXd h = -p_log_p.colwise().sum();
  MatrixXd grad_logits = log_p;
  grad_logits.rowwise() += h;
  grad_logits = -p.cwiseProduct(grad_logits) / static_cast<double>(B);

  const double loss = h.sum() / static_cast<double>(B);
  if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteLoss, "entropy is not finite");
  const MatrixXd grad_z = bank.averaged() * grad_logits / tau;
  return LossAndGrad{loss, backward(ln, cache, grad_z)};
}

LayerNormState sgd_step(const LayerNormState& ln, const LayerNormState& grads, double lr) {
  if (ln.gamma.size() != grads.gamma.size() || ln.beta.size() != grads.beta.size()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient and state block counts differ");
  }
  LayerNormState out = ln;
  for (std::size_t l = 0; l < out.gamma.size(); ++l) {
    if (out.gamma[l].size() != grads.gamma[l].size() ||
        out.beta[l].size() != grads.beta[l].size()) {
      throw Error(ErrorCode::ShapeMismatch, "gradient and state widths differ");
    }
    out.gamma[l] -= lr * grads.gamma[l];
    out.beta[l] -= lr * grads.beta[l];
  }
  return out;
}

LayerNormState reset(const LayerNormState& ln) {
  LayerNormState out;
  for (const auto& g : ln.gamma) out.gamma.push_back(VectorXd::Ones(g.size()));
  for (const auto& b : ln.beta) out.beta.push_back(VectorXd::Zero(b.size()));
  return out;
}

}  // namespace clipot
