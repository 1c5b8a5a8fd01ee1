#ifndef CLIPOT_OT_ASSIGN_HPP_
#define CLIPOT_OT_ASSIGN_HPP_

// Entropy-regularized balanced assignment over the transportation polytope
//
//   max_Q  <Q, S> + eps * H(Q)   s.t.  Q 1 = (1/K) 1,  Q^T 1 = (1/B) 1,  Q >= 0
//
// whose maximizer has the factored form Q = Diag(u) exp(S / eps) Diag(v).
// The scalings are found with Sinkhorn-Knopp: starting from v = 1,
//
//   u <- r ./ (M v),   v <- c ./ (M^T u),
//
// repeated `iterations` times and closed by one more u update, so the row
// marginals of the returned plan are exact and the column marginals approach
// 1/B as the iteration count grows.

#include <cmath>
#include <limits>
#include <utility>

#include "clipot/types.hpp"

namespace clipot {

enum class Stabilization {
  plain,       // exp(S / eps) as is
  shifted,     // subtract the max of S / eps before exp
  log_domain,  // iterate on log-scalings with log-sum-exp
};

enum class NanPolicy { error, fallback_log_domain };

struct SinkhornConfig {
  double epsilon = 0.7;
  int iterations = 3;
  Stabilization stabilization = Stabilization::shifted;
  NanPolicy nan_policy = NanPolicy::error;

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
      throw Error(ErrorCode::InvalidConfig, "epsilon must be positive and finite");
    }
    if (iterations < 1) {
      throw Error(ErrorCode::InvalidConfig, "iterations must be >= 1");
    }
  }
};

/// Soft assignment of K classes to B batch items; rows sum to 1/K, columns to 1/B.
template <typename Scalar>
struct TransportPlan {
  Matrix<Scalar> q;

  Eigen::Index classes() const { return q.rows(); }
  Eigen::Index batch() const { return q.cols(); }
};

namespace detail {

template <typename Scalar>
void check_scores(const Matrix<Scalar>& scores) {
  if (scores.rows() < 2 || scores.cols() < 1) {
    throw Error(ErrorCode::ShapeMismatch,
                "similarity matrix needs K >= 2 rows and B >= 1 columns");
  }
  if (!scores.allFinite()) {
    throw Error(ErrorCode::InvalidConfig, "similarity matrix has non-finite entries");
  }
}

template <typename Scalar>
Scalar log_sum_exp(const Eigen::Ref<const Vector<Scalar>>& x) {
  const Scalar m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

// Returns an empty matrix when the kernel or the scalings stop being finite.
template <typename Scalar>
Matrix<Scalar> sinkhorn_scaling(const Matrix<Scalar>& kernel, int iterations) {
  const auto K = kernel.rows();
  const auto B = kernel.cols();
  const Scalar r = Scalar(1) / static_cast<Scalar>(K);
  const Scalar c = Scalar(1) / static_cast<Scalar>(B);

  if (!kernel.allFinite()) return {};

  Vector<Scalar> v = Vector<Scalar>::Ones(B);
  Vector<Scalar> u(K);
  auto row_update = [&] { u = (kernel * v).cwiseInverse() * r; };
  for (int t = 0; t < iterations; ++t) {
    row_update();
    v = (kernel.transpose() * u).cwiseInverse() * c;
  }
  row_update();
  if (!u.allFinite() || !v.allFinite()) return {};

  Matrix<Scalar> q = u.asDiagonal() * kernel * v.asDiagonal();
  if (!q.allFinite()) return {};
  return q;
}

template <typename Scalar>
Matrix<Scalar> sinkhorn_log_domain(const Matrix<Scalar>& log_kernel, int iterations) {
  const auto K = log_kernel.rows();
  const auto B = log_kernel.cols();
  const Scalar log_r = -std::log(static_cast<Scalar>(K));
  const Scalar log_c = -std::log(static_cast<Scalar>(B));

  Vector<Scalar> log_u = Vector<Scalar>::Zero(K);
  Vector<Scalar> log_v = Vector<Scalar>::Zero(B);
  auto row_update = [&] {
    for (Eigen::Index k = 0; k < K; ++k) {
      Vector<Scalar> row = log_kernel.row(k).transpose() + log_v;
      log_u(k) = log_r - log_sum_exp<Scalar>(row);
    }
  };
  for (int t = 0; t < iterations; ++t) {
    row_update();
    for (Eigen::Index j = 0; j < B; ++j) {
      Vector<Scalar> col = log_kernel.col(j) + log_u;
      log_v(j) = log_c - log_sum_exp<Scalar>(col);
    }
  }
  row_update();

  Matrix<Scalar> log_q = log_kernel;
  log_q.colwise() += log_u;
  log_q.rowwise() += log_v.transpose();
  return log_q.array().exp().matrix();
}

}  // namespace detail

/// Balanced entropic transport plan for a K x B score matrix.
///
/// Throws `NonFiniteKernel` when the exponentiated kernel or its scalings
/// overflow/underflow and `nan_policy` is `error`; with
/// `fallback_log_domain` the log-domain iteration is used instead.
template <typename Derived>
TransportPlan<typename Derived::Scalar> sinkhorn(const Eigen::MatrixBase<Derived>& sim,
                                                 const SinkhornConfig& cfg) {
  using Scalar = typename Derived::Scalar;
  cfg.validate();
  const Matrix<Scalar> scores = sim;
  detail::check_scores(scores);

  const Scalar inv_eps = Scalar(1) / static_cast<Scalar>(cfg.epsilon);
  Matrix<Scalar> log_kernel = scores * inv_eps;

  if (cfg.stabilization == Stabilization::log_domain) {
    return {detail::sinkhorn_log_domain<Scalar>(log_kernel, cfg.iterations)};
  }

  if (cfg.stabilization == Stabilization::shifted) {
    // A scalar factor on the kernel is absorbed by the first u update, so
    // the plan is identical to the plain one for every T. (A per-column shift
    // would only agree at convergence, since it changes the v = 1 start.)
    log_kernel.array() -= log_kernel.maxCoeff();
  }
  Matrix<Scalar> q = detail::sinkhorn_scaling<Scalar>(log_kernel.array().exp().matrix(),
                                                      cfg.iterations);
  if (q.size() != 0) return {std::move(q)};

  if (cfg.nan_policy == NanPolicy::fallback_log_domain) {
    return {detail::sinkhorn_log_domain<Scalar>(log_kernel, cfg.iterations)};
  }
  throw Error(ErrorCode::NonFiniteKernel,
              "exp(S/eps) or its Sinkhorn scalings are not finite (epsilon = " +
                  std::to_string(cfg.epsilon) + ")");
}

/// <Q, S> + eps * H(Q), with 0 log 0 taken as 0.
template <typename DerivedS, typename Scalar>
Scalar objective(const Eigen::MatrixBase<DerivedS>& sim, const TransportPlan<Scalar>& plan,
                 double epsilon) {
  if (sim.rows() != plan.q.rows() || sim.cols() != plan.q.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "plan and similarity shapes differ");
  }
  Scalar linear = sim.cwiseProduct(plan.q).sum();
  Scalar entropy = 0;
  for (Eigen::Index j = 0; j < plan.q.cols(); ++j) {
    for (Eigen::Index i = 0; i < plan.q.rows(); ++i) {
      const Scalar x = plan.q(i, j);
      if (x > 0) entropy -= x * std::log(x);
    }
  }
  return linear + static_cast<Scalar>(epsilon) * entropy;
}

struct MarginalResiduals {
  double row_err = 0.0;
  double col_err = 0.0;
};

/// Max absolute deviation of row sums from 1/K and of column sums from 1/B.
template <typename Scalar>
MarginalResiduals marginal_residuals(const TransportPlan<Scalar>& plan) {
  const auto& q = plan.q;
  const Scalar r = Scalar(1) / static_cast<Scalar>(q.rows());
  const Scalar c = Scalar(1) / static_cast<Scalar>(q.cols());
  MarginalResiduals out;
  out.row_err = static_cast<double>((q.rowwise().sum().array() - r).abs().maxCoeff());
  out.col_err = static_cast<double>((q.colwise().sum().array() - c).abs().maxCoeff());
  return out;
}

}  // namespace clipot

#endif  // CLIPOT_OT_ASSIGN_HPP_
