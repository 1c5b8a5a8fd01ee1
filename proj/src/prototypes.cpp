#include "clipot/prototypes.hpp"

#include <cmath>
#include <utility>

namespace clipot {

namespace {

constexpr double kMinNorm = 1e-12;

void normalize_columns(MatrixXd& m, const char* what) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (!m.col(j).allFinite()) {
      throw Error(ErrorCode::ZeroVector, std::string(what) + " column " +
                                             std::to_string(j) + " is not finite");
    }
    const double n = m.col(j).norm();
    if (n < kMinNorm) {
      throw Error(ErrorCode::ZeroVector, std::string(what) + " column " +
                                             std::to_string(j) + " has zero norm");
    }
    m.col(j) /= n;
  }
}

}  // namespace

const MatrixXd& PrototypeBank::templ(int m) const {
  if (m < 0 || m >= templates()) {
    throw Error(ErrorCode::IndexOutOfRange,
                "template " + std::to_string(m) + " outside [0, " +
                    std::to_string(templates()) + ")");
  }
  return per_template_[static_cast<std::size_t>(m)];
}

PrototypeBank build_bank(std::vector<MatrixXd> per_template, std::vector<std::string> names) {
  if (per_template.empty()) {
    throw Error(ErrorCode::ShapeMismatch, "prototype bank needs at least one template");
  }
  const auto d = per_template.front().rows();
  const auto K = per_template.front().cols();
  if (K < 2 || d < 1) {
    throw Error(ErrorCode::ShapeMismatch, "prototype bank needs d >= 1 and K >= 2");
  }

  MatrixXd sum = MatrixXd::Zero(d, K);
  for (auto& t : per_template) {
    if (t.rows() != d || t.cols() != K) {
      throw Error(ErrorCode::ShapeMismatch, "templates disagree on d x K");
    }
    normalize_columns(t, "template prototype");
    sum += t;
  }
  sum /= static_cast<double>(per_template.size());
  normalize_columns(sum, "averaged prototype");

  if (names.empty()) {
    for (std::size_t m = 0; m < per_template.size(); ++m) {
      names.emplace_back(m < kCanonicalTemplates.size()
                             ? std::string(kCanonicalTemplates[m])
                             : "template_" + std::to_string(m));
    }
  } else if (names.size() != per_template.size()) {
    throw Error(ErrorCode::ShapeMismatch, "template name count differs from template count");
  }

  PrototypeBank bank;
  bank.per_template_ = std::move(per_template);
  bank.averaged_ = std::move(sum);
  bank.names_ = std::move(names);
  return bank;
}

PrototypeBank take_templates(const PrototypeBank& bank, int count) {
  if (count < 1 || count > bank.templates()) {
    throw Error(ErrorCode::IndexOutOfRange,
                "template count " + std::to_string(count) + " outside [1, " +
                    std::to_string(bank.templates()) + "]");
  }
  const auto n = static_cast<std::size_t>(count);
  std::vector<MatrixXd> kept(bank.per_template().begin(), bank.per_template().begin() + count);
  std::vector<std::string> names(bank.template_names().begin(),
                                 bank.template_names().begin() + static_cast<long>(n));
  return build_bank(std::move(kept), std::move(names));
}

MatrixXd similarity(const PrototypeBank& bank, int template_index, ConstRefMat z) {
  const MatrixXd& t =
      template_index == kAveragedPrototypes ? bank.averaged() : bank.templ(template_index);
  if (z.rows() != t.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "embedding dimension " + std::to_string(z.rows()) +
                                              " differs from prototype dimension " +
                                              std::to_string(t.rows()));
  }
  return t.transpose() * z;
}

MatrixXd softmax_columns(ConstRefMat logits) {
  MatrixXd p = logits.rowwise() - logits.colwise().maxCoeff();
  p = p.array().exp().matrix();
  p.array().rowwise() /= p.colwise().sum().array();
  return p;
}

MatrixXd log_softmax_columns(ConstRefMat logits) {
  MatrixXd out = logits.rowwise() - logits.colwise().maxCoeff();
  const Eigen::RowVectorXd lse = out.array().exp().colwise().sum().log().matrix();
  out.rowwise() -= lse;
  return out;
}

MatrixXd predict(const PrototypeBank& bank, ConstRefMat z, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw Error(ErrorCode::InvalidTemperature, "tau must be positive and finite");
  }
  return softmax_columns(similarity(bank, kAveragedPrototypes, z) / tau);
}

}  // namespace clipot
