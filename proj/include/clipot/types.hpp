#ifndef CLIPOT_TYPES_HPP_
#define CLIPOT_TYPES_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include <Eigen/Dense>

namespace clipot {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;
using ConstRefMat = const Eigen::Ref<const MatrixXd>;
using ConstRefVec = const Eigen::Ref<const VectorXd>;

enum class ErrorCode {
  InvalidConfig,
  NonFiniteKernel,
  ShapeMismatch,
  ZeroVector,
  IndexOutOfRange,
  InvalidTemperature,
  NonFiniteLoss,
  EmptyBatch,
  IoError,
  ParseError,
  InvalidSpec,
};

std::string_view to_string(ErrorCode code);

// Every library failure is reported through this type; `code()` is the
// machine-readable part, `what()` carries the human detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ParseError : public Error {
 public:
  ParseError(std::string block, std::size_t offset, const std::string& message)
      : Error(ErrorCode::ParseError,
              message + " (block '" + block + "' at byte " +
                  std::to_string(offset) + ")"),
        block_(std::move(block)),
        offset_(offset) {}

  const std::string& block() const noexcept { return block_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::string block_;
  std::size_t offset_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::NonFiniteKernel: return "NonFiniteKernel";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::InvalidTemperature: return "InvalidTemperature";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
  }
  return "Unknown";
}

/// Index of the largest entry in each column; ties resolve to the lowest row.
template <typename Derived>
VectorXi argmax_columns(const Eigen::MatrixBase<Derived>& m) {
  VectorXi out(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < m.rows(); ++i) {
      if (m(i, j) > m(best, j)) best = i;
    }
    out(j) = static_cast<int>(best);
  }
  return out;
}

}  // namespace clipot

#endif  // CLIPOT_TYPES_HPP_
