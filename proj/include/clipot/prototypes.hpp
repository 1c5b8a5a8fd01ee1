#ifndef CLIPOT_PROTOTYPES_HPP_
#define CLIPOT_PROTOTYPES_HPP_

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "clipot/types.hpp"

namespace clipot {

/// Prompt patterns used to build per-template class prototypes. The engine
/// treats templates as opaque embedding slices; these names are bookkeeping.
inline constexpr std::array<std::string_view, 8> kCanonicalTemplates = {
    "a photo of a {}",
    "itap of a {}",
    "a bad photo of the {}",
    "a origami {}",
    "a photo of the large {}",
    "a {} in a video game",
    "art of the {}",
    "a photo of the small {}",
};

/// Selects the averaged prototypes in `similarity`.
inline constexpr int kAveragedPrototypes = -1;

/// Per-template and averaged class text prototypes, all columns unit norm.
/// Immutable after `build_bank`.
class PrototypeBank {
 public:
  PrototypeBank() = default;

  Eigen::Index dim() const { return averaged_.rows(); }
  Eigen::Index classes() const { return averaged_.cols(); }
  int templates() const { return static_cast<int>(per_template_.size()); }

  /// d x K prototypes of template `m`.
  const MatrixXd& templ(int m) const;
  const MatrixXd& averaged() const { return averaged_; }
  const std::vector<MatrixXd>& per_template() const { return per_template_; }
  const std::vector<std::string>& template_names() const { return names_; }

 private:
  friend PrototypeBank build_bank(std::vector<MatrixXd>, std::vector<std::string>);

  std::vector<MatrixXd> per_template_;
  MatrixXd averaged_;
  std::vector<std::string> names_;
};

/// Normalizes each template column, averages over templates and re-normalizes
/// the mean. `names` defaults to the canonical templates (or "template_<m>"
/// past the eighth).
PrototypeBank build_bank(std::vector<MatrixXd> per_template,
                         std::vector<std::string> names = {});

/// Bank restricted to the first `count` templates, averages rebuilt.
PrototypeBank take_templates(const PrototypeBank& bank, int count);

/// K x B dot products between the chosen prototypes and the columns of `z`.
/// `template_index` is a template number or `kAveragedPrototypes`.
MatrixXd similarity(const PrototypeBank& bank, int template_index, ConstRefMat z);

/// Column-wise softmax, shifted by each column's max.
MatrixXd softmax_columns(ConstRefMat logits);

/// Column-wise log-softmax.
MatrixXd log_softmax_columns(ConstRefMat logits);

/// Temperature-scaled zero-shot class posteriors against the averaged prototypes.
MatrixXd predict(const PrototypeBank& bank, ConstRefMat z, double tau);

}  // namespace clipot

#endif  // CLIPOT_PROTOTYPES_HPP_
