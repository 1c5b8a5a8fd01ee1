#ifndef CLIPOT_DATA_HPP_
#define CLIPOT_DATA_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "clipot/prototypes.hpp"
#include "clipot/types.hpp"

namespace clipot {

// ---------------------------------------------------------------------------
// Embedding exchange file, version 1. All integers are unsigned 32-bit and
// all payload values 32-bit IEEE floats, little-endian.
//
//   offset  size  field
//        0     4  magic "OTEB"
//        4     4  version (1)
//        8     4  d
//       12     4  n_items
//       16     4  K
//       20     4  M
//       24     4  flags: bit 0 labels present, bit 1 prototypes present
//       28        prototypes  M x K x d floats (template, then class, then dim)
//                 items       n_items x d floats (item-major)
//                 labels      n_items signed 32-bit ints in [0, K)
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kEmbeddingFileVersion = 1;
inline constexpr std::size_t kEmbeddingHeaderBytes = 28;
inline constexpr std::uint32_t kFlagLabels = 1u << 0;
inline constexpr std::uint32_t kFlagPrototypes = 1u << 1;

using MatrixXf = Matrix<float>;

struct EmbeddingFile {
  std::uint32_t dim = 0;
  std::uint32_t classes = 0;
  std::vector<MatrixXf> prototypes;  // M blocks of d x K; empty when absent
  MatrixXf items;                    // d x n_items
  std::optional<std::vector<std::int32_t>> labels;

  std::uint32_t templates() const { return static_cast<std::uint32_t>(prototypes.size()); }
  std::uint32_t n_items() const { return static_cast<std::uint32_t>(items.cols()); }
  std::uint32_t flags() const;
};

/// Checks shapes, finiteness and label range; throws ShapeMismatch/InvalidSpec.
void validate(const EmbeddingFile& file);

std::vector<std::uint8_t> encode(const EmbeddingFile& file);
/// Throws ParseError naming the block and byte offset of the first problem.
EmbeddingFile decode(std::span<const std::uint8_t> bytes);

void write_embedding_file(const std::filesystem::path& path, const EmbeddingFile& file);
EmbeddingFile read_embedding_file_raw(const std::filesystem::path& path);

/// Parsed file in engine types; the prototype block goes through build_bank.
struct LoadedEmbeddings {
  std::optional<PrototypeBank> bank;
  MatrixXd items;
  std::optional<VectorXi> labels;
  std::uint32_t classes = 0;
};

LoadedEmbeddings read_embedding_file(const std::filesystem::path& path);

/// Builds a file from engine types (prototypes optional, labels optional).
EmbeddingFile make_embedding_file(const std::vector<MatrixXd>& prototypes, ConstRefMat items,
                                  const std::optional<VectorXi>& labels,
                                  std::uint32_t classes);

// ---------------------------------------------------------------------------
// Synthetic domain-shifted streams
// ---------------------------------------------------------------------------

enum class ShiftKind { none, mean_shift, rotation, feature_mask };

std::string_view to_string(ShiftKind kind);
ShiftKind parse_shift_kind(std::string_view name);

struct SyntheticShiftSpec {
  int d = 32;
  int K = 10;
  int M = 8;
  int n_per_class = 256;
  double template_jitter = 0.1;  // per-coordinate std of template perturbations
  double sample_noise = 0.1;     // per-coordinate std of sample noise
  ShiftKind shift_kind = ShiftKind::mean_shift;
  double severity = 0.6;
  std::uint64_t seed = 0;
  // Length of the mean-shift offset at severity 1.
  double shift_magnitude = 2.5;
  // Mean shift points at this class's direction instead of a random one.
  std::optional<int> shift_toward_class;
  // Stratified ordering; false gives a plain shuffle.
  bool balanced = true;

  void validate() const;
};

struct Batch {
  MatrixXd x;
  VectorXi labels;
};

struct SyntheticScenario {
  PrototypeBank bank;
  MatrixXd class_directions;  // d x K, unit columns
  MatrixXd inputs;            // d x (K * n_per_class), stream order
  VectorXi labels;

  std::vector<Batch> batches(int batch_size) const;
};

/// Deterministic in `spec.seed`; all random draws except the sample noise are
/// independent of severity and shift kind.
SyntheticScenario generate_synthetic(const SyntheticShiftSpec& spec);

/// Consecutive column chunks of `batch_size`; the last one may be short.
std::vector<Batch> split_batches(ConstRefMat x, const VectorXi& labels, int batch_size);

}  // namespace clipot

#endif  // CLIPOT_DATA_HPP_
