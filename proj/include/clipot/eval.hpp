#ifndef CLIPOT_EVAL_HPP_
#define CLIPOT_EVAL_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "clipot/adapt.hpp"
#include "clipot/data.hpp"

namespace clipot {

/// Accuracy (percent) and collapse over every post-adaptation prediction of
/// one stream; the collapse metric is the largest share of hard labels that
/// went to a single class.
struct StreamSummary {
  double accuracy = 0.0;
  double collapse = 0.0;
  double wall_time = 0.0;
  double sinkhorn_time = 0.0;
  std::size_t items = 0;
  std::size_t batches = 0;
};

/// Runs one adaptation stream from a fresh LN state. Throws on solver or
/// encoder errors and on any non-finite prediction.
StreamSummary run_stream(const ToyEncoder& encoder, const PrototypeBank& bank,
                         const std::vector<Batch>& batches, const AdaptConfig& cfg);

/// Stream over precomputed embeddings (no encoder); only zero_shot and
/// training_free are meaningful here, other variants throw InvalidConfig.
StreamSummary run_embedding_stream(const PrototypeBank& bank, const std::vector<Batch>& batches,
                                   const AdaptConfig& cfg);

/// Largest fraction of `labels` assigned to a single class in [0, classes).
double collapse_metric(const VectorXi& labels, int classes);

struct ExperimentGrid {
  std::vector<Variant> variants{Variant::zero_shot};
  std::vector<double> epsilons{0.7};
  std::vector<int> template_counts{8};
  std::vector<double> severities{0.6};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  SyntheticShiftSpec scenario;  // seed and severity are overridden per cell
  AdaptConfig base;             // variant, epsilon and seed overridden per cell
  int max_batches = 0;          // 0 keeps every batch
  int jobs = 1;
  // When set, cells run on these precomputed embeddings instead of the
  // synthetic scenario; severities are ignored.
  std::optional<std::filesystem::path> embedding_file;

  void validate() const;
  std::size_t cells() const;
};

struct ResultRow {
  Variant variant = Variant::zero_shot;
  double epsilon = 0.0;
  int templates = 0;
  double severity = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> per_seed_accuracy;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  double collapse_mean = 0.0;
  double wall_time_mean = 0.0;
  double sinkhorn_time_mean = 0.0;
  std::optional<std::string> error;  // error code name of the first failing seed
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample (n - 1) standard deviation, 0 for n < 2
};
MeanStd mean_and_std(const std::vector<double>& values);

/// One row per grid point, in variant-major, then severity, epsilon and
/// template-count order. A failing cell is kept with `error` set.
std::vector<ResultRow> run_grid(const ExperimentGrid& grid);

/// Deterministic CSV (no timings): identical rows give identical bytes.
std::string render_csv(const std::vector<ResultRow>& rows);
/// Wall-clock columns kept apart from the deterministic report.
std::string render_timing_csv(const std::vector<ResultRow>& rows);
/// Scenario x method accuracy table, then a per-cell detail table.
std::string render_markdown(const std::vector<ResultRow>& rows, bool with_timing = true);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace clipot

#endif  // CLIPOT_EVAL_HPP_
