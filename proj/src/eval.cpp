#include "clipot/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>
#include <tuple>

#include <fmt/format.h>

namespace clipot {

namespace {

using Clock = std::chrono::steady_clock;

struct StreamTally {
  std::size_t correct = 0;
  std::size_t items = 0;
  std::vector<std::size_t> histogram;
  StreamSummary summary;

  explicit StreamTally(Eigen::Index classes) : histogram(static_cast<std::size_t>(classes), 0) {}

  void add(const BatchResult& result, const Batch& batch) {
    if (!result.predictions.allFinite()) {
      throw Error(ErrorCode::NonFiniteLoss, "non-finite prediction in batch " +
                                                std::to_string(summary.batches));
    }
    for (Eigen::Index i = 0; i < batch.labels.size(); ++i) {
      const int label = result.hard_labels(i);
      if (label == batch.labels(i)) ++correct;
      ++histogram[static_cast<std::size_t>(label)];
    }
    items += static_cast<std::size_t>(batch.labels.size());
    summary.sinkhorn_time += result.sinkhorn_time;
    ++summary.batches;
  }

  StreamSummary finish(Clock::time_point start) {
    summary.items = items;
    if (items > 0) {
      summary.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(items);
      summary.collapse = static_cast<double>(*std::max_element(histogram.begin(), histogram.end())) /
                         static_cast<double>(items);
    }
    summary.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
    return summary;
  }
};

struct CellKey {
  Variant variant;
  double severity;
  double epsilon;
  int templates;
};

}  // namespace

double collapse_metric(const VectorXi& labels, int classes) {
  if (labels.size() == 0) return 0.0;
  std::vector<std::size_t> histogram(static_cast<std::size_t>(classes), 0);
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels(i) < 0 || labels(i) >= classes) {
      throw Error(ErrorCode::IndexOutOfRange, "label outside [0, classes)");
    }
    ++histogram[static_cast<std::size_t>(labels(i))];
  }
  return static_cast<double>(*std::max_element(histogram.begin(), histogram.end())) /
         static_cast<double>(labels.size());
}

StreamSummary run_stream(const ToyEncoder& encoder, const PrototypeBank& bank,
                         const std::vector<Batch>& batches, const AdaptConfig& cfg) {
  const auto start = Clock::now();
  Adapter adapter(encoder, bank, cfg);
  StreamTally tally(bank.classes());
  for (const auto& batch : batches) tally.add(adapter.process(batch.x), batch);
  return tally.finish(start);
}

StreamSummary run_embedding_stream(const PrototypeBank& bank, const std::vector<Batch>& batches,
                                   const AdaptConfig& cfg) {
  const auto start = Clock::now();
  cfg.validate();
  StreamTally tally(bank.classes());
  for (const auto& batch : batches) {
    switch (cfg.variant) {
      case Variant::zero_shot:
        tally.add(infer_embeddings(bank, batch.x, cfg.tau), batch);
        break;
      case Variant::training_free:
        tally.add(training_free_embeddings(bank, batch.x, cfg), batch);
        break;
      default:
        throw Error(ErrorCode::InvalidConfig,
                    std::string(to_string(cfg.variant)) +
                        " needs the encoder; precomputed embeddings support zero_shot and "
                        "training_free only");
    }
  }
  return tally.finish(start);
}

MeanStd mean_and_std(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

void ExperimentGrid::validate() const {
  if (variants.empty() || epsilons.empty() || template_counts.empty() || severities.empty() ||
      seeds.empty()) {
    throw Error(ErrorCode::InvalidConfig, "every grid axis needs at least one value");
  }
  if (jobs < 1) throw Error(ErrorCode::InvalidConfig, "jobs must be >= 1");
  if (max_batches < 0) throw Error(ErrorCode::InvalidConfig, "max_batches must be >= 0");
  if (!embedding_file) {
    scenario.validate();
    for (double s : severities) {
      if (!(s >= 0.0 && s <= 1.0)) {
        throw Error(ErrorCode::InvalidSpec, "severity " + std::to_string(s) + " outside [0, 1]");
      }
    }
    for (int m : template_counts) {
      if (m < 1 || m > scenario.M) {
        throw Error(ErrorCode::InvalidConfig,
                    "template count " + std::to_string(m) + " outside [1, M]");
      }
    }
  }
}

std::size_t ExperimentGrid::cells() const {
  return variants.size() * severities.size() * epsilons.size() * template_counts.size();
}

namespace {

struct SeedOutcome {
  StreamSummary summary;
  std::optional<ErrorCode> error;
};

SeedOutcome run_synthetic_seed(const ExperimentGrid& grid, const CellKey& key,
                               std::uint64_t seed) {
  try {
    SyntheticShiftSpec spec = grid.scenario;
    spec.seed = seed;
    spec.severity = key.severity;
    const SyntheticScenario scenario = generate_synthetic(spec);
    const PrototypeBank bank = take_templates(scenario.bank, key.templates);
    const ToyEncoder encoder(ToyEncoderSpec::square(spec.d, seed));

    AdaptConfig cfg = grid.base;
    cfg.variant = key.variant;
    cfg.epsilon = key.epsilon;
    cfg.seed = seed;
    auto batches = scenario.batches(cfg.batch_size);
    if (grid.max_batches > 0 && batches.size() > static_cast<std::size_t>(grid.max_batches)) {
      batches.resize(static_cast<std::size_t>(grid.max_batches));
    }
    return {run_stream(encoder, bank, batches, cfg), std::nullopt};
  } catch (const Error& e) {
    return {{}, e.code()};
  }
}

SeedOutcome run_file_seed(const ExperimentGrid& grid, const LoadedEmbeddings& data,
                          const CellKey& key, std::uint64_t seed) {
  try {
    if (!data.bank) throw Error(ErrorCode::InvalidConfig, "embedding file has no prototypes");
    if (!data.labels) throw Error(ErrorCode::InvalidConfig, "embedding file has no labels");
    const PrototypeBank bank = take_templates(*data.bank, key.templates);
    AdaptConfig cfg = grid.base;
    cfg.variant = key.variant;
    cfg.epsilon = key.epsilon;
    cfg.seed = seed;
    auto batches = split_batches(data.items, *data.labels, cfg.batch_size);
    if (grid.max_batches > 0 && batches.size() > static_cast<std::size_t>(grid.max_batches)) {
      batches.resize(static_cast<std::size_t>(grid.max_batches));
    }
    return {run_embedding_stream(bank, batches, cfg), std::nullopt};
  } catch (const Error& e) {
    return {{}, e.code()};
  }
}

ResultRow aggregate(const CellKey& key, const std::vector<std::uint64_t>& seeds,
                    const std::vector<SeedOutcome>& outcomes) {
  ResultRow row;
  row.variant = key.variant;
  row.epsilon = key.epsilon;
  row.templates = key.templates;
  row.severity = key.severity;
  row.seeds = seeds;
  std::vector<double> collapse, wall, ot;
  for (const auto& o : outcomes) {
    if (o.error) {
      row.error = std::string(to_string(*o.error));
      row.per_seed_accuracy.clear();
      return row;
    }
    row.per_seed_accuracy.push_back(o.summary.accuracy);
    collapse.push_back(o.summary.collapse);
    wall.push_back(o.summary.wall_time);
    ot.push_back(o.summary.sinkhorn_time);
  }
  const MeanStd acc = mean_and_std(row.per_seed_accuracy);
  row.accuracy_mean = acc.mean;
  row.accuracy_std = acc.std;
  row.collapse_mean = mean_and_std(collapse).mean;
  row.wall_time_mean = mean_and_std(wall).mean;
  row.sinkhorn_time_mean = mean_and_std(ot).mean;
  return row;
}

}  // namespace

std::vector<ResultRow> run_grid(const ExperimentGrid& grid) {
  grid.validate();
  std::optional<LoadedEmbeddings> data;
  if (grid.embedding_file) data = read_embedding_file(*grid.embedding_file);

  std::vector<CellKey> keys;
  const std::vector<double> severities =
      data ? std::vector<double>{grid.severities.front()} : grid.severities;
  for (Variant v : grid.variants) {
    for (double s : severities) {
      for (double e : grid.epsilons) {
        for (int m : grid.template_counts) keys.push_back({v, s, e, m});
      }
    }
  }

  std::vector<ResultRow> rows(keys.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < keys.size(); i = next++) {
      std::vector<SeedOutcome> outcomes;
      for (auto seed : grid.seeds) {
        outcomes.push_back(data ? run_file_seed(grid, *data, keys[i], seed)
                                : run_synthetic_seed(grid, keys[i], seed));
      }
      rows[i] = aggregate(keys[i], grid.seeds, outcomes);
    }
  };
  const auto jobs = std::min<std::size_t>(static_cast<std::size_t>(grid.jobs), keys.size());
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return rows;
}

namespace {

std::string seeds_field(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(seeds[i]);
  }
  return out;
}

std::string err_cell(const ResultRow& row) { return "ERR(" + *row.error + ")"; }

}  // namespace

std::string render_csv(const std::vector<ResultRow>& rows) {
  std::string out =
      "variant,epsilon,templates,severity,seeds,accuracy_mean,accuracy_std,collapse_mean\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},", to_string(r.variant), r.epsilon, r.templates,
                       r.severity, seeds_field(r.seeds));
    if (r.error) {
      out += fmt::format("{0},{0},{0}\n", err_cell(r));
    } else {
      out += fmt::format("{:.4f},{:.4f},{:.4f}\n", r.accuracy_mean, r.accuracy_std,
                         r.collapse_mean);
    }
  }
  return out;
}

std::string render_timing_csv(const std::vector<ResultRow>& rows) {
  std::string out = "variant,epsilon,templates,severity,wall_time_mean,sinkhorn_time_mean\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},", to_string(r.variant), r.epsilon, r.templates, r.severity);
    if (r.error) {
      out += fmt::format("{0},{0}\n", err_cell(r));
    } else {
      out += fmt::format("{:.6f},{:.6f}\n", r.wall_time_mean, r.sinkhorn_time_mean);
    }
  }
  return out;
}

std::string render_markdown(const std::vector<ResultRow>& rows, bool with_timing) {
  // Scenario rows x method columns, in first-seen order.
  using Scenario = std::tuple<double, double, int>;
  std::vector<Scenario> scenarios;
  std::vector<Variant> variants;
  std::map<std::pair<Scenario, Variant>, const ResultRow*> cells;
  for (const auto& r : rows) {
    const Scenario s{r.severity, r.epsilon, r.templates};
    if (std::find(scenarios.begin(), scenarios.end(), s) == scenarios.end()) scenarios.push_back(s);
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) {
      variants.push_back(r.variant);
    }
    cells[{s, r.variant}] = &r;
  }

  std::string out = "| severity | epsilon | templates |";
  for (Variant v : variants) out += fmt::format(" {} |", to_string(v));
  out += "\n|---:|---:|---:|";
  for (std::size_t i = 0; i < variants.size(); ++i) out += "---:|";
  out += "\n";
  for (const auto& s : scenarios) {
    out += fmt::format("| {} | {} | {} |", std::get<0>(s), std::get<1>(s), std::get<2>(s));
    for (Variant v : variants) {
      const auto it = cells.find({s, v});
      if (it == cells.end()) {
        out += " - |";
      } else if (it->second->error) {
        out += fmt::format(" {} |", err_cell(*it->second));
      } else {
        out += fmt::format(" {:.2f} ± {:.2f} |", it->second->accuracy_mean,
                           it->second->accuracy_std);
      }
    }
    out += "\n";
  }

  out += "\n| variant | severity | epsilon | templates | accuracy | collapse |";
  if (with_timing) out += " wall time (s) | sinkhorn time (s) |";
  out += "\n|---|---:|---:|---:|---:|---:|";
  if (with_timing) out += "---:|---:|";
  out += "\n";
  for (const auto& r : rows) {
    out += fmt::format("| {} | {} | {} | {} |", to_string(r.variant), r.severity, r.epsilon,
                       r.templates);
    if (r.error) {
      out += fmt::format(" {0} | {0} |", err_cell(r));
      if (with_timing) out += fmt::format(" {0} | {0} |", err_cell(r));
    } else {
      out += fmt::format(" {:.2f} ± {:.2f} | {:.4f} |", r.accuracy_mean, r.accuracy_std,
                         r.collapse_mean);
      if (with_timing) {
        out += fmt::format(" {:.4f} | {:.4f} |", r.wall_time_mean, r.sinkhorn_time_mean);
      }
    }
    out += "\n";
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write to " + path.string() + " failed");
}

}  // namespace clipot
