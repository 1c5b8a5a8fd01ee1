// clipot: synthesize embedding streams, run test-time adaptation, sweep
// experiment grids and inspect embedding files.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error. The last line on
// stdout is a key=value summary; human-readable logs go to stderr.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "clipot/adapt.hpp"
#include "clipot/data.hpp"
#include "clipot/eval.hpp"

namespace {

using namespace clipot;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flags shared by every subcommand that builds a synthetic scenario.
struct ScenarioFlags {
  std::string preset = "default";
  std::optional<int> d, classes, templates_total, per_class, dominant_class;
  std::optional<double> template_jitter, sample_noise, severity, shift_magnitude;
  std::optional<std::string> shift;
  bool unbalanced = false;

  void add_to(CLI::App& app, bool with_severity = true) {
    app.add_option("--synthetic", preset, "Scenario preset: default, clean, dominant")
        ->check(CLI::IsMember({"default", "clean", "dominant"}));
    app.add_option("--dim", d, "Embedding dimension");
    app.add_option("--classes", classes, "Number of classes K");
    app.add_option("--num-templates", templates_total, "Templates M in the generated bank");
    app.add_option("--per-class", per_class, "Items per class");
    app.add_option("--template-jitter", template_jitter, "Std of template perturbations");
    app.add_option("--sample-noise", sample_noise, "Std of sample noise");
    app.add_option("--shift", shift, "Shift kind: none, mean_shift, rotation, feature_mask")
        ->check(CLI::IsMember({"none", "mean_shift", "rotation", "feature_mask"}));
    if (with_severity) app.add_option("--severity", severity, "Shift severity in [0, 1]");
    app.add_option("--shift-magnitude", shift_magnitude, "Mean-shift length at severity 1");
    app.add_option("--dominant-class", dominant_class, "Mean shift toward this class");
    app.add_flag("--unbalanced", unbalanced, "Plain shuffle instead of stratified batches");
  }

  SyntheticShiftSpec build(std::uint64_t seed) const {
    SyntheticShiftSpec spec;
    if (preset == "clean") {
      spec.shift_kind = ShiftKind::none;
      spec.severity = 0.0;
    } else if (preset == "dominant") {
      spec.shift_kind = ShiftKind::mean_shift;
      spec.shift_toward_class = 0;
      spec.severity = 0.6;
    }
    spec.seed = seed;
    if (d) spec.d = *d;
    if (classes) spec.K = *classes;
    if (templates_total) spec.M = *templates_total;
    if (per_class) spec.n_per_class = *per_class;
    if (template_jitter) spec.template_jitter = *template_jitter;
    if (sample_noise) spec.sample_noise = *sample_noise;
    if (shift) spec.shift_kind = parse_shift_kind(*shift);
    if (severity) spec.severity = *severity;
    if (shift_magnitude) spec.shift_magnitude = *shift_magnitude;
    if (dominant_class) spec.shift_toward_class = *dominant_class;
    spec.balanced = !unbalanced;
    try {
      spec.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return spec;
  }
};

struct SolverFlags {
  std::string stabilization = "shifted";
  std::string nan_policy = "error";
  bool raw_kernel = false;

  void add_to(CLI::App& app) {
    app.add_option("--stabilization", stabilization, "plain, shifted or log_domain")
        ->check(CLI::IsMember({"plain", "shifted", "log_domain"}));
    app.add_option("--nan-policy", nan_policy, "error or fallback_log_domain")
        ->check(CLI::IsMember({"error", "fallback_log_domain"}));
    app.add_flag("--raw-kernel", raw_kernel, "Run Sinkhorn on cosines instead of logits");
  }

  void apply(AdaptConfig& cfg) const {
    static const std::map<std::string, Stabilization> stab{
        {"plain", Stabilization::plain},
        {"shifted", Stabilization::shifted},
        {"log_domain", Stabilization::log_domain}};
    cfg.stabilization = stab.at(stabilization);
    cfg.nan_policy =
        nan_policy == "error" ? NanPolicy::error : NanPolicy::fallback_log_domain;
    cfg.kernel_uses_temperature = !raw_kernel;
  }
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw UsageError("empty list '" + text + "'");
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) {
    std::istringstream in(item);
    T value{};
    if (!(in >> value) || !in.eof()) throw UsageError("bad list value '" + item + "'");
    out.push_back(value);
  }
  return out;
}

void validate_config(const AdaptConfig& cfg) {
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

std::string config_fields(const AdaptConfig& cfg) {
  return fmt::format("variant={} epsilon={} sinkhorn_iters={} lr={} batch_size={} tau={} seed={}",
                     to_string(cfg.variant), cfg.epsilon, cfg.sinkhorn_iters, cfg.lr,
                     cfg.batch_size, cfg.tau, cfg.seed);
}

int run_gen(const ScenarioFlags& scenario_flags, std::uint64_t seed, const std::string& out) {
  const SyntheticShiftSpec spec = scenario_flags.build(seed);
  const SyntheticScenario scenario = generate_synthetic(spec);
  const EmbeddingFile file =
      make_embedding_file(scenario.bank.per_template(), scenario.inputs, scenario.labels,
                          static_cast<std::uint32_t>(spec.K));
  write_embedding_file(out, file);
  std::cerr << "wrote " << file.n_items() << " synthetic inputs to " << out << "\n";
  std::cout << fmt::format("command=gen path={} d={} K={} M={} n={} shift={} severity={} seed={}\n",
                           out, spec.d, spec.K, spec.M, file.n_items(),
                           to_string(spec.shift_kind), spec.severity, seed);
  return 0;
}

int run_inspect(const std::string& path) {
  const EmbeddingFile file = read_embedding_file_raw(path);
  const auto bytes = std::filesystem::file_size(path);
  std::cerr << "read " << path << " (" << bytes << " bytes)\n";
  std::cout << fmt::format(
      "command=inspect d={} K={} M={} n={} flags={} labels={} prototypes={} bytes={}\n",
      file.dim, file.classes, file.templates(), file.n_items(), file.flags(),
      file.labels ? 1 : 0, file.prototypes.empty() ? 0 : 1, bytes);
  return 0;
}

int run_adapt(AdaptConfig cfg, const ScenarioFlags& scenario_flags,
              const std::optional<std::string>& input, int max_batches,
              std::optional<int> templates) {
  validate_config(cfg);
  StreamSummary summary;
  if (input) {
    const LoadedEmbeddings data = read_embedding_file(*input);
    if (!data.bank || !data.labels) {
      throw UsageError("input file needs prototypes and labels");
    }
    if (cfg.variant != Variant::zero_shot && cfg.variant != Variant::training_free) {
      throw UsageError("precomputed embeddings support zero_shot and training_free only");
    }
    const PrototypeBank bank =
        templates ? take_templates(*data.bank, *templates) : *data.bank;
    auto batches = split_batches(data.items, *data.labels, cfg.batch_size);
    if (max_batches > 0 && batches.size() > static_cast<std::size_t>(max_batches)) {
      batches.resize(static_cast<std::size_t>(max_batches));
    }
    summary = run_embedding_stream(bank, batches, cfg);
  } else {
    const SyntheticShiftSpec spec = scenario_flags.build(cfg.seed);
    const SyntheticScenario scenario = generate_synthetic(spec);
    const PrototypeBank bank =
        templates ? take_templates(scenario.bank, *templates) : scenario.bank;
    const ToyEncoder encoder(ToyEncoderSpec::square(spec.d, cfg.seed));
    auto batches = scenario.batches(cfg.batch_size);
    if (max_batches > 0 && batches.size() > static_cast<std::size_t>(max_batches)) {
      batches.resize(static_cast<std::size_t>(max_batches));
    }
    summary = run_stream(encoder, bank, batches, cfg);
  }
  std::cerr << fmt::format("adapted {} batches in {:.3f} s ({:.3f} s in Sinkhorn)\n",
                           summary.batches, summary.wall_time, summary.sinkhorn_time);
  std::cout << fmt::format("command=adapt {} accuracy={:.4f} collapse={:.4f} items={} batches={}\n",
                           config_fields(cfg), summary.accuracy, summary.collapse, summary.items,
                           summary.batches);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Balanced optimal-transport pseudo-labelling for test-time adaptation"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Write a synthetic scenario as an embedding file");
  ScenarioFlags gen_scenario;
  gen_scenario.add_to(*gen);
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "Scenario seed");
  gen->add_option("--out", gen_out, "Output path")->required();

  // adapt
  auto* adapt = app.add_subcommand("adapt", "Run one adaptation stream and report accuracy");
  AdaptConfig adapt_cfg;
  std::string adapt_variant = "clip_ot";
  ScenarioFlags adapt_scenario;
  SolverFlags adapt_solver;
  std::optional<std::string> adapt_input;
  int adapt_batches = 0;
  std::optional<int> adapt_templates;
  adapt->add_option("--variant", adapt_variant, "clip_ot, training_free, avg_template, tent, zero_shot")
      ->check(CLI::IsMember({"clip_ot", "training_free", "avg_template", "tent", "zero_shot"}));
  adapt->add_option("--epsilon", adapt_cfg.epsilon, "Entropic weight");
  adapt->add_option("--sinkhorn-iters", adapt_cfg.sinkhorn_iters, "Sinkhorn iterations");
  adapt->add_option("--lr", adapt_cfg.lr, "SGD learning rate");
  adapt->add_option("--batch-size", adapt_cfg.batch_size, "Batch size");
  adapt->add_option("--tau", adapt_cfg.tau, "Softmax temperature");
  adapt->add_option("--seed", adapt_cfg.seed, "Seed for scenario, encoder and template order");
  adapt->add_option("--input", adapt_input, "Precomputed embedding file instead of --synthetic");
  adapt->add_option("--batches", adapt_batches, "Stop after this many batches (0 = all)");
  adapt->add_option("--templates", adapt_templates, "Use only the first N templates");
  adapt_scenario.add_to(*adapt);
  adapt_solver.add_to(*adapt);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Run an experiment grid and write reports");
  ExperimentGrid grid;
  std::string sweep_variants = "zero_shot,training_free,avg_template,clip_ot";
  std::string sweep_epsilons = "0.7", sweep_templates = "8", sweep_severities = "0.6",
              sweep_seeds = "0,1,2";
  std::string sweep_csv, sweep_markdown, sweep_timing;
  std::optional<std::string> sweep_input;
  ScenarioFlags sweep_scenario;
  SolverFlags sweep_solver;
  sweep->add_option("--variants", sweep_variants, "Comma-separated variants");
  sweep->add_option("--epsilons", sweep_epsilons, "Comma-separated epsilons");
  sweep->add_option("--templates", sweep_templates, "Comma-separated template counts");
  sweep->add_option("--severities", sweep_severities, "Comma-separated severities");
  sweep->add_option("--seeds", sweep_seeds, "Comma-separated seeds");
  sweep->add_option("--sinkhorn-iters", grid.base.sinkhorn_iters, "Sinkhorn iterations");
  sweep->add_option("--lr", grid.base.lr, "SGD learning rate");
  sweep->add_option("--batch-size", grid.base.batch_size, "Batch size");
  sweep->add_option("--tau", grid.base.tau, "Softmax temperature");
  sweep->add_option("--batches", grid.max_batches, "Stop after this many batches (0 = all)");
  sweep->add_option("--jobs", grid.jobs, "Worker threads");
  sweep->add_option("--input", sweep_input, "Precomputed embedding file");
  sweep->add_option("--csv", sweep_csv, "CSV report path");
  sweep->add_option("--markdown", sweep_markdown, "Markdown report path");
  sweep->add_option("--timing-csv", sweep_timing, "Wall-clock CSV path");
  sweep_scenario.add_to(*sweep, /*with_severity=*/false);
  sweep_solver.add_to(*sweep);

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Print the header of an embedding file");
  std::string inspect_path;
  inspect->add_option("path", inspect_path, "Embedding file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) return run_gen(gen_scenario, gen_seed, gen_out);
    if (inspect->parsed()) return run_inspect(inspect_path);
    if (adapt->parsed()) {
      adapt_cfg.variant = parse_variant(adapt_variant);
      adapt_solver.apply(adapt_cfg);
      return run_adapt(adapt_cfg, adapt_scenario, adapt_input, adapt_batches, adapt_templates);
    }
    if (sweep->parsed()) {
      grid.variants.clear();
      for (const auto& v : split_list(sweep_variants)) {
        try {
          grid.variants.push_back(parse_variant(v));
        } catch (const Error& e) {
          throw UsageError(e.what());
        }
      }
      grid.epsilons = parse_list<double>(sweep_epsilons);
      grid.template_counts = parse_list<int>(sweep_templates);
      grid.severities = parse_list<double>(sweep_severities);
      grid.seeds = parse_list<std::uint64_t>(sweep_seeds);
      grid.scenario = sweep_scenario.build(0);
      if (sweep_input) grid.embedding_file = *sweep_input;
      sweep_solver.apply(grid.base);
      AdaptConfig probe = grid.base;
      for (double e : grid.epsilons) {
        probe.epsilon = e;
        validate_config(probe);
      }
      try {
        grid.validate();
      } catch (const Error& e) {
        throw UsageError(e.what());
      }

      const auto rows = run_grid(grid);
      const std::string csv = render_csv(rows);
      if (!sweep_csv.empty()) write_text_file(sweep_csv, csv);
      if (!sweep_markdown.empty()) write_text_file(sweep_markdown, render_markdown(rows));
      if (!sweep_timing.empty()) write_text_file(sweep_timing, render_timing_csv(rows));
      std::cerr << render_markdown(rows);
      std::size_t failed = 0;
      for (const auto& r : rows) failed += r.error ? 1 : 0;
      std::cout << fmt::format("command=sweep cells={} failed={} seeds={}\n", rows.size(), failed,
                               grid.seeds.size());
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
