#include <doctest.h>

#include <cstring>
#include <random>

#include "clipot/adapt.hpp"
#include "clipot/data.hpp"
#include "oracles.hpp"

using namespace clipot;

namespace {

struct Setup {
  SyntheticScenario scenario;
  ToyEncoder encoder;
  MatrixXd x;
};

Setup small_setup(std::uint64_t seed = 0, int M = 4) {
  SyntheticShiftSpec spec;
  spec.d = 12;
  spec.K = 4;
  spec.M = M;
  spec.n_per_class = 16;
  spec.seed = seed;
  auto scenario = generate_synthetic(spec);
  ToyEncoder encoder(ToyEncoderSpec::square(spec.d, seed));
  MatrixXd x = scenario.inputs.leftCols(32);
  return {std::move(scenario), std::move(encoder), std::move(x)};
}

AdaptConfig config(Variant v, double lr = 1e-2) {
  AdaptConfig cfg;
  cfg.variant = v;
  cfg.lr = lr;
  cfg.seed = 3;
  return cfg;
}

bool same_bytes(const MatrixXd& a, const MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

TEST_SUITE("adapt") {

TEST_CASE("variant names round trip") {
  for (Variant v : {Variant::clip_ot, Variant::training_free, Variant::avg_template, Variant::tent,
                    Variant::zero_shot}) {
    CHECK(parse_variant(to_string(v)) == v);
  }
  CHECK_THROWS_AS(parse_variant("clip"), Error);
}

TEST_CASE("config validation") {
  AdaptConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.lr = 0;
  CHECK_NOTHROW(cfg.validate());
  for (auto mutate : std::vector<void (*)(AdaptConfig&)>{
           [](AdaptConfig& c) { c.epsilon = 0; }, [](AdaptConfig& c) { c.sinkhorn_iters = 0; },
           [](AdaptConfig& c) { c.lr = -1e-4; }, [](AdaptConfig& c) { c.batch_size = 0; },
           [](AdaptConfig& c) { c.tau = 0; }}) {
    AdaptConfig bad;
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), Error);
  }
}

TEST_CASE("zero learning rate reproduces zero-shot") {
  auto s = small_setup();
  const auto& bank = s.scenario.bank;
  const auto zs = infer(s.encoder, s.encoder.initial_state(), bank, s.x, 0.01);
  for (Variant v : {Variant::clip_ot, Variant::avg_template, Variant::tent}) {
    auto state = s.encoder.initial_state();
    std::mt19937_64 rng(1);
    const auto cfg = config(v, 0.0);
    const BatchResult r = v == Variant::clip_ot        ? run_clip_ot(s.encoder, state, bank, s.x, cfg, rng)
                          : v == Variant::avg_template ? run_avg_template(s.encoder, state, bank, s.x, cfg, rng)
                                                       : run_tent(s.encoder, state, bank, s.x, cfg);
    CHECK(same_bytes(r.predictions, zs.predictions));
    CHECK(r.hard_labels == zs.hard_labels);
    CHECK(state == s.encoder.initial_state());
    CHECK(r.loss_trace.size() == (v == Variant::clip_ot ? 4u : 1u));
  }
}

TEST_CASE("clip_ot visits every template once and moves the state") {
  auto s = small_setup();
  auto state = s.encoder.initial_state();
  std::mt19937_64 rng(4);
  const auto r = run_clip_ot(s.encoder, state, s.scenario.bank, s.x, config(Variant::clip_ot), rng);
  auto order = r.template_order;
  std::sort(order.begin(), order.end());
  CHECK(order == std::vector<int>{0, 1, 2, 3});
  CHECK(!(state == s.encoder.initial_state()));
  CHECK((r.predictions.colwise().sum().array() - 1).abs().maxCoeff() < 1e-9);
  CHECK(r.hard_labels == argmax_columns(r.predictions));
}

TEST_CASE("codes put B/K mass on every class") {
  auto s = small_setup();
  const MatrixXd z = s.encoder.forward(s.encoder.initial_state(), s.x).z;
  const auto cfg = config(Variant::clip_ot);
  for (int m = 0; m < s.scenario.bank.templates(); ++m) {
    const MatrixXd t = column_targets(template_plan(s.scenario.bank, m, z, cfg));
    CHECK((t.rowwise().sum().array() - 32.0 / 4).abs().maxCoeff() < 1e-10);
    CHECK(t.minCoeff() >= 0);
  }
  // Columns only become distributions as T grows; on raw cosines the kernel
  // is flat enough to converge quickly.
  AdaptConfig long_run = cfg;
  long_run.sinkhorn_iters = 500;
  long_run.kernel_uses_temperature = false;
  const MatrixXd t = column_targets(template_plan(s.scenario.bank, 0, z, long_run));
  CHECK((t.colwise().sum().array() - 1).abs().maxCoeff() < 1e-9);
}

TEST_CASE("one template: clip_ot and avg_template agree") {
  auto s = small_setup(1, 1);
  auto a = s.encoder.initial_state(), b = s.encoder.initial_state();
  std::mt19937_64 ra(9), rb(9);
  const auto cfg = config(Variant::clip_ot, 0.05);
  for (int batch = 0; batch < 3; ++batch) {
    const auto pa = run_clip_ot(s.encoder, a, s.scenario.bank, s.x, cfg, ra);
    const auto pb = run_avg_template(s.encoder, b, s.scenario.bank, s.x, cfg, rb);
    CHECK(a == b);
    CHECK(same_bytes(pa.predictions, pb.predictions));
  }
}

TEST_CASE("near-uniform codes give the uniform-target gradient") {
  // Huge epsilon flattens the kernel, so every code column is uniform.
  std::mt19937_64 rng(2);
  const ToyEncoder enc({5, 5, 5, 2, 2});
  const auto bank = oracle::random_bank(5, 3, 1, rng);
  const MatrixXd x = oracle::gaussian_matrix(5, 6, rng);
  AdaptConfig cfg = config(Variant::clip_ot, 0.5);
  cfg.epsilon = 1e9;
  cfg.tau = 0.5;
  const MatrixXd z = enc.forward(enc.initial_state(), x).z;
  const MatrixXd codes = column_targets(template_plan(bank, 0, z, cfg));
  CHECK((codes.array() - 1.0 / 3).abs().maxCoeff() < 1e-6);

  const auto got = enc.cross_entropy(enc.initial_state(), x, codes, bank, cfg.tau);
  const auto want =
      enc.cross_entropy(enc.initial_state(), x, MatrixXd::Constant(3, 6, 1.0 / 3), bank, cfg.tau);
  CHECK(got.loss == doctest::Approx(want.loss).epsilon(1e-6));
  const auto g1 = oracle::flatten(got.grads), g2 = oracle::flatten(want.grads);
  CHECK(oracle::relative_error(g1, g2) < 1e-5);

  // Uniform targets pull predictions toward uniform over repeated steps.
  Adapter adapter(enc, bank, cfg);
  const double before = infer(enc, enc.initial_state(), bank, x, cfg.tau).predictions.maxCoeff();
  for (int i = 0; i < 30; ++i) adapter.process(x);
  CHECK(infer(enc, adapter.state(), bank, x, cfg.tau).predictions.maxCoeff() < before);
}

TEST_CASE("training-free never mutates the state") {
  auto s = small_setup();
  std::mt19937_64 rng(3);
  auto state = oracle::jitter(s.encoder.initial_state(), rng);
  const auto copy = state;
  const auto r = run_training_free(s.encoder, state, s.scenario.bank, s.x, config(Variant::training_free));
  CHECK(state == copy);
  for (std::size_t l = 0; l < copy.gamma.size(); ++l) {
    CHECK(std::memcmp(state.gamma[l].data(), copy.gamma[l].data(), sizeof(double) * copy.gamma[l].size()) == 0);
  }
  CHECK((r.predictions.rowwise().sum().array() - 32.0 / 4).abs().maxCoeff() < 1e-10);
  CHECK(r.loss_trace.empty());
}

TEST_CASE("training-free with one or repeated templates") {
  auto s = small_setup(0, 1);
  const auto cfg = config(Variant::training_free);
  const MatrixXd z = s.encoder.forward(s.encoder.initial_state(), s.x).z;
  const auto r = run_training_free(s.encoder, s.encoder.initial_state(), s.scenario.bank, s.x, cfg);
  const MatrixXd single = column_targets(template_plan(s.scenario.bank, 0, z, cfg));
  CHECK((r.predictions - single).cwiseAbs().maxCoeff() < 1e-15);

  const auto twice = build_bank({s.scenario.bank.templ(0), s.scenario.bank.templ(0),
                                 s.scenario.bank.templ(0)});
  const auto rep = training_free_embeddings(twice, z, cfg);
  CHECK((rep.predictions - single).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("tent is stationary at one-hot predictions") {
  // Orthogonal prototypes and a tiny temperature saturate the softmax. The
  // vectorized exp bottoms out near 5e-309 instead of 0, so "unchanged" means
  // unchanged up to that scale.
  const ToyEncoder enc({3, 3, 3, 1, 5});
  const auto bank = build_bank({MatrixXd::Identity(3, 3)});
  std::mt19937_64 rng(6);
  const MatrixXd x = oracle::gaussian_matrix(3, 4, rng);
  AdaptConfig cfg = config(Variant::tent, 1.0);
  cfg.tau = 1e-6;
  const MatrixXd p = infer(enc, enc.initial_state(), bank, x, cfg.tau).predictions;
  REQUIRE((p.array() < 1e-300 || p.array() == 1).all());

  auto state = enc.initial_state();
  const auto r = run_tent(enc, state, bank, x, cfg);
  CHECK(r.loss_trace.front() < 1e-300);
  const auto before = oracle::flatten(enc.initial_state()), after = oracle::flatten(state);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(std::abs(after[i] - before[i]) < 1e-280);
}

TEST_CASE("adapter is deterministic and resettable") {
  auto s = small_setup(2);
  const auto cfg = config(Variant::clip_ot);
  Adapter a(s.encoder, s.scenario.bank, cfg), b(s.encoder, s.scenario.bank, cfg);
  const auto first = a.process(s.x);
  CHECK(same_bytes(first.predictions, b.process(s.x).predictions));
  a.reset();
  const auto again = a.process(s.x);
  CHECK(same_bytes(first.predictions, again.predictions));
  CHECK(first.loss_trace == again.loss_trace);
  CHECK(first.template_order == again.template_order);

  AdaptConfig tent = cfg;
  tent.variant = Variant::tent;
  Adapter t(s.encoder, s.scenario.bank, tent);
  t.process(s.x);
  t.reset();
  CHECK(t.state() == s.encoder.initial_state());
}

TEST_CASE("adapter rejects mismatched banks and empty batches") {
  auto s = small_setup();
  std::mt19937_64 rng(1);
  const auto wrong = oracle::random_bank(7, 4, 2, rng);
  CHECK_THROWS_AS(Adapter(s.encoder, wrong, config(Variant::clip_ot)), Error);
  Adapter a(s.encoder, s.scenario.bank, config(Variant::clip_ot));
  try {
    a.process(MatrixXd(12, 0));
    FAIL("expected EmptyBatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyBatch);
  }
}

TEST_CASE("permutations are seeded") {
  std::mt19937_64 a(42), b(42);
  const auto p = template_permutation(8, a);
  CHECK(p == template_permutation(8, b));
  auto sorted = p;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
}

}  // TEST_SUITE
