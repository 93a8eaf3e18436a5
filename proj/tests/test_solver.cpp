#include <catch2/catch_amalgamated.hpp>

#include "cplink/cplink.hpp"
#include "oracles.hpp"

using cplink::CannotLinkMatrix;
using cplink::FactorMatrix;
using cplink::Index;
using cplink::KruskalModel;
using cplink::SolverConfig;
using cplink::SparseCountTensor;

namespace {

bool models_identical(const KruskalModel& a, const KruskalModel& b) {
  if (a.weights != b.weights) return false;
  for (int m = 0; m < 3; ++m)
    if (a.factors[static_cast<std::size_t>(m)] != b.factors[static_cast<std::size_t>(m)])
      return false;
  if (a.bias.has_value() != b.bias.has_value()) return false;
  if (a.bias) {
    if (a.bias->sigma != b.bias->sigma) return false;
    for (int mode = 1; mode <= 3; ++mode)
      if (a.bias->u(mode) != b.bias->u(mode)) return false;
  }
  return true;
}

void check_trace_non_increasing(const std::vector<cplink::ObjectiveBreakdown>& trace) {
  REQUIRE(!trace.empty());
  for (std::size_t t = 1; t < trace.size(); ++t)
    CHECK(trace[t].total <= trace[t - 1].total);
}

void check_feasible(const KruskalModel& m, double bias_floor) {
  for (Index r = 0; r < m.rank(); ++r) {
    CHECK(m.weights[r] >= 0.0);
    for (int mode = 1; mode <= 3; ++mode) {
      const auto& col = m.factor(mode).col(r);
      CHECK(col.minCoeff() >= 0.0);
      const double s = col.sum();
      if (s != 0.0) CHECK(s == Catch::Approx(1.0).margin(1e-8));
    }
  }
  if (m.bias) {
    CHECK(m.bias->sigma > 0.0);
    for (int mode = 1; mode <= 3; ++mode) {
      CHECK(m.bias->u(mode).minCoeff() >= bias_floor - 1e-15);
      CHECK(m.bias->u(mode).sum() == Catch::Approx(1.0).margin(1e-8));
    }
  }
}

}  // namespace

TEST_CASE("initialize is deterministic in the seed") {
  cplink::Rng rng(3);
  const auto x = oracle::random_tensor(rng, {4, 3, 3}, 10);
  SolverConfig cfg;
  cfg.rank = 2;
  cfg.seed = 99;
  const auto a = cplink::initialize(x, cfg);
  const auto b = cplink::initialize(x, cfg);
  CHECK(models_identical(a, b));
  cfg.seed = 100;
  const auto c = cplink::initialize(x, cfg);
  CHECK(!models_identical(a, c));
}

TEST_CASE("initialize sets lambda and bias from tensor mass") {
  std::vector<cplink::TensorEntry> entries;
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j)
      for (Index k = 0; k < 2; ++k) entries.push_back({i, j, k, 3});
  SparseCountTensor x({2, 2, 2}, entries);
  SolverConfig cfg;
  cfg.rank = 4;
  const auto m = cplink::initialize(x, cfg);
  REQUIRE(m.rank() == 4);
  for (Index r = 0; r < 4; ++r)
    CHECK(m.weights[r] == Catch::Approx(24.0 / 4.0).margin(1e-12));
  REQUIRE(m.bias.has_value());
  CHECK(m.bias->sigma == Catch::Approx(0.1 * 24.0).margin(1e-12));
  // all-equal counts: every u is uniform
  for (int mode = 1; mode <= 3; ++mode)
    for (Index i = 0; i < 2; ++i)
      CHECK(m.bias->u(mode)[i] == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("initialize uses mode marginals for the bias direction") {
  // mode-1 marginals (2, 1, 1)
  SparseCountTensor x({3, 1, 1}, {{0, 0, 0, 2}, {1, 0, 0, 1}, {2, 0, 0, 1}});
  SolverConfig cfg;
  cfg.rank = 1;
  const auto m = cplink::initialize(x, cfg);
  REQUIRE(m.bias.has_value());
  CHECK(m.bias->u1[0] == Catch::Approx(0.5).margin(1e-12));
  CHECK(m.bias->u1[1] == Catch::Approx(0.25).margin(1e-12));
  CHECK(m.bias->u1[2] == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("initialize produces feasible models") {
  cplink::Rng rng(5);
  const auto x = oracle::random_tensor(rng, {5, 4, 3}, 14);
  SolverConfig cfg;
  cfg.rank = 3;
  cfg.seed = 7;
  const auto m = cplink::initialize(x, cfg);
  REQUIRE_NOTHROW(m.validate());
  check_feasible(m, cfg.bias_floor);

  cfg.bias_enabled = false;
  const auto plain = cplink::initialize(x, cfg);
  CHECK(!plain.bias.has_value());
}

TEST_CASE("fit with zero iterations returns the initialization") {
  cplink::Rng rng(7);
  const auto x = oracle::random_tensor(rng, {4, 3, 3}, 10);
  SolverConfig cfg;
  cfg.rank = 2;
  cfg.seed = 11;
  cfg.max_outer_iters = 0;
  cfg.hard_threshold_tau = 0.0;
  const auto report = cplink::fit(x, CannotLinkMatrix::empty(3, 3), cfg);
  CHECK(!report.converged);
  CHECK(report.iterations == 0);
  CHECK(models_identical(report.model, cplink::initialize(x, cfg)));
  REQUIRE(report.trace.size() == 1);
}

TEST_CASE("fit is deterministic and independent of entry order") {
  cplink::Rng rng(9);
  const auto x = oracle::random_tensor(rng, {5, 4, 3}, 16);
  auto shuffled_entries = x.entries();
  std::reverse(shuffled_entries.begin(), shuffled_entries.end());
  const SparseCountTensor x2({5, 4, 3}, shuffled_entries);

  SolverConfig cfg;
  cfg.rank = 2;
  cfg.seed = 13;
  cfg.max_outer_iters = 15;
  const auto links = CannotLinkMatrix::empty(4, 3);
  const auto a = cplink::fit(x, links, cfg);
  const auto b = cplink::fit(x, links, cfg);
  const auto c = cplink::fit(x2, links, cfg);
  CHECK(models_identical(a.model, b.model));
  CHECK(models_identical(a.model, c.model));
}

TEST_CASE("fit trace is non-increasing and the model stays feasible") {
  cplink::Rng rng(11);
  for (int trial = 0; trial < 3; ++trial) {
    const auto x = oracle::random_tensor(rng, {6, 5, 4}, 25);
    SolverConfig cfg;
    cfg.rank = 3;
    cfg.seed = 17 + static_cast<std::uint64_t>(trial);
    cfg.max_outer_iters = 40;
    cfg.hyper.angular_weight = 0.5;
    cfg.hyper.l2_weight = 0.1;
    cfg.hyper.cannot_link_weight = 0.3;
    CannotLinkMatrix links(5, 4, {{0, 0}, {1, 2}, {4, 3}});
    const auto report = cplink::fit(x, links, cfg);
    check_trace_non_increasing(report.trace);
    check_feasible(report.model, cfg.bias_floor);
    REQUIRE_NOTHROW(report.model.validate());
  }
}

TEST_CASE("fit improves the objective on a real instance") {
  cplink::Rng rng(13);
  const auto x = oracle::random_tensor(rng, {6, 5, 4}, 30);
  SolverConfig cfg;
  cfg.rank = 2;
  cfg.seed = 19;
  cfg.max_outer_iters = 60;
  const auto report = cplink::fit(x, CannotLinkMatrix::empty(5, 4), cfg);
  CHECK(report.trace.back().total < report.trace.front().total);
}

TEST_CASE("fit recovers a planted rank-1 model") {
  // exact rank-1 counts; the single component should be found nearly exactly
  KruskalModel truth;
  truth.weights = Eigen::VectorXd::Constant(1, 60.0);
  truth.factors[0] = FactorMatrix::Zero(4, 1);
  truth.factors[0] << 0.5, 0.5, 0.0, 0.0;
  truth.factors[1] = FactorMatrix::Zero(3, 1);
  truth.factors[1] << 0.0, 1.0, 0.0;
  truth.factors[2] = FactorMatrix::Zero(3, 1);
  truth.factors[2] << 0.5, 0.25, 0.25;

  std::vector<cplink::TensorEntry> entries;
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 3; ++j)
      for (Index k = 0; k < 3; ++k) {
        const double z = cplink::reconstruct_at(truth, i, j, k);
        const auto count = static_cast<std::int64_t>(std::llround(z));
        if (count > 0) entries.push_back({i, j, k, count});
      }
  SparseCountTensor x({4, 3, 3}, entries);

  SolverConfig cfg;
  cfg.rank = 1;
  cfg.seed = 23;
  cfg.max_outer_iters = 200;
  cfg.bias_enabled = false;
  cfg.hard_threshold_tau = 0.0;
  const auto report = cplink::fit(x, CannotLinkMatrix::empty(3, 3), cfg);

  for (int mode = 1; mode <= 3; ++mode) {
    const auto& fitted = report.model.factor(mode).col(0);
    const auto& want = truth.factor(mode).col(0);
    const double cosine = fitted.dot(want) / (fitted.norm() * want.norm());
    CHECK(cosine >= 0.999);
  }
}

TEST_CASE("large cannot-link weight drives the penalty to zero") {
  // planted cross pair: component uses diagnosis 0 with medication 0
  cplink::Rng rng(29);
  std::vector<cplink::TensorEntry> entries{
      {0, 0, 0, 20}, {1, 0, 0, 20}, {0, 1, 1, 20}, {1, 1, 1, 20}};
  SparseCountTensor x({2, 2, 2}, entries);
  CannotLinkMatrix links(2, 2, {{0, 0}});

  SolverConfig cfg;
  cfg.rank = 2;
  cfg.seed = 31;
  cfg.max_outer_iters = 300;
  cfg.hyper.cannot_link_weight = 1000.0;
  cfg.hard_threshold_tau = 0.0;
  const auto report = cplink::fit(x, links, cfg);
  const double penalty = cplink::cannot_link_penalty(
      report.model.factors[1], links, report.model.factors[2], 1.0);
  CHECK(penalty < 1e-3);
}

TEST_CASE("fit with zero link weight ignores the link matrix entirely") {
  cplink::Rng rng(37);
  const auto x = oracle::random_tensor(rng, {4, 3, 3}, 10);
  SolverConfig cfg;
  cfg.rank = 2;
  cfg.seed = 41;
  cfg.max_outer_iters = 10;
  // wrong-shaped matrix must be invisible when the weight is zero
  CannotLinkMatrix wrong(9, 9, {{8, 8}});
  REQUIRE_NOTHROW(cplink::fit(x, wrong, cfg));

  cfg.hyper.cannot_link_weight = 0.5;
  CHECK_THROWS_AS(cplink::fit(x, wrong, cfg), cplink::validation_error);
}

TEST_CASE("hard threshold runs once after the loop and flags dead components") {
  cplink::Rng rng(43);
  const auto x = oracle::random_tensor(rng, {4, 4, 4}, 12);
  SolverConfig cfg;
  cfg.rank = 3;
  cfg.seed = 47;
  cfg.max_outer_iters = 30;
  // absurd threshold: every loading dies, every component degenerates
  cfg.hard_threshold_tau = 2.0;
  const auto report = cplink::fit(x, CannotLinkMatrix::empty(4, 4), cfg);
  REQUIRE(report.degenerate_components.size() == 3);
  for (Index r = 0; r < 3; ++r) {
    CHECK(report.model.weights[r] == 0.0);
    for (int mode = 1; mode <= 3; ++mode)
      CHECK(report.model.factor(mode).col(r).isZero(0.0));
  }
  REQUIRE_NOTHROW(report.model.validate());
}

TEST_CASE("bias can be frozen at its initialization") {
  cplink::Rng rng(53);
  const auto x = oracle::random_tensor(rng, {4, 3, 3}, 12);
  SolverConfig cfg;
  cfg.rank = 2;
  cfg.seed = 59;
  cfg.max_outer_iters = 20;
  cfg.bias_update = false;
  const auto init = cplink::initialize(x, cfg);
  const auto report = cplink::fit(x, CannotLinkMatrix::empty(3, 3), cfg);
  REQUIRE(report.model.bias.has_value());
  CHECK(report.model.bias->sigma == init.bias->sigma);
  for (int mode = 1; mode <= 3; ++mode)
    CHECK(report.model.bias->u(mode) == init.bias->u(mode));
}

TEST_CASE("solver rejects invalid configuration") {
  SolverConfig cfg;
  cfg.rank = 0;
  CHECK_THROWS_AS(cfg.validate(), cplink::validation_error);
  cfg.rank = 1;
  cfg.tol = 0.0;
  CHECK_THROWS_AS(cfg.validate(), cplink::validation_error);
  cfg.tol = 1e-6;
  cfg.armijo.shrink = 1.0;
  CHECK_THROWS_AS(cfg.validate(), cplink::validation_error);
  cfg.armijo.shrink = 0.5;
  cfg.hyper.angular_threshold = {1.0, 0.0, 0.0};
  CHECK_THROWS_AS(cfg.validate(), cplink::validation_error);
}

TEST_CASE("converged runs stop before the iteration cap") {
  cplink::Rng rng(61);
  const auto x = oracle::random_tensor(rng, {4, 3, 2}, 8);
  SolverConfig cfg;
  cfg.rank = 1;
  cfg.seed = 67;
  cfg.max_outer_iters = 500;
  cfg.tol = 1e-5;
  const auto report = cplink::fit(x, CannotLinkMatrix::empty(3, 2), cfg);
  CHECK(report.converged);
  CHECK(report.iterations < 500);
  check_trace_non_increasing(report.trace);
}
