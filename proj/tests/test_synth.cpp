#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "cplink/cplink.hpp"
#include "oracles.hpp"

using cplink::Index;
using cplink::KruskalModel;
using cplink::SynthSpec;

namespace {

SynthSpec desk_spec() {
  SynthSpec spec;
  spec.shape = {12, 10, 8};
  spec.rank = 3;
  spec.support = {4, 3, 3};
  spec.component_scale = 40.0;
  spec.bias_fraction = 0.1;
  spec.cannot_link_fraction = 0.3;
  spec.seed = 17;
  return spec;
}

}  // namespace

TEST_CASE("generate is deterministic in the seed") {
  const auto spec = desk_spec();
  const auto a = cplink::generate(spec);
  const auto b = cplink::generate(spec);
  CHECK(a.tensor.entries().size() == b.tensor.entries().size());
  CHECK(a.tensor.total_sum() == b.tensor.total_sum());
  CHECK(a.links.pairs() == b.links.pairs());
  CHECK(a.labels == b.labels);
  CHECK((a.truth.weights - b.truth.weights).norm() == 0.0);
  for (int mode = 0; mode < 3; ++mode)
    CHECK((a.truth.factors[static_cast<std::size_t>(mode)] -
           b.truth.factors[static_cast<std::size_t>(mode)])
              .norm() == 0.0);
}

TEST_CASE("generate honors the planted structure") {
  const auto spec = desk_spec();
  const auto data = cplink::generate(spec);
  REQUIRE_NOTHROW(data.truth.validate());
  REQUIRE(data.truth.rank() == 3);
  for (int mode = 0; mode < 3; ++mode) {
    const auto& f = data.truth.factors[static_cast<std::size_t>(mode)];
    for (Index r = 0; r < f.cols(); ++r) {
      Index nnz = 0;
      for (Index i = 0; i < f.rows(); ++i)
        if (f(i, r) > 0.0) ++nnz;
      CHECK(nnz == spec.support[static_cast<std::size_t>(mode)]);
      CHECK(f.col(r).sum() == Catch::Approx(1.0).margin(1e-12));
    }
  }
  CHECK(data.truth.bias.has_value());
  CHECK(data.truth.bias->sigma ==
        Catch::Approx(0.1 * 3.0 * 40.0).margin(1e-9));
  // both label classes must exist for downstream prediction tests
  const auto pos = std::count(data.labels.begin(), data.labels.end(), 1);
  CHECK(pos > 0);
  CHECK(pos < static_cast<long>(data.labels.size()));
}

TEST_CASE("zero component scale and zero bias give an empty tensor") {
  auto spec = desk_spec();
  spec.component_scale = 0.0;
  spec.bias_fraction = 0.0;
  const auto data = cplink::generate(spec);
  CHECK(data.tensor.entries().empty());
  CHECK(data.tensor.total_sum() == 0);
}

TEST_CASE("planted links are never violated by the truth") {
  const auto data = cplink::generate(desk_spec());
  REQUIRE(data.links.size() > 0);
  CHECK(cplink::cannot_link_violation_pct(data.truth, data.links, 0.0) == 0.0);
  CHECK(cplink::cannot_link_violation_pct(data.truth, data.links, 0.05) == 0.0);
}

TEST_CASE("sampled totals match the model mass in expectation") {
  auto spec = desk_spec();
  spec.shape = {8, 8, 8};
  spec.support = {3, 3, 3};
  const double expected = (1.0 + spec.bias_fraction) *
                          static_cast<double>(spec.rank) * spec.component_scale;
  const int n_seeds = 200;
  double sum = 0.0, sq = 0.0;
  for (int s = 0; s < n_seeds; ++s) {
    spec.seed = static_cast<std::uint64_t>(s);
    const double total = static_cast<double>(cplink::generate(spec).tensor.total_sum());
    sum += total;
    sq += total * total;
  }
  const double mean = sum / n_seeds;
  const double var = (sq - sum * sum / n_seeds) / (n_seeds - 1);
  const double stderr_mean = std::sqrt(var / n_seeds);
  CHECK(std::abs(mean - expected) <= 3.0 * stderr_mean);
}

TEST_CASE("sampled marginals track the truth marginals") {
  const auto data = cplink::generate(desk_spec());
  for (int mode = 1; mode <= 3; ++mode) {
    const Index dim = data.tensor.dim(mode);
    Eigen::VectorXd sampled = Eigen::VectorXd::Zero(dim);
    for (const auto& e : data.tensor.entries()) {
      const Index idx = mode == 1 ? e.i : (mode == 2 ? e.j : e.k);
      sampled[idx] += static_cast<double>(e.count);
    }
    Eigen::VectorXd expected = Eigen::VectorXd::Zero(dim);
    for (Index i = 0; i < dim; ++i) {
      for (Index r = 0; r < data.truth.rank(); ++r)
        expected[i] +=
            data.truth.weights[r] * data.truth.factor(mode)(i, r);
      expected[i] += data.truth.bias->sigma * data.truth.bias->u(mode)[i];
    }
    CHECK(oracle::spearman(sampled, expected) > 0.8);
  }
}

TEST_CASE("generate rejects infeasible specs") {
  auto spec = desk_spec();
  spec.support = {20, 3, 3};  // exceeds shape[0] = 12
  CHECK_THROWS_AS(cplink::generate(spec), cplink::validation_error);
  spec = desk_spec();
  spec.label_rule.components = {5};  // rank is 3
  CHECK_THROWS_AS(cplink::generate(spec), cplink::validation_error);
  spec = desk_spec();
  spec.label_rule.quantile = 1.0;
  CHECK_THROWS_AS(cplink::generate(spec), cplink::validation_error);
  spec = desk_spec();
  spec.cannot_link_fraction = 1.5;
  CHECK_THROWS_AS(cplink::generate(spec), cplink::validation_error);
}

TEST_CASE("factor_match_score is one for the truth against itself") {
  const auto data = cplink::generate(desk_spec());
  CHECK(cplink::factor_match_score(data.truth, data.truth) ==
        Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("factor_match_score is permutation invariant") {
  const auto data = cplink::generate(desk_spec());
  KruskalModel permuted = data.truth;
  const std::vector<Index> perm{2, 0, 1};
  for (Index r = 0; r < 3; ++r) {
    permuted.weights[r] = data.truth.weights[perm[static_cast<std::size_t>(r)]];
    for (int mode = 0; mode < 3; ++mode)
      permuted.factors[static_cast<std::size_t>(mode)].col(r) =
          data.truth.factors[static_cast<std::size_t>(mode)].col(
              perm[static_cast<std::size_t>(r)]);
  }
  CHECK(cplink::factor_match_score(data.truth, permuted) ==
        Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("factor_match_score penalizes a scrambled mode") {
  const auto data = cplink::generate(desk_spec());
  KruskalModel blurred = data.truth;
  blurred.factors[1].setConstant(1.0 / static_cast<double>(blurred.factors[1].rows()));
  const double score = cplink::factor_match_score(data.truth, blurred);
  CHECK(score < 1.0);

  // direct value: per pair, modes 1 and 3 keep their cosines, mode 2 becomes
  // cos(truth col, uniform); check against the brute-force assignment
  Eigen::MatrixXd pair_score(3, 3);
  for (Index t = 0; t < 3; ++t)
    for (Index f = 0; f < 3; ++f) {
      double s = 1.0;
      for (int mode = 0; mode < 3; ++mode) {
        const auto& tc = data.truth.factors[static_cast<std::size_t>(mode)].col(t);
        const auto& fc = blurred.factors[static_cast<std::size_t>(mode)].col(f);
        s *= tc.dot(fc) / (tc.norm() * fc.norm());
      }
      pair_score(t, f) = s;
    }
  const double best = oracle::brute_force_max_assignment(pair_score) / 3.0;
  CHECK(score == Catch::Approx(best).margin(1e-12));
}

TEST_CASE("factor_match_score rejects mismatched models") {
  const auto data = cplink::generate(desk_spec());
  auto spec = desk_spec();
  spec.rank = 2;
  const auto other = cplink::generate(spec);
  CHECK_THROWS_AS(cplink::factor_match_score(data.truth, other.truth),
                  cplink::validation_error);
}

TEST_CASE("assignment solver matches brute force") {
  cplink::Rng rng(151);
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = 2 + static_cast<Index>(cplink::bounded_uint(rng, 5));
    Eigen::MatrixXd score(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) score(i, j) = cplink::uniform_range(rng, -1.0, 1.0);
    const auto assignment = cplink::detail::max_score_assignment(score);
    REQUIRE(assignment.size() == static_cast<std::size_t>(n));
    double total = 0.0;
    std::vector<char> used(static_cast<std::size_t>(n), 0);
    for (Index i = 0; i < n; ++i) {
      const int j = assignment[static_cast<std::size_t>(i)];
      REQUIRE(j >= 0);
      REQUIRE(j < n);
      CHECK(!used[static_cast<std::size_t>(j)]);
      used[static_cast<std::size_t>(j)] = 1;
      total += score(i, j);
    }
    CHECK(total == Catch::Approx(oracle::brute_force_max_assignment(score)).margin(1e-9));
  }
}

TEST_CASE("fitting a generated instance recovers the planted factors") {
  auto spec = desk_spec();
  spec.shape = {15, 12, 10};
  spec.support = {4, 3, 3};
  spec.rank = 2;
  spec.component_scale = 200.0;
  // a free background component can swallow a planted sparse component, so
  // the recovery benchmark runs without one on either side
  spec.bias_fraction = 0.0;
  spec.seed = 3;
  const auto data = cplink::generate(spec);

  cplink::SolverConfig cfg;
  cfg.rank = 2;
  cfg.seed = 41;
  cfg.max_outer_iters = 300;
  cfg.hard_threshold_tau = 0.0;
  cfg.bias_enabled = false;
  const auto report =
      cplink::fit(data.tensor, cplink::CannotLinkMatrix::empty(12, 10), cfg);
  CHECK(cplink::factor_match_score(data.truth, report.model) > 0.8);
}
