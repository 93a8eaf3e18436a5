#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <tuple>
#include <utility>
#include <vector>

#include "cplink/assignment.hpp"
#include "cplink/errors.hpp"
#include "cplink/metrics.hpp"
#include "cplink/objective.hpp"
#include "cplink/rng.hpp"
#include "cplink/tensor.hpp"

namespace cplink {

/// Labels subjects by thresholding their combined loading on the designated
/// components at the given quantile of the cohort.
struct LabelRule {
  std::vector<Index> components{0};
  double quantile = 0.5;
};

/// Recipe for a planted-model benchmark instance.
struct SynthSpec {
  Shape3 shape{8, 8, 8};
  Index rank = 2;
  std::array<Index, 3> support{4, 4, 4};  // nonzeros per factor column, per mode
  double component_scale = 50.0;          // weight given to every component
  double bias_fraction = 0.1;   // bias weight as a fraction of the component mass
  double cannot_link_fraction = 0.25;  // share of never-co-supported pairs flagged
  LabelRule label_rule{};
  std::uint64_t seed = 0;

  void validate() const {
    for (int m = 0; m < 3; ++m) {
      const auto idx = static_cast<std::size_t>(m);
      if (shape[idx] < 1) throw validation_error("SynthSpec: dimensions must be >= 1");
      if (support[idx] < 1 || support[idx] > shape[idx])
        throw validation_error("SynthSpec: support must lie in [1, dim]");
    }
    if (rank < 1) throw validation_error("SynthSpec: rank must be >= 1");
    if (!(component_scale >= 0.0))
      throw validation_error("SynthSpec: component_scale must be nonnegative");
    if (!(bias_fraction >= 0.0))
      throw validation_error("SynthSpec: bias_fraction must be nonnegative");
    if (!(cannot_link_fraction >= 0.0) || !(cannot_link_fraction <= 1.0))
      throw validation_error("SynthSpec: cannot_link_fraction must lie in [0, 1]");
    if (label_rule.components.empty())
      throw validation_error("SynthSpec: label rule needs at least one component");
    for (Index r : label_rule.components)
      if (r < 0 || r >= rank)
        throw validation_error("SynthSpec: label component out of range");
    if (!(label_rule.quantile >= 0.0) || !(label_rule.quantile < 1.0))
      throw validation_error("SynthSpec: label quantile must lie in [0, 1)");
  }
};

struct SynthData {
  KruskalModel truth;
  SparseCountTensor tensor;
  CannotLinkMatrix links;
  std::vector<int> labels;
};

namespace detail {

// Cells the planted components can reach, with their model values. Sorted by
// coordinate so downstream sampling order is reproducible.
inline std::map<std::tuple<Index, Index, Index>, double> component_cells(
    const KruskalModel& truth) {
  std::map<std::tuple<Index, Index, Index>, double> cells;
  const auto& A = truth.factors[0];
  const auto& B = truth.factors[1];
  const auto& C = truth.factors[2];
  for (Index r = 0; r < truth.rank(); ++r) {
    if (truth.weights[r] == 0.0) continue;
    std::vector<Index> si, sj, sk;
    for (Index i = 0; i < A.rows(); ++i)
      if (A(i, r) > 0.0) si.push_back(i);
    for (Index j = 0; j < B.rows(); ++j)
      if (B(j, r) > 0.0) sj.push_back(j);
    for (Index k = 0; k < C.rows(); ++k)
      if (C(k, r) > 0.0) sk.push_back(k);
    for (Index i : si)
      for (Index j : sj)
        for (Index k : sk)
          cells[{i, j, k}] += truth.weights[r] * A(i, r) * B(j, r) * C(k, r);
  }
  return cells;
}

}  // namespace detail

/// Build a planted sparse model, draw counts from it, and derive links and
/// labels. Counts are exact Poisson draws: component mass is sampled per
/// reachable cell (cells below 1e-8 are dropped), and the bias field is
/// sampled as a Poisson total scattered per mode, which is equivalent because
/// the bias is a product measure. Everything is a pure function of the recipe.
inline SynthData generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  // Planted factors: supports without replacement, values bounded away from
  // zero so normalized loadings clear reasonable thresholds.
  KruskalModel truth;
  truth.weights = Eigen::VectorXd::Constant(spec.rank, spec.component_scale);
  for (int mode = 0; mode < 3; ++mode) {
    const auto idx = static_cast<std::size_t>(mode);
    FactorMatrix f = FactorMatrix::Zero(spec.shape[idx], spec.rank);
    for (Index r = 0; r < spec.rank; ++r) {
      const auto rows = sample_without_replacement(rng, spec.shape[idx], spec.support[idx]);
      for (Index row : rows) f(row, r) = uniform_range(rng, 0.25, 1.0);
      f.col(r) /= f.col(r).sum();
    }
    truth.factors[idx] = std::move(f);
  }
  if (spec.bias_fraction > 0.0) {
    BiasTerm bias;
    bias.sigma = spec.bias_fraction * truth.weights.sum();
    if (!(bias.sigma > 0.0))
      throw validation_error("generate: bias fraction needs positive component mass");
    for (int mode = 1; mode <= 3; ++mode) {
      Eigen::VectorXd u(spec.shape[static_cast<std::size_t>(mode - 1)]);
      for (Index i = 0; i < u.size(); ++i) u[i] = uniform_range(rng, 0.5, 1.5);
      u /= u.sum();
      bias.u(mode) = std::move(u);
    }
    truth.bias = std::move(bias);
  }

  // Poisson counts: reachable cells first, then the bias total scattered.
  std::map<std::tuple<Index, Index, Index>, std::int64_t> counts;
  for (const auto& [cell, value] : detail::component_cells(truth)) {
    if (value <= 1e-8) continue;
    const std::int64_t c = poisson(rng, value);
    if (c > 0) counts[cell] += c;
  }
  if (truth.bias) {
    const std::int64_t n_background = poisson(rng, truth.bias->sigma);
    const CategoricalSampler pick_i({truth.bias->u1.data(),
                                     static_cast<std::size_t>(truth.bias->u1.size())});
    const CategoricalSampler pick_j({truth.bias->u2.data(),
                                     static_cast<std::size_t>(truth.bias->u2.size())});
    const CategoricalSampler pick_k({truth.bias->u3.data(),
                                     static_cast<std::size_t>(truth.bias->u3.size())});
    for (std::int64_t n = 0; n < n_background; ++n) {
      const Index i = pick_i.sample(rng);
      const Index j = pick_j.sample(rng);
      const Index k = pick_k.sample(rng);
      ++counts[{i, j, k}];
    }
  }
  std::vector<TensorEntry> entries;
  entries.reserve(counts.size());
  for (const auto& [cell, count] : counts)
    entries.push_back(
        {std::get<0>(cell), std::get<1>(cell), std::get<2>(cell), count});
  SparseCountTensor tensor(spec.shape, std::move(entries));

  // Links: pairs (j, k) no component supports on both sides, sampled at the
  // requested fraction. A perfect recovery violates none of them.
  std::vector<std::pair<Index, Index>> free_pairs;
  const auto& B = truth.factors[1];
  const auto& C = truth.factors[2];
  for (Index j = 0; j < spec.shape[1]; ++j) {
    for (Index k = 0; k < spec.shape[2]; ++k) {
      bool shared = false;
      for (Index r = 0; r < spec.rank && !shared; ++r)
        shared = B(j, r) > 0.0 && C(k, r) > 0.0;
      if (!shared) free_pairs.emplace_back(j, k);
    }
  }
  std::vector<std::pair<Index, Index>> flagged;
  if (!free_pairs.empty() && spec.cannot_link_fraction > 0.0) {
    const auto n_flagged = static_cast<Index>(std::llround(
        spec.cannot_link_fraction * static_cast<double>(free_pairs.size())));
    for (Index idx : sample_without_replacement(
             rng, static_cast<Index>(free_pairs.size()), n_flagged))
      flagged.push_back(free_pairs[static_cast<std::size_t>(idx)]);
  }
  CannotLinkMatrix links(spec.shape[1], spec.shape[2], std::move(flagged));

  // Labels from the planted loadings, before any noise enters.
  Eigen::VectorXd score = Eigen::VectorXd::Zero(spec.shape[0]);
  for (Index r : spec.label_rule.components) score += truth.factors[0].col(r);
  std::vector<double> sorted(score.data(), score.data() + score.size());
  std::sort(sorted.begin(), sorted.end());
  const auto cut = static_cast<std::size_t>(std::floor(
      spec.label_rule.quantile * static_cast<double>(sorted.size() - 1)));
  const double threshold = sorted[cut];
  std::vector<int> labels(static_cast<std::size_t>(spec.shape[0]), 0);
  int n_pos = 0;
  for (Index i = 0; i < score.size(); ++i)
    if (score[i] > threshold) {
      labels[static_cast<std::size_t>(i)] = 1;
      ++n_pos;
    }
  if (n_pos == 0 || n_pos == spec.shape[0])
    throw validation_error("generate: label rule produced a single class");

  return {std::move(truth), std::move(tensor), std::move(links), std::move(labels)};
}

/// Mean per-component score of the best component matching between two models:
/// each matched pair scores the product over modes of the column cosine
/// similarity, and the matching is chosen by optimal assignment, not greedily.
/// Invariant under simultaneous column permutation and column rescaling.
inline double factor_match_score(const KruskalModel& truth, const KruskalModel& fitted) {
  if (truth.rank() != fitted.rank())
    throw validation_error("factor_match_score: rank mismatch");
  if (truth.dims() != fitted.dims())
    throw validation_error("factor_match_score: dimension mismatch");
  const Index R = truth.rank();
  Eigen::MatrixXd score = Eigen::MatrixXd::Ones(R, R);
  for (int mode = 1; mode <= 3; ++mode) {
    const auto& t = truth.factor(mode);
    const auto& f = fitted.factor(mode);
    for (Index r = 0; r < R; ++r) {
      const double tn = t.col(r).norm();
      for (Index s = 0; s < R; ++s) {
        const double fn = f.col(s).norm();
        score(r, s) *=
            (tn == 0.0 || fn == 0.0) ? 0.0 : t.col(r).dot(f.col(s)) / (tn * fn);
      }
    }
  }
  const auto match = detail::max_score_assignment(score);
  double total = 0.0;
  for (Index r = 0; r < R; ++r) total += score(r, match[static_cast<std::size_t>(r)]);
  return total / static_cast<double>(R);
}

}  // namespace cplink
