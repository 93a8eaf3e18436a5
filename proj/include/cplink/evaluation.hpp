#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "cplink/errors.hpp"
#include "cplink/rng.hpp"
#include "cplink/tensor.hpp"

namespace cplink {

/// Row-per-subject feature matrix with binary labels; both classes required.
struct LabeledFeatures {
  Eigen::MatrixXd features;
  std::vector<int> labels;

  void validate() const {
    if (features.rows() != static_cast<Eigen::Index>(labels.size()))
      throw validation_error("LabeledFeatures: row / label count mismatch");
    if (labels.empty()) throw validation_error("LabeledFeatures: empty dataset");
    int pos = 0, neg = 0;
    for (int y : labels) {
      if (y != 0 && y != 1)
        throw validation_error("LabeledFeatures: labels must be 0 or 1");
      (y == 1 ? pos : neg)++;
    }
    if (pos == 0 || neg == 0)
      throw validation_error("LabeledFeatures: both classes must be present");
  }
};

/// 8 penalties log-spaced over [1e-4, 10].
inline std::vector<double> default_lasso_grid() {
  std::vector<double> grid(8);
  const double lo = std::log10(1e-4), hi = std::log10(10.0);
  for (int i = 0; i < 8; ++i)
    grid[static_cast<std::size_t>(i)] = std::pow(10.0, lo + (hi - lo) * i / 7.0);
  return grid;
}

struct EvalProtocol {
  int n_splits = 5;
  double test_fraction = 0.2;
  int cv_folds = 10;
  std::vector<double> lasso_grid = default_lasso_grid();
  std::uint64_t seed = 0;

  void validate() const {
    if (n_splits < 1) throw validation_error("EvalProtocol: n_splits must be >= 1");
    if (!(test_fraction > 0.0) || !(test_fraction < 1.0))
      throw validation_error("EvalProtocol: test_fraction must lie in (0, 1)");
    if (cv_folds < 2) throw validation_error("EvalProtocol: cv_folds must be >= 2");
    if (lasso_grid.empty())
      throw validation_error("EvalProtocol: penalty grid must be nonempty");
    for (double p : lasso_grid)
      if (!(p >= 0.0)) throw validation_error("EvalProtocol: penalties must be >= 0");
  }
};

struct LinearModel {
  Eigen::VectorXd weights;
  double intercept = 0.0;

  Eigen::VectorXd score(const Eigen::MatrixXd& features) const {
    return (features * weights).array() + intercept;
  }
};

namespace detail {

inline double softplus(double v) {
  // log(1 + exp(v)) without overflow on either tail
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

inline double sigmoid(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

// Mean logistic loss and its gradient at (weights, intercept).
struct SmoothEval {
  double loss;
  Eigen::VectorXd grad_w;
  double grad_b;
};

inline SmoothEval logistic_smooth(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                  const Eigen::VectorXd& w, double b) {
  const auto n = static_cast<double>(x.rows());
  const Eigen::VectorXd margin = (x * w).array() + b;
  double loss = 0.0;
  Eigen::VectorXd residual(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double sign = y[i] > 0.5 ? 1.0 : -1.0;
    loss += softplus(-sign * margin[i]);
    residual[i] = sigmoid(margin[i]) - y[i];
  }
  return {loss / n, (x.transpose() * residual) / n, residual.sum() / n};
}

inline double soft_threshold(double v, double amount) {
  if (v > amount) return v - amount;
  if (v < -amount) return v + amount;
  return 0.0;
}

}  // namespace detail

/// l1-penalized logistic regression by proximal gradient descent with a
/// backtracking step size. Minimizes mean logistic loss + penalty * |w|_1;
/// the intercept is not penalized. Stops when the objective changes by less
/// than 1e-8 or after 10000 iterations.
inline LinearModel train_logreg_l1(const Eigen::MatrixXd& features,
                                   const std::vector<int>& labels, double penalty) {
  LabeledFeatures data{features, labels};
  data.validate();
  if (!(penalty >= 0.0))
    throw validation_error("train_logreg_l1: penalty must be nonnegative");

  Eigen::VectorXd y(features.rows());
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = labels[static_cast<std::size_t>(i)];

  Eigen::VectorXd w = Eigen::VectorXd::Zero(features.cols());
  double b = 0.0;
  auto eval = detail::logistic_smooth(features, y, w, b);
  double objective = eval.loss + penalty * w.cwiseAbs().sum();

  constexpr int kMaxIters = 10000;
  constexpr double kTol = 1e-8;
  double step = 1.0;
  for (int iter = 0; iter < kMaxIters; ++iter) {
    // Backtrack until the smooth part satisfies its quadratic upper bound.
    Eigen::VectorXd w_next;
    double b_next = 0.0;
    detail::SmoothEval eval_next{0.0, {}, 0.0};
    for (;;) {
      w_next.resize(w.size());
      for (Eigen::Index d = 0; d < w.size(); ++d)
        w_next[d] = detail::soft_threshold(w[d] - step * eval.grad_w[d], step * penalty);
      b_next = b - step * eval.grad_b;
      eval_next = detail::logistic_smooth(features, y, w_next, b_next);
      const Eigen::VectorXd dw = w_next - w;
      const double db = b_next - b;
      const double bound = eval.loss + eval.grad_w.dot(dw) + eval.grad_b * db +
                           (dw.squaredNorm() + db * db) / (2.0 * step);
      if (eval_next.loss <= bound + 1e-15 || step < 1e-12) break;
      step *= 0.5;
    }
    const double objective_next = eval_next.loss + penalty * w_next.cwiseAbs().sum();
    w = std::move(w_next);
    b = b_next;
    eval = std::move(eval_next);
    const double change = objective - objective_next;
    objective = objective_next;
    if (std::abs(change) < kTol) break;
    step *= 2.0;  // recover from earlier backtracking
  }
  return {std::move(w), b};
}

/// Rank-based AUC (Mann-Whitney with average ranks, so ties count one half).
inline double auc(const Eigen::VectorXd& scores, const std::vector<int>& labels) {
  if (scores.size() != static_cast<Eigen::Index>(labels.size()))
    throw validation_error("auc: score / label count mismatch");
  std::int64_t n_pos = 0, n_neg = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw validation_error("auc: labels must be 0 or 1");
    (y == 1 ? n_pos : n_neg)++;
  }
  if (n_pos == 0 || n_neg == 0)
    throw validation_error("auc: both classes must be present");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (labels[static_cast<std::size_t>(order[t])] == 1) pos_rank_sum += avg_rank;
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

struct SplitResult {
  double auc = 0.0;
  double penalty = 0.0;
};

struct EvalReport {
  double mean_auc = 0.0;
  double std_auc = 0.0;  // sample standard deviation across splits
  std::vector<SplitResult> splits;
  std::vector<std::string> warnings;
};

namespace detail {

// Shuffle each class separately and cut off the test fraction, so both sides
// keep both classes. Returned index lists are sorted.
inline std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> stratified_split(
    const std::vector<int>& labels, double test_fraction, Rng& rng) {
  std::vector<Eigen::Index> by_class[2];
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[labels[i]].push_back(static_cast<Eigen::Index>(i));
  std::vector<Eigen::Index> train, test;
  for (auto& members : by_class) {
    const auto n = static_cast<std::int64_t>(members.size());
    if (n < 2)
      throw validation_error("evaluate: each class needs at least two members");
    for (std::int64_t i = n - 1; i > 0; --i) {
      const auto j = static_cast<std::int64_t>(
          bounded_uint(rng, static_cast<std::uint64_t>(i + 1)));
      std::swap(members[static_cast<std::size_t>(i)],
                members[static_cast<std::size_t>(j)]);
    }
    auto n_test = static_cast<std::int64_t>(
        std::llround(test_fraction * static_cast<double>(n)));
    n_test = std::clamp<std::int64_t>(n_test, 1, n - 1);
    for (std::int64_t i = 0; i < n; ++i)
      (i < n_test ? test : train).push_back(members[static_cast<std::size_t>(i)]);
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {std::move(train), std::move(test)};
}

// Deal each class round-robin across folds. Fold f holds the indices whose
// within-class shuffle position is congruent to f.
inline std::vector<std::vector<Eigen::Index>> stratified_folds(
    const std::vector<Eigen::Index>& pool, const std::vector<int>& labels, int folds,
    Rng& rng) {
  std::vector<Eigen::Index> by_class[2];
  for (auto idx : pool) by_class[labels[static_cast<std::size_t>(idx)]].push_back(idx);
  std::vector<std::vector<Eigen::Index>> out(static_cast<std::size_t>(folds));
  for (auto& members : by_class) {
    const auto n = static_cast<std::int64_t>(members.size());
    for (std::int64_t i = n - 1; i > 0; --i) {
      const auto j = static_cast<std::int64_t>(
          bounded_uint(rng, static_cast<std::uint64_t>(i + 1)));
      std::swap(members[static_cast<std::size_t>(i)],
                members[static_cast<std::size_t>(j)]);
    }
    for (std::int64_t i = 0; i < n; ++i)
      out[static_cast<std::size_t>(i % folds)].push_back(
          members[static_cast<std::size_t>(i)]);
  }
  for (auto& fold : out) std::sort(fold.begin(), fold.end());
  return out;
}

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m,
                                   const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

inline std::vector<int> gather_labels(const std::vector<int>& labels,
                                      const std::vector<Eigen::Index>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(labels[static_cast<std::size_t>(r)]);
  return out;
}

inline bool single_class(const std::vector<int>& labels) {
  return std::all_of(labels.begin(), labels.end(), [&](int y) { return y == labels[0]; });
}

}  // namespace detail

/// Repeated stratified holdout evaluation: per split, pick the l1 penalty by
/// stratified cross-validated AUC on the training side (ties go to the larger,
/// sparser penalty), retrain on the full training side, and score the test
/// side. Reports mean and sample standard deviation of the test AUC.
inline EvalReport evaluate(const LabeledFeatures& data, const EvalProtocol& protocol) {
  data.validate();
  protocol.validate();
  Rng rng(protocol.seed);
  EvalReport report;

  for (int split = 0; split < protocol.n_splits; ++split) {
    const auto [train_idx, test_idx] =
        detail::stratified_split(data.labels, protocol.test_fraction, rng);
    const Eigen::MatrixXd x_train = detail::gather_rows(data.features, train_idx);
    const std::vector<int> y_train = detail::gather_labels(data.labels, train_idx);
    const auto folds =
        detail::stratified_folds(train_idx, data.labels, protocol.cv_folds, rng);

    // Positions of each fold inside train_idx, for carving out CV training sets.
    std::vector<std::vector<Eigen::Index>> fold_positions(folds.size());
    {
      std::unordered_map<Eigen::Index, Eigen::Index> position;
      position.reserve(train_idx.size());
      for (std::size_t p = 0; p < train_idx.size(); ++p)
        position[train_idx[p]] = static_cast<Eigen::Index>(p);
      for (std::size_t f = 0; f < folds.size(); ++f)
        for (auto idx : folds[f]) fold_positions[f].push_back(position.at(idx));
    }

    double best_mean = -1.0;
    double best_penalty = protocol.lasso_grid.front();
    for (double penalty : protocol.lasso_grid) {
      double acc = 0.0;
      int used = 0;
      for (std::size_t f = 0; f < folds.size(); ++f) {
        if (folds[f].empty()) continue;
        std::vector<char> held(train_idx.size(), 0);
        for (auto p : fold_positions[f]) held[static_cast<std::size_t>(p)] = 1;
        std::vector<Eigen::Index> cv_train_pos;
        for (std::size_t p = 0; p < train_idx.size(); ++p)
          if (!held[p]) cv_train_pos.push_back(static_cast<Eigen::Index>(p));

        const auto y_fold = detail::gather_labels(y_train, fold_positions[f]);
        const auto y_cv = detail::gather_labels(y_train, cv_train_pos);
        if (detail::single_class(y_fold) || detail::single_class(y_cv)) {
          report.warnings.push_back("split " + std::to_string(split) + ": fold " +
                                    std::to_string(f) +
                                    " skipped (single class)");
          continue;
        }
        const auto model =
            train_logreg_l1(detail::gather_rows(x_train, cv_train_pos), y_cv, penalty);
        acc += auc(model.score(detail::gather_rows(x_train, fold_positions[f])), y_fold);
        ++used;
      }
      if (used == 0)
        throw validation_error("evaluate: every CV fold was single-class");
      const double mean = acc / used;
      if (mean > best_mean || (mean == best_mean && penalty > best_penalty)) {
        best_mean = mean;  // ties resolve to the larger (sparser) penalty
        best_penalty = penalty;
      }
    }

    const auto model = train_logreg_l1(x_train, y_train, best_penalty);
    const double test_auc =
        auc(model.score(detail::gather_rows(data.features, test_idx)),
            detail::gather_labels(data.labels, test_idx));
    report.splits.push_back({test_auc, best_penalty});
  }

  double mean = 0.0;
  for (const auto& s : report.splits) mean += s.auc;
  mean /= static_cast<double>(report.splits.size());
  double var = 0.0;
  for (const auto& s : report.splits) var += (s.auc - mean) * (s.auc - mean);
  report.mean_auc = mean;
  report.std_auc = report.splits.size() > 1
                       ? std::sqrt(var / static_cast<double>(report.splits.size() - 1))
                       : 0.0;
  return report;
}

}  // namespace cplink
