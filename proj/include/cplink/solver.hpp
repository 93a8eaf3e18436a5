#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cplink/errors.hpp"
#include "cplink/objective.hpp"
#include "cplink/projections.hpp"
#include "cplink/rng.hpp"
#include "cplink/tensor.hpp"

namespace cplink {

/// Backtracking line-search parameters. initial_step seeds the first search;
/// afterwards each block starts from twice its last accepted step so the
/// search adapts to the scale of the block it is optimizing.
struct ArmijoParams {
  double initial_step = 1.0;
  double shrink = 0.5;
  double sufficient_decrease = 1e-4;
  int max_backtracks = 30;
};

struct SolverConfig {
  Index rank = 1;
  HyperParams hyper{};
  int max_outer_iters = 500;
  int inner_steps_per_mode = 1;
  double tol = 1e-6;                 // relative objective change per outer iteration
  std::uint64_t seed = 0;
  ArmijoParams armijo{};
  double hard_threshold_tau = 0.01;  // applied once, after the descent finishes
  bool bias_enabled = true;
  bool bias_update = true;           // false freezes the bias at its initialization
  double bias_floor = 1e-6;          // entry floor for the bias u vectors
  double sigma_init_fraction = 0.1;  // initial sigma as a fraction of the total count

  void validate() const {
    hyper.validate();
    if (rank < 1) throw validation_error("SolverConfig: rank must be >= 1");
    if (max_outer_iters < 0)
      throw validation_error("SolverConfig: max_outer_iters must be >= 0");
    if (inner_steps_per_mode < 1)
      throw validation_error("SolverConfig: inner_steps_per_mode must be >= 1");
    if (!(tol > 0.0)) throw validation_error("SolverConfig: tol must be positive");
    if (!(armijo.initial_step > 0.0) || !(armijo.shrink > 0.0) ||
        !(armijo.shrink < 1.0) || !(armijo.sufficient_decrease > 0.0) ||
        !(armijo.sufficient_decrease < 1.0) || armijo.max_backtracks < 0)
      throw validation_error("SolverConfig: invalid line-search parameters");
    if (!(hard_threshold_tau >= 0.0))
      throw validation_error("SolverConfig: hard_threshold_tau must be nonnegative");
    if (!(bias_floor > 0.0))
      throw validation_error("SolverConfig: bias_floor must be positive");
    if (!(sigma_init_fraction > 0.0))
      throw validation_error("SolverConfig: sigma_init_fraction must be positive");
  }
};

struct FitReport {
  KruskalModel model;
  std::vector<ObjectiveBreakdown> trace;  // initial value plus one entry per iteration
  bool converged = false;
  int iterations = 0;
  double wall_seconds = 0.0;
  std::vector<Index> degenerate_components;  // zeroed out by the final threshold
};

/// Deterministic starting point: factor columns drawn uniform(0, 1] and
/// rescaled to sum one, equal weights summing to the tensor total, bias u
/// vectors proportional to the mode marginals (floored into the interior) and
/// sigma a configured fraction of the total. Draw order is fixed: mode 1, 2, 3,
/// column by column, entry by entry.
inline KruskalModel initialize(const SparseCountTensor& x, const SolverConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const double total = static_cast<double>(x.total_sum());
  KruskalModel model;
  model.weights =
      Eigen::VectorXd::Constant(cfg.rank, total / static_cast<double>(cfg.rank));
  for (int mode = 1; mode <= 3; ++mode) {
    FactorMatrix f(x.dim(mode), cfg.rank);
    for (Index r = 0; r < cfg.rank; ++r) {
      // interior start: strictly positive columns keep every coordinate
      // reachable by the first line searches
      for (Index i = 0; i < f.rows(); ++i) f(i, r) = uniform_open_closed(rng);
      f.col(r) /= f.col(r).sum();
    }
    model.factors[static_cast<std::size_t>(mode - 1)] = std::move(f);
  }
  if (cfg.bias_enabled) {
    BiasTerm bias;
    bias.sigma = std::max(cfg.sigma_init_fraction * total, 1e-12);
    for (int mode = 1; mode <= 3; ++mode) {
      Eigen::VectorXd marginal = Eigen::VectorXd::Zero(x.dim(mode));
      for (const auto& e : x.entries()) {
        const Index idx = mode == 1 ? e.i : (mode == 2 ? e.j : e.k);
        marginal[idx] += static_cast<double>(e.count);
      }
      const double msum = marginal.sum();
      if (msum > 0.0)
        marginal /= msum;
      else
        marginal.setConstant(1.0 / static_cast<double>(marginal.size()));
      bias.u(mode) = project_interior_simplex(marginal, cfg.bias_floor);
    }
    model.bias = std::move(bias);
  }
  return model;
}

namespace detail {

// Split an updated absorbed column into (weight, simplex direction). The
// weight is the positive l1 mass; as the step size goes to zero this map is
// the identity on feasible columns, which keeps backtracking effective.
inline std::pair<double, Eigen::VectorXd> split_absorbed_column(
    const Eigen::VectorXd& v) {
  const double mass = v.cwiseMax(0.0).sum();
  if (!(mass > 0.0)) return {0.0, Eigen::VectorXd::Zero(v.size())};
  return {mass, project_simplex(v / mass)};
}

struct LineSearchState {
  double next_step;
  explicit LineSearchState(double initial) : next_step(initial) {}

  // After an accepted step, start the next search above it.
  void accepted(double step) { next_step = 2.0 * step; }

  // After an exhausted search, continue below the explored range next time.
  // Escaping a coordinate pinned at zero can need steps many orders of
  // magnitude under the warm step, because the floored count/model ratio
  // makes the local gradient huge while the achievable decrease is only
  // logarithmic in the step.
  void failed(double smallest_tried) {
    next_step = std::max(smallest_tried, 1e-30);
  }
};

// One backtracking pass over candidates produced by `make_candidate(step)`.
// `predicted(candidate)` must be the first-order decrease estimate; a
// candidate is accepted when the true objective drops by at least the Armijo
// fraction of it. Returns true and commits the candidate on success.
template <typename MakeCandidate, typename Predicted>
bool armijo_search(const ArmijoParams& params, LineSearchState& state,
                   double current_total, MakeCandidate&& make_candidate,
                   Predicted&& predicted,
                   const std::function<ObjectiveBreakdown(const KruskalModel&)>& objective,
                   KruskalModel& model, ObjectiveBreakdown& breakdown) {
  double step = state.next_step;
  for (int bt = 0; bt <= params.max_backtracks; ++bt, step *= params.shrink) {
    KruskalModel candidate = make_candidate(step);
    const double pred = predicted(candidate);
    if (!(pred >= 0.0)) continue;
    const ObjectiveBreakdown value = objective(candidate);
    if (!std::isfinite(value.total)) continue;
    if (value.total <= current_total - params.sufficient_decrease * pred) {
      model = std::move(candidate);
      breakdown = value;
      state.accepted(step);
      return true;
    }
  }
  state.failed(step);
  return false;
}

inline FitReport fit_from(const SparseCountTensor& x, const CannotLinkMatrix& links,
                          const SolverConfig& cfg, KruskalModel model) {
  const auto t_start = std::chrono::steady_clock::now();
  const HyperParams& hp = cfg.hyper;
  const std::function<ObjectiveBreakdown(const KruskalModel&)> objective =
      [&](const KruskalModel& m) {
        return full_objective(x, m, links, hp, ZeroColumns::skip);
      };
  ObjectiveBreakdown current = objective(model);
  if (!std::isfinite(current.total))
    throw solver_error("fit: objective not finite at initialization");

  FitReport report;
  report.trace.push_back(current);

  // Independent warm-started line searches: one per mode, one for the
  // weights, one for sigma, one for the bias u vectors.
  std::vector<detail::LineSearchState> search(
      6, detail::LineSearchState(cfg.armijo.initial_step));

  int consecutive_small = 0;
  for (int outer = 1; outer <= cfg.max_outer_iters; ++outer) {
    bool all_accepted = true;
    for (int mode = 1; mode <= 3; ++mode) {
      for (int inner = 0; inner < cfg.inner_steps_per_mode; ++inner) {
        // Absorb the weights into this mode, so the step can rescale
        // components, not just redistribute within columns.
        KruskalModel absorbed = model;
        absorbed.factor(mode) = model.factor(mode) * model.weights.asDiagonal();
        absorbed.weights = Eigen::VectorXd::Ones(model.rank());
        const Eigen::MatrixXd grad =
            objective_gradient(x, absorbed, links, hp, mode, ZeroColumns::skip);
        const Eigen::MatrixXd base = absorbed.factor(mode);

        auto make_candidate = [&](double step) {
          KruskalModel cand = model;
          const Eigen::MatrixXd stepped = base - step * grad;
          for (Index r = 0; r < cand.rank(); ++r) {
            auto [mass, direction] = detail::split_absorbed_column(stepped.col(r));
            cand.weights[r] = mass;
            cand.factor(mode).col(r) = direction;
          }
          return cand;
        };
        auto predicted = [&](const KruskalModel& cand) {
          const Eigen::MatrixXd cand_absorbed =
              cand.factor(mode) * cand.weights.asDiagonal();
          return (base - cand_absorbed).cwiseProduct(grad).sum();
        };
        const bool ok = detail::armijo_search(
            cfg.armijo, search[static_cast<std::size_t>(mode - 1)], current.total,
            make_candidate, predicted, objective, model, current);
        all_accepted = all_accepted && ok;
      }
    }

    {
      const Eigen::VectorXd grad = lambda_gradient(x, model);
      auto make_candidate = [&](double step) {
        KruskalModel cand = model;
        cand.weights = (model.weights - step * grad).cwiseMax(0.0);
        return cand;
      };
      auto predicted = [&](const KruskalModel& cand) {
        return (model.weights - cand.weights).dot(grad);
      };
      const bool ok = detail::armijo_search(cfg.armijo, search[3], current.total,
                                            make_candidate, predicted, objective,
                                            model, current);
      all_accepted = all_accepted && ok;
    }

    if (cfg.bias_enabled && cfg.bias_update && model.bias) {
      // sigma and the u vectors live on very different scales, so each gets
      // its own search.
      {
        const BiasGradient grad = bias_gradient(x, model);
        auto make_candidate = [&](double step) {
          KruskalModel cand = model;
          cand.bias->sigma = std::max(model.bias->sigma - step * grad.sigma, 1e-12);
          return cand;
        };
        auto predicted = [&](const KruskalModel& cand) {
          return (model.bias->sigma - cand.bias->sigma) * grad.sigma;
        };
        const bool ok = detail::armijo_search(cfg.armijo, search[4], current.total,
                                              make_candidate, predicted, objective,
                                              model, current);
        all_accepted = all_accepted && ok;
      }
      {
        BiasGradient grad = bias_gradient(x, model);
        auto make_candidate = [&](double step) {
          KruskalModel cand = model;
          for (int mode = 1; mode <= 3; ++mode)
            cand.bias->u(mode) = project_interior_simplex(
                model.bias->u(mode) - step * grad.u(mode), cfg.bias_floor);
          return cand;
        };
        auto predicted = [&](const KruskalModel& cand) {
          double acc = 0.0;
          for (int mode = 1; mode <= 3; ++mode)
            acc += (model.bias->u(mode) - cand.bias->u(mode)).dot(grad.u(mode));
          return acc;
        };
        const bool ok = detail::armijo_search(cfg.armijo, search[5], current.total,
                                              make_candidate, predicted, objective,
                                              model, current);
        all_accepted = all_accepted && ok;
      }
    }

    if (!std::isfinite(current.total))
      throw solver_error("fit: objective became non-finite at iteration " +
                         std::to_string(outer));
    const double previous = report.trace.back().total;
    report.trace.push_back(current);
    report.iterations = outer;
    const double rel_change =
        (previous - current.total) / std::max(std::abs(previous), 1e-30);
    // An exhausted line search is not evidence of stationarity: the next
    // iteration retries it with a lower step range, so keep going.
    if (all_accepted && rel_change < cfg.tol)
      ++consecutive_small;
    else
      consecutive_small = 0;
    if (consecutive_small >= 3) {
      report.converged = true;
      break;
    }
  }

  // Post-hoc sparsification; pruned components keep their slot at weight zero.
  for (int mode = 1; mode <= 3; ++mode)
    model.factor(mode) = hard_threshold(model.factor(mode), cfg.hard_threshold_tau);
  for (Index r = 0; r < model.rank(); ++r) {
    bool dead = false;
    for (int mode = 1; mode <= 3; ++mode)
      if (model.factor(mode).col(r).sum() == 0.0) dead = true;
    if (dead) {
      model.weights[r] = 0.0;
      for (int mode = 1; mode <= 3; ++mode) model.factor(mode).col(r).setZero();
      report.degenerate_components.push_back(r);
    }
  }

  report.model = std::move(model);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

inline void check_link_dims(const SparseCountTensor& x, const CannotLinkMatrix& links,
                            const SolverConfig& cfg) {
  if (cfg.hyper.cannot_link_weight > 0.0 &&
      (links.rows() != x.dim(2) || links.cols() != x.dim(3)))
    throw validation_error("fit: link matrix dimensions do not match the tensor");
}

}  // namespace detail

/// Alternating projected gradient descent on the constrained model. Per outer
/// iteration, each factor mode takes gradient steps in the weight-absorbed
/// parameterization (columns scaled by their weights), each stepped column is
/// split back into a simplex column and a recovered weight, then the weight
/// vector and the bias take their own projected steps. Every step passes an
/// Armijo test on the full objective, so the recorded trace never increases.
inline FitReport fit(const SparseCountTensor& x, const CannotLinkMatrix& links,
                     const SolverConfig& cfg) {
  cfg.validate();
  detail::check_link_dims(x, links, cfg);
  return detail::fit_from(x, links, cfg, initialize(x, cfg));
}

/// Same solve started from a caller-supplied feasible model, for continuation
/// sweeps over a penalty weight and for refining an earlier fit.
inline FitReport fit(const SparseCountTensor& x, const CannotLinkMatrix& links,
                     const SolverConfig& cfg, const KruskalModel& init) {
  cfg.validate();
  detail::check_link_dims(x, links, cfg);
  init.validate();
  if (init.rank() != cfg.rank)
    throw validation_error("fit: initial model rank does not match the config");
  const auto d = init.dims();
  if (d[0] != x.dim(1) || d[1] != x.dim(2) || d[2] != x.dim(3))
    throw validation_error("fit: initial model dimensions do not match the tensor");
  if (cfg.bias_enabled != init.bias.has_value())
    throw validation_error("fit: initial model bias does not match bias_enabled");
  return detail::fit_from(x, links, cfg, init);
}

}  // namespace cplink
