#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "elicit/linalg.hpp"

namespace elicit {

/// Task-factor rows with their observed (or soft) outcomes.
struct LabeledTasks {
  Matrix factors;
  Vector outcomes;

  Index size() const { return factors.rows(); }
  Index factor_count() const { return factors.cols(); }
  bool empty() const { return factors.rows() == 0; }

  /// Throws on length mismatch or outcomes outside [0, 1].
  void validate() const {
    if (outcomes.size() != factors.rows()) {
      throw DimensionError("labeled tasks: " + std::to_string(outcomes.size()) + " outcomes for " +
                           std::to_string(factors.rows()) + " tasks");
    }
    detail::require_finite(factors, "labeled tasks: factors");
    for (Index i = 0; i < outcomes.size(); ++i) {
      if (!(outcomes[i] >= 0.0 && outcomes[i] <= 1.0)) {
        throw DomainError("labeled tasks: outcome " + std::to_string(outcomes[i]) + " at row " +
                          std::to_string(i) + " is outside [0, 1]");
      }
    }
  }

  /// Rows selected by index, in the given order.
  LabeledTasks subset(const std::vector<Index>& rows) const {
    LabeledTasks out{Matrix(static_cast<Index>(rows.size()), factors.cols()),
                     Vector(static_cast<Index>(rows.size()))};
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.factors.row(static_cast<Index>(i)) = factors.row(rows[i]);
      out.outcomes[static_cast<Index>(i)] = outcomes[rows[i]];
    }
    return out;
  }

  void append(const LabeledTasks& more) {
    if (empty()) {
      *this = more;
      return;
    }
    if (more.factor_count() != factor_count()) throw DimensionError("labeled tasks: factor count mismatch");
    Matrix f(factors.rows() + more.factors.rows(), factors.cols());
    f << factors, more.factors;
    Vector o(outcomes.size() + more.outcomes.size());
    o << outcomes, more.outcomes;
    factors = std::move(f);
    outcomes = std::move(o);
  }
};

/// Linear map from task factors to predicted outcome: the worker's preference vector.
struct WorkerModel {
  Vector weights;
  double alpha = 0.0;
  std::vector<std::string> factor_names;

  Index factor_count() const { return weights.size(); }

  void validate() const {
    if (static_cast<std::size_t>(weights.size()) != factor_names.size()) {
      throw DimensionError("worker model: " + std::to_string(weights.size()) + " weights for " +
                           std::to_string(factor_names.size()) + " factor names");
    }
    if (!(alpha >= 0.0)) throw DomainError("worker model: alpha must be nonnegative");
    detail::require_finite(weights, "worker model: weights");
  }
};

/// f0, f1, ... used when the caller supplies no names.
inline std::vector<std::string> default_factor_names(Index m) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) names.push_back("f" + std::to_string(i));
  return names;
}

inline WorkerModel fit(const LabeledTasks& data, double alpha, std::vector<std::string> factor_names = {}) {
  if (data.empty()) throw DomainError("fit: no tasks");
  data.validate();
  if (factor_names.empty()) factor_names = default_factor_names(data.factor_count());
  if (static_cast<Index>(factor_names.size()) != data.factor_count()) {
    throw DimensionError("fit: factor name count does not match factor count");
  }
  return WorkerModel{ridge_solve(data.factors, data.outcomes, alpha), alpha, std::move(factor_names)};
}

/// Unclamped linear prediction.
inline double predict(const WorkerModel& model, const Vector& task_factors) {
  if (task_factors.size() != model.weights.size()) {
    throw DimensionError("predict: task has " + std::to_string(task_factors.size()) + " factors, model has " +
                         std::to_string(model.weights.size()));
  }
  return model.weights.dot(task_factors);
}

inline Vector predict_all(const WorkerModel& model, const Matrix& tasks) {
  if (tasks.cols() != model.weights.size()) throw DimensionError("predict: factor count mismatch");
  return tasks * model.weights;
}

inline double mse(const Vector& weights, const LabeledTasks& data) {
  if (data.empty()) throw DomainError("mse: no tasks");
  if (data.factors.cols() != weights.size() || data.outcomes.size() != data.factors.rows()) {
    throw DimensionError("mse: dimension mismatch");
  }
  return (data.outcomes - data.factors * weights).squaredNorm() / static_cast<double>(data.size());
}

inline double mse(const WorkerModel& model, const LabeledTasks& data) { return mse(model.weights, data); }

/// {0, 1e-3, 1e-2, 1e-1, 1, 10}.
inline std::vector<double> default_alpha_grid() { return {0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0}; }

/// Generalized cross-validation score; nullopt when alpha interpolates the
/// data (df = n) or the normal matrix is singular at alpha = 0.
inline std::optional<double> gcv_score(const LabeledTasks& data, double alpha) {
  const double n = static_cast<double>(data.size());
  const Matrix g = gram(data.factors);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(g, Eigen::EigenvaluesOnly);
  const double cut = kSingularityTolerance * std::max(g.diagonal().maxCoeff(), 0.0);
  double df = 0.0;
  for (double lambda : eig.eigenvalues()) {
    if (alpha > 0.0) {
      df += std::max(lambda, 0.0) / (std::max(lambda, 0.0) + alpha);
    } else if (lambda > cut) {
      df += 1.0;
    }
  }
  if (n - df <= 1e-9 * n) return std::nullopt;
  Vector w;
  try {
    w = ridge_solve(data.factors, data.outcomes, alpha);
  } catch (const SingularityError&) {
    return std::nullopt;
  }
  const double rss = (data.outcomes - data.factors * w).squaredNorm();
  const double denom = 1.0 - df / n;
  return (rss / n) / (denom * denom);
}

/// Grid value with the smallest GCV score; ties go to the larger alpha.
inline double select_alpha_gcv(const LabeledTasks& data, const std::vector<double>& grid) {
  if (grid.empty()) throw DomainError("select_alpha_gcv: empty grid");
  if (data.empty()) throw DomainError("select_alpha_gcv: no tasks");
  for (double a : grid) {
    if (!(a >= 0.0)) throw DomainError("select_alpha_gcv: grid values must be nonnegative");
  }
  if (grid.size() == 1) return grid.front();
  data.validate();
  std::optional<double> best_alpha;
  double best_score = 0.0;
  for (double a : grid) {
    auto score = gcv_score(data, a);
    if (!score) continue;
    if (!best_alpha || *score < best_score || (*score == best_score && a > *best_alpha)) {
      best_alpha = a;
      best_score = *score;
    }
  }
  return best_alpha ? *best_alpha : *std::max_element(grid.begin(), grid.end());
}

}  // namespace elicit
