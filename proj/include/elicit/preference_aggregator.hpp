#pragma once

// Elicited rankings become pairwise constraints w[higher] - w[lower] >= margin,
// and the worker model is refitted as an inequality-constrained least-squares
// problem solved by a primal active-set method.

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <utility>
#include <vector>

#include "elicit/worker_model.hpp"

namespace elicit {

inline constexpr double kDefaultMargin = 1e-6;

struct PreferenceConstraint {
  Index higher = 0;
  Index lower = 0;
  double margin = kDefaultMargin;

  friend bool operator==(const PreferenceConstraint&, const PreferenceConstraint&) = default;
};

enum class HistoryMode { full, recent };

/// Pairs (ranking[i] > ranking[j]) for every i < j.
inline std::vector<PreferenceConstraint> ranking_to_constraints(const std::vector<Index>& ranking,
                                                                double margin = kDefaultMargin) {
  if (!(margin >= 0.0)) throw ValidationError("ranking: margin must be nonnegative");
  std::vector<Index> sorted = ranking;
  std::sort(sorted.begin(), sorted.end());
  if (auto dup = std::adjacent_find(sorted.begin(), sorted.end()); dup != sorted.end()) {
    throw ValidationError("ranking: factor " + std::to_string(*dup) + " appears more than once");
  }
  std::vector<PreferenceConstraint> out;
  out.reserve(ranking.size() * (ranking.size() > 0 ? ranking.size() - 1 : 0) / 2);
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    for (std::size_t j = i + 1; j < ranking.size(); ++j) out.push_back({ranking[i], ranking[j], margin});
  }
  return out;
}

/// A directed cycle higher -> lower -> ... -> higher among the constraints, if any.
inline std::vector<Index> find_cycle(const std::vector<PreferenceConstraint>& constraints) {
  std::map<Index, std::vector<Index>> edges;
  for (const auto& c : constraints) edges[c.higher].push_back(c.lower);
  std::map<Index, int> state;  // 0 new, 1 on stack, 2 done
  std::vector<Index> stack;
  std::vector<Index> cycle;

  auto visit = [&](auto&& self, Index node) -> bool {
    state[node] = 1;
    stack.push_back(node);
    if (auto it = edges.find(node); it != edges.end()) {
      for (Index next : it->second) {
        if (state[next] == 1) {
          auto from = std::find(stack.begin(), stack.end(), next);
          cycle.assign(from, stack.end());
          cycle.push_back(next);
          return true;
        }
        if (state[next] == 0 && self(self, next)) return true;
      }
    }
    stack.pop_back();
    state[node] = 2;
    return false;
  };
  for (const auto& [node, _] : edges) {
    if (state[node] == 0 && visit(visit, node)) return cycle;
  }
  return {};
}

inline std::string describe_cycle(const std::vector<Index>& cycle, const std::vector<std::string>& names = {}) {
  std::ostringstream out;
  for (std::size_t i = 0; i < cycle.size(); ++i) {
    if (i > 0) out << " > ";
    const auto idx = static_cast<std::size_t>(cycle[i]);
    if (idx < names.size()) {
      out << names[idx];
    } else {
      out << cycle[i];
    }
  }
  return out.str();
}

/// Elicited constraints with the iteration that produced them.
class ConstraintStore {
 public:
  struct Entry {
    PreferenceConstraint constraint;
    std::size_t iteration = 0;
  };

  explicit ConstraintStore(HistoryMode mode = HistoryMode::full) : mode_(mode) {}

  HistoryMode mode() const { return mode_; }
  const std::vector<Entry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

  std::vector<PreferenceConstraint> constraints() const {
    std::vector<PreferenceConstraint> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.constraint);
    return out;
  }

  /// Full mode keeps history, replacing any stored constraint on the same
  /// factor pair and then discarding the oldest constraints on any cycle the
  /// new ones close. Recent mode keeps exactly the new constraints.
  ConstraintStore merged(const std::vector<PreferenceConstraint>& incoming, std::size_t iteration) const {
    if (!find_cycle(incoming).empty()) {
      throw ValidationError("merge_constraints: new constraints are contradictory: " + describe_cycle(find_cycle(incoming)));
    }
    ConstraintStore out(mode_);
    if (mode_ == HistoryMode::full) {
      for (const auto& e : entries_) {
        const bool replaced = std::any_of(incoming.begin(), incoming.end(), [&](const PreferenceConstraint& c) {
          return (c.higher == e.constraint.higher && c.lower == e.constraint.lower) ||
                 (c.higher == e.constraint.lower && c.lower == e.constraint.higher);
        });
        if (!replaced) out.entries_.push_back(e);
      }
    }
    std::size_t fresh_from = out.entries_.size();
    for (const auto& c : incoming) out.entries_.push_back({c, iteration});

    for (auto cycle = find_cycle(out.constraints()); !cycle.empty(); cycle = find_cycle(out.constraints())) {
      std::size_t victim = out.entries_.size();
      for (std::size_t i = 0; i < fresh_from && i < out.entries_.size(); ++i) {
        const auto& c = out.entries_[i].constraint;
        for (std::size_t s = 0; s + 1 < cycle.size(); ++s) {
          if (c.higher == cycle[s] && c.lower == cycle[s + 1]) {
            victim = i;
            break;
          }
        }
        if (victim != out.entries_.size()) break;
      }
      if (victim == out.entries_.size()) break;  // unreachable: new constraints are acyclic
      out.entries_.erase(out.entries_.begin() + static_cast<std::ptrdiff_t>(victim));
      --fresh_from;
    }
    return out;
  }

 private:
  HistoryMode mode_;
  std::vector<Entry> entries_;
};

inline ConstraintStore merge_constraints(const ConstraintStore& store, const std::vector<PreferenceConstraint>& incoming,
                                         std::size_t iteration) {
  return store.merged(incoming, iteration);
}

struct ConstrainedSolverOptions {
  std::size_t max_iterations = 10'000;
  double tolerance = 1e-8;
};

/// Minimizer of ||y - Xw||² + alpha ||w||² under the constraints, with the
/// Lagrange multipliers of that objective (one per constraint).
struct ConstrainedSolution {
  Vector weights;
  Vector multipliers;
  std::size_t iterations = 0;
};

namespace detail {

inline void validate_constraints(const std::vector<PreferenceConstraint>& constraints, Index m) {
  for (const auto& c : constraints) {
    if (c.higher < 0 || c.higher >= m || c.lower < 0 || c.lower >= m) {
      throw ValidationError("constraint " + std::to_string(c.higher) + " > " + std::to_string(c.lower) +
                            " refers to a factor outside [0, " + std::to_string(m) + ")");
    }
    if (c.higher == c.lower) throw ValidationError("constraint compares factor " + std::to_string(c.higher) + " with itself");
    if (!(c.margin >= 0.0) || !std::isfinite(c.margin)) throw ValidationError("constraint margin must be finite and nonnegative");
  }
}

/// A point satisfying every constraint of an acyclic set: longest-path levels
/// from the sinks of the orientation graph.
inline Vector feasible_point(const std::vector<PreferenceConstraint>& constraints, Index m) {
  Vector w = Vector::Zero(m);
  // Bellman-Ford style relaxation; acyclic so it settles in at most m passes.
  for (Index pass = 0; pass <= m; ++pass) {
    bool changed = false;
    for (const auto& c : constraints) {
      if (w[c.higher] < w[c.lower] + c.margin) {
        w[c.higher] = w[c.lower] + c.margin;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return w;
}

inline double slack(const PreferenceConstraint& c, const Vector& w) { return w[c.higher] - w[c.lower] - c.margin; }

}  // namespace detail

/// Primal active-set solve of min ½wᵀHw - gᵀw s.t. w[h] - w[l] >= margin.
/// H = XᵀX + alpha I, g = Xᵀy; multipliers are reported for the unscaled
/// least-squares objective.
inline ConstrainedSolution solve_constrained_least_squares(const Matrix& hessian, const Vector& linear,
                                                           const std::vector<PreferenceConstraint>& constraints,
                                                           ConstrainedSolverOptions options = {}) {
  const Index m = hessian.rows();
  detail::validate_constraints(constraints, m);
  if (auto cycle = find_cycle(constraints); !cycle.empty()) {
    throw InfeasibleError("preference constraints contain a cycle: " + describe_cycle(cycle));
  }
  const auto c_count = static_cast<Index>(constraints.size());
  ConstrainedSolution out;
  out.multipliers = Vector::Zero(c_count);

  // Unconstrained optimum first: if it is feasible it is the answer.
  Eigen::LLT<Matrix> llt(hessian);
  bool definite = llt.info() == Eigen::Success && (llt.matrixL().toDenseMatrix().diagonal().array() > 0).all();
  if (definite) {
    Vector u = llt.solve(linear);
    if (std::all_of(constraints.begin(), constraints.end(),
                    [&](const PreferenceConstraint& c) { return detail::slack(c, u) >= 0.0; })) {
      out.weights = std::move(u);
      return out;
    }
  }

  Vector w = detail::feasible_point(constraints, m);
  std::vector<Index> working;
  std::vector<char> in_working(static_cast<std::size_t>(c_count), 0);
  const double scale = 1.0 + hessian.diagonal().cwiseAbs().maxCoeff() + linear.cwiseAbs().maxCoeff();

  for (std::size_t iter = 1; iter <= options.max_iterations; ++iter) {
    out.iterations = iter;
    const auto wk = static_cast<Index>(working.size());
    Matrix kkt = Matrix::Zero(m + wk, m + wk);
    kkt.topLeftCorner(m, m) = hessian;
    for (Index i = 0; i < wk; ++i) {
      const auto& c = constraints[static_cast<std::size_t>(working[static_cast<std::size_t>(i)])];
      kkt(m + i, c.higher) = 1.0;
      kkt(m + i, c.lower) = -1.0;
      kkt(c.higher, m + i) = -1.0;
      kkt(c.lower, m + i) = 1.0;
    }
    Vector rhs = Vector::Zero(m + wk);
    rhs.head(m) = linear - hessian * w;
    Vector sol = kkt.completeOrthogonalDecomposition().solve(rhs);
    Vector step = sol.head(m);
    Vector lambda = sol.tail(wk);

    if (step.lpNorm<Eigen::Infinity>() <= 1e-13 * (1.0 + w.lpNorm<Eigen::Infinity>())) {
      Index most_negative = -1;
      double worst = -options.tolerance * scale;
      for (Index i = 0; i < wk; ++i) {
        if (lambda[i] < worst) {
          worst = lambda[i];
          most_negative = i;
        }
      }
      if (most_negative < 0) {
        for (Index i = 0; i < wk; ++i) {
          out.multipliers[working[static_cast<std::size_t>(i)]] = 2.0 * std::max(lambda[i], 0.0);
        }
        out.weights = std::move(w);
        return out;
      }
      in_working[static_cast<std::size_t>(working[static_cast<std::size_t>(most_negative)])] = 0;
      working.erase(working.begin() + most_negative);
      continue;
    }

    double t = 1.0;
    Index blocking = -1;
    const double flat = 1e-14 * step.lpNorm<Eigen::Infinity>();
    for (Index i = 0; i < c_count; ++i) {
      if (in_working[static_cast<std::size_t>(i)]) continue;
      const auto& c = constraints[static_cast<std::size_t>(i)];
      const double rate = step[c.higher] - step[c.lower];
      if (rate < -flat) {
        const double reach = std::max(detail::slack(c, w), 0.0) / -rate;
        if (reach < t) {
          t = reach;
          blocking = i;
        }
      }
    }
    w += t * step;
    if (blocking >= 0) {
      // Land exactly on the blocking constraint.
      const auto& c = constraints[static_cast<std::size_t>(blocking)];
      const double gap = detail::slack(c, w);
      if (gap < 0.0) w[c.higher] -= gap;
      working.push_back(blocking);
      in_working[static_cast<std::size_t>(blocking)] = 1;
    }
  }
  std::ostringstream msg;
  msg << "constrained least squares did not converge in " << options.max_iterations << " iterations; "
      << "working set size " << working.size();
  throw ConvergenceError(msg.str());
}

/// Refit of the worker model under hard preference constraints.
inline WorkerModel constrained_fit(const LabeledTasks& data, double alpha,
                                   const std::vector<PreferenceConstraint>& constraints,
                                   std::vector<std::string> factor_names = {}, ConstrainedSolverOptions options = {}) {
  if (data.empty()) throw DomainError("constrained_fit: no tasks");
  if (!(alpha >= 0.0)) throw DomainError("constrained_fit: alpha must be nonnegative");
  data.validate();
  const Index m = data.factor_count();
  if (factor_names.empty()) factor_names = default_factor_names(m);
  if (static_cast<Index>(factor_names.size()) != m) throw DimensionError("constrained_fit: factor name count mismatch");
  detail::validate_constraints(constraints, m);
  if (auto cycle = find_cycle(constraints); !cycle.empty()) {
    throw InfeasibleError("preference constraints contain a cycle: " + describe_cycle(cycle, factor_names));
  }
  // Inactive constraints leave the ridge solution untouched.
  try {
    Vector unconstrained = ridge_solve(data.factors, data.outcomes, alpha);
    if (std::all_of(constraints.begin(), constraints.end(),
                    [&](const PreferenceConstraint& c) { return detail::slack(c, unconstrained) >= 0.0; })) {
      return WorkerModel{std::move(unconstrained), alpha, std::move(factor_names)};
    }
  } catch (const SingularityError&) {
    if (constraints.empty()) throw;
  }
  Matrix h = gram(data.factors);
  h.diagonal().array() += alpha;
  const Vector g = data.factors.transpose() * data.outcomes;
  ConstrainedSolution solution = solve_constrained_least_squares(h, g, constraints, options);
  return WorkerModel{std::move(solution.weights), alpha, std::move(factor_names)};
}

/// Least-squares objective ||y - Xw||² + alpha ||w||².
inline double ridge_objective(const LabeledTasks& data, double alpha, const Vector& w) {
  return (data.outcomes - data.factors * w).squaredNorm() + alpha * w.squaredNorm();
}

}  // namespace elicit
