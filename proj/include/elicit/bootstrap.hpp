#pragma once

// Cold-start task selection. A candidate set of b tasks is scored by the
// expected held-out reconstruction error over the 2^b outcome combinations
// ("branches") the worker could produce on it.
//
// For a fixed candidate set the fitted weights are linear in the branch
// outcomes y, w(y) = A y with A = (X_cᵀX_c + aI)⁻¹X_cᵀ, so every branch error
// is the quadratic (s - 2cᵀy + yᵀQy) / n_h over the held-out tasks. Exact and
// Monte-Carlo evaluation only differ in how y is drawn.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <variant>
#include <vector>

#include "elicit/outcome_probability.hpp"
#include "elicit/random.hpp"
#include "elicit/worker_model.hpp"

namespace elicit {

struct ExactEvaluation {};

struct MonteCarloEvaluation {
  std::size_t samples = 0;  // 0 selects default_monte_carlo_samples(b)
  std::uint64_t seed = 0;
};

using EvaluationMode = std::variant<ExactEvaluation, MonteCarloEvaluation>;

/// Largest tree enumerated exactly.
inline constexpr std::size_t kMaxExactBudget = 20;

/// Smallest ridge strength used for fits on fewer tasks than factors.
inline constexpr double kUnderdeterminedAlpha = 1e-6;

/// max(64, ceil(0.1 * 2^b)), capped at 4096.
inline std::size_t default_monte_carlo_samples(std::size_t b) {
  if (b >= 16) return 4096;
  const auto tenth = static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(std::size_t{1} << b)));
  return std::clamp<std::size_t>(tenth, 64, 4096);
}

inline std::size_t monte_carlo_samples(const MonteCarloEvaluation& mode, std::size_t b) {
  return mode.samples > 0 ? mode.samples : default_monte_carlo_samples(b);
}

/// Ridge strength for a model fitted on `task_count` tasks with `factor_count` factors.
inline double effective_alpha(double alpha, Index task_count, Index factor_count) {
  return task_count < factor_count ? std::max(alpha, kUnderdeterminedAlpha) : alpha;
}

/// One leaf of the bootstrap tree.
struct BranchAssignment {
  std::vector<std::uint8_t> outcomes;
  double probability = 1.0;
};

/// Branch `mask` (bit j = outcome of task j) under independent Bernoulli outcomes.
inline BranchAssignment branch_assignment(std::uint64_t mask, const std::vector<double>& success) {
  BranchAssignment branch;
  branch.outcomes.resize(success.size());
  for (std::size_t j = 0; j < success.size(); ++j) {
    const bool hit = (mask >> j) & 1U;
    branch.outcomes[j] = hit ? 1 : 0;
    branch.probability *= hit ? success[j] : 1.0 - success[j];
  }
  return branch;
}

/// Every leaf of the tree over the given task success probabilities.
inline std::vector<BranchAssignment> bootstrap_tree(const std::vector<double>& success) {
  if (success.size() > kMaxExactBudget) throw SizeError("bootstrap tree with more than 20 tasks; use monte-carlo");
  std::vector<BranchAssignment> leaves;
  leaves.reserve(std::size_t{1} << success.size());
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << success.size()); ++mask) {
    leaves.push_back(branch_assignment(mask, success));
  }
  return leaves;
}

struct BootstrapPlan {
  std::vector<Index> task_ids;
  double expected_error = 0.0;
  EvaluationMode mode = ExactEvaluation{};
  /// Objective after each greedy round (empty for random plans).
  std::vector<double> round_errors;
};

struct ErrorEstimate {
  double value = 0.0;
  /// Standard error of the Monte-Carlo mean; 0 for exact evaluation.
  double standard_error = 0.0;
  std::size_t branches = 0;
};

/// Quadratic form giving the held-out error of every branch of one candidate set.
struct BranchErrorForm {
  double squared_labels = 0.0;  // s
  Vector linear;                // c
  Matrix quadratic;             // Q
  Index holdout_count = 0;
  bool singular = false;

  double error(const Vector& y) const {
    if (holdout_count == 0) return 0.0;
    return (squared_labels - 2.0 * linear.dot(y) + y.dot(quadratic * y)) / static_cast<double>(holdout_count);
  }

  /// Error averaged over branches with first moment `mean` and second moment `second`.
  double expected(const Vector& mean, const Matrix& second) const {
    if (holdout_count == 0) return 0.0;
    return (squared_labels - 2.0 * linear.dot(mean) + quadratic.cwiseProduct(second).sum()) /
           static_cast<double>(holdout_count);
  }
};

/// Shared state for scoring candidate sets drawn from one task pool.
class BootstrapContext {
 public:
  BootstrapContext(Matrix tasks, const OutcomeProbabilityModel& prob_model, double alpha)
      : tasks_(std::move(tasks)), alpha_(alpha) {
    if (!(alpha >= 0.0)) throw DomainError("bootstrap: alpha must be nonnegative");
    if (tasks_.cols() == 0) throw DimensionError("bootstrap: tasks have no factors");
    detail::require_finite(tasks_, "bootstrap: tasks");
    success_ = prob_model.success_probabilities(tasks_);
    gram_all_ = tasks_.rows() > 0 ? gram(tasks_) : Matrix::Zero(tasks_.cols(), tasks_.cols());
    cross_all_ = tasks_.transpose() * success_;
    squared_all_ = success_.squaredNorm();
  }

  const Matrix& tasks() const { return tasks_; }
  const Vector& success() const { return success_; }
  double alpha() const { return alpha_; }
  Index task_count() const { return tasks_.rows(); }
  Index factor_count() const { return tasks_.cols(); }

  void check_candidate(const std::vector<Index>& candidate) const {
    std::vector<Index> sorted = candidate;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw DomainError("bootstrap: candidate tasks must be distinct");
    }
    for (Index id : candidate) {
      if (id < 0 || id >= task_count()) throw DomainError("bootstrap: task id " + std::to_string(id) + " out of range");
    }
  }

  /// Direct construction of the branch error form for one candidate set.
  BranchErrorForm form(const std::vector<Index>& candidate) const {
    const Index b = static_cast<Index>(candidate.size());
    const Index m = factor_count();
    Matrix xc(b, m);
    Vector qc(b);
    for (Index j = 0; j < b; ++j) {
      xc.row(j) = tasks_.row(candidate[static_cast<std::size_t>(j)]);
      qc[j] = success_[candidate[static_cast<std::size_t>(j)]];
    }
    Matrix gc = Matrix::Zero(m, m);
    if (b > 0) gc = gram(xc);
    const double a = effective_alpha(alpha_, b, m);
    BranchErrorForm f;
    f.holdout_count = task_count() - b;
    Matrix weights_map;  // m x b
    if (b < m && a > 0.0) {
      // Fewer tasks than factors: Xᵀ(XXᵀ + aI)⁻¹ is the same map with a b x b solve.
      Matrix outer = xc * xc.transpose();
      outer.diagonal().array() += a;
      weights_map = xc.transpose() * Matrix(outer.llt().solve(Matrix(Matrix::Identity(b, b))));
    } else {
      Matrix reg = gc;
      reg.diagonal().array() += a;
      auto lower = cholesky_lower(reg, singularity_threshold(gc, a));
      if (!lower) {
        f.singular = true;
        return f;
      }
      Matrix y = lower->triangularView<Eigen::Lower>().solve(Matrix(xc.transpose()));
      weights_map = lower->transpose().triangularView<Eigen::Upper>().solve(y);
    }
    const Matrix gram_holdout = gram_all_ - gc;
    const Vector cross_holdout = cross_all_ - xc.transpose() * qc;
    f.squared_labels = squared_all_ - qc.squaredNorm();
    f.linear = weights_map.transpose() * cross_holdout;
    f.quadratic = weights_map.transpose() * gram_holdout * weights_map;
    return f;
  }

  /// Held-out error of fixed weights against the soft labels of tasks outside `candidate`.
  double holdout_error(const Vector& weights, const std::vector<Index>& candidate) const {
    const Index n_h = task_count() - static_cast<Index>(candidate.size());
    if (n_h == 0) return 0.0;
    Vector residual = success_ - tasks_ * weights;
    double total = residual.squaredNorm();
    for (Index id : candidate) total -= residual[id] * residual[id];
    return std::max(total, 0.0) / static_cast<double>(n_h);
  }

  /// Sampled outcome of task `id` in Monte-Carlo branch `sample`.
  bool sampled_outcome(Index id, std::size_t sample, std::uint64_t seed) const {
    return counter_uniform(seed, static_cast<std::uint64_t>(id), sample) < success_[id];
  }

 private:
  Matrix tasks_;
  double alpha_;
  Vector success_;
  Matrix gram_all_;
  Vector cross_all_;
  double squared_all_ = 0.0;

  friend class GreedyBootstrapper;
};

inline ErrorEstimate expected_reconstruction_error(const std::vector<Index>& candidate, const BootstrapContext& context,
                                                   const EvaluationMode& mode) {
  if (candidate.empty()) throw DomainError("expected_reconstruction_error: empty candidate");
  context.check_candidate(candidate);
  const std::size_t b = candidate.size();
  if (std::holds_alternative<ExactEvaluation>(mode) && b > kMaxExactBudget) {
    throw SizeError("exact bootstrap evaluation is limited to b <= 20 (got b = " + std::to_string(b) +
                    "); use monte-carlo evaluation");
  }
  const BranchErrorForm f = context.form(candidate);
  ErrorEstimate out;
  if (f.singular) {
    out.value = kInfiniteObjective;
    return out;
  }

  if (std::holds_alternative<ExactEvaluation>(mode)) {
    // Gray-code walk over the 2^b leaves keeps the quadratic update O(b).
    std::vector<double> p(b);
    for (std::size_t j = 0; j < b; ++j) p[j] = context.success()[candidate[j]];
    Vector y = Vector::Zero(static_cast<Index>(b));
    Vector qy = Vector::Zero(static_cast<Index>(b));
    double varying = 0.0;  // -2cᵀy + yᵀQy
    double total = 0.0;
    const std::uint64_t leaves = std::uint64_t{1} << b;
    const double scale = f.holdout_count > 0 ? 1.0 / static_cast<double>(f.holdout_count) : 0.0;
    for (std::uint64_t step = 0; step < leaves; ++step) {
      if (step > 0) {
        const auto j = static_cast<Index>(std::countr_zero(step));
        if (y[j] == 0.0) {
          varying += -2.0 * f.linear[j] + 2.0 * qy[j] + f.quadratic(j, j);
          qy += f.quadratic.col(j);
          y[j] = 1.0;
        } else {
          qy -= f.quadratic.col(j);
          varying += 2.0 * f.linear[j] - 2.0 * qy[j] - f.quadratic(j, j);
          y[j] = 0.0;
        }
      }
      double probability = 1.0;
      for (std::size_t j = 0; j < b; ++j) probability *= y[static_cast<Index>(j)] != 0.0 ? p[j] : 1.0 - p[j];
      total += probability * (f.squared_labels + varying) * scale;
    }
    out.value = total;
    out.branches = static_cast<std::size_t>(leaves);
    return out;
  }

  const auto& mc = std::get<MonteCarloEvaluation>(mode);
  const std::size_t samples = monte_carlo_samples(mc, b);
  double sum = 0.0;
  double sum_sq = 0.0;
  Vector y(static_cast<Index>(b));
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t j = 0; j < b; ++j) y[static_cast<Index>(j)] = context.sampled_outcome(candidate[j], s, mc.seed) ? 1.0 : 0.0;
    const double e = f.error(y);
    sum += e;
    sum_sq += e * e;
  }
  const double n = static_cast<double>(samples);
  out.value = sum / n;
  const double variance = samples > 1 ? std::max(sum_sq - n * out.value * out.value, 0.0) / (n - 1.0) : 0.0;
  out.standard_error = std::sqrt(variance / n);
  out.branches = samples;
  return out;
}

inline ErrorEstimate expected_reconstruction_error(const std::vector<Index>& candidate, const Matrix& all_tasks,
                                                   const OutcomeProbabilityModel& prob_model, double alpha,
                                                   const EvaluationMode& mode) {
  return expected_reconstruction_error(candidate, BootstrapContext(all_tasks, prob_model, alpha), mode);
}

/// Uniform preference vector 1/m.
inline WorkerModel uniform_model(Index m, std::vector<std::string> factor_names = {}) {
  if (m < 1) throw DomainError("uniform_model: need at least one factor");
  if (factor_names.empty()) factor_names = default_factor_names(m);
  if (static_cast<Index>(factor_names.size()) != m) throw DimensionError("uniform_model: factor name count mismatch");
  return WorkerModel{Vector::Constant(m, 1.0 / static_cast<double>(m)), 0.0, std::move(factor_names)};
}

/// Greedy forward selection: each round appends the task whose addition gives
/// the lowest expected reconstruction error. Candidates of a round are scored
/// with a rank-one update of the previous round's normal matrix.
class GreedyBootstrapper {
 public:
  GreedyBootstrapper(const BootstrapContext& context, EvaluationMode mode) : ctx_(context), mode_(mode) {}

  BootstrapPlan run(std::size_t budget) {
    const auto n = static_cast<std::size_t>(ctx_.task_count());
    if (budget > n) {
      throw DomainError("greedy_bootstrap: budget " + std::to_string(budget) + " exceeds " + std::to_string(n) + " tasks");
    }
    BootstrapPlan plan;
    plan.mode = mode_;
    if (budget == 0) {
      plan.expected_error = ctx_.holdout_error(uniform_model(ctx_.factor_count()).weights, {});
      return plan;
    }
    if (auto* mc = std::get_if<MonteCarloEvaluation>(&mode_)) prepare_samples(*mc, budget);

    std::vector<char> taken(n, 0);
    for (std::size_t round = 0; round < budget; ++round) {
      const std::vector<double> scores = score_round(plan.task_ids, taken);
      Index best = -1;
      double best_score = kInfiniteObjective;
      for (std::size_t t = 0; t < n; ++t) {
        if (taken[t]) continue;
        if (best < 0 || improves_on(scores[t], best_score)) {
          best = static_cast<Index>(t);
          best_score = scores[t];
        }
      }
      if (is_infinite_objective(best_score)) {
        throw SingularityError("greedy_bootstrap: every candidate leaves a singular normal matrix; use alpha > 0",
                               0, static_cast<long>(ctx_.factor_count()));
      }
      taken[static_cast<std::size_t>(best)] = 1;
      plan.task_ids.push_back(best);
      plan.round_errors.push_back(best_score);
    }
    plan.expected_error = plan.round_errors.back();
    return plan;
  }

 private:
  void prepare_samples(const MonteCarloEvaluation& mc, std::size_t budget) {
    std::size_t most = mc.samples;
    if (most == 0) {
      for (std::size_t b = 1; b <= budget; ++b) most = std::max(most, default_monte_carlo_samples(b));
    }
    words_ = (most + 63) / 64;
    const auto n = static_cast<std::size_t>(ctx_.task_count());
    bits_.assign(n * words_, 0);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t s = 0; s < most; ++s) {
        if (ctx_.sampled_outcome(static_cast<Index>(t), s, mc.seed)) bits_[t * words_ + s / 64] |= std::uint64_t{1} << (s % 64);
      }
    }
  }

  /// Fraction of the first `samples` branches where both tasks succeed.
  double joint_frequency(std::size_t a, std::size_t b, std::size_t samples) const {
    const std::uint64_t* wa = bits_.data() + a * words_;
    const std::uint64_t* wb = bits_.data() + b * words_;
    std::size_t count = 0;
    const std::size_t full = samples / 64;
    for (std::size_t w = 0; w < full; ++w) count += static_cast<std::size_t>(std::popcount(wa[w] & wb[w]));
    if (samples % 64 != 0) {
      const std::uint64_t mask = (std::uint64_t{1} << (samples % 64)) - 1;
      count += static_cast<std::size_t>(std::popcount(wa[full] & wb[full] & mask));
    }
    return static_cast<double>(count) / static_cast<double>(samples);
  }

  /// Moments of the outcome vector for `ids`: exact Bernoulli moments or
  /// sample moments over the first `samples` branches.
  void moments(const std::vector<Index>& ids, std::size_t samples, Vector& mean, Matrix& second) const {
    const auto k = static_cast<Index>(ids.size());
    mean.resize(k);
    second.resize(k, k);
    const bool exact = std::holds_alternative<ExactEvaluation>(mode_);
    for (Index i = 0; i < k; ++i) {
      const auto a = static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]);
      mean[i] = exact ? ctx_.success_[ids[static_cast<std::size_t>(i)]] : joint_frequency(a, a, samples);
      for (Index j = 0; j <= i; ++j) {
        const auto bj = static_cast<std::size_t>(ids[static_cast<std::size_t>(j)]);
        double v;
        if (i == j) {
          v = mean[i];
        } else if (exact) {
          v = ctx_.success_[static_cast<Index>(a)] * ctx_.success_[static_cast<Index>(bj)];
        } else {
          v = joint_frequency(a, bj, samples);
        }
        second(i, j) = second(j, i) = v;
      }
    }
  }

  std::vector<double> score_round(const std::vector<Index>& chosen, const std::vector<char>& taken) {
    const auto n = static_cast<std::size_t>(ctx_.task_count());
    const Index m = ctx_.factor_count();
    const auto bc = static_cast<Index>(chosen.size());
    const Index nb = bc + 1;
    const double a = effective_alpha(ctx_.alpha_, nb, m);
    std::size_t samples = 0;
    if (auto* mc = std::get_if<MonteCarloEvaluation>(&mode_)) samples = monte_carlo_samples(*mc, static_cast<std::size_t>(nb));

    std::vector<double> scores(n, kInfiniteObjective);
    Matrix xc(bc, m);
    Vector qc(bc);
    for (Index j = 0; j < bc; ++j) {
      xc.row(j) = ctx_.tasks_.row(chosen[static_cast<std::size_t>(j)]);
      qc[j] = ctx_.success_[chosen[static_cast<std::size_t>(j)]];
    }
    Matrix gc = bc > 0 ? gram(xc) : Matrix::Zero(m, m);
    Matrix reg = gc;
    reg.diagonal().array() += a;
    auto lower = cholesky_lower(reg, singularity_threshold(gc, a));

    if (!lower) {
      // No usable factorization to update from: score each candidate directly.
      std::vector<Index> trial = chosen;
      trial.push_back(0);
      Vector mean;
      Matrix second;
      for (std::size_t t = 0; t < n; ++t) {
        if (taken[t]) continue;
        trial.back() = static_cast<Index>(t);
        const BranchErrorForm f = ctx_.form(trial);
        if (f.singular) continue;
        moments(trial, samples, mean, second);
        scores[t] = f.expected(mean, second);
      }
      return scores;
    }

    const Matrix m_inv = lower->transpose().triangularView<Eigen::Upper>().solve(
        Matrix(lower->triangularView<Eigen::Lower>().solve(Matrix(Matrix::Identity(m, m)))));
    const Matrix u = m_inv * xc.transpose();  // m x bc
    const Matrix g_h = ctx_.gram_all_ - gc;
    const Vector r_h = ctx_.cross_all_ - xc.transpose() * qc;
    const double s_h = ctx_.squared_all_ - qc.squaredNorm();
    const Index n_h = ctx_.task_count() - bc;
    const Matrix gu = g_h * u;
    const Vector ur = u.transpose() * r_h;

    // Round constants: moments of the already chosen outcomes, and the part of
    // ⟨Q, Ŷ⟩ that does not depend on the candidate.
    Vector mean_c;
    Matrix second_c;
    moments(chosen, samples, mean_c, second_c);
    const double base_quad = bc > 0 ? (u.transpose() * gu).cwiseProduct(second_c).sum() : 0.0;

    Vector mean(nb), d(nb), e(nb), atx(nb), c(nb);
    Vector second_row(nb);
    for (std::size_t t = 0; t < n; ++t) {
      if (taken[t]) continue;
      const auto tid = static_cast<Index>(t);
      const Vector x = ctx_.tasks_.row(tid).transpose();
      const double qt = ctx_.success_[tid];
      const Vector v = m_inv * x;
      const double vx = x.dot(v);
      const double beta = 1.0 + vx;
      const Vector ux = u.transpose() * x;
      const Vector ghv = g_h * v;
      const double vgv = v.dot(ghv);
      const double vr = v.dot(r_h);

      d.head(bc) = ux / beta;
      d[bc] = -1.0 / beta;
      e.head(bc) = gu.transpose() * v;
      e[bc] = 0.0;
      atx.head(bc) = ux;
      atx[bc] = 0.0;
      atx -= d * vx;
      c.head(bc) = ur - ux * qt;
      c[bc] = 0.0;
      c -= d * (vr - vx * qt);

      // Moments including the candidate as the last entry.
      mean.head(bc) = mean_c;
      if (samples == 0) {
        mean[bc] = qt;
        second_row.head(bc) = mean_c * qt;
      } else {
        mean[bc] = joint_frequency(t, t, samples);
        for (Index j = 0; j < bc; ++j) {
          second_row[j] = joint_frequency(t, static_cast<std::size_t>(chosen[static_cast<std::size_t>(j)]), samples);
        }
      }
      second_row[bc] = mean[bc];

      // ⟨Q, Ŷ⟩ with Q = [UᵀG_hU 0; 0 0] - e dᵀ - d eᵀ + vgv d dᵀ - atx atxᵀ.
      auto quad_with = [&](const Vector& p, const Vector& q) {
        // pᵀ Ŷ q where Ŷ = [second_c, row; rowᵀ, mean_t]
        double acc = p.head(bc).dot(second_c * q.head(bc));
        acc += p.head(bc).dot(second_row.head(bc)) * q[bc];
        acc += p[bc] * second_row.head(bc).dot(q.head(bc));
        acc += p[bc] * second_row[bc] * q[bc];
        return acc;
      };
      const double quad = base_quad - 2.0 * quad_with(e, d) + vgv * quad_with(d, d) - quad_with(atx, atx);
      const double lin = c.dot(mean);
      const Index holdout = n_h - 1;
      const double s = s_h - qt * qt;
      scores[t] = holdout == 0 ? 0.0 : (s - 2.0 * lin + quad) / static_cast<double>(holdout);
    }
    return scores;
  }

  const BootstrapContext& ctx_;
  EvaluationMode mode_;
  std::size_t words_ = 0;
  std::vector<std::uint64_t> bits_;
};

inline BootstrapPlan greedy_bootstrap(const Matrix& all_tasks, std::size_t b, const OutcomeProbabilityModel& prob_model,
                                      double alpha, const EvaluationMode& mode) {
  BootstrapContext context(all_tasks, prob_model, alpha);
  return GreedyBootstrapper(context, mode).run(b);
}

/// Uniformly random b tasks; the expected error is computed for reporting only.
inline BootstrapPlan random_bootstrap(const Matrix& all_tasks, std::size_t b, std::uint64_t seed,
                                      const OutcomeProbabilityModel& prob_model, double alpha,
                                      const EvaluationMode& mode = MonteCarloEvaluation{}) {
  const auto n = static_cast<std::size_t>(all_tasks.rows());
  if (b > n) throw DomainError("random_bootstrap: budget " + std::to_string(b) + " exceeds " + std::to_string(n) + " tasks");
  Rng rng(seed);
  BootstrapPlan plan;
  plan.mode = mode;
  for (std::size_t id : sample_without_replacement(n, b, rng)) plan.task_ids.push_back(static_cast<Index>(id));
  BootstrapContext context(all_tasks, prob_model, alpha);
  if (b == 0) {
    plan.expected_error = context.holdout_error(uniform_model(all_tasks.cols()).weights, {});
  } else {
    EvaluationMode report = mode;
    if (std::holds_alternative<ExactEvaluation>(mode) && b > kMaxExactBudget) report = MonteCarloEvaluation{};
    plan.expected_error = expected_reconstruction_error(plan.task_ids, context, report).value;
  }
  return plan;
}

}  // namespace elicit
