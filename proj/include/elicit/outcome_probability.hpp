#pragma once

// Cold-start success probabilities from other workers' history, assuming task
// factors are conditionally independent given the outcome.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "elicit/worker_model.hpp"

namespace elicit {

/// How factor evidence is combined into a success probability.
enum class PosteriorForm {
  /// s1 / (s0 + s1), s_c = Pr(c) * prod_i Pr(factor_i = v_i | c).
  normalized,
  /// prod_i Pr(success | factor_i = v_i), not a normalized probability.
  literal_product,
};

class OutcomeProbabilityModel {
 public:
  /// Observed values of one factor with per-class counts.
  struct FactorTable {
    std::vector<double> values;  // sorted, distinct
    std::vector<double> count_success;
    std::vector<double> count_failure;
  };

  OutcomeProbabilityModel() = default;

  /// Counting estimator with pseudo-count `smoothing` on every cell.
  static OutcomeProbabilityModel fit(const LabeledTasks& history, double smoothing) {
    if (!(smoothing >= 0.0)) throw DomainError("probability model: smoothing must be nonnegative");
    if (history.outcomes.size() != history.factors.rows()) throw DimensionError("probability model: outcome count mismatch");
    OutcomeProbabilityModel model;
    model.smoothing_ = smoothing;
    model.factor_count_ = history.factors.cols();
    const Index n = history.size();
    if (n == 0 && smoothing == 0.0) {
      throw EstimationError("probability model: empty history needs a positive smoothing pseudo-count");
    }
    for (Index r = 0; r < n; ++r) {
      const double y = history.outcomes[r];
      if (y != 0.0 && y != 1.0) throw DomainError("probability model: history outcomes must be 0 or 1");
      if (y == 1.0) model.successes_ += 1.0;
    }
    model.failures_ = static_cast<double>(n) - model.successes_;
    model.prior_success_ = (model.successes_ + smoothing) / (static_cast<double>(n) + 2.0 * smoothing);

    model.tables_.resize(static_cast<std::size_t>(model.factor_count_));
    for (Index i = 0; i < model.factor_count_; ++i) {
      FactorTable& table = model.tables_[static_cast<std::size_t>(i)];
      std::vector<double> column(history.factors.col(i).data(), history.factors.col(i).data() + n);
      table.values = column;
      std::sort(table.values.begin(), table.values.end());
      table.values.erase(std::unique(table.values.begin(), table.values.end()), table.values.end());
      table.count_success.assign(table.values.size(), 0.0);
      table.count_failure.assign(table.values.size(), 0.0);
      for (Index r = 0; r < n; ++r) {
        const auto slot = static_cast<std::size_t>(
            std::lower_bound(table.values.begin(), table.values.end(), column[static_cast<std::size_t>(r)]) -
            table.values.begin());
        (history.outcomes[r] == 1.0 ? table.count_success : table.count_failure)[slot] += 1.0;
      }
    }
    return model;
  }

  double prior_success() const { return prior_success_; }
  double smoothing() const { return smoothing_; }
  Index factor_count() const { return factor_count_; }
  const std::vector<FactorTable>& tables() const { return tables_; }

  /// Pr(factor_i = value | outcome = success or failure). A value never seen
  /// in history is scored as if its domain had one more (empty) cell.
  double conditional(Index factor, double value, bool success) const {
    const FactorTable& table = tables_.at(static_cast<std::size_t>(factor));
    const double class_total = success ? successes_ : failures_;
    const double domain = static_cast<double>(table.values.size());
    auto it = std::lower_bound(table.values.begin(), table.values.end(), value);
    if (it == table.values.end() || *it != value) {
      const double denom = class_total + smoothing_ * (domain + 1.0);
      return denom > 0.0 ? smoothing_ / denom : 0.0;
    }
    const auto slot = static_cast<std::size_t>(it - table.values.begin());
    const double count = success ? table.count_success[slot] : table.count_failure[slot];
    const double denom = class_total + smoothing_ * domain;
    return denom > 0.0 ? (count + smoothing_) / denom : 0.0;
  }

  /// Fraction of history successes among tasks sharing the factor value,
  /// smoothed with the same pseudo-count.
  double success_given_value(Index factor, double value) const {
    const FactorTable& table = tables_.at(static_cast<std::size_t>(factor));
    auto it = std::lower_bound(table.values.begin(), table.values.end(), value);
    double s = 0.0, f = 0.0;
    if (it != table.values.end() && *it == value) {
      const auto slot = static_cast<std::size_t>(it - table.values.begin());
      s = table.count_success[slot];
      f = table.count_failure[slot];
    }
    const double denom = s + f + 2.0 * smoothing_;
    return denom > 0.0 ? (s + smoothing_) / denom : 0.0;
  }

  /// Probability that a cold-start worker completes the task successfully.
  double success_probability(const Eigen::Ref<const Vector>& task_factors,
                             PosteriorForm form = PosteriorForm::normalized) const {
    if (task_factors.size() != factor_count_) {
      throw DimensionError("success_probability: task has " + std::to_string(task_factors.size()) +
                           " factors, model has " + std::to_string(factor_count_));
    }
    if (form == PosteriorForm::literal_product) {
      double log_p = 0.0;
      for (Index i = 0; i < factor_count_; ++i) {
        const double p = success_given_value(i, task_factors[i]);
        if (p <= 0.0) return 0.0;
        log_p += std::log(p);
      }
      return std::exp(log_p);
    }
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    double log_s1 = prior_success_ > 0.0 ? std::log(prior_success_) : kNegInf;
    double log_s0 = prior_success_ < 1.0 ? std::log1p(-prior_success_) : kNegInf;
    for (Index i = 0; i < factor_count_ && (log_s0 != kNegInf || log_s1 != kNegInf); ++i) {
      const double c1 = conditional(i, task_factors[i], true);
      const double c0 = conditional(i, task_factors[i], false);
      log_s1 = c1 > 0.0 ? log_s1 + std::log(c1) : kNegInf;
      log_s0 = c0 > 0.0 ? log_s0 + std::log(c0) : kNegInf;
    }
    if (log_s1 == kNegInf && log_s0 == kNegInf) return prior_success_;
    if (log_s1 == kNegInf) return 0.0;
    if (log_s0 == kNegInf) return 1.0;
    // s1 / (s0 + s1) = 1 / (1 + exp(log_s0 - log_s1))
    return 1.0 / (1.0 + std::exp(log_s0 - log_s1));
  }

  Vector success_probabilities(const Matrix& tasks, PosteriorForm form = PosteriorForm::normalized) const {
    Vector out(tasks.rows());
    for (Index r = 0; r < tasks.rows(); ++r) out[r] = success_probability(tasks.row(r).transpose(), form);
    return out;
  }

 private:
  double prior_success_ = 0.5;
  double smoothing_ = 1.0;
  double successes_ = 0.0;
  double failures_ = 0.0;
  Index factor_count_ = 0;
  std::vector<FactorTable> tables_;
};

inline OutcomeProbabilityModel fit_probability_model(const LabeledTasks& history, double smoothing = 1.0) {
  return OutcomeProbabilityModel::fit(history, smoothing);
}

inline double success_probability(const OutcomeProbabilityModel& model, const Vector& task_factors,
                                  PosteriorForm form = PosteriorForm::normalized) {
  return model.success_probability(task_factors, form);
}

}  // namespace elicit
