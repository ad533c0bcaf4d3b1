#pragma once

// Synthetic-worker reproduction of the iterative elicitation protocol:
// bootstrap a model, then repeatedly observe a batch of held-out tasks and,
// when the model mispredicts them, update it by the method under test.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "elicit/bootstrap.hpp"
#include "elicit/outcome_probability.hpp"
#include "elicit/preference_aggregator.hpp"
#include "elicit/question_selector.hpp"
#include "elicit/random.hpp"
#include "elicit/stats.hpp"
#include "elicit/worker_model.hpp"

namespace elicit {

struct SyntheticWorker {
  Vector true_weights;
  double ranking_noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Worker with Dirichlet(1) weights over m factors scaled to sum to `total`.
inline SyntheticWorker draw_synthetic_worker(Index m, double ranking_noise_sigma, std::uint64_t seed, double total = 1.0) {
  if (m < 1) throw DomainError("synthetic worker: need at least one factor");
  Rng rng(seed);
  std::gamma_distribution<double> gamma(1.0, 1.0);
  Vector w(m);
  for (Index i = 0; i < m; ++i) w[i] = gamma(rng);
  w *= total / w.sum();
  return SyntheticWorker{std::move(w), ranking_noise_sigma, seed};
}

/// Bernoulli outcome with success probability clamp(w*·t, 0, 1).
inline int simulate_outcome(const SyntheticWorker& worker, const Vector& task_factors, Rng& rng) {
  if (task_factors.size() != worker.true_weights.size()) throw DimensionError("simulate_outcome: factor count mismatch");
  const double p = std::clamp(worker.true_weights.dot(task_factors), 0.0, 1.0);
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p ? 1 : 0;
}

/// Requested factors ordered by w*[i] + N(0, sigma), best first; ties go to the lower index.
inline std::vector<Index> simulate_ranking(const SyntheticWorker& worker, const std::vector<Index>& factors, Rng& rng) {
  std::vector<Index> sorted = factors;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ValidationError("simulate_ranking: requested factors must be distinct");
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<std::pair<double, Index>> scored;
  scored.reserve(sorted.size());
  for (Index f : sorted) {
    if (f < 0 || f >= worker.true_weights.size()) throw DimensionError("simulate_ranking: factor out of range");
    scored.emplace_back(worker.true_weights[f] + worker.ranking_noise_sigma * noise(rng), f);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<Index> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.push_back(s.second);
  return out;
}

/// Exponentially weighted per-factor success-rate tracker.
inline WorkerModel implicit1_update(const WorkerModel& model, const LabeledTasks& completed, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("implicit1_update: eta must be in [0, 1]");
  if (completed.factor_count() != model.factor_count() && !completed.empty()) {
    throw DimensionError("implicit1_update: factor count mismatch");
  }
  WorkerModel out = model;
  for (Index i = 0; i < model.factor_count(); ++i) {
    double seen = 0.0, wins = 0.0;
    for (Index r = 0; r < completed.size(); ++r) {
      if (completed.factors(r, i) > 0.0) {
        seen += 1.0;
        wins += completed.outcomes[r];
      }
    }
    const double rate = seen > 0.0 ? wins / seen : model.weights[i];
    out.weights[i] = (1.0 - eta) * model.weights[i] + eta * rate;
  }
  return out;
}

/// Unconstrained refit on the accumulated history.
inline WorkerModel implicit2_refit(const LabeledTasks& history, double alpha, std::vector<std::string> factor_names = {}) {
  if (history.empty()) throw DomainError("implicit2_refit: empty history");
  return fit(history, alpha, std::move(factor_names));
}

enum class Method { k_exfactor, k_random, implicit1, implicit2 };
enum class BootstrapMethod { optimized, random, uniform };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::k_exfactor: return "k-exfactor";
    case Method::k_random: return "k-random";
    case Method::implicit1: return "implicit-1";
    case Method::implicit2: return "implicit-2";
  }
  return "?";
}

inline std::optional<Method> parse_method(const std::string& s) {
  for (Method m : {Method::k_exfactor, Method::k_random, Method::implicit1, Method::implicit2}) {
    if (method_name(m) == s) return m;
  }
  return std::nullopt;
}

inline std::string bootstrap_name(BootstrapMethod b) {
  switch (b) {
    case BootstrapMethod::optimized: return "optboot";
    case BootstrapMethod::random: return "randomboot";
    case BootstrapMethod::uniform: return "uniformboot";
  }
  return "?";
}

inline std::optional<BootstrapMethod> parse_bootstrap(const std::string& s) {
  for (BootstrapMethod b : {BootstrapMethod::optimized, BootstrapMethod::random, BootstrapMethod::uniform}) {
    if (bootstrap_name(b) == s) return b;
  }
  return std::nullopt;
}

struct AlphaPolicy {
  bool use_gcv = true;
  double fixed = 0.1;
  std::vector<double> grid = default_alpha_grid();
};

struct ExperimentConfig {
  std::size_t tasks = 2000;
  std::size_t factors = 90;
  /// Binary attribute columns (payment band, duration band, ...); the rest form one one-hot type group.
  std::size_t attribute_factors = 4;
  std::size_t k = 4;
  std::size_t iterations = 7;
  std::size_t tasks_per_iteration = 25;
  std::size_t bootstrap_budget = 15;
  BootstrapMethod bootstrap = BootstrapMethod::optimized;
  /// 0 selects the default sample count; exact enumeration when `bootstrap_exact`.
  std::size_t bootstrap_samples = 0;
  bool bootstrap_exact = false;
  /// Ridge strength inside the bootstrap objective; unset means the fixed
  /// alpha, or the largest grid value under GCV.
  std::optional<double> bootstrap_alpha;
  AlphaPolicy alpha;
  HistoryMode history = HistoryMode::full;
  std::vector<Method> methods = {Method::k_exfactor, Method::k_random, Method::implicit1, Method::implicit2};
  double train_fraction = 0.7;
  std::uint64_t seed = 1;
  std::size_t replications = 30;
  double ranking_noise = 0.0;
  double worker_weight_total = 1.0;
  double implicit_eta = 0.3;
  double margin = kDefaultMargin;
  double smoothing = 1.0;
  std::size_t history_workers = 20;
  double error_trigger = 1e-6;
  bool record_timing = false;
  std::size_t jobs = 1;

  std::size_t train_count() const {
    return static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(tasks)));
  }

  /// Throws ValidationError naming the first inconsistent field.
  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) { throw ValidationError(field + ": " + why); };
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail("train_fraction", "must be in (0, 1)");
    if (tasks < 2) fail("tasks", "need at least 2 tasks");
    if (factors < 2) fail("factors", "need at least 2 factors");
    if (attribute_factors >= factors) fail("attribute_factors", "must leave at least one type factor");
    if (k >= factors) fail("k", "must be smaller than factors");
    if (tasks_per_iteration < 1) fail("tasks_per_iteration", "must be at least 1");
    if (iterations < 1) fail("iterations", "must be at least 1");
    if (methods.empty()) fail("methods", "must name at least one method");
    if (replications < 1) fail("replications", "must be at least 1");
    const std::size_t train = train_count();
    if (train < 1 || train >= tasks) fail("train_fraction", "leaves an empty training or holdout split");
    if (bootstrap_budget > train) fail("bootstrap_budget", "exceeds the training split");
    if (bootstrap_exact && bootstrap_budget > kMaxExactBudget) fail("bootstrap_exact", "exact evaluation needs bootstrap_budget <= 20");
    if (iterations * tasks_per_iteration >= tasks - train) {
      fail("tasks_per_iteration", "iterations x tasks_per_iteration must leave holdout tasks to score");
    }
    if (!(ranking_noise >= 0.0)) fail("ranking_noise", "must be nonnegative");
    if (!(worker_weight_total > 0.0)) fail("worker_weight_total", "must be positive");
    if (!(implicit_eta >= 0.0 && implicit_eta <= 1.0)) fail("implicit_eta", "must be in [0, 1]");
    if (!(margin >= 0.0)) fail("margin", "must be nonnegative");
    if (!(smoothing >= 0.0)) fail("smoothing", "must be nonnegative");
    if (history_workers < 1) fail("history_workers", "must be at least 1");
    if (alpha.use_gcv && alpha.grid.empty()) fail("alpha.grid", "must not be empty");
    for (double a : alpha.grid) {
      if (!(a >= 0.0)) fail("alpha.grid", "values must be nonnegative");
    }
    if (!(alpha.fixed >= 0.0)) fail("alpha.fixed", "must be nonnegative");
    if (bootstrap_alpha && !(*bootstrap_alpha >= 0.0)) fail("bootstrap_alpha", "must be nonnegative");
    if (jobs < 1) fail("jobs", "must be at least 1");
  }
};

struct IterationLog {
  Method method = Method::k_exfactor;
  std::size_t replication = 0;
  std::size_t iteration = 0;
  double mse = 0.0;
  std::vector<Index> questions;
  std::size_t constraints_active = 0;
  double wall_ms = 0.0;
};

/// Held-out error of the bootstrapped model before the first iteration.
struct BootstrapLog {
  std::size_t replication = 0;
  BootstrapMethod bootstrap = BootstrapMethod::optimized;
  double mse = 0.0;
  std::vector<Index> task_ids;
};

struct ExperimentResult {
  std::vector<IterationLog> logs;
  std::vector<BootstrapLog> bootstrap;
};

/// Task pool of one replication: sparse one-hot type plus binary attributes.
struct SyntheticWorld {
  SyntheticWorker worker;
  LabeledTasks tasks;  // the worker's own outcomes
  std::vector<std::string> factor_names;
  std::vector<Index> train;
  std::vector<Index> holdout;  // in draw order
  OutcomeProbabilityModel probability;
};

inline std::vector<std::string> synthetic_factor_names(std::size_t factors, std::size_t attributes) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i + attributes < factors; ++i) names.push_back("type_" + std::to_string(i));
  for (std::size_t i = 0; i < attributes; ++i) names.push_back("attr_" + std::to_string(i));
  return names;
}

inline Matrix draw_task_factors(std::size_t n, std::size_t factors, std::size_t attributes, Rng& rng) {
  const std::size_t types = factors - attributes;
  // Skewed type popularity so some factors are rare.
  std::vector<double> popularity(types);
  for (std::size_t i = 0; i < types; ++i) popularity[i] = 1.0 / static_cast<double>(i + 1);
  std::discrete_distribution<std::size_t> type_of(popularity.begin(), popularity.end());
  std::bernoulli_distribution attribute_on(0.5);
  Matrix x = Matrix::Zero(static_cast<Index>(n), static_cast<Index>(factors));
  for (std::size_t r = 0; r < n; ++r) {
    x(static_cast<Index>(r), static_cast<Index>(type_of(rng))) = 1.0;
    for (std::size_t a = 0; a < attributes; ++a) {
      if (attribute_on(rng)) x(static_cast<Index>(r), static_cast<Index>(types + a)) = 1.0;
    }
  }
  return x;
}

inline SyntheticWorld build_world(const ExperimentConfig& config, std::size_t replication) {
  SyntheticWorld world;
  const auto m = static_cast<Index>(config.factors);
  world.worker = draw_synthetic_worker(m, config.ranking_noise, derive_seed(config.seed, replication, 1),
                                       config.worker_weight_total);
  Rng rng(derive_seed(config.seed, replication, 2));
  world.tasks.factors = draw_task_factors(config.tasks, config.factors, config.attribute_factors, rng);
  world.tasks.outcomes.resize(static_cast<Index>(config.tasks));
  for (Index r = 0; r < world.tasks.size(); ++r) {
    world.tasks.outcomes[r] = simulate_outcome(world.worker, world.tasks.factors.row(r).transpose(), rng);
  }
  world.factor_names = synthetic_factor_names(config.factors, config.attribute_factors);

  std::vector<std::size_t> order = sample_without_replacement(config.tasks, config.tasks, rng);
  const std::size_t train = config.train_count();
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < train ? world.train : world.holdout).push_back(static_cast<Index>(order[i]));
  }

  // Other workers' outcomes on the training tasks feed the cold-start probabilities.
  std::vector<SyntheticWorker> others;
  for (std::size_t h = 0; h < config.history_workers; ++h) {
    others.push_back(draw_synthetic_worker(m, 0.0, derive_seed(config.seed, replication, 3, h), config.worker_weight_total));
  }
  LabeledTasks history{Matrix(static_cast<Index>(train), m), Vector(static_cast<Index>(train))};
  std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
  for (std::size_t i = 0; i < train; ++i) {
    const Vector row = world.tasks.factors.row(world.train[i]).transpose();
    history.factors.row(static_cast<Index>(i)) = row.transpose();
    history.outcomes[static_cast<Index>(i)] = simulate_outcome(others[pick(rng)], row, rng);
  }
  world.probability = fit_probability_model(history, config.smoothing);
  return world;
}

namespace detail {

inline double choose_alpha(const ExperimentConfig& config, const LabeledTasks& data) {
  const double a = config.alpha.use_gcv ? select_alpha_gcv(data, config.alpha.grid) : config.alpha.fixed;
  return effective_alpha(a, data.size(), data.factor_count());
}

inline double bootstrap_objective_alpha(const ExperimentConfig& config) {
  if (config.bootstrap_alpha) return *config.bootstrap_alpha;
  if (!config.alpha.use_gcv) return config.alpha.fixed;
  return *std::max_element(config.alpha.grid.begin(), config.alpha.grid.end());
}

/// Ridge fit that falls back to the smallest positive ridge when alpha = 0 is singular.
inline WorkerModel robust_fit(const LabeledTasks& data, double alpha, const std::vector<std::string>& names) {
  try {
    return fit(data, alpha, names);
  } catch (const SingularityError&) {
    return fit(data, std::max(alpha, kUnderdeterminedAlpha), names);
  }
}

}  // namespace detail

/// Bootstrap plan and the model fitted from it, shared by every method of a replication.
inline std::pair<BootstrapPlan, WorkerModel> bootstrap_world(const ExperimentConfig& config, const SyntheticWorld& world,
                                                             std::size_t replication) {
  const Matrix pool = world.tasks.subset(world.train).factors;
  const double objective_alpha = detail::bootstrap_objective_alpha(config);
  EvaluationMode mode = config.bootstrap_exact
                            ? EvaluationMode{ExactEvaluation{}}
                            : EvaluationMode{MonteCarloEvaluation{config.bootstrap_samples, derive_seed(config.seed, replication, 4)}};
  BootstrapPlan plan;
  switch (config.bootstrap) {
    case BootstrapMethod::optimized:
      plan = greedy_bootstrap(pool, config.bootstrap_budget, world.probability, objective_alpha, mode);
      break;
    case BootstrapMethod::random:
      plan = random_bootstrap(pool, config.bootstrap_budget, derive_seed(config.seed, replication, 5), world.probability,
                              objective_alpha, mode);
      break;
    case BootstrapMethod::uniform:
      return {plan, uniform_model(static_cast<Index>(config.factors), world.factor_names)};
  }
  for (Index& id : plan.task_ids) id = world.train[static_cast<std::size_t>(id)];
  if (plan.task_ids.empty()) return {plan, uniform_model(static_cast<Index>(config.factors), world.factor_names)};
  const LabeledTasks data = world.tasks.subset(plan.task_ids);
  return {plan, detail::robust_fit(data, detail::choose_alpha(config, data), world.factor_names)};
}

/// One replication: every configured method on the same world and outcome draws.
inline ExperimentResult run_replication(const ExperimentConfig& config, std::size_t replication) {
  const SyntheticWorld world = build_world(config, replication);
  auto [plan, initial] = bootstrap_world(config, world, replication);

  ExperimentResult result;
  const LabeledTasks holdout_all = world.tasks.subset(world.holdout);
  result.bootstrap.push_back({replication, config.bootstrap, mse(initial, holdout_all), plan.task_ids});

  const LabeledTasks bootstrap_data = world.tasks.subset(plan.task_ids);
  for (Method method : config.methods) {
    WorkerModel model = initial;
    LabeledTasks seen = bootstrap_data;
    ConstraintStore store(config.history);
    std::size_t cursor = 0;
    for (std::size_t it = 1; it <= config.iterations; ++it) {
      const auto start = std::chrono::steady_clock::now();
      std::vector<Index> drawn(world.holdout.begin() + static_cast<std::ptrdiff_t>(cursor),
                               world.holdout.begin() + static_cast<std::ptrdiff_t>(cursor + config.tasks_per_iteration));
      cursor += config.tasks_per_iteration;
      const LabeledTasks batch = world.tasks.subset(drawn);
      const double batch_error = mse(model, batch);
      seen.append(batch);

      IterationLog log;
      log.method = method;
      log.replication = replication;
      log.iteration = it;
      if (batch_error > config.error_trigger) {
        const double a = detail::choose_alpha(config, seen);
        switch (method) {
          case Method::k_exfactor:
          case Method::k_random: {
            QuestionSet questions =
                method == Method::k_exfactor
                    ? k_exfactor(seen.factors, config.k, std::max(a, kUnderdeterminedAlpha))
                    : k_random(seen.factors, config.k, a, derive_seed(config.seed, replication, 6, it));
            Rng answer_rng(derive_seed(config.seed, replication, 7, it));
            const std::vector<Index> ranking = simulate_ranking(world.worker, questions.factor_indices, answer_rng);
            store = merge_constraints(store, ranking_to_constraints(ranking, config.margin), it);
            model = constrained_fit(seen, a, store.constraints(), world.factor_names);
            log.questions = std::move(questions.factor_indices);
            break;
          }
          case Method::implicit1:
            model = implicit1_update(model, batch, config.implicit_eta);
            break;
          case Method::implicit2:
            model = detail::robust_fit(seen, a, world.factor_names);
            break;
        }
      }
      std::vector<Index> remaining(world.holdout.begin() + static_cast<std::ptrdiff_t>(cursor), world.holdout.end());
      log.mse = mse(model, world.tasks.subset(remaining));
      log.constraints_active = store.size();
      if (config.record_timing) {
        log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      }
      result.logs.push_back(std::move(log));
    }
  }
  return result;
}

/// All replications, optionally on `config.jobs` threads; output order is
/// (method as configured, replication, iteration) regardless of scheduling.
inline ExperimentResult run_elicitation_experiment(const ExperimentConfig& config) {
  config.validate();
  std::vector<ExperimentResult> per_replication(config.replications);
  const std::size_t workers = std::min(config.jobs, config.replications);
  if (workers <= 1) {
    for (std::size_t r = 0; r < config.replications; ++r) per_replication[r] = run_replication(config, r);
  } else {
    std::mutex failure_lock;
    std::exception_ptr failure;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t r = w; r < config.replications; r += workers) {
          try {
            per_replication[r] = run_replication(config, r);
          } catch (...) {
            std::lock_guard<std::mutex> guard(failure_lock);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  ExperimentResult merged;
  for (Method method : config.methods) {
    for (const auto& rep : per_replication) {
      for (const auto& log : rep.logs) {
        if (log.method == method) merged.logs.push_back(log);
      }
    }
  }
  for (const auto& rep : per_replication) merged.bootstrap.insert(merged.bootstrap.end(), rep.bootstrap.begin(), rep.bootstrap.end());
  return merged;
}

/// Held-out MSE of the last iteration, one value per replication.
inline std::vector<double> final_mse(const ExperimentResult& result, Method method, std::size_t iterations) {
  std::vector<double> out;
  for (const auto& log : result.logs) {
    if (log.method == method && log.iteration == iterations) out.push_back(log.mse);
  }
  return out;
}

}  // namespace elicit
