#include <gtest/gtest.h>

#include <map>

#include "elicit/bootstrap.hpp"
#include "oracles.hpp"

using namespace elicit;

namespace {

struct Instance {
  Matrix tasks;
  OutcomeProbabilityModel model;
  Vector soft;
};

/// Binary task pool with a probability model fitted on a separate random history.
Instance make_instance(std::mt19937_64& rng, Index n, Index m) {
  Instance inst;
  inst.tasks = oracle::random_binary(n, m, rng);
  LabeledTasks history{oracle::random_binary(3 * n, m, rng), Vector(3 * n)};
  std::bernoulli_distribution coin(0.5);
  for (Index r = 0; r < history.size(); ++r) {
    // Outcome leans on the first factor so probabilities vary across tasks.
    const double p = history.factors(r, 0) > 0 ? 0.8 : 0.3;
    history.outcomes[r] = std::bernoulli_distribution(p)(rng) ? 1.0 : 0.0;
  }
  inst.model = fit_probability_model(history, 1.0);
  inst.soft = inst.model.success_probabilities(inst.tasks);
  return inst;
}

std::vector<Index> random_candidate(std::mt19937_64& rng, Index n, std::size_t b) {
  std::vector<Index> out;
  for (std::size_t i : sample_without_replacement(static_cast<std::size_t>(n), b, rng)) out.push_back(static_cast<Index>(i));
  return out;
}

}  // namespace

TEST(BootstrapTree, ProbabilitiesSumToOne) {
  const std::vector<double> p{0.1, 0.7, 0.35, 0.9, 0.5};
  double sum = 0.0;
  for (const auto& leaf : bootstrap_tree(p)) {
    double product = 1.0;
    for (std::size_t j = 0; j < p.size(); ++j) product *= leaf.outcomes[j] ? p[j] : 1 - p[j];
    EXPECT_NEAR(leaf.probability, product, 1e-12);
    sum += leaf.probability;
  }
  EXPECT_NEAR(sum, 1.0, 1e-9);
  EXPECT_EQ(bootstrap_tree(p).size(), 32u);
  EXPECT_THROW(bootstrap_tree(std::vector<double>(21, 0.5)), SizeError);
}

TEST(ExpectedError, SingleTaskIsTwoBranchMixture) {
  std::mt19937_64 rng(1);
  const Instance inst = make_instance(rng, 12, 4);
  const std::vector<Index> candidate{3};
  const double p = inst.soft[3];
  auto branch_error = [&](double y) {
    const Vector w = oracle::ridge(inst.tasks.row(3), Vector::Constant(1, y), 1e-6);
    double err = 0.0;
    for (Index t = 0; t < 12; ++t) {
      if (t == 3) continue;
      err += std::pow(inst.soft[t] - inst.tasks.row(t).dot(w), 2);
    }
    return err / 11.0;
  };
  const double expected = p * branch_error(1.0) + (1 - p) * branch_error(0.0);
  EXPECT_NEAR(expected_reconstruction_error(candidate, inst.tasks, inst.model, 0.0, ExactEvaluation{}).value, expected,
              1e-10);
}

TEST(ExpectedError, ExactMatchesBruteForceEnumerator) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Instance inst = make_instance(rng, 20, 5);
    for (std::size_t b = 1; b <= 6; ++b) {
      const auto candidate = random_candidate(rng, 20, b);
      for (double alpha : {0.0, 0.1}) {
        const double exact =
            expected_reconstruction_error(candidate, inst.tasks, inst.model, alpha, ExactEvaluation{}).value;
        if (is_infinite_objective(exact)) {
          // Only a rank-deficient candidate design may be rejected.
          Matrix xc(static_cast<Index>(b), 5);
          for (std::size_t j = 0; j < b; ++j) xc.row(static_cast<Index>(j)) = inst.tasks.row(candidate[j]);
          EXPECT_EQ(alpha, 0.0);
          EXPECT_TRUE(std::isinf(oracle::trace_inverse(xc.transpose() * xc, 0.0)));
          continue;
        }
        EXPECT_NEAR(exact, oracle::bootstrap_expectation(candidate, inst.tasks, inst.soft, alpha), 1e-10)
            << "trial " << trial << " b " << b << " alpha " << alpha;
      }
    }
  }
}

TEST(ExpectedError, MonteCarloWithinThreeStandardErrors) {
  std::mt19937_64 rng(3);
  int inside = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Instance inst = make_instance(rng, 20, 5);
    const auto candidate = random_candidate(rng, 20, 3);
    const BootstrapContext ctx(inst.tasks, inst.model, 0.1);
    const double exact = expected_reconstruction_error(candidate, ctx, ExactEvaluation{}).value;
    const auto mc = expected_reconstruction_error(candidate, ctx, MonteCarloEvaluation{20000, 100u + static_cast<unsigned>(trial)});
    EXPECT_EQ(mc.branches, 20000u);
    if (std::abs(mc.value - exact) <= 3 * mc.standard_error) ++inside;
  }
  EXPECT_GE(inside, 19);
}

TEST(ExpectedError, MonteCarloIsUnbiased) {
  std::mt19937_64 rng(4);
  const Instance inst = make_instance(rng, 24, 6);
  const auto candidate = random_candidate(rng, 24, 8);
  const BootstrapContext ctx(inst.tasks, inst.model, 0.05);
  const double exact = expected_reconstruction_error(candidate, ctx, ExactEvaluation{}).value;
  double sum = 0.0, var = 0.0;
  const int reps = 50;
  for (int r = 0; r < reps; ++r) {
    const auto mc = expected_reconstruction_error(candidate, ctx, MonteCarloEvaluation{200, static_cast<std::uint64_t>(r)});
    sum += mc.value;
    var += mc.standard_error * mc.standard_error;
  }
  const double combined_se = std::sqrt(var) / reps;
  EXPECT_NEAR(sum / reps, exact, 3 * combined_se);
}

TEST(ExpectedError, ExactRejectsLargeBudget) {
  std::mt19937_64 rng(5);
  const Instance inst = make_instance(rng, 30, 4);
  const auto candidate = random_candidate(rng, 30, 21);
  EXPECT_THROW(expected_reconstruction_error(candidate, inst.tasks, inst.model, 0.1, ExactEvaluation{}), SizeError);
  EXPECT_NO_THROW(expected_reconstruction_error(candidate, inst.tasks, inst.model, 0.1, MonteCarloEvaluation{}));
}

TEST(ExpectedError, RejectsBadCandidates) {
  std::mt19937_64 rng(6);
  const Instance inst = make_instance(rng, 10, 3);
  EXPECT_THROW(expected_reconstruction_error({}, inst.tasks, inst.model, 0.1, ExactEvaluation{}), DomainError);
  EXPECT_THROW(expected_reconstruction_error({1, 1}, inst.tasks, inst.model, 0.1, ExactEvaluation{}), DomainError);
  EXPECT_THROW(expected_reconstruction_error({10}, inst.tasks, inst.model, 0.1, ExactEvaluation{}), DomainError);
}

TEST(ExpectedError, DefaultSampleCount) {
  EXPECT_EQ(default_monte_carlo_samples(1), 64u);
  EXPECT_EQ(default_monte_carlo_samples(10), 103u);
  EXPECT_EQ(default_monte_carlo_samples(15), 3277u);
  EXPECT_EQ(default_monte_carlo_samples(25), 4096u);
}

TEST(GreedyBootstrap, EmptyBudgetScoresUniformModel) {
  std::mt19937_64 rng(7);
  const Instance inst = make_instance(rng, 15, 4);
  const BootstrapPlan plan = greedy_bootstrap(inst.tasks, 0, inst.model, 0.1, ExactEvaluation{});
  EXPECT_TRUE(plan.task_ids.empty());
  const Vector residual = inst.soft - inst.tasks * Vector::Constant(4, 0.25);
  EXPECT_NEAR(plan.expected_error, residual.squaredNorm() / 15.0, 1e-12);
}

TEST(GreedyBootstrap, FullBudgetTakesEveryTask) {
  std::mt19937_64 rng(8);
  const Instance inst = make_instance(rng, 8, 3);
  BootstrapPlan plan = greedy_bootstrap(inst.tasks, 8, inst.model, 0.1, ExactEvaluation{});
  std::sort(plan.task_ids.begin(), plan.task_ids.end());
  EXPECT_EQ(plan.task_ids, (std::vector<Index>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_DOUBLE_EQ(plan.expected_error, 0.0);
  EXPECT_THROW(greedy_bootstrap(inst.tasks, 9, inst.model, 0.1, ExactEvaluation{}), DomainError);
}

TEST(GreedyBootstrap, FirstPickIsSingleTaskArgmin) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const Instance inst = make_instance(rng, 25, 5);
    const BootstrapPlan plan = greedy_bootstrap(inst.tasks, 1, inst.model, 0.1, ExactEvaluation{});
    Index best = -1;
    double best_value = std::numeric_limits<double>::infinity();
    for (Index t = 0; t < 25; ++t) {
      const double v = oracle::bootstrap_expectation({t}, inst.tasks, inst.soft, 0.1);
      if (best < 0 || v < best_value - 1e-12 * best_value) {
        best_value = v;
        best = t;
      }
    }
    EXPECT_EQ(plan.task_ids.front(), best);
    EXPECT_NEAR(plan.expected_error, best_value, 1e-10);
  }
}

TEST(GreedyBootstrap, RoundScoresMatchDirectEvaluation) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const Instance inst = make_instance(rng, 30, 6);
    for (const EvaluationMode& mode : {EvaluationMode{ExactEvaluation{}}, EvaluationMode{MonteCarloEvaluation{0, 42}}}) {
      const BootstrapContext ctx(inst.tasks, inst.model, 0.05);
      const BootstrapPlan plan = GreedyBootstrapper(ctx, mode).run(8);
      ASSERT_EQ(plan.round_errors.size(), 8u);
      for (std::size_t r = 0; r < 8; ++r) {
        const std::vector<Index> prefix(plan.task_ids.begin(), plan.task_ids.begin() + static_cast<std::ptrdiff_t>(r + 1));
        const double direct = expected_reconstruction_error(prefix, ctx, mode).value;
        EXPECT_NEAR(plan.round_errors[r], direct, 1e-9 * (1 + direct)) << "round " << r;
      }
    }
  }
}

TEST(GreedyBootstrap, ObjectiveNonIncreasingWhenSomeTaskDoesNotHurt) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Instance inst = make_instance(rng, 20, 4);
    const BootstrapContext ctx(inst.tasks, inst.model, 0.1);
    const BootstrapPlan plan = GreedyBootstrapper(ctx, ExactEvaluation{}).run(6);
    for (std::size_t r = 1; r < plan.round_errors.size(); ++r) {
      std::vector<Index> prefix(plan.task_ids.begin(), plan.task_ids.begin() + static_cast<std::ptrdiff_t>(r));
      bool harmless_exists = false;
      for (Index t = 0; t < 20 && !harmless_exists; ++t) {
        if (std::find(prefix.begin(), prefix.end(), t) != prefix.end()) continue;
        auto trial_set = prefix;
        trial_set.push_back(t);
        harmless_exists = expected_reconstruction_error(trial_set, ctx, ExactEvaluation{}).value <= plan.round_errors[r - 1];
      }
      if (harmless_exists) { EXPECT_LE(plan.round_errors[r], plan.round_errors[r - 1] + 1e-12); }
    }
  }
}

TEST(GreedyBootstrap, ChoosesSameTasksInBothModesOnEasyInstance) {
  // With many samples Monte-Carlo scores approach the exact ones.
  std::mt19937_64 rng(12);
  const Instance inst = make_instance(rng, 15, 3);
  const BootstrapPlan exact = greedy_bootstrap(inst.tasks, 1, inst.model, 0.1, ExactEvaluation{});
  const BootstrapPlan mc = greedy_bootstrap(inst.tasks, 1, inst.model, 0.1, MonteCarloEvaluation{4096, 3});
  EXPECT_NEAR(mc.expected_error, exact.expected_error, 0.05 * exact.expected_error + 1e-3);
}

TEST(RandomBootstrap, DeterministicAndComplete) {
  std::mt19937_64 rng(13);
  const Instance inst = make_instance(rng, 10, 3);
  const auto a = random_bootstrap(inst.tasks, 4, 99, inst.model, 0.1);
  const auto b = random_bootstrap(inst.tasks, 4, 99, inst.model, 0.1);
  EXPECT_EQ(a.task_ids, b.task_ids);
  EXPECT_EQ(a.expected_error, b.expected_error);
  auto all = random_bootstrap(inst.tasks, 10, 5, inst.model, 0.1).task_ids;
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all.size(), 10u);
  EXPECT_EQ(all.front(), 0);
  EXPECT_EQ(all.back(), 9);
  EXPECT_THROW(random_bootstrap(inst.tasks, 11, 5, inst.model, 0.1), DomainError);
}

TEST(RandomBootstrap, PairsAreUniform) {
  std::mt19937_64 rng(14);
  const Instance inst = make_instance(rng, 5, 2);
  std::map<std::pair<Index, Index>, int> counts;
  const int seeds = 10000;
  for (int s = 0; s < seeds; ++s) {
    auto pick = random_bootstrap(inst.tasks, 2, static_cast<std::uint64_t>(s), inst.model, 0.1).task_ids;
    std::sort(pick.begin(), pick.end());
    counts[{pick[0], pick[1]}]++;
  }
  EXPECT_EQ(counts.size(), 10u);
  for (const auto& [pair, count] : counts) EXPECT_NEAR(count / double(seeds), 0.1, 0.01);
}

TEST(UniformModel, Weights) {
  EXPECT_TRUE(uniform_model(4).weights.isApprox(Vector::Constant(4, 0.25)));
  EXPECT_DOUBLE_EQ(uniform_model(1).weights[0], 1.0);
  for (Index m : {1, 3, 7, 30}) EXPECT_NEAR(predict(uniform_model(m), Vector::Ones(m)), 1.0, 1e-12);
  EXPECT_THROW(uniform_model(0), DomainError);
}
