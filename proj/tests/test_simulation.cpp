#include <gtest/gtest.h>

#include <numbers>

#include "elicit/simulation.hpp"
#include "elicit/stats.hpp"
#include "oracles.hpp"

using namespace elicit;

namespace {

SyntheticWorker worker_with(Vector w, double sigma = 0.0) { return SyntheticWorker{std::move(w), sigma, 0}; }

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.tasks = 300;
  c.factors = 10;
  c.attribute_factors = 3;
  c.k = 3;
  c.iterations = 3;
  c.tasks_per_iteration = 10;
  c.bootstrap_budget = 5;
  c.replications = 4;
  c.history_workers = 5;
  return c;
}

}  // namespace

TEST(SimulateOutcome, ClampedBernoulli) {
  Rng rng(1);
  const Vector t = Vector::Ones(2);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_EQ(simulate_outcome(worker_with(Vector{{0.0, 0.0}}), t, rng), 0);
    EXPECT_EQ(simulate_outcome(worker_with(Vector{{0.7, 0.6}}), t, rng), 1);  // p clamps to 1
    EXPECT_EQ(simulate_outcome(worker_with(Vector{{-0.3, 0.1}}), t, rng), 0);  // p clamps to 0
  }
  int hits = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) hits += simulate_outcome(worker_with(Vector{{0.25, 0.25}}), t, rng);
  EXPECT_NEAR(hits / double(draws), 0.5, 0.005);
  EXPECT_THROW(simulate_outcome(worker_with(Vector::Ones(3)), t, rng), DimensionError);
}

TEST(SimulateRanking, NoiselessAndTies) {
  Rng rng(2);
  EXPECT_EQ(simulate_ranking(worker_with(Vector{{0.9, 0.1, 0.5}}), {0, 1, 2}, rng), (std::vector<Index>{0, 2, 1}));
  EXPECT_EQ(simulate_ranking(worker_with(Vector::Constant(5, 0.2)), {4, 1, 3}, rng), (std::vector<Index>{1, 3, 4}));
  EXPECT_THROW(simulate_ranking(worker_with(Vector::Ones(3)), {1, 1}, rng), ValidationError);
}

TEST(SimulateRanking, GaussianInversionRate) {
  Rng rng(3);
  const SyntheticWorker w = worker_with(Vector{{0.5, 0.4}}, 0.05);
  int inversions = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) inversions += simulate_ranking(w, {0, 1}, rng).front() == 1;
  // Difference of two N(0, s^2) is N(0, 2 s^2): Pr(inversion) = Phi(-0.1 / (s sqrt 2)).
  const double expected = 0.5 * std::erfc(0.1 / (0.05 * std::sqrt(2.0)) / std::sqrt(2.0));
  EXPECT_NEAR(inversions / double(draws), expected, 0.02);
}

TEST(SyntheticWorker, DirichletWeights) {
  const SyntheticWorker w = draw_synthetic_worker(30, 0.0, 5);
  EXPECT_EQ(w.true_weights.size(), 30);
  EXPECT_NEAR(w.true_weights.sum(), 1.0, 1e-12);
  EXPECT_GE(w.true_weights.minCoeff(), 0.0);
  EXPECT_TRUE(w.true_weights.isApprox(draw_synthetic_worker(30, 0.0, 5).true_weights));
}

TEST(Implicit1, UpdateRule) {
  const WorkerModel old{Vector{{0.2, 0.7}}, 0.0, {"a", "b"}};
  LabeledTasks done{Matrix(2, 2), Vector(2)};
  done.factors << 1, 0, 1, 0;
  done.outcomes << 1, 1;
  EXPECT_TRUE(implicit1_update(old, done, 0.0).weights.isApprox(old.weights));
  const WorkerModel full = implicit1_update(old, done, 1.0);
  EXPECT_DOUBLE_EQ(full.weights[0], 1.0);
  EXPECT_DOUBLE_EQ(full.weights[1], 0.7);  // unseen factor keeps its weight
  EXPECT_NEAR(implicit1_update(old, done, 0.5).weights[0], 0.6, 1e-15);
  EXPECT_THROW(implicit1_update(old, done, 1.5), DomainError);
}

TEST(Implicit2, IsPlainRefit) {
  std::mt19937_64 rng(4);
  const LabeledTasks h{oracle::random_matrix(20, 4, rng), (oracle::random_matrix(20, 1, rng).array() * 0.5 + 0.5).matrix()};
  EXPECT_EQ(implicit2_refit(h, 0.1).weights, fit(h, 0.1).weights);
  EXPECT_THROW(implicit2_refit(LabeledTasks{Matrix(0, 4), Vector(0)}, 0.1), DomainError);

  // A task predicted exactly by the current fit leaves the OLS weights unchanged.
  const WorkerModel current = implicit2_refit(h, 0.0);
  const Vector t{{0.3, 0.2, 0.1, 0.4}};
  LabeledTasks more = h;
  more.append(LabeledTasks{t.transpose(), Vector::Constant(1, predict(current, t))});
  EXPECT_LE((implicit2_refit(more, 0.0).weights - current.weights).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(PairedSignificance, DegenerateAndReferenceCases) {
  const std::vector<double> a{0.3, 0.5, 0.2};
  EXPECT_DOUBLE_EQ(paired_significance(a, a).p_value, 1.0);
  const auto shifted = paired_significance({2, 3, 4}, {1, 2, 3});
  EXPECT_DOUBLE_EQ(shifted.p_value, 0.0);
  EXPECT_DOUBLE_EQ(shifted.mean_difference, 1.0);
  EXPECT_TRUE(std::isinf(shifted.t_statistic));

  // Differences (1, 2, 3, 4): t = 2.5 / (sd / 2); closed-form Student-t CDF for 3 degrees of freedom.
  const auto r = paired_significance({3, 4, 6, 8}, {2, 2, 3, 4});
  const double t = 2.5 / (std::sqrt(5.0 / 3.0) / 2.0);
  const double cdf = 0.5 + (t / (std::sqrt(3.0) * (1 + t * t / 3)) + std::atan(t / std::sqrt(3.0))) / std::numbers::pi;
  EXPECT_NEAR(r.t_statistic, t, 1e-12);
  EXPECT_NEAR(r.p_value, 2 * (1 - cdf), 1e-10);
  EXPECT_NEAR(r.standard_error, std::sqrt(5.0 / 3.0) / 2.0, 1e-12);

  EXPECT_THROW(paired_significance({1}, {1}), DomainError);
  EXPECT_THROW(paired_significance({1, 2}, {1}), DimensionError);
}

TEST(PairedSignificance, PValueShrinksWithReplications) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> a, b;
  double previous = 1.0;
  for (int n : {5, 20, 80, 320}) {
    while (static_cast<int>(a.size()) < n) {
      const double base = noise(rng);
      a.push_back(base + 0.5 + 0.5 * noise(rng));
      b.push_back(base);
    }
    const double p = paired_significance(a, b).p_value;
    EXPECT_LT(p, previous + 0.05);
    previous = p;
  }
  EXPECT_LT(previous, 1e-6);
}

TEST(Config, Validation) {
  ExperimentConfig c = small_config();
  EXPECT_NO_THROW(c.validate());
  auto expect_field = [](ExperimentConfig bad, const std::string& field) {
    try {
      bad.validate();
      FAIL() << "expected rejection of " << field;
    } catch (const ValidationError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  ExperimentConfig bad = c;
  bad.train_fraction = 1.2;
  expect_field(bad, "train_fraction");
  bad = c;
  bad.tasks_per_iteration = 0;
  expect_field(bad, "tasks_per_iteration");
  bad = c;
  bad.methods.clear();
  expect_field(bad, "methods");
  bad = c;
  bad.k = 10;
  expect_field(bad, "k");
  bad = c;
  bad.tasks_per_iteration = 40;  // 3 x 40 exceeds the 90 holdout tasks
  expect_field(bad, "tasks_per_iteration");
}

TEST(Experiment, LogShapeAndRanges) {
  const ExperimentConfig c = small_config();
  const ExperimentResult r = run_elicitation_experiment(c);
  EXPECT_EQ(r.logs.size(), c.replications * c.methods.size() * c.iterations);
  EXPECT_EQ(r.bootstrap.size(), c.replications);
  for (const auto& log : r.logs) {
    EXPECT_GE(log.mse, 0.0);
    EXPECT_GE(log.iteration, 1u);
    EXPECT_LE(log.iteration, c.iterations);
    const bool explicit_method = log.method == Method::k_exfactor || log.method == Method::k_random;
    if (!explicit_method) {
      EXPECT_TRUE(log.questions.empty());
      EXPECT_EQ(log.constraints_active, 0u);
    }
    EXPECT_LE(log.questions.size(), c.k);
  }
  // Ordered by (method, replication, iteration).
  for (std::size_t i = 1; i < r.logs.size(); ++i) {
    const auto& p = r.logs[i - 1];
    const auto& q = r.logs[i];
    const auto rank = [&](Method m) { return std::find(c.methods.begin(), c.methods.end(), m) - c.methods.begin(); };
    EXPECT_TRUE(std::tuple(rank(p.method), p.replication, p.iteration) < std::tuple(rank(q.method), q.replication, q.iteration));
  }
}

TEST(Experiment, DeterministicAcrossRunsAndThreads) {
  ExperimentConfig c = small_config();
  const ExperimentResult a = run_elicitation_experiment(c);
  c.jobs = 3;
  const ExperimentResult b = run_elicitation_experiment(c);
  ASSERT_EQ(a.logs.size(), b.logs.size());
  for (std::size_t i = 0; i < a.logs.size(); ++i) {
    EXPECT_EQ(a.logs[i].mse, b.logs[i].mse);
    EXPECT_EQ(a.logs[i].questions, b.logs[i].questions);
  }
  c.seed = 2;
  const ExperimentResult other = run_elicitation_experiment(c);
  EXPECT_NE(a.logs.front().mse, other.logs.front().mse);
}

TEST(Experiment, MethodsShareWorldAndBootstrap) {
  const ExperimentConfig c = small_config();
  // Every method starts from the same bootstrapped model, so a no-update
  // iteration would score identically; check the shared world directly.
  const SyntheticWorld w1 = build_world(c, 0), w2 = build_world(c, 0);
  EXPECT_EQ(w1.tasks.factors, w2.tasks.factors);
  EXPECT_EQ(w1.tasks.outcomes, w2.tasks.outcomes);
  EXPECT_EQ(w1.holdout, w2.holdout);
  const auto [plan1, model1] = bootstrap_world(c, w1, 0);
  const auto [plan2, model2] = bootstrap_world(c, w2, 0);
  EXPECT_EQ(plan1.task_ids, plan2.task_ids);
  EXPECT_EQ(model1.weights, model2.weights);
  // Each task row is one-hot in the type block.
  const Index types = static_cast<Index>(c.factors - c.attribute_factors);
  for (Index r = 0; r < w1.tasks.size(); ++r) EXPECT_DOUBLE_EQ(w1.tasks.factors.row(r).head(types).sum(), 1.0);
}

TEST(Experiment, NoiselessRankingsAgreeWithTrueWeights) {
  const ExperimentConfig c = small_config();
  const SyntheticWorld world = build_world(c, 1);
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Index> ask;
    for (std::size_t i : sample_without_replacement(c.factors, c.k, rng)) ask.push_back(static_cast<Index>(i));
    for (const auto& con : ranking_to_constraints(simulate_ranking(world.worker, ask, rng))) {
      EXPECT_GE(world.worker.true_weights[con.higher], world.worker.true_weights[con.lower]);
    }
  }
}

TEST(Experiment, BootstrapVariantsRun) {
  for (BootstrapMethod b : {BootstrapMethod::optimized, BootstrapMethod::random, BootstrapMethod::uniform}) {
    ExperimentConfig c = small_config();
    c.bootstrap = b;
    c.replications = 2;
    const ExperimentResult r = run_elicitation_experiment(c);
    for (const auto& boot : r.bootstrap) {
      EXPECT_EQ(boot.bootstrap, b);
      EXPECT_EQ(boot.task_ids.size(), b == BootstrapMethod::uniform ? 0u : c.bootstrap_budget);
    }
  }
}
