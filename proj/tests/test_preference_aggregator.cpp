#include <gtest/gtest.h>

#include "elicit/preference_aggregator.hpp"
#include "oracles.hpp"

using namespace elicit;

namespace {

using Constraints = std::vector<PreferenceConstraint>;

/// Random acyclic, non-redundant constraint set on m factors.
Constraints random_constraints(std::mt19937_64& rng, Index m, std::size_t count, double margin) {
  Constraints out;
  for (int attempt = 0; attempt < 200 && out.size() < count; ++attempt) {
    const Index h = static_cast<Index>(rng() % static_cast<std::uint64_t>(m));
    const Index l = static_cast<Index>(rng() % static_cast<std::uint64_t>(m));
    if (h == l) continue;
    Constraints trial = out;
    trial.push_back({h, l, margin});
    if (!find_cycle(trial).empty()) continue;
    // Non-redundant: not already implied by a path h -> ... -> l.
    bool implied = false;
    std::vector<Index> frontier{h};
    std::vector<char> seen(static_cast<std::size_t>(m), 0);
    while (!frontier.empty() && !implied) {
      const Index v = frontier.back();
      frontier.pop_back();
      for (const auto& c : out) {
        if (c.higher == v && !seen[static_cast<std::size_t>(c.lower)]) {
          if (c.lower == l) implied = true;
          seen[static_cast<std::size_t>(c.lower)] = 1;
          frontier.push_back(c.lower);
        }
      }
    }
    if (!implied) out.push_back({h, l, margin});
  }
  return out;
}

}  // namespace

TEST(Ranking, PairsInOrder) {
  const auto cs = ranking_to_constraints({3, 1, 2}, 0.0);
  EXPECT_EQ(cs, (Constraints{{3, 1, 0.0}, {3, 2, 0.0}, {1, 2, 0.0}}));
  EXPECT_TRUE(ranking_to_constraints({7}).empty());
  const auto four = ranking_to_constraints({4, 2, 0, 1});
  EXPECT_EQ(four.size(), 6u);
  EXPECT_TRUE(find_cycle(four).empty());
  EXPECT_THROW(ranking_to_constraints({1, 2, 1}), ValidationError);
}

TEST(Cycle, DetectedAndDescribed) {
  const Constraints cs{{0, 1, 0.0}, {1, 2, 0.0}, {2, 0, 0.0}};
  const auto cycle = find_cycle(cs);
  ASSERT_FALSE(cycle.empty());
  EXPECT_EQ(cycle.front(), cycle.back());
  EXPECT_EQ(describe_cycle(cycle, {"a", "b", "c"}), "a > b > c > a");
  EXPECT_TRUE(find_cycle({{0, 1, 0.0}, {0, 2, 0.0}, {1, 2, 0.0}}).empty());
}

TEST(ConstraintStore, MergeRules) {
  ConstraintStore full(HistoryMode::full);
  full = merge_constraints(full, {{1, 2, kDefaultMargin}}, 1);
  EXPECT_EQ(full.constraints(), (Constraints{{1, 2, kDefaultMargin}}));
  full = merge_constraints(full, {{2, 1, kDefaultMargin}}, 2);
  EXPECT_EQ(full.constraints(), (Constraints{{2, 1, kDefaultMargin}}));
  EXPECT_EQ(full.entries().front().iteration, 2u);

  ConstraintStore recent(HistoryMode::recent);
  recent = merge_constraints(recent, {{0, 1, 0.1}, {0, 2, 0.1}}, 1);
  const Constraints latest{{3, 4, 0.1}};
  recent = merge_constraints(recent, latest, 2);
  EXPECT_EQ(recent.constraints(), latest);
}

TEST(ConstraintStore, FullHistoryNeverHoldsBothOrientationsOrCycles) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    ConstraintStore store(HistoryMode::full);
    for (std::size_t it = 1; it <= 10; ++it) {
      std::vector<Index> ranking{0, 1, 2, 3, 4, 5};
      std::shuffle(ranking.begin(), ranking.end(), rng);
      ranking.resize(3);
      store = merge_constraints(store, ranking_to_constraints(ranking), it);
      const auto cs = store.constraints();
      EXPECT_TRUE(find_cycle(cs).empty());
      for (const auto& a : cs) {
        for (const auto& b : cs) EXPECT_FALSE(a.higher == b.lower && a.lower == b.higher);
      }
      // The newest ranking always survives intact.
      for (const auto& c : ranking_to_constraints(ranking)) {
        EXPECT_NE(std::find(cs.begin(), cs.end(), c), cs.end());
      }
    }
  }
}

TEST(ConstraintStore, RejectsContradictoryIncoming) {
  ConstraintStore store;
  EXPECT_THROW(merge_constraints(store, {{0, 1, 0.0}, {1, 0, 0.0}}, 1), ValidationError);
}

TEST(ConstrainedFit, HandDerivedProjection) {
  const LabeledTasks d{Matrix::Identity(2, 2), Vector{{0.0, 1.0}}};
  const WorkerModel m = constrained_fit(d, 0.0, {{0, 1, 0.0}});
  EXPECT_NEAR(m.weights[0], 0.5, 1e-8);
  EXPECT_NEAR(m.weights[1], 0.5, 1e-8);
}

TEST(ConstrainedFit, InactiveConstraintsGiveRidgeSolution) {
  const LabeledTasks d{Matrix::Identity(2, 2), Vector{{1.0, 0.0}}};
  const WorkerModel m = constrained_fit(d, 0.0, {{0, 1, 0.1}});
  EXPECT_TRUE(m.weights.isApprox(ridge_solve(d.factors, d.outcomes, 0.0)));
}

TEST(ConstrainedFit, CycleIsInfeasible) {
  const LabeledTasks d{Matrix::Identity(3, 3), Vector{{1.0, 0.0, 0.5}}};
  try {
    constrained_fit(d, 0.0, {{0, 1, 0.0}, {1, 2, 0.0}, {2, 0, 0.0}}, {"x", "y", "z"});
    FAIL() << "expected InfeasibleError";
  } catch (const InfeasibleError& e) {
    EXPECT_NE(std::string(e.what()).find("x > y > z > x"), std::string::npos) << e.what();
  }
}

TEST(ConstrainedFit, BadConstraintsRejected) {
  const LabeledTasks d{Matrix::Identity(2, 2), Vector{{1.0, 0.0}}};
  EXPECT_THROW(constrained_fit(d, 0.0, {{0, 2, 0.0}}), ValidationError);
  EXPECT_THROW(constrained_fit(d, 0.0, {{1, 1, 0.0}}), ValidationError);
  EXPECT_THROW(constrained_fit(d, 0.0, {{0, 1, -1.0}}), ValidationError);
}

TEST(ConstrainedFit, MatchesGridOracleAndKkt) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Index m = 2 + static_cast<Index>(rng() % 3);  // 2..4
    const Matrix x = oracle::random_matrix(3 * m, m, rng);
    const Vector y = (oracle::random_matrix(3 * m, 1, rng).array() * 0.5 + 0.5).matrix();
    const double alpha = trial % 2 ? 0.0 : 0.05;
    const auto cs = random_constraints(rng, m, 1 + rng() % 3, trial % 3 ? kDefaultMargin : 0.0);
    const LabeledTasks d{x, y};
    const WorkerModel fitted = constrained_fit(d, alpha, cs);
    const Vector& w = fitted.weights;
    for (const auto& c : cs) EXPECT_GE(w[c.higher] - w[c.lower], c.margin - 1e-9);

    const double radius = 2.0 * std::max(1.0, oracle::ridge(x, y, alpha).cwiseAbs().maxCoeff());
    const Vector reference = oracle::grid_refine(x, y, alpha, cs, radius);
    const double ours = ridge_objective(d, alpha, w), theirs = ridge_objective(d, alpha, reference);
    EXPECT_LE(ours, theirs * (1 + 1e-5) + 1e-12) << "trial " << trial;
    EXPECT_GE(ours, theirs * (1 - 1e-5) - 1e-12) << "trial " << trial;

    // KKT: 2Hw - 2g = sum mu_c a_c with mu >= 0 and complementary slackness.
    Matrix h = x.transpose() * x;
    h.diagonal().array() += alpha;
    const ConstrainedSolution sol = solve_constrained_least_squares(h, x.transpose() * y, cs);
    Vector grad = 2 * (h * sol.weights - x.transpose() * y);
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const double mu = sol.multipliers[static_cast<Index>(i)];
      EXPECT_GE(mu, 0.0);
      const double gap = sol.weights[cs[i].higher] - sol.weights[cs[i].lower] - cs[i].margin;
      EXPECT_LE(std::abs(mu * gap), 1e-6);
      grad[cs[i].higher] -= mu;
      grad[cs[i].lower] += mu;
    }
    EXPECT_LE(grad.cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(ConstrainedFit, ObjectiveMonotonicity) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix x = oracle::random_matrix(12, 4, rng);
    const Vector y = (oracle::random_matrix(12, 1, rng).array() * 0.5 + 0.5).matrix();
    const LabeledTasks d{x, y};
    const auto cs = random_constraints(rng, 4, 3, kDefaultMargin);
    const Vector free = ridge_solve(x, y, 0.0);
    const double unconstrained = ridge_objective(d, 0.0, free);
    const double constrained = ridge_objective(d, 0.0, constrained_fit(d, 0.0, cs).weights);
    EXPECT_GE(constrained, unconstrained - 1e-12);
    const bool all_inactive = oracle::feasible(cs, free);
    if (all_inactive) {
      EXPECT_NEAR(constrained, unconstrained, 1e-12);
    } else {
      EXPECT_GT(constrained, unconstrained);
    }
  }
}

TEST(ConstrainedFit, DroppingInactiveConstraintChangesNothing) {
  std::mt19937_64 rng(4);
  int checked = 0;
  for (int trial = 0; trial < 100 && checked < 20; ++trial) {
    const Matrix x = oracle::random_matrix(12, 4, rng);
    const Vector y = (oracle::random_matrix(12, 1, rng).array() * 0.5 + 0.5).matrix();
    const LabeledTasks d{x, y};
    const auto cs = random_constraints(rng, 4, 3, kDefaultMargin);
    const Vector w = constrained_fit(d, 0.0, cs).weights;
    for (std::size_t i = 0; i < cs.size(); ++i) {
      if (w[cs[i].higher] - w[cs[i].lower] - cs[i].margin < 1e-6) continue;
      auto fewer = cs;
      fewer.erase(fewer.begin() + static_cast<std::ptrdiff_t>(i));
      EXPECT_LE((constrained_fit(d, 0.0, fewer).weights - w).cwiseAbs().maxCoeff(), 1e-9);
      ++checked;
    }
  }
  EXPECT_GT(checked, 0);
}

TEST(ConstrainedFit, RunningExampleOrdering) {
  // tagging, ranking, sentiment, payoff, duration; bootstrap rows t1, t3, t6.
  LabeledTasks d{Matrix(3, 5), Vector(3)};
  d.factors << 1, 0, 0, 1, 1,  //
      0, 1, 0, 0, 0,           //
      0, 0, 1, 1, 1;
  d.outcomes << 1, 1, 0;
  const auto cs = ranking_to_constraints({4, 2, 3});  // duration > sentiment > payoff
  const WorkerModel m = constrained_fit(d, 1e-6, cs, {"tagging", "ranking", "sentiment", "payoff", "duration"});
  EXPECT_GT(m.weights[4], m.weights[2]);
  EXPECT_GT(m.weights[2], m.weights[3]);
}

TEST(ConstrainedFit, LargerProblemStaysFeasible) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = oracle::random_binary(60, 30, rng);
    const Vector y = oracle::random_binary(60, 1, rng);
    ConstraintStore store;
    for (std::size_t it = 1; it <= 7; ++it) {
      std::vector<Index> ranking(30);
      std::iota(ranking.begin(), ranking.end(), 0);
      std::shuffle(ranking.begin(), ranking.end(), rng);
      ranking.resize(4);
      store = merge_constraints(store, ranking_to_constraints(ranking), it);
    }
    const auto cs = store.constraints();
    const Vector w = constrained_fit(LabeledTasks{x, y}, 0.01, cs).weights;
    for (const auto& c : cs) EXPECT_GE(w[c.higher] - w[c.lower], c.margin - 1e-9);
  }
}
