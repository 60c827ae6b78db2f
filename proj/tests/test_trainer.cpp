#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "oracle.hpp"
#include "treemax/trainer.hpp"
#include "treemax/tree_policy.hpp"

using namespace treemax;

namespace {

constexpr int kNoPruning = std::numeric_limits<int>::max();

Eigen::VectorXd chain_theta(double left, double mid, double right) {
  Eigen::VectorXd theta(5);
  theta << left, mid, mid, mid, right;
  return theta;
}

}  // namespace

TEST_CASE("environment twins are valid tabular MDPs") {
  const ChainEnv chain(5);
  const Mdp chain_mdp = chain.to_mdp(0.9);
  CHECK(chain_mdp.num_states == 5);
  CHECK(chain_mdp.num_actions == 2);
  // terminal state absorbs with zero reward
  CHECK(chain_mdp.transitions[4](0, 4) == 1.0);
  CHECK(chain_mdp.transitions[4](1, 4) == 1.0);
  CHECK(chain_mdp.rewards(4, 0) == 0.0);
  CHECK(chain_mdp.rewards(3, 1) == 1.0);

  const GridworldEnv grid(4);
  const Mdp grid_mdp = grid.to_mdp(0.9);
  CHECK(grid_mdp.num_states == 16);
  CHECK(grid_mdp.num_actions == 4);
  CHECK(grid_mdp.rewards(14, 3) == 1.0);  // step right into the goal corner
  CHECK(grid_mdp.rewards(15, 0) == 0.0);
}

TEST_CASE("expand at depth one keeps one node per root action") {
  const ChainEnv env(5);
  const Eigen::VectorXd theta = chain_theta(0.3, 0.1, 0.7);
  const ExpansionTree tree = expand(env, 1, 1, kNoPruning, theta, 0.9);
  REQUIRE(tree.levels.size() == 1);
  REQUIRE(tree.levels[0].size() == 2);
  // left lands in state 0, right in state 2, logit = r + gamma theta(s')
  CHECK(tree.levels[0][0].state == 0);
  CHECK(tree.levels[0][0].logit == doctest::Approx(0.0 + 0.9 * 0.3).epsilon(1e-14));
  CHECK(tree.levels[0][1].state == 2);
  CHECK(tree.levels[0][1].logit == doctest::Approx(0.0 + 0.9 * 0.1).epsilon(1e-14));
}

TEST_CASE("expand without pruning enumerates every action sequence") {
  const ChainEnv env(5);
  Rng rng(3);
  const Eigen::VectorXd theta = oracle::random_theta(5, rng);
  const ExpansionTree tree = expand(env, 0, 3, kNoPruning, theta, 0.9);
  REQUIRE(tree.levels.back().size() == 8);

  // hand enumeration over the eight action triples
  for (int bits = 0; bits < 8; ++bits) {
    int state = 0;
    double cum = 0.0, gamma_pow = 1.0;
    for (int t = 0; t < 3; ++t) {
      const int action = (bits >> t) & 1;
      const auto step = env.step(state, action);
      cum += gamma_pow * step.reward;
      gamma_pow *= 0.9;
      state = step.next_state;
    }
    const double logit = cum + std::pow(0.9, 3) * theta(state);
    bool found = false;
    for (const auto& leaf : tree.levels.back()) {
      if (leaf.root_action == (bits & 1) && std::abs(leaf.logit - logit) < 1e-12 &&
          leaf.state == state)
        found = true;
    }
    CHECK(found);
  }
}

TEST_CASE("expand keeps insertion order under total ties") {
  const ChainEnv env(5);
  const Eigen::VectorXd theta = Eigen::VectorXd::Zero(5);
  // far from the goal nothing pays reward, so all logits tie at zero and
  // pruning keeps the first two inserted nodes, both under root action 0
  const ExpansionTree tree = expand(env, 0, 2, 2, theta, 0.9);
  REQUIRE(tree.levels.back().size() == 2);
  CHECK(tree.levels.back()[0].root_action == 0);
  CHECK(tree.levels.back()[1].root_action == 0);
}

TEST_CASE("expand enforces the width cap at every level") {
  const GridworldEnv env(4);
  Rng rng(5);
  const Eigen::VectorXd theta = oracle::random_theta(16, rng);
  const ExpansionTree tree = expand(env, 0, 4, 7, theta, 0.9);
  for (const auto& level : tree.levels) CHECK(level.size() <= 7);
  CHECK_THROWS_AS(expand(env, 0, 2, 3, theta, 0.9), std::invalid_argument);
}

TEST_CASE("tree policy with single leaves reproduces the leaf logits") {
  const ChainEnv env(5);
  const Eigen::VectorXd theta = chain_theta(0.4, 0.2, 0.9);
  const ExpansionTree tree = expand(env, 2, 1, kNoPruning, theta, 0.9);
  const RootDistribution dist = tree_policy_from_expansion(tree, 1.7);
  CHECK(dist.logits(0) == doctest::Approx(tree.levels[0][0].logit).epsilon(1e-14));
  CHECK(dist.logits(1) == doctest::Approx(tree.levels[0][1].logit).epsilon(1e-14));
  const double gap = 1.7 * (dist.logits(1) - dist.logits(0));
  CHECK(dist.probs(1) / dist.probs(0) == doctest::Approx(std::exp(gap)).epsilon(1e-12));
}

TEST_CASE("tree policy at vanishing temperature is uniform over survivors") {
  const ChainEnv env(5);
  Rng rng(7);
  const Eigen::VectorXd theta = oracle::random_theta(5, rng);
  const ExpansionTree tree = expand(env, 1, 3, kNoPruning, theta, 0.9);
  const RootDistribution dist = tree_policy_from_expansion(tree, 1e-12);
  CHECK(std::abs(dist.probs(0) - 0.5) < 1e-9);
  CHECK(std::abs(dist.probs(1) - 0.5) < 1e-9);
}

TEST_CASE("full-width tree policy equals the tabular cumulative policy") {
  const ChainEnv env(5);
  Rng rng(9);
  const Mdp twin = env.to_mdp(0.9);
  TreePolicyConfig config;
  config.variant = Variant::Cumulative;
  config.beta = 1.3;
  config.theta = oracle::random_theta(5, rng);
  config.behavior = StationaryPolicy::uniform(5, 2);

  for (int depth : {1, 2, 3}) {
    config.depth = depth;
    for (int root = 0; root < 4; ++root) {
      const ExpansionTree tree = expand(env, root, depth, kNoPruning, config.theta, 0.9);
      const RootDistribution from_tree = tree_policy_from_expansion(tree, config.beta);
      const TreePolicyDistribution from_matrix = policy_cumulative(twin, config, root);
      CHECK((from_tree.probs - from_matrix.probs).lpNorm<Eigen::Infinity>() < 1e-10);
    }
  }
}

TEST_CASE("gridworld full-width tree policy equals its twin as well") {
  const GridworldEnv env(4);
  Rng rng(11);
  const Mdp twin = env.to_mdp(0.95);
  TreePolicyConfig config;
  config.variant = Variant::Cumulative;
  config.depth = 2;
  config.beta = 0.8;
  config.theta = oracle::random_theta(16, rng);
  config.behavior = StationaryPolicy::uniform(16, 4);
  for (int root : {0, 5, 10, 14}) {
    const ExpansionTree tree = expand(env, root, 2, kNoPruning, config.theta, 0.95);
    const RootDistribution from_tree = tree_policy_from_expansion(tree, config.beta);
    const TreePolicyDistribution from_matrix = policy_cumulative(twin, config, root);
    CHECK((from_tree.probs - from_matrix.probs).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("pruned-out root actions get zero probability and are flagged") {
  const ChainEnv env(5);
  // from state 3 the left subtree reaches states {1, 3}; scoring those high
  // squeezes the lone right-action leaf out at width 2
  Eigen::VectorXd theta(5);
  theta << 0.0, 5.0, 0.0, 5.0, 0.0;
  const ExpansionTree tree = expand(env, 3, 2, 2, theta, 0.9);
  const RootDistribution dist = tree_policy_from_expansion(tree, 1.0);
  REQUIRE(dist.pruned_actions.size() == 1);
  CHECK(dist.pruned_actions[0] == 1);
  CHECK(dist.probs(1) == 0.0);
  CHECK(dist.probs(0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(grad_log_tree_policy(tree, 1.0, 1, 5), std::invalid_argument);
}

TEST_CASE("tree policy gradient passes a finite-difference score check") {
  const ChainEnv env(5);
  Rng rng(13);
  Eigen::VectorXd theta = oracle::random_theta(5, rng);
  const double beta = 1.4, gamma = 0.9, step = 1e-6;

  for (int root : {0, 1, 2}) {
    const ExpansionTree tree = expand(env, root, 3, kNoPruning, theta, gamma);
    const RootDistribution dist = tree_policy_from_expansion(tree, beta);

    // score identity
    Eigen::VectorXd weighted = Eigen::VectorXd::Zero(5);
    for (int a = 0; a < 2; ++a)
      weighted += dist.probs(a) * grad_log_tree_policy(tree, beta, a, 5);
    CHECK(weighted.lpNorm<Eigen::Infinity>() < 1e-8);

    // central differences through the whole expansion
    for (int a = 0; a < 2; ++a) {
      const Eigen::VectorXd grad = grad_log_tree_policy(tree, beta, a, 5);
      for (int k = 0; k < 5; ++k) {
        Eigen::VectorXd plus = theta, minus = theta;
        plus(k) += step;
        minus(k) -= step;
        const double log_plus = std::log(
            tree_policy_from_expansion(expand(env, root, 3, kNoPruning, plus, gamma), beta)
                .probs(a));
        const double log_minus = std::log(
            tree_policy_from_expansion(expand(env, root, 3, kNoPruning, minus, gamma), beta)
                .probs(a));
        const double numeric = (log_plus - log_minus) / (2.0 * step);
        CHECK(std::abs(grad(k) - numeric) < 1e-6);
      }
    }
  }
}

TEST_CASE("train with zero learning rate keeps scores, entropy and returns frozen") {
  const ChainEnv env(5);
  TrainConfig config;
  config.depth = 2;
  config.learning_rate = 0.0;
  config.iterations = 30;
  config.seed = 4;
  const TrainResult result = train(env, config);
  REQUIRE(result.records.size() == 30);
  CHECK(result.final_scores.cwiseAbs().maxCoeff() == 0.0);
  for (const auto& record : result.records) {
    CHECK(record.policy_entropy == result.records.front().policy_entropy);
    // a frozen table replays the identical batch, so the column is flat
    CHECK(record.mean_return == result.records.front().mean_return);
  }
}

TEST_CASE("train is bit-identical for a fixed seed") {
  const ChainEnv env(5);
  TrainConfig config;
  config.depth = 3;
  config.iterations = 40;
  config.seed = 21;
  const TrainResult a = train(env, config);
  const TrainResult b = train(env, config);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].mean_return == b.records[i].mean_return);
    CHECK(a.records[i].empirical_grad_variance == b.records[i].empirical_grad_variance);
    CHECK(a.records[i].policy_entropy == b.records[i].policy_entropy);
  }
  CHECK(a.final_scores == b.final_scores);
}

TEST_CASE("tree policies train with lower gradient variance than flat softmax") {
  const ChainEnv env(5);
  TrainConfig tree_config;
  tree_config.depth = 2;
  tree_config.iterations = 200;
  tree_config.seed = 1;
  TrainConfig flat_config = tree_config;
  flat_config.depth = 0;

  const TrainResult tree_run = train(env, tree_config);
  const TrainResult flat_run = train(env, flat_config);
  double tree_mean = 0.0, flat_mean = 0.0;
  for (const auto& record : tree_run.records) tree_mean += record.empirical_grad_variance;
  for (const auto& record : flat_run.records) flat_mean += record.empirical_grad_variance;
  CHECK(tree_mean / tree_run.records.size() < flat_mean / flat_run.records.size());
}

TEST_CASE("training reaches the goal-seeking policy on the chain") {
  const ChainEnv env(5);
  TrainConfig config;
  config.depth = 2;
  config.iterations = 2000;
  config.seed = 2;
  const TrainResult result = train(env, config);
  REQUIRE_FALSE(result.diverged);
  const double optimal = std::pow(config.gamma, 3);  // four steps, reward on the last
  double best = 0.0;
  for (const auto& record : result.records) best = std::max(best, record.mean_return);
  CHECK(best >= 0.95 * optimal);
}

TEST_CASE("train aborts when scores blow up") {
  const ChainEnv env(5);
  TrainConfig config;
  config.depth = 1;
  config.learning_rate = 1e8;
  config.iterations = 500;
  config.seed = 3;
  const TrainResult result = train(env, config);
  CHECK(result.diverged);
  CHECK(result.records.size() < 500);
}
