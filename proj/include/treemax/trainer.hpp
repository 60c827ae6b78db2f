#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "treemax/mdp.hpp"

namespace treemax {

/// Deterministic forward model with tabular state encoding. step must be
/// side-effect free so nodes can be expanded breadth-first from clones.
class SimEnvironment {
 public:
  struct StepResult {
    int next_state = 0;
    double reward = 0.0;
    bool terminal = false;
  };

  virtual ~SimEnvironment() = default;
  virtual int initial_state() const = 0;
  virtual int num_states() const = 0;
  virtual int num_actions() const = 0;
  virtual StepResult step(int state, int action) const = 0;
  virtual std::string name() const = 0;

  /// Exact tabular twin: terminal transitions become absorbing rows with
  /// zero reward.
  Mdp to_mdp(double gamma) const;
};

/// States 0..n-1 on a line; action 0 moves left (clipped), action 1 moves
/// right. Entering the last state pays 1 and terminates.
class ChainEnv : public SimEnvironment {
 public:
  explicit ChainEnv(int length = 5);
  int initial_state() const override;
  int num_states() const override;
  int num_actions() const override;
  StepResult step(int state, int action) const override;
  std::string name() const override { return "chain"; }

 private:
  int length_;
};

/// side x side grid, actions up/down/left/right clipped at walls. Entering
/// the bottom-right corner pays 1 and terminates.
class GridworldEnv : public SimEnvironment {
 public:
  explicit GridworldEnv(int side = 4);
  int initial_state() const override;
  int num_states() const override;
  int num_actions() const override;
  StepResult step(int state, int action) const override;
  std::string name() const override { return "gridworld"; }

 private:
  int side_;
};

std::unique_ptr<SimEnvironment> make_environment(const std::string& name);

/// Width-pruned breadth-first frontier. Node weights carry the uniform
/// expansion measure so terminal-stopped nodes keep the mass of the subtree
/// they stand for; with no terminals all surviving weights are equal.
struct ExpansionTree {
  struct Node {
    int state = 0;
    double cum_reward = 0.0;  // sum gamma^t r_t along the path
    double logit = 0.0;       // cum_reward + gamma^level * theta(state)
    int root_action = 0;
    double weight = 1.0;
    bool terminal = false;
  };

  std::vector<std::vector<Node>> levels;
  int width_limit = 0;
  int depth = 0;
  int num_actions = 0;
  double gamma = 0.0;
};

/// Expands every action of every frontier node; when a level exceeds `width`
/// keeps the top-`width` nodes ranked by running logit (cum_reward +
/// gamma^level * theta(state)), ties broken by insertion order. Terminal
/// nodes stop expanding and are carried through. Throws if width < number of
/// root actions.
ExpansionTree expand(const SimEnvironment& env, int root, int depth, int width,
                     const Eigen::VectorXd& theta, double gamma);

/// Root-action distribution: per-action logit is the weight-averaged leaf
/// logit (cum_reward + gamma^depth * theta(leaf)) over surviving leaves,
/// softmaxed at temperature beta. Actions whose leaves were all pruned get
/// probability zero; pruned_actions lists them.
struct RootDistribution {
  Eigen::VectorXd probs;
  Eigen::VectorXd logits;  // -inf for pruned actions
  std::vector<int> pruned_actions;
};

RootDistribution tree_policy_from_expansion(const ExpansionTree& tree, double beta);

/// d(root logit) / d(theta) as an A x num_states matrix: each surviving leaf
/// contributes gamma^depth times its normalized weight to its state's column.
Eigen::MatrixXd tree_logit_jacobian(const ExpansionTree& tree, int num_states);

/// Gradient of log prob of `action` at the expansion root with respect to a
/// state score table.
Eigen::VectorXd grad_log_tree_policy(const ExpansionTree& tree, double beta, int action,
                                     int num_states);

struct TrainRecord {
  int iteration = 0;
  double mean_return = 0.0;
  double empirical_grad_variance = 0.0;
  double policy_entropy = 0.0;
};

struct TrainConfig {
  int depth = 2;        // 0 selects the flat state-action softmax baseline
  int width = 1 << 20;
  double beta = 2.0;
  double gamma = 0.9;
  double learning_rate = 0.25;
  int batch_size = 16;
  int iterations = 200;
  int max_episode_steps = 50;
  std::uint64_t seed = 1;
};

struct TrainResult {
  std::vector<TrainRecord> records;
  bool diverged = false;
  Eigen::VectorXd final_scores;
};

/// Plain REINFORCE with return-to-go. depth >= 1 trains the state score
/// table through the expansion policy; depth == 0 trains a state-action
/// softmax table. empirical_grad_variance is the trace of the sample
/// covariance of per-episode gradients within a batch. Aborts (diverged)
/// when ||theta||_inf exceeds 1e6.
TrainResult train(const SimEnvironment& env, const TrainConfig& config);

}  // namespace treemax
