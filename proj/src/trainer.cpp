#include "treemax/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace treemax {

Mdp SimEnvironment::to_mdp(double gamma) const {
  Mdp mdp;
  mdp.num_states = num_states();
  mdp.num_actions = num_actions();
  mdp.discount = gamma;
  mdp.transitions.assign(mdp.num_states, Eigen::MatrixXd::Zero(mdp.num_actions, mdp.num_states));
  mdp.rewards = Eigen::MatrixXd::Zero(mdp.num_states, mdp.num_actions);
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      const StepResult result = step(s, a);
      mdp.transitions[s](a, result.next_state) = 1.0;
      mdp.rewards(s, a) = result.reward;
    }
  }
  mdp.validate();
  return mdp;
}

ChainEnv::ChainEnv(int length) : length_(length) {
  if (length < 2) throw std::invalid_argument("chain: length must be >= 2");
}

int ChainEnv::initial_state() const { return 0; }
int ChainEnv::num_states() const { return length_; }
int ChainEnv::num_actions() const { return 2; }

SimEnvironment::StepResult ChainEnv::step(int state, int action) const {
  const int goal = length_ - 1;
  if (state == goal) return {goal, 0.0, true};  // absorbing
  const int next = action == 0 ? std::max(state - 1, 0) : std::min(state + 1, goal);
  return {next, next == goal ? 1.0 : 0.0, next == goal};
}

GridworldEnv::GridworldEnv(int side) : side_(side) {
  if (side < 2) throw std::invalid_argument("gridworld: side must be >= 2");
}

int GridworldEnv::initial_state() const { return 0; }
int GridworldEnv::num_states() const { return side_ * side_; }
int GridworldEnv::num_actions() const { return 4; }

SimEnvironment::StepResult GridworldEnv::step(int state, int action) const {
  const int goal = side_ * side_ - 1;
  if (state == goal) return {goal, 0.0, true};
  int row = state / side_;
  int col = state % side_;
  switch (action) {
    case 0: row = std::max(row - 1, 0); break;
    case 1: row = std::min(row + 1, side_ - 1); break;
    case 2: col = std::max(col - 1, 0); break;
    case 3: col = std::min(col + 1, side_ - 1); break;
    default: throw std::invalid_argument("gridworld: bad action");
  }
  const int next = row * side_ + col;
  return {next, next == goal ? 1.0 : 0.0, next == goal};
}

std::unique_ptr<SimEnvironment> make_environment(const std::string& name) {
  if (name == "chain") return std::make_unique<ChainEnv>(5);
  if (name == "gridworld") return std::make_unique<GridworldEnv>(4);
  throw std::invalid_argument("unknown environment: " + name);
}

ExpansionTree expand(const SimEnvironment& env, int root, int depth, int width,
                     const Eigen::VectorXd& theta, double gamma) {
  const int A = env.num_actions();
  if (depth < 1) throw std::invalid_argument("expand: depth must be >= 1");
  if (width < A)
    throw std::invalid_argument("expand: width must cover every root action");
  if (theta.size() != env.num_states())
    throw std::invalid_argument("expand: theta must have one entry per state");

  ExpansionTree tree;
  tree.width_limit = width;
  tree.depth = depth;
  tree.num_actions = A;
  tree.gamma = gamma;
  tree.levels.reserve(depth);

  auto prune = [&](std::vector<ExpansionTree::Node>& level) {
    if (static_cast<int>(level.size()) <= width) return;
    std::stable_sort(level.begin(), level.end(),
                     [](const ExpansionTree::Node& a, const ExpansionTree::Node& b) {
                       return a.logit > b.logit;
                     });
    level.resize(width);
  };

  std::vector<ExpansionTree::Node> frontier;
  for (int a = 0; a < A; ++a) {
    const auto result = env.step(root, a);
    ExpansionTree::Node node;
    node.state = result.next_state;
    node.cum_reward = result.reward;
    node.logit = result.reward + gamma * theta(result.next_state);
    node.root_action = a;
    node.weight = 1.0;
    node.terminal = result.terminal;
    frontier.push_back(node);
  }
  prune(frontier);
  tree.levels.push_back(frontier);

  for (int level = 1; level < depth; ++level) {
    const double step_discount = std::pow(gamma, level);
    const double score_discount = std::pow(gamma, level + 1);
    std::vector<ExpansionTree::Node> next;
    for (const auto& node : frontier) {
      if (node.terminal) {
        // carried through with its subtree mass intact
        ExpansionTree::Node carried = node;
        carried.logit = node.cum_reward + score_discount * theta(node.state);
        next.push_back(carried);
        continue;
      }
      for (int a = 0; a < A; ++a) {
        const auto result = env.step(node.state, a);
        ExpansionTree::Node child;
        child.state = result.next_state;
        child.cum_reward = node.cum_reward + step_discount * result.reward;
        child.logit = child.cum_reward + score_discount * theta(child.state);
        child.root_action = node.root_action;
        child.weight = node.weight / A;
        child.terminal = result.terminal;
        next.push_back(child);
      }
    }
    prune(next);
    tree.levels.push_back(next);
    frontier = std::move(next);
  }
  return tree;
}

RootDistribution tree_policy_from_expansion(const ExpansionTree& tree, double beta) {
  if (tree.levels.empty()) throw std::invalid_argument("tree policy: empty expansion");
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(tree.num_actions);
  Eigen::VectorXd mean_logit = Eigen::VectorXd::Zero(tree.num_actions);
  for (const auto& leaf : tree.levels.back()) {
    mass(leaf.root_action) += leaf.weight;
    mean_logit(leaf.root_action) += leaf.weight * leaf.logit;
  }

  RootDistribution dist;
  dist.logits.resize(tree.num_actions);
  double max_logit = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < tree.num_actions; ++a) {
    if (mass(a) > 0.0) {
      dist.logits(a) = mean_logit(a) / mass(a);
      max_logit = std::max(max_logit, beta * dist.logits(a));
    } else {
      dist.logits(a) = -std::numeric_limits<double>::infinity();
      dist.pruned_actions.push_back(a);
    }
  }
  dist.probs = Eigen::VectorXd::Zero(tree.num_actions);
  double total = 0.0;
  for (int a = 0; a < tree.num_actions; ++a) {
    if (std::isinf(dist.logits(a))) continue;
    dist.probs(a) = std::exp(beta * dist.logits(a) - max_logit);
    total += dist.probs(a);
  }
  dist.probs /= total;
  return dist;
}

Eigen::MatrixXd tree_logit_jacobian(const ExpansionTree& tree, int num_states) {
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(tree.num_actions, num_states);
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(tree.num_actions);
  const double score_discount = std::pow(tree.gamma, tree.depth);
  for (const auto& leaf : tree.levels.back()) {
    jac(leaf.root_action, leaf.state) += leaf.weight * score_discount;
    mass(leaf.root_action) += leaf.weight;
  }
  for (int a = 0; a < tree.num_actions; ++a)
    if (mass(a) > 0.0) jac.row(a) /= mass(a);
  return jac;
}

Eigen::VectorXd grad_log_tree_policy(const ExpansionTree& tree, double beta, int action,
                                     int num_states) {
  const RootDistribution dist = tree_policy_from_expansion(tree, beta);
  if (!(dist.probs(action) > 0.0))
    throw std::invalid_argument("grad_log_tree_policy: action has no surviving leaves");
  const Eigen::MatrixXd jac = tree_logit_jacobian(tree, num_states);
  const Eigen::RowVectorXd mean = dist.probs.transpose() * jac;
  return beta * (jac.row(action) - mean).transpose();
}

namespace {

double table_entropy(const Eigen::MatrixXd& probs) {
  double entropy = 0.0;
  for (int s = 0; s < probs.rows(); ++s)
    for (int a = 0; a < probs.cols(); ++a)
      if (probs(s, a) > 0.0) entropy -= probs(s, a) * std::log(probs(s, a));
  return entropy / probs.rows();
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t hash) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

int sample_categorical(Rng& rng, const Eigen::VectorXd& probs) {
  const double draw = rng.uniform();
  double acc = 0.0;
  for (int a = 0; a < probs.size(); ++a) {
    acc += probs(a);
    if (draw < acc) return a;
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace

TrainResult train(const SimEnvironment& env, const TrainConfig& config) {
  if (config.depth < 0) throw std::invalid_argument("train: depth must be >= 0");
  if (config.batch_size < 1 || config.iterations < 1)
    throw std::invalid_argument("train: batch_size and iterations must be positive");

  const int S = env.num_states();
  const int A = env.num_actions();
  const bool flat = config.depth == 0;
  const int dim = flat ? S * A : S;

  Eigen::VectorXd scores = Eigen::VectorXd::Zero(dim);

  TrainResult result;
  result.records.reserve(config.iterations);

  for (int iteration = 0; iteration < config.iterations; ++iteration) {
    // policies and gradients are functions of the current table only, so
    // compute them once per iteration for every state
    Eigen::MatrixXd policy(S, A);
    std::vector<Eigen::MatrixXd> grads(S);  // grads[s] is A x dim
    for (int s = 0; s < S; ++s) {
      if (flat) {
        Eigen::VectorXd logits(A);
        for (int a = 0; a < A; ++a) logits(a) = config.beta * scores(s * A + a);
        const double shift = logits.maxCoeff();
        Eigen::VectorXd exps = (logits.array() - shift).exp();
        policy.row(s) = (exps / exps.sum()).transpose();
        grads[s] = Eigen::MatrixXd::Zero(A, dim);
        for (int a = 0; a < A; ++a) {
          for (int b = 0; b < A; ++b)
            grads[s](a, s * A + b) =
                config.beta * ((a == b ? 1.0 : 0.0) - policy(s, b));
        }
      } else {
        const ExpansionTree tree =
            expand(env, s, config.depth, config.width, scores, config.gamma);
        const RootDistribution dist = tree_policy_from_expansion(tree, config.beta);
        policy.row(s) = dist.probs.transpose();
        const Eigen::MatrixXd jac = tree_logit_jacobian(tree, S);
        const Eigen::RowVectorXd mean = dist.probs.transpose() * jac;
        grads[s] = config.beta * (jac.rowwise() - mean);
        for (const int a : dist.pruned_actions) grads[s].row(a).setZero();
      }
    }

    // episode streams are keyed on (seed, episode, current table), so
    // rollouts are order-independent and a frozen table replays the same
    // batch, while any parameter movement redraws everything
    const std::uint64_t table_hash =
        fnv1a(scores.data(), sizeof(double) * scores.size(), 0xcbf29ce484222325ULL);

    std::vector<Eigen::VectorXd> episode_grads;
    episode_grads.reserve(config.batch_size);
    double return_sum = 0.0;
    for (int episode = 0; episode < config.batch_size; ++episode) {
      Rng rng(config.seed ^ table_hash ^ (0xbf58476d1ce4e5b9ULL * (episode + 1)));
      std::vector<int> states, actions;
      std::vector<double> rewards;
      int state = env.initial_state();
      for (int t = 0; t < config.max_episode_steps; ++t) {
        const int action = sample_categorical(rng, policy.row(state).transpose());
        const auto step = env.step(state, action);
        states.push_back(state);
        actions.push_back(action);
        rewards.push_back(step.reward);
        state = step.next_state;
        if (step.terminal) break;
      }
      double to_go = 0.0;
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
      for (int t = static_cast<int>(states.size()) - 1; t >= 0; --t) {
        to_go = rewards[t] + config.gamma * to_go;
        grad += to_go * grads[states[t]].row(actions[t]).transpose();
      }
      return_sum += to_go;  // after the loop, to_go is the episode return
      episode_grads.push_back(std::move(grad));
    }

    Eigen::VectorXd mean_grad = Eigen::VectorXd::Zero(dim);
    for (const auto& grad : episode_grads) mean_grad += grad;
    mean_grad /= config.batch_size;
    double grad_variance = 0.0;
    if (config.batch_size > 1) {
      for (const auto& grad : episode_grads)
        grad_variance += (grad - mean_grad).squaredNorm();
      grad_variance /= (config.batch_size - 1);
    }

    TrainRecord record;
    record.iteration = iteration;
    record.mean_return = return_sum / config.batch_size;
    record.empirical_grad_variance = grad_variance;
    record.policy_entropy = table_entropy(policy);
    result.records.push_back(record);

    scores += config.learning_rate * mean_grad;
    if (scores.lpNorm<Eigen::Infinity>() > 1e6) {
      result.diverged = true;
      break;
    }
  }
  result.final_scores = scores;
  return result;
}

}  // namespace treemax
