#include "treemax/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace treemax {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

constexpr double kRowSumTol = 1e-12;

}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t s = seed;
  for (auto& word : state_) word = splitmix64(s);
}

std::uint64_t Rng::next_u64() {
  // xoshiro256**
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  // rejection sampling to avoid modulo bias
  const std::uint64_t limit = n * (UINT64_MAX / n);
  std::uint64_t draw;
  do {
    draw = next_u64();
  } while (draw >= limit);
  return draw % n;
}

void Rng::shuffle(std::vector<int>& values) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = uniform_int(i);
    std::swap(values[i - 1], values[j]);
  }
}

void Mdp::validate() const {
  if (num_states <= 0 || num_actions <= 0)
    throw std::invalid_argument("mdp: num_states and num_actions must be positive");
  if (!(discount > 0.0 && discount < 1.0))
    throw std::invalid_argument("mdp: discount must lie strictly inside (0, 1)");
  if (static_cast<int>(transitions.size()) != num_states)
    throw std::invalid_argument("mdp: transitions must have one block per state");
  if (rewards.rows() != num_states || rewards.cols() != num_actions)
    throw std::invalid_argument("mdp: rewards must be num_states x num_actions");
  for (int s = 0; s < num_states; ++s) {
    const auto& block = transitions[s];
    if (block.rows() != num_actions || block.cols() != num_states) {
      std::ostringstream msg;
      msg << "mdp: transitions[" << s << "] must be num_actions x num_states";
      throw std::invalid_argument(msg.str());
    }
    for (int a = 0; a < num_actions; ++a) {
      double sum = 0.0;
      for (int t = 0; t < num_states; ++t) {
        const double p = block(a, t);
        if (!(p >= 0.0)) {
          std::ostringstream msg;
          msg << "mdp: transitions[" << s << "][" << a << "][" << t << "] = " << p
              << " is negative";
          throw std::invalid_argument(msg.str());
        }
        sum += p;
      }
      if (std::abs(sum - 1.0) > kRowSumTol) {
        std::ostringstream msg;
        msg << "mdp: transitions[" << s << "][" << a << "] sums to " << sum
            << ", expected 1 within 1e-12";
        throw std::invalid_argument(msg.str());
      }
    }
  }
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) {
      const double r = rewards(s, a);
      if (!(r >= 0.0 && r <= 1.0)) {
        std::ostringstream msg;
        msg << "mdp: rewards[" << s << "][" << a << "] = " << r << " outside [0, 1]";
        throw std::invalid_argument(msg.str());
      }
    }
  }
}

bool Mdp::rewards_state_only(double tol) const {
  for (int s = 0; s < num_states; ++s)
    for (int a = 1; a < num_actions; ++a)
      if (std::abs(rewards(s, a) - rewards(s, 0)) > tol) return false;
  return true;
}

Eigen::VectorXd Mdp::state_reward_vector(double tol) const {
  if (!rewards_state_only(tol))
    throw std::invalid_argument(
        "mdp: exponentiated variant requires rewards that depend only on the state");
  return rewards.col(0);
}

void StationaryPolicy::validate() const {
  for (int s = 0; s < probs.rows(); ++s) {
    double sum = 0.0;
    for (int a = 0; a < probs.cols(); ++a) {
      if (!(probs(s, a) >= 0.0)) {
        std::ostringstream msg;
        msg << "policy: probs[" << s << "][" << a << "] is negative";
        throw std::invalid_argument(msg.str());
      }
      sum += probs(s, a);
    }
    if (std::abs(sum - 1.0) > kRowSumTol) {
      std::ostringstream msg;
      msg << "policy: row " << s << " sums to " << sum << ", expected 1 within 1e-12";
      throw std::invalid_argument(msg.str());
    }
  }
}

StationaryPolicy StationaryPolicy::uniform(int num_states, int num_actions) {
  StationaryPolicy policy;
  policy.probs = Eigen::MatrixXd::Constant(num_states, num_actions, 1.0 / num_actions);
  return policy;
}

const char* regime_name(Regime regime) {
  switch (regime) {
    case Regime::NearUniform: return "near_uniform";
    case Regime::Random: return "random";
    case Regime::NearPermutation: return "near_permutation";
  }
  return "unknown";
}

Regime parse_regime(const std::string& name) {
  if (name == "near_uniform" || name == "uniform") return Regime::NearUniform;
  if (name == "random") return Regime::Random;
  if (name == "near_permutation" || name == "permutation") return Regime::NearPermutation;
  throw std::invalid_argument("unknown regime: " + name);
}

InducedChain induce_chain(const Mdp& mdp, const StationaryPolicy& policy) {
  if (policy.probs.rows() != mdp.num_states || policy.probs.cols() != mdp.num_actions)
    throw std::invalid_argument("induce_chain: policy dimensions do not match mdp");
  InducedChain chain;
  chain.transition.resize(mdp.num_states, mdp.num_states);
  chain.reward.resize(mdp.num_states);
  for (int s = 0; s < mdp.num_states; ++s) {
    chain.transition.row(s) = policy.probs.row(s) * mdp.transitions[s];
    chain.reward(s) = policy.probs.row(s).dot(mdp.rewards.row(s));
  }
  return chain;
}

Eigen::VectorXd solve_value(const Mdp& mdp, const StationaryPolicy& policy) {
  const InducedChain chain = induce_chain(mdp, policy);
  const int n = mdp.num_states;
  const Eigen::MatrixXd system =
      Eigen::MatrixXd::Identity(n, n) - mdp.discount * chain.transition;
  const Eigen::VectorXd value = system.partialPivLu().solve(chain.reward);
  const double residual = (system * value - chain.reward).lpNorm<Eigen::Infinity>();
  if (!(residual <= 1e-10))
    throw std::runtime_error("solve_value: linear solve residual " + std::to_string(residual));
  return value;
}

Eigen::MatrixXd solve_q(const Mdp& mdp, const StationaryPolicy& policy) {
  const Eigen::VectorXd value = solve_value(mdp, policy);
  Eigen::MatrixXd q(mdp.num_states, mdp.num_actions);
  for (int s = 0; s < mdp.num_states; ++s)
    q.row(s) = mdp.rewards.row(s) +
               mdp.discount * (mdp.transitions[s] * value).transpose();
  return q;
}

Eigen::VectorXd stationary_distribution(const InducedChain& chain) {
  const int n = static_cast<int>(chain.transition.rows());
  {
    Eigen::EigenSolver<Eigen::MatrixXd> solver(chain.transition, false);
    Eigen::VectorXd moduli = solver.eigenvalues().cwiseAbs();
    std::sort(moduli.data(), moduli.data() + n, std::greater<double>());
    if (n > 1 && moduli(1) >= 1.0 - 1e-9)
      throw NonMixingChainError(
          "stationary_distribution: chain is not irreducible and aperiodic "
          "(|lambda_2| = " +
          std::to_string(moduli(1)) + " >= 1 - 1e-9)");
  }
  // (P^T - I) mu = 0 with the normalization row sum(mu) = 1 appended.
  Eigen::MatrixXd system(n + 1, n);
  system.topRows(n) = chain.transition.transpose() - Eigen::MatrixXd::Identity(n, n);
  system.row(n).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 1);
  rhs(n) = 1.0;
  Eigen::VectorXd mu = system.colPivHouseholderQr().solve(rhs);
  for (int i = 0; i < n; ++i) mu(i) = std::max(mu(i), 0.0);
  mu /= mu.sum();
  const double residual =
      (chain.transition.transpose() * mu - mu).lpNorm<Eigen::Infinity>();
  if (!(residual <= 1e-10))
    throw std::runtime_error("stationary_distribution: residual " +
                             std::to_string(residual));
  return mu;
}

namespace {

Eigen::MatrixXd random_stochastic_matrix(int rows, int cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      m(i, j) = 0.05 + rng.uniform();  // bounded away from zero rows
      sum += m(i, j);
    }
    m.row(i) /= sum;
  }
  return m;
}

}  // namespace

GeneratedMdp generate_mdp(const RegimeSpec& spec, std::uint64_t seed) {
  if (!(spec.epsilon >= 0.0 && spec.epsilon <= 1.0))
    throw std::invalid_argument("generate_mdp: epsilon must lie in [0, 1]");
  if (spec.num_states < 2 || spec.num_actions < 1)
    throw std::invalid_argument("generate_mdp: need at least 2 states and 1 action");
  if (!(spec.gamma > 0.0 && spec.gamma < 1.0))
    throw std::invalid_argument("generate_mdp: gamma must lie in (0, 1)");

  const int S = spec.num_states;
  const int A = spec.num_actions;
  Rng rng(seed);

  // Behavior policy rows, interior so every action contributes.
  StationaryPolicy behavior;
  behavior.probs.resize(S, A);
  for (int s = 0; s < S; ++s) {
    double sum = 0.0;
    for (int a = 0; a < A; ++a) {
      behavior.probs(s, a) = 0.1 + rng.uniform();
      sum += behavior.probs(s, a);
    }
    behavior.probs.row(s) /= sum;
  }

  // Per-action random kernels; their behavior-policy mixture is the random
  // component of the induced chain.
  std::vector<Eigen::MatrixXd> kernels(A);
  for (int a = 0; a < A; ++a) kernels[a] = random_stochastic_matrix(S, S, rng);

  Eigen::MatrixXd base(S, S);
  switch (spec.regime) {
    case Regime::NearUniform:
      base.setConstant(1.0 / S);
      break;
    case Regime::Random:
      base.setZero();  // unused; the random component is the base itself
      break;
    case Regime::NearPermutation: {
      std::vector<int> perm(S);
      for (int i = 0; i < S; ++i) perm[i] = i;
      rng.shuffle(perm);
      base.setZero();
      for (int s = 0; s < S; ++s) base(s, perm[s]) = 1.0;
      break;
    }
  }

  // Blend per action so the induced chain hits the regime target exactly:
  // the action-dependent part always sits in the random kernels.
  Mdp mdp;
  mdp.num_states = S;
  mdp.num_actions = A;
  mdp.discount = spec.gamma;
  mdp.transitions.assign(S, Eigen::MatrixXd(A, S));
  const Eigen::RowVectorXd uniform_row = Eigen::RowVectorXd::Constant(S, 1.0 / S);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      Eigen::RowVectorXd row;
      switch (spec.regime) {
        case Regime::NearUniform:
          row = (1.0 - spec.epsilon) * uniform_row + spec.epsilon * kernels[a].row(s);
          break;
        case Regime::Random:
          row = (1.0 - spec.epsilon) * kernels[a].row(s) + spec.epsilon * uniform_row;
          break;
        case Regime::NearPermutation:
          row = (1.0 - spec.epsilon) * base.row(s) + spec.epsilon * kernels[a].row(s);
          break;
      }
      Eigen::VectorXd col = row.transpose();
      clamp_renormalize(col);
      mdp.transitions[s].row(a) = col.transpose();
    }
  }

  mdp.rewards.resize(S, A);
  switch (spec.reward_mode) {
    case RewardMode::StateAction:
      for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) mdp.rewards(s, a) = rng.uniform();
      break;
    case RewardMode::StateOnly:
      for (int s = 0; s < S; ++s) mdp.rewards.row(s).setConstant(rng.uniform());
      break;
    case RewardMode::Constant:
      mdp.rewards.setConstant(0.5);
      break;
  }

  mdp.validate();
  behavior.validate();
  return GeneratedMdp{std::move(mdp), std::move(behavior)};
}

Mdp load_mdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_mdp: cannot open " + path);
  nlohmann::json doc;
  in >> doc;

  Mdp mdp;
  mdp.num_states = doc.at("num_states").get<int>();
  mdp.num_actions = doc.at("num_actions").get<int>();
  mdp.discount = doc.at("gamma").get<double>();
  const auto& trans = doc.at("transitions");
  if (static_cast<int>(trans.size()) != mdp.num_states)
    throw std::invalid_argument("load_mdp: transitions outer size != num_states");
  mdp.transitions.assign(mdp.num_states, Eigen::MatrixXd(mdp.num_actions, mdp.num_states));
  for (int s = 0; s < mdp.num_states; ++s) {
    const auto& per_action = trans.at(s);
    if (static_cast<int>(per_action.size()) != mdp.num_actions) {
      std::ostringstream msg;
      msg << "load_mdp: transitions[" << s << "] size != num_actions";
      throw std::invalid_argument(msg.str());
    }
    for (int a = 0; a < mdp.num_actions; ++a) {
      const auto& row = per_action.at(a);
      if (static_cast<int>(row.size()) != mdp.num_states) {
        std::ostringstream msg;
        msg << "load_mdp: transitions[" << s << "][" << a << "] size != num_states";
        throw std::invalid_argument(msg.str());
      }
      for (int t = 0; t < mdp.num_states; ++t)
        mdp.transitions[s](a, t) = row.at(t).get<double>();
    }
  }
  const auto& rewards = doc.at("rewards");
  if (static_cast<int>(rewards.size()) != mdp.num_states)
    throw std::invalid_argument("load_mdp: rewards outer size != num_states");
  mdp.rewards.resize(mdp.num_states, mdp.num_actions);
  for (int s = 0; s < mdp.num_states; ++s) {
    const auto& row = rewards.at(s);
    if (static_cast<int>(row.size()) != mdp.num_actions) {
      std::ostringstream msg;
      msg << "load_mdp: rewards[" << s << "] size != num_actions";
      throw std::invalid_argument(msg.str());
    }
    for (int a = 0; a < mdp.num_actions; ++a) mdp.rewards(s, a) = row.at(a).get<double>();
  }
  mdp.validate();
  return mdp;
}

void save_mdp(const Mdp& mdp, const std::string& path) {
  nlohmann::json doc;
  doc["num_states"] = mdp.num_states;
  doc["num_actions"] = mdp.num_actions;
  doc["gamma"] = mdp.discount;
  nlohmann::json trans = nlohmann::json::array();
  for (int s = 0; s < mdp.num_states; ++s) {
    nlohmann::json per_action = nlohmann::json::array();
    for (int a = 0; a < mdp.num_actions; ++a) {
      nlohmann::json row = nlohmann::json::array();
      for (int t = 0; t < mdp.num_states; ++t) row.push_back(mdp.transitions[s](a, t));
      per_action.push_back(std::move(row));
    }
    trans.push_back(std::move(per_action));
  }
  doc["transitions"] = std::move(trans);
  nlohmann::json rewards = nlohmann::json::array();
  for (int s = 0; s < mdp.num_states; ++s) {
    nlohmann::json row = nlohmann::json::array();
    for (int a = 0; a < mdp.num_actions; ++a) row.push_back(mdp.rewards(s, a));
    rewards.push_back(std::move(row));
  }
  doc["rewards"] = std::move(rewards);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_mdp: cannot write " + path);
  out << doc.dump(2) << "\n";
}

void clamp_renormalize(Eigen::Ref<Eigen::VectorXd> row) {
  for (int i = 0; i < row.size(); ++i) {
    if (row(i) < -1e-12)
      throw std::runtime_error("clamp_renormalize: entry " + std::to_string(row(i)) +
                               " is negative beyond float drift");
    if (row(i) < 1e-15) row(i) = std::max(row(i), 0.0);
  }
  const double sum = row.sum();
  if (!(sum > 0.0)) throw std::runtime_error("clamp_renormalize: row sums to zero");
  row /= sum;
}

}  // namespace treemax
