#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace treemax {

/// Thrown when an operation requires an irreducible aperiodic chain but the
/// second eigenvalue modulus of the supplied transition matrix is >= 1 - 1e-9.
class NonMixingChainError : public std::runtime_error {
 public:
  explicit NonMixingChainError(const std::string& what) : std::runtime_error(what) {}
};

/// Deterministic 64-bit generator with explicit double/int draws, so that
/// generated instances are bit-identical across runs and standard-library
/// versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform double in [0, 1).
  double uniform();
  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n);
  /// In-place Fisher-Yates shuffle.
  void shuffle(std::vector<int>& values);

 private:
  std::uint64_t state_[4];
};

/// Finite discounted MDP. transitions[s] is the A x S matrix whose a-th row
/// is Pr(. | s, a); rewards is S x A with entries in [0, 1].
struct Mdp {
  int num_states = 0;
  int num_actions = 0;
  double discount = 0.0;
  std::vector<Eigen::MatrixXd> transitions;
  Eigen::MatrixXd rewards;

  /// Throws std::invalid_argument naming the first violating index if any
  /// structural invariant fails (row sums, reward range, discount range).
  void validate() const;

  /// True iff rewards[s][a] is identical across actions for every state.
  bool rewards_state_only(double tol = 1e-12) const;

  /// The S-vector r(s) := rewards[s][0]. Throws if rewards are not
  /// state-only within tol.
  Eigen::VectorXd state_reward_vector(double tol = 1e-12) const;
};

/// Row-stochastic policy table, probs(s, a).
struct StationaryPolicy {
  Eigen::MatrixXd probs;

  void validate() const;
  static StationaryPolicy uniform(int num_states, int num_actions);
};

/// Markov chain induced by running a stationary policy on an MDP.
struct InducedChain {
  Eigen::MatrixXd transition;  // S x S, row-stochastic
  Eigen::VectorXd reward;      // S
};

enum class Regime { NearUniform, Random, NearPermutation };

enum class RewardMode { StateAction, StateOnly, Constant };

/// Parameters for generate_mdp. epsilon blends the regime's base transition
/// matrix with its perturbation matrix; see generate_mdp.
struct RegimeSpec {
  Regime regime = Regime::Random;
  double epsilon = 0.0;
  int num_states = 5;
  int num_actions = 3;
  double gamma = 0.9;
  RewardMode reward_mode = RewardMode::StateAction;
};

const char* regime_name(Regime regime);
Regime parse_regime(const std::string& name);

InducedChain induce_chain(const Mdp& mdp, const StationaryPolicy& policy);

/// Solves (I - gamma P^pi) V = R_pi. Residual is checked against 1e-10.
Eigen::VectorXd solve_value(const Mdp& mdp, const StationaryPolicy& policy);

/// q(s,a) = r(s,a) + gamma sum_s' P(s'|s,a) V(s').
Eigen::MatrixXd solve_q(const Mdp& mdp, const StationaryPolicy& policy);

/// Unique stationary distribution of a mixing chain, from the linear system
/// (P^T - I) mu = 0 with the normalization row appended. Throws
/// NonMixingChainError when |lambda_2| >= 1 - 1e-9.
Eigen::VectorXd stationary_distribution(const InducedChain& chain);

struct GeneratedMdp {
  Mdp mdp;
  StationaryPolicy behavior;
};

/// Draws an MDP and behavior policy whose induced chain realizes the regime:
///   NearUniform:      P = (1-eps) * uniform + eps * random
///   Random:           P = (1-eps) * random  + eps * uniform
///   NearPermutation:  P = (1-eps) * permutation + eps * random
/// The blend is built per action so the induced matrix hits the target
/// exactly. Deterministic for a fixed seed.
GeneratedMdp generate_mdp(const RegimeSpec& spec, std::uint64_t seed);

/// JSON file round-trip. load_mdp validates and reports the first violating
/// index in the exception message.
Mdp load_mdp(const std::string& path);
void save_mdp(const Mdp& mdp, const std::string& path);

/// Clamps small negative drift to zero and rescales the row to sum 1.
/// Entries below -1e-12 are treated as a bug and throw.
void clamp_renormalize(Eigen::Ref<Eigen::VectorXd> row);

}  // namespace treemax
