#pragma once

#include <Eigen/Dense>
#include <vector>

#include "treemax/mdp.hpp"

namespace treemax {

enum class Variant { Cumulative, Exponentiated };

const char* variant_name(Variant variant);
Variant parse_variant(const std::string& name);

/// One tree policy instance: variant, horizon, inverse temperature, per-state
/// score vector and the behavior policy used to expand below the root action.
struct TreePolicyConfig {
  Variant variant = Variant::Cumulative;
  int depth = 1;
  double beta = 1.0;
  Eigen::VectorXd theta;
  StationaryPolicy behavior;

  void validate(const Mdp& mdp) const;
};

/// Action distribution at one root state.
struct TreePolicyDistribution {
  int root_state = 0;
  Eigen::VectorXd probs;      // strictly positive, sums to 1
  Eigen::VectorXd log_probs;  // log of probs, computed from shifted logits
  double log_partition = 0.0;
};

/// Expected discounted reward collected along a depth-d expansion, one value
/// per root action, replicated across the S columns so it lines up with the
/// score term of the logits.
struct CumulantMatrix {
  int root_state = 0;
  Eigen::MatrixXd values;  // A x S, identical columns
};

/// Expected product of per-step reward exponentials, together with its
/// scale/stochastic factorization values = P_s D(scale_vector) prod factors.
struct ExponentMatrix {
  int root_state = 0;
  Eigen::MatrixXd values;               // A x S, strictly positive
  std::vector<Eigen::MatrixXd> factors; // d-1 row-stochastic S x S matrices
  Eigen::VectorXd scale_vector;         // M_1, strictly positive
  Eigen::VectorXd log_scale;            // log of scale_vector, overflow-safe
};

CumulantMatrix cumulant_matrix(const Mdp& mdp, const TreePolicyConfig& config, int root);

TreePolicyDistribution policy_cumulative(const Mdp& mdp, const TreePolicyConfig& config,
                                         int root);

/// Requires state-only rewards; throws std::invalid_argument otherwise.
ExponentMatrix exponent_matrix(const Mdp& mdp, const TreePolicyConfig& config, int root);

/// Naive left-to-right product without the stochastic factorization. Used as
/// a cross-check for moderate beta; overflows sooner than exponent_matrix.
Eigen::MatrixXd exponent_matrix_direct(const Mdp& mdp, const TreePolicyConfig& config,
                                       int root);

TreePolicyDistribution policy_exponentiated(const Mdp& mdp, const TreePolicyConfig& config,
                                            int root);

/// Dispatches on config.variant.
TreePolicyDistribution tree_policy(const Mdp& mdp, const TreePolicyConfig& config, int root);

/// Full policy table: one distribution per root state.
StationaryPolicy tree_policy_table(const Mdp& mdp, const TreePolicyConfig& config);

/// Distance of the running factor product from its best rank-one fit,
/// ||prod_{h<=k} B_h - 1 mu_k^T|| for k = 1..d-1, with mu_k the stationary
/// vector of the product. Throws NonMixingChainError if a partial product is
/// not mixing.
std::vector<double> factor_decay(const ExponentMatrix& matrix);

}  // namespace treemax
