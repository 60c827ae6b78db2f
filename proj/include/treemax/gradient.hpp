#pragma once

#include <Eigen/Dense>

#include "treemax/tree_policy.hpp"

namespace treemax {

/// values(a, k) = d log pi(a|s) / d theta(k) for one root state s.
/// For depth 0 the policy has no theta dependence and the matrix is zero;
/// trivially_zero marks that case.
struct GradientMatrix {
  int root_state = 0;
  Eigen::MatrixXd values;  // A x S
  bool trivially_zero = false;
};

GradientMatrix grad_cumulative(const Mdp& mdp, const TreePolicyConfig& config, int root);

GradientMatrix grad_exponentiated(const Mdp& mdp, const TreePolicyConfig& config, int root);

/// Direct evaluation of the exponentiated-variant gradient without the
/// stabilized factorization; cross-check path for small beta.
GradientMatrix grad_exponentiated_direct(const Mdp& mdp, const TreePolicyConfig& config,
                                         int root);

/// Dispatches on config.variant.
GradientMatrix grad_log_policy(const Mdp& mdp, const TreePolicyConfig& config, int root);

/// Frobenius norm of the cumulative-variant gradient together with its
/// spectral lower and upper envelopes. The lower value is the exact
/// directional norm along the eigenvector paired with lambda_2 (for a complex
/// pair, the better of the two real spanning directions; complex_lambda2 is
/// set). The upper value is beta gamma^d |lambda_2|^(d-1) (S-1) sqrt(2A) sqrt(A).
struct GradNormBounds {
  double frobenius = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool complex_lambda2 = false;
};

GradNormBounds grad_norm_bounds(const Mdp& mdp, const TreePolicyConfig& config, int root);

}  // namespace treemax
