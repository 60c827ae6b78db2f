#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "treemax/gradient.hpp"
#include "treemax/tree_policy.hpp"

namespace treemax {

/// Exact policy-gradient variance at one depth, with the two analytic
/// envelopes. theorem_bound is the closed-form spectral decay bound of the
/// cumulative variant; it is NaN for the exponentiated variant, whose decay
/// model enters through normalized_model in sweeps instead.
struct VarianceReport {
  Variant variant = Variant::Cumulative;
  int depth = 0;
  double exact_variance = 0.0;
  double lemma1_bound = 0.0;
  double theorem_bound = 0.0;
  double lambda2 = 0.0;
  double normalization = 0.0;  // exact variance at the first sweep depth
};

/// Total variance (trace of the covariance) of grad log pi(a|s) * Q(s,a)
/// under s ~ stationary(P^pi_theta), a ~ pi_theta(.|s), where pi_theta is the
/// tree policy itself. Throws NonMixingChainError when the tree policy's own
/// induced chain is not mixing.
VarianceReport exact_pg_variance(const Mdp& mdp, const TreePolicyConfig& config);

/// max_{s,a} Q(s,a)^2 * max_s ||grad log pi(.|s)||_F^2.
double gradient_norm_variance_bound(const Mdp& mdp, const TreePolicyConfig& config);

/// 2 A^2 S^2 beta^2 / (1-gamma)^2 * gamma^(2d) * |lambda_2|^(2(d-1)) for the
/// cumulative variant.
double spectral_variance_bound(const Mdp& mdp, const TreePolicyConfig& config);

/// One VarianceReport per depth; normalization fields carry the exact
/// variance at depths.front() so curves can be aligned there.
std::vector<VarianceReport> depth_sweep(const Mdp& mdp, const TreePolicyConfig& base_config,
                                        const std::vector<int>& depths);

/// Least-squares geometric decay ratio of exact variance over the given
/// depths, divided by (gamma |lambda_2|)^2. Near 1 when the spectral decay
/// model holds. NaN when the variance is numerically zero somewhere.
double fitted_decay_ratio(const Mdp& mdp, const TreePolicyConfig& base_config,
                          const std::vector<int>& depths);

/// Row of the sweep CSV; column set is fixed, see report.hpp.
struct SweepRow {
  std::string regime;
  std::uint64_t seed = 0;
  int num_states = 0;
  int num_actions = 0;
  double beta = 0.0;
  double gamma = 0.0;
  Variant variant = Variant::Cumulative;
  int depth = 0;
  double lambda2 = 0.0;
  double exact_variance = 0.0;
  double lemma1_bound = 0.0;
  double theorem_bound = 0.0;
  double normalized_variance = 0.0;
  double normalized_model = 0.0;
};

std::vector<SweepRow> sweep_rows(const std::string& regime_label, std::uint64_t seed,
                                 const Mdp& mdp, const TreePolicyConfig& base_config,
                                 const std::vector<int>& depths);

}  // namespace treemax
