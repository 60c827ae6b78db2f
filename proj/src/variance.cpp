#include "treemax/variance.hpp"

#include <cmath>
#include <limits>

#include "treemax/spectral.hpp"

namespace treemax {

namespace {

double behavior_lambda2(const Mdp& mdp, const TreePolicyConfig& config) {
  return analyze_spectrum(induce_chain(mdp, config.behavior)).lambda2_modulus;
}

}  // namespace

VarianceReport exact_pg_variance(const Mdp& mdp, const TreePolicyConfig& config) {
  config.validate(mdp);
  const StationaryPolicy policy = tree_policy_table(mdp, config);
  const InducedChain chain = induce_chain(mdp, policy);
  const Eigen::VectorXd mu = stationary_distribution(chain);
  const Eigen::MatrixXd q = solve_q(mdp, policy);

  const int S = mdp.num_states;
  const int A = mdp.num_actions;
  double second_moment = 0.0;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(S);
  for (int s = 0; s < S; ++s) {
    const GradientMatrix grad = grad_log_policy(mdp, config, s);
    for (int a = 0; a < A; ++a) {
      const double weight = mu(s) * policy.probs(s, a);
      const Eigen::VectorXd x = q(s, a) * grad.values.row(a).transpose();
      second_moment += weight * x.squaredNorm();
      mean += weight * x;
    }
  }
  double variance = second_moment - mean.squaredNorm();
  if (variance < -1e-12)
    throw std::runtime_error("exact_pg_variance: negative variance " +
                             std::to_string(variance));
  variance = std::max(variance, 0.0);

  VarianceReport report;
  report.variant = config.variant;
  report.depth = config.depth;
  report.exact_variance = variance;
  report.lemma1_bound = gradient_norm_variance_bound(mdp, config);
  report.lambda2 = behavior_lambda2(mdp, config);
  report.theorem_bound = config.variant == Variant::Cumulative
                             ? spectral_variance_bound(mdp, config)
                             : std::numeric_limits<double>::quiet_NaN();
  report.normalization = variance;
  return report;
}

double gradient_norm_variance_bound(const Mdp& mdp, const TreePolicyConfig& config) {
  config.validate(mdp);
  const StationaryPolicy policy = tree_policy_table(mdp, config);
  const Eigen::MatrixXd q = solve_q(mdp, policy);
  double max_grad_sq = 0.0;
  for (int s = 0; s < mdp.num_states; ++s) {
    const GradientMatrix grad = grad_log_policy(mdp, config, s);
    max_grad_sq = std::max(max_grad_sq, grad.values.squaredNorm());
  }
  const double max_q = q.cwiseAbs().maxCoeff();
  return max_q * max_q * max_grad_sq;
}

double spectral_variance_bound(const Mdp& mdp, const TreePolicyConfig& config) {
  config.validate(mdp);
  const double lambda2 = behavior_lambda2(mdp, config);
  const double S = mdp.num_states;
  const double A = mdp.num_actions;
  const double one_minus_gamma = 1.0 - mdp.discount;
  return 2.0 * A * A * S * S * config.beta * config.beta /
         (one_minus_gamma * one_minus_gamma) *
         std::pow(mdp.discount, 2.0 * config.depth) *
         std::pow(lambda2, 2.0 * (config.depth - 1));
}

std::vector<VarianceReport> depth_sweep(const Mdp& mdp, const TreePolicyConfig& base_config,
                                        const std::vector<int>& depths) {
  if (depths.empty()) throw std::invalid_argument("depth_sweep: depths must be nonempty");
  for (std::size_t i = 1; i < depths.size(); ++i)
    if (depths[i] <= depths[i - 1])
      throw std::invalid_argument("depth_sweep: depths must be strictly ascending");

  std::vector<VarianceReport> reports;
  reports.reserve(depths.size());
  for (const int depth : depths) {
    TreePolicyConfig config = base_config;
    config.depth = depth;
    reports.push_back(exact_pg_variance(mdp, config));
  }
  const double first = reports.front().exact_variance;
  for (auto& report : reports) report.normalization = first;
  return reports;
}

double fitted_decay_ratio(const Mdp& mdp, const TreePolicyConfig& base_config,
                          const std::vector<int>& depths) {
  const std::vector<VarianceReport> reports = depth_sweep(mdp, base_config, depths);
  const double lambda2 = reports.front().lambda2;
  const double model = mdp.discount * mdp.discount * lambda2 * lambda2;

  // least-squares slope of log variance against depth; variances at the
  // float-cancellation floor carry no decay information
  constexpr double kNoiseFloor = 1e-28;
  const int n = static_cast<int>(reports.size());
  double mean_d = 0.0, mean_log = 0.0;
  for (const auto& report : reports) {
    if (!(report.exact_variance > kNoiseFloor) || !std::isfinite(report.exact_variance))
      return std::numeric_limits<double>::quiet_NaN();
    mean_d += report.depth;
    mean_log += std::log(report.exact_variance);
  }
  mean_d /= n;
  mean_log /= n;
  double cov = 0.0, var_d = 0.0;
  for (const auto& report : reports) {
    cov += (report.depth - mean_d) * (std::log(report.exact_variance) - mean_log);
    var_d += (report.depth - mean_d) * (report.depth - mean_d);
  }
  if (!(var_d > 0.0) || !(model > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return std::exp(cov / var_d) / model;
}

std::vector<SweepRow> sweep_rows(const std::string& regime_label, std::uint64_t seed,
                                 const Mdp& mdp, const TreePolicyConfig& base_config,
                                 const std::vector<int>& depths) {
  const std::vector<VarianceReport> reports = depth_sweep(mdp, base_config, depths);
  const int first_depth = depths.front();
  std::vector<SweepRow> rows;
  rows.reserve(reports.size());
  for (const auto& report : reports) {
    SweepRow row;
    row.regime = regime_label;
    row.seed = seed;
    row.num_states = mdp.num_states;
    row.num_actions = mdp.num_actions;
    row.beta = base_config.beta;
    row.gamma = mdp.discount;
    row.variant = base_config.variant;
    row.depth = report.depth;
    row.lambda2 = report.lambda2;
    row.exact_variance = report.exact_variance;
    row.lemma1_bound = report.lemma1_bound;
    row.theorem_bound = report.theorem_bound;
    row.normalized_variance = report.normalization > 0.0
                                  ? report.exact_variance / report.normalization
                                  : std::numeric_limits<double>::quiet_NaN();
    const double step = mdp.discount * report.lambda2;
    row.normalized_model = std::pow(step * step, report.depth - first_depth);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace treemax
