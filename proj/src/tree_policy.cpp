#include "treemax/tree_policy.hpp"

#include <cmath>
#include <limits>

#include "treemax/spectral.hpp"

namespace treemax {

namespace {

/// Max-shifted softmax; returns probs, log_probs and the log normalizer.
void softmax_into(const Eigen::VectorXd& logits, TreePolicyDistribution& dist) {
  const double shift = logits.maxCoeff();
  Eigen::VectorXd shifted = (logits.array() - shift).exp();
  const double total = shifted.sum();
  dist.probs = shifted / total;
  dist.log_partition = shift + std::log(total);
  dist.log_probs = logits.array() - dist.log_partition;
}

TreePolicyDistribution uniform_distribution(int root, int num_actions, double degenerate_logit) {
  TreePolicyDistribution dist;
  dist.root_state = root;
  softmax_into(Eigen::VectorXd::Constant(num_actions, degenerate_logit), dist);
  return dist;
}

/// log of P * exp(log_v), row-wise, without leaving log space.
Eigen::VectorXd log_matrix_vector(const Eigen::MatrixXd& p, const Eigen::VectorXd& log_v) {
  const double shift = log_v.maxCoeff();
  const Eigen::VectorXd scaled = (log_v.array() - shift).exp();
  Eigen::VectorXd out = p * scaled;
  for (int i = 0; i < out.size(); ++i) out(i) = shift + std::log(out(i));
  return out;
}

}  // namespace

const char* variant_name(Variant variant) {
  return variant == Variant::Cumulative ? "C" : "E";
}

Variant parse_variant(const std::string& name) {
  if (name == "C" || name == "c" || name == "cumulative") return Variant::Cumulative;
  if (name == "E" || name == "e" || name == "exponentiated") return Variant::Exponentiated;
  throw std::invalid_argument("unknown variant: " + name);
}

void TreePolicyConfig::validate(const Mdp& mdp) const {
  if (depth < 0) throw std::invalid_argument("tree policy: depth must be >= 0");
  if (!(beta > 0.0) || !std::isfinite(beta))
    throw std::invalid_argument("tree policy: beta must be finite and positive");
  if (theta.size() != mdp.num_states)
    throw std::invalid_argument("tree policy: theta must have one entry per state");
  if (!theta.allFinite()) throw std::invalid_argument("tree policy: theta must be finite");
  if (behavior.probs.rows() != mdp.num_states || behavior.probs.cols() != mdp.num_actions)
    throw std::invalid_argument("tree policy: behavior policy dimensions do not match mdp");
  behavior.validate();
}

CumulantMatrix cumulant_matrix(const Mdp& mdp, const TreePolicyConfig& config, int root) {
  config.validate(mdp);
  if (config.depth < 1)
    throw std::invalid_argument("cumulant_matrix: depth 0 has no reward expansion");

  const InducedChain chain = induce_chain(mdp, config.behavior);
  // sum_{h=1}^{d-1} gamma^h (P^pi)^(h-1) R_pi, built with matrix-vector
  // products only.
  Eigen::VectorXd accum = Eigen::VectorXd::Zero(mdp.num_states);
  Eigen::VectorXd term = chain.reward;
  double gamma_pow = mdp.discount;
  for (int h = 1; h <= config.depth - 1; ++h) {
    accum += gamma_pow * term;
    term = chain.transition * term;
    gamma_pow *= mdp.discount;
  }
  const Eigen::VectorXd cumulant =
      mdp.rewards.row(root).transpose() + mdp.transitions[root] * accum;

  CumulantMatrix result;
  result.root_state = root;
  result.values = cumulant.replicate(1, mdp.num_states);
  return result;
}

namespace {

/// gamma^d P_s (P^pi)^(d-1) Theta without forming the matrix power.
Eigen::VectorXd discounted_score_term(const Mdp& mdp, const InducedChain& chain,
                                      const TreePolicyConfig& config, int root) {
  Eigen::VectorXd pushed = config.theta;
  for (int h = 1; h <= config.depth - 1; ++h) pushed = chain.transition * pushed;
  return std::pow(mdp.discount, config.depth) * (mdp.transitions[root] * pushed);
}

}  // namespace

TreePolicyDistribution policy_cumulative(const Mdp& mdp, const TreePolicyConfig& config,
                                         int root) {
  config.validate(mdp);
  if (config.depth == 0) {
    // state-based score: every action shares the logit beta * theta(root)
    return uniform_distribution(root, mdp.num_actions, config.beta * config.theta(root));
  }
  const InducedChain chain = induce_chain(mdp, config.behavior);
  const Eigen::VectorXd cumulant = cumulant_matrix(mdp, config, root).values.col(0);
  const Eigen::VectorXd logits =
      config.beta * (cumulant + discounted_score_term(mdp, chain, config, root));
  TreePolicyDistribution dist;
  dist.root_state = root;
  softmax_into(logits, dist);
  return dist;
}

ExponentMatrix exponent_matrix(const Mdp& mdp, const TreePolicyConfig& config, int root) {
  config.validate(mdp);
  if (config.depth < 1)
    throw std::invalid_argument("exponent_matrix: depth 0 has no reward expansion");
  const Eigen::VectorXd reward = mdp.state_reward_vector();
  const int S = mdp.num_states;
  const int d = config.depth;

  ExponentMatrix result;
  result.root_state = root;
  if (d == 1) {
    result.values = mdp.transitions[root];
    result.scale_vector = Eigen::VectorXd::Ones(S);
    result.log_scale = Eigen::VectorXd::Zero(S);
    return result;
  }

  const InducedChain chain = induce_chain(mdp, config.behavior);

  // log M_i, i = d-1 .. 1:  M_{d-1} = exp(beta gamma^{d-1} R),
  // M_i = exp(beta gamma^i R) .* (P^pi M_{i+1}).
  std::vector<Eigen::VectorXd> log_m(d);  // slot i holds log M_i, i >= 1
  log_m[d - 1] = config.beta * std::pow(mdp.discount, d - 1) * reward;
  for (int i = d - 2; i >= 1; --i) {
    log_m[i] = config.beta * std::pow(mdp.discount, i) * reward +
               log_matrix_vector(chain.transition, log_m[i + 1]);
  }

  // B_{d-1} = P^pi; B_i reweights P^pi rows by M_{i+1} and renormalizes.
  result.factors.resize(d - 1);
  result.factors[d - 2] = chain.transition;
  for (int i = 1; i <= d - 2; ++i) {
    const double shift = log_m[i + 1].maxCoeff();
    const Eigen::VectorXd scaled = (log_m[i + 1].array() - shift).exp();
    Eigen::MatrixXd b = chain.transition * scaled.asDiagonal();
    for (int j = 0; j < S; ++j) b.row(j) /= b.row(j).sum();
    result.factors[i - 1] = std::move(b);
  }

  result.log_scale = log_m[1];
  result.scale_vector = log_m[1].array().exp();

  Eigen::MatrixXd product = Eigen::MatrixXd::Identity(S, S);
  for (const auto& factor : result.factors) product = product * factor;
  result.values =
      mdp.transitions[root] * result.scale_vector.asDiagonal() * product;
  return result;
}

Eigen::MatrixXd exponent_matrix_direct(const Mdp& mdp, const TreePolicyConfig& config,
                                       int root) {
  config.validate(mdp);
  if (config.depth < 1)
    throw std::invalid_argument("exponent_matrix_direct: depth must be >= 1");
  const Eigen::VectorXd reward = mdp.state_reward_vector();
  const InducedChain chain = induce_chain(mdp, config.behavior);
  Eigen::MatrixXd values = mdp.transitions[root];
  for (int h = 1; h <= config.depth - 1; ++h) {
    const Eigen::VectorXd scale =
        (config.beta * std::pow(mdp.discount, h) * reward.array()).exp();
    values = values * scale.asDiagonal() * chain.transition;
  }
  return values;
}

namespace {

/// Shift-invariant logits log[exp(c1) P_s D(Mtilde) F exp(c2) etilde]; the
/// shifts c1, c2 are returned so the true log partition can be reported.
Eigen::VectorXd exponent_logits(const Mdp& mdp, const TreePolicyConfig& config,
                                const ExponentMatrix& matrix, double& shift_out) {
  const Eigen::VectorXd score = std::pow(mdp.discount, config.depth) * config.beta * config.theta;
  const double score_shift = score.maxCoeff();
  Eigen::VectorXd weighted = (score.array() - score_shift).exp();
  for (auto it = matrix.factors.rbegin(); it != matrix.factors.rend(); ++it)
    weighted = (*it) * weighted;

  const double scale_shift = matrix.log_scale.maxCoeff();
  const Eigen::VectorXd scale = (matrix.log_scale.array() - scale_shift).exp();
  const Eigen::VectorXd raw =
      mdp.transitions[matrix.root_state] * (scale.array() * weighted.array()).matrix();

  Eigen::VectorXd logits(mdp.num_actions);
  for (int a = 0; a < mdp.num_actions; ++a) logits(a) = std::log(raw(a));
  shift_out = scale_shift + score_shift;
  return logits;
}

}  // namespace

TreePolicyDistribution policy_exponentiated(const Mdp& mdp, const TreePolicyConfig& config,
                                            int root) {
  config.validate(mdp);
  if (config.depth == 0)
    return uniform_distribution(root, mdp.num_actions, config.beta * config.theta(root));
  const ExponentMatrix matrix = exponent_matrix(mdp, config, root);
  double shift = 0.0;
  const Eigen::VectorXd logits = exponent_logits(mdp, config, matrix, shift);
  TreePolicyDistribution dist;
  dist.root_state = root;
  softmax_into(logits, dist);
  dist.log_partition += shift;
  dist.log_probs = (logits.array() + shift) - dist.log_partition;
  return dist;
}

TreePolicyDistribution tree_policy(const Mdp& mdp, const TreePolicyConfig& config, int root) {
  return config.variant == Variant::Cumulative ? policy_cumulative(mdp, config, root)
                                               : policy_exponentiated(mdp, config, root);
}

StationaryPolicy tree_policy_table(const Mdp& mdp, const TreePolicyConfig& config) {
  StationaryPolicy table;
  table.probs.resize(mdp.num_states, mdp.num_actions);
  for (int s = 0; s < mdp.num_states; ++s)
    table.probs.row(s) = tree_policy(mdp, config, s).probs.transpose();
  return table;
}

std::vector<double> factor_decay(const ExponentMatrix& matrix) {
  if (matrix.factors.empty())
    throw std::invalid_argument("factor_decay: no factors (depth 1 expansion)");
  const int S = static_cast<int>(matrix.factors.front().rows());
  std::vector<double> curve;
  curve.reserve(matrix.factors.size());
  Eigen::MatrixXd product = Eigen::MatrixXd::Identity(S, S);
  for (const auto& factor : matrix.factors) {
    product = product * factor;
    const SpectralReport report = analyze_spectrum(product);
    if (!report.mixing_flag)
      throw NonMixingChainError("factor_decay: partial factor product is not mixing");
    InducedChain as_chain{product, Eigen::VectorXd::Zero(S)};
    const Eigen::VectorXd mu = stationary_distribution(as_chain);
    const Eigen::MatrixXd remainder =
        product - Eigen::VectorXd::Ones(S) * mu.transpose();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(remainder);
    curve.push_back(svd.singularValues()(0));
  }
  return curve;
}

}  // namespace treemax
