#include "treemax/gradient.hpp"

#include <cmath>

#include "treemax/spectral.hpp"

namespace treemax {

namespace {

GradientMatrix zero_gradient(const Mdp& mdp, int root) {
  GradientMatrix grad;
  grad.root_state = root;
  grad.values = Eigen::MatrixXd::Zero(mdp.num_actions, mdp.num_states);
  grad.trivially_zero = true;
  return grad;
}

/// P_s (P^pi)^(d-1) accumulated as A x S, no S x S power blowup.
Eigen::MatrixXd pushed_transition(const Mdp& mdp, const InducedChain& chain, int root,
                                  int depth) {
  Eigen::MatrixXd pushed = mdp.transitions[root];
  for (int h = 1; h <= depth - 1; ++h) pushed = pushed * chain.transition;
  return pushed;
}

}  // namespace

GradientMatrix grad_cumulative(const Mdp& mdp, const TreePolicyConfig& config, int root) {
  config.validate(mdp);
  if (config.depth == 0) return zero_gradient(mdp, root);

  const InducedChain chain = induce_chain(mdp, config.behavior);
  const Eigen::MatrixXd pushed = pushed_transition(mdp, chain, root, config.depth);
  const Eigen::VectorXd pi = policy_cumulative(mdp, config, root).probs;
  const double scale = config.beta * std::pow(mdp.discount, config.depth);

  GradientMatrix grad;
  grad.root_state = root;
  grad.values = scale * (pushed - Eigen::VectorXd::Ones(mdp.num_actions) *
                                      (pi.transpose() * pushed));
  return grad;
}

GradientMatrix grad_exponentiated(const Mdp& mdp, const TreePolicyConfig& config, int root) {
  config.validate(mdp);
  if (config.depth == 0) return zero_gradient(mdp, root);

  const ExponentMatrix matrix = exponent_matrix(mdp, config, root);
  const int S = mdp.num_states;
  const int A = mdp.num_actions;

  // Shifted E and exp(beta gamma^d Theta); shifts cancel inside the
  // row-normalized weight matrix N(j,k) = E(j,k) e(k) / (E e)(j).
  const Eigen::VectorXd score =
      config.beta * std::pow(mdp.discount, config.depth) * config.theta;
  const Eigen::VectorXd score_scaled = (score.array() - score.maxCoeff()).exp();
  const Eigen::VectorXd scale =
      (matrix.log_scale.array() - matrix.log_scale.maxCoeff()).exp();
  Eigen::MatrixXd shifted = mdp.transitions[root] * scale.asDiagonal();
  for (const auto& factor : matrix.factors) shifted = shifted * factor;

  Eigen::MatrixXd weights(A, S);
  for (int j = 0; j < A; ++j)
    weights.row(j) = shifted.row(j).cwiseProduct(score_scaled.transpose());
  const Eigen::VectorXd row_mass = weights.rowwise().sum();
  for (int j = 0; j < A; ++j) weights.row(j) /= row_mass(j);

  const Eigen::VectorXd pi = row_mass / row_mass.sum();
  const double grad_scale = config.beta * std::pow(mdp.discount, config.depth);

  GradientMatrix grad;
  grad.root_state = root;
  grad.values = grad_scale * (weights - Eigen::VectorXd::Ones(A) *
                                            (pi.transpose() * weights));
  return grad;
}

GradientMatrix grad_exponentiated_direct(const Mdp& mdp, const TreePolicyConfig& config,
                                         int root) {
  config.validate(mdp);
  if (config.depth == 0) return zero_gradient(mdp, root);

  const Eigen::MatrixXd e_matrix = exponent_matrix_direct(mdp, config, root);
  const Eigen::VectorXd score_exp =
      (config.beta * std::pow(mdp.discount, config.depth) * config.theta.array()).exp();
  const Eigen::VectorXd weighted = e_matrix * score_exp;
  const double partition = weighted.sum();
  const Eigen::VectorXd pi = weighted / partition;
  const int A = mdp.num_actions;
  const double scale = config.beta * std::pow(mdp.discount, config.depth);

  const Eigen::MatrixXd inner = pi.cwiseInverse().asDiagonal() * e_matrix *
                                score_exp.asDiagonal() / partition;
  GradientMatrix grad;
  grad.root_state = root;
  grad.values = scale * (Eigen::MatrixXd::Identity(A, A) -
                         Eigen::VectorXd::Ones(A) * pi.transpose()) *
                inner;
  return grad;
}

GradientMatrix grad_log_policy(const Mdp& mdp, const TreePolicyConfig& config, int root) {
  return config.variant == Variant::Cumulative ? grad_cumulative(mdp, config, root)
                                               : grad_exponentiated(mdp, config, root);
}

GradNormBounds grad_norm_bounds(const Mdp& mdp, const TreePolicyConfig& config, int root) {
  config.validate(mdp);
  if (config.variant != Variant::Cumulative)
    throw std::invalid_argument("grad_norm_bounds: defined for the cumulative variant");
  if (config.depth < 1) throw std::invalid_argument("grad_norm_bounds: depth must be >= 1");

  const InducedChain chain = induce_chain(mdp, config.behavior);
  const SpectralReport spectrum = analyze_spectrum(chain);
  if (!spectrum.mixing_flag)
    throw NonMixingChainError("grad_norm_bounds: behavior chain is not mixing");

  const GradientMatrix grad = grad_cumulative(mdp, config, root);
  const int S = mdp.num_states;
  const int A = mdp.num_actions;
  const double scale = config.beta * std::pow(mdp.discount, config.depth);
  const double lambda2 = spectrum.lambda2_modulus;

  GradNormBounds bounds;
  bounds.frobenius = grad.values.norm();
  bounds.upper = scale * std::pow(lambda2, config.depth - 1) * (S - 1) *
                 std::sqrt(2.0 * A) * std::sqrt(static_cast<double>(A));

  // Eigenvector paired with lambda_2. The lower envelope is the exact
  // directional norm ||G u||_2 of a unit vector, so it stays a valid lower
  // bound even when the eigenpair is complex and we probe its real span.
  Eigen::EigenSolver<Eigen::MatrixXd> solver(chain.transition, true);
  const auto eigenvalues = solver.eigenvalues();
  int perron = 0, second = -1;
  for (int i = 1; i < S; ++i)
    if (std::abs(eigenvalues(i)) > std::abs(eigenvalues(perron))) perron = i;
  for (int i = 0; i < S; ++i) {
    if (i == perron) continue;
    if (second < 0 || std::abs(eigenvalues(i)) > std::abs(eigenvalues(second))) second = i;
  }
  if (second >= 0) {
    const Eigen::VectorXcd vec = solver.eigenvectors().col(second);
    std::vector<Eigen::VectorXd> directions;
    const Eigen::VectorXd re = vec.real();
    const Eigen::VectorXd im = vec.imag();
    bounds.complex_lambda2 = std::abs(eigenvalues(second).imag()) > 1e-12;
    if (re.norm() > 1e-14) directions.push_back(re.normalized());
    if (bounds.complex_lambda2 && im.norm() > 1e-14) directions.push_back(im.normalized());
    for (const auto& direction : directions)
      bounds.lower = std::max(bounds.lower, (grad.values * direction).norm());
  }
  return bounds;
}

}  // namespace treemax
