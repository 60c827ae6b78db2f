#include "treemax/spectral.hpp"

#include <algorithm>
#include <cmath>

namespace treemax {

SpectralReport analyze_spectrum(const Eigen::MatrixXd& transition) {
  if (transition.rows() != transition.cols())
    throw std::invalid_argument("analyze_spectrum: matrix must be square");
  const int n = static_cast<int>(transition.rows());
  Eigen::EigenSolver<Eigen::MatrixXd> solver(transition, false);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("analyze_spectrum: eigenvalue iteration did not converge");

  SpectralReport report;
  report.eigenvalue_moduli = solver.eigenvalues().cwiseAbs();
  std::sort(report.eigenvalue_moduli.data(), report.eigenvalue_moduli.data() + n,
            std::greater<double>());
  report.lambda2_modulus = n > 1 ? report.eigenvalue_moduli(1) : 0.0;
  report.mixing_flag = report.lambda2_modulus < 1.0 - 1e-9;
  return report;
}

SpectralReport analyze_spectrum(const InducedChain& chain) {
  return analyze_spectrum(chain.transition);
}

double power_remainder(const InducedChain& chain, int power) {
  if (power < 1) throw std::invalid_argument("power_remainder: power must be >= 1");
  const SpectralReport report = analyze_spectrum(chain);
  if (!report.mixing_flag)
    throw NonMixingChainError("power_remainder: chain is not mixing");

  const int n = static_cast<int>(chain.transition.rows());
  const Eigen::VectorXd mu = stationary_distribution(chain);
  Eigen::MatrixXd matrix_power = Eigen::MatrixXd::Identity(n, n);
  for (int k = 1; k < power; ++k) matrix_power = matrix_power * chain.transition;
  const Eigen::MatrixXd remainder =
      matrix_power - Eigen::VectorXd::Ones(n) * mu.transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(remainder);
  return svd.singularValues()(0);
}

}  // namespace treemax
