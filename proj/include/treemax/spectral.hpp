#pragma once

#include <Eigen/Dense>

#include "treemax/mdp.hpp"

namespace treemax {

/// Eigenvalue moduli of a row-stochastic matrix, sorted descending.
/// mixing_flag is true iff the second modulus is < 1 - 1e-9.
struct SpectralReport {
  Eigen::VectorXd eigenvalue_moduli;
  double lambda2_modulus = 0.0;
  bool mixing_flag = false;
};

SpectralReport analyze_spectrum(const InducedChain& chain);
SpectralReport analyze_spectrum(const Eigen::MatrixXd& transition);

/// Spectral norm of P^(d-1) - 1 mu^T for a mixing chain; decays like
/// |lambda_2|^(d-1) for large d.
double power_remainder(const InducedChain& chain, int power);

}  // namespace treemax
