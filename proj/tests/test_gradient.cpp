#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "oracle.hpp"
#include "treemax/gradient.hpp"
#include "treemax/mdp.hpp"
#include "treemax/spectral.hpp"

using namespace treemax;

namespace {

TreePolicyConfig make_config(const GeneratedMdp& gen, Variant variant, int depth, double beta,
                             Rng& rng) {
  TreePolicyConfig config;
  config.variant = variant;
  config.depth = depth;
  config.beta = beta;
  config.theta = oracle::random_theta(gen.mdp.num_states, rng);
  config.behavior = gen.behavior;
  return config;
}

}  // namespace

TEST_CASE("rank-one behavior chain zeroes the cumulative gradient") {
  Rng rng(1);
  const GeneratedMdp gen = oracle::rank_one_chain_instance(4, 3, 7, false);
  const InducedChain chain = induce_chain(gen.mdp, gen.behavior);
  REQUIRE(analyze_spectrum(chain).lambda2_modulus < 1e-12);
  for (int depth : {2, 3, 5}) {
    const TreePolicyConfig config = make_config(gen, Variant::Cumulative, depth, 1.0, rng);
    for (int root = 0; root < 4; ++root) {
      const GradientMatrix grad = grad_cumulative(gen.mdp, config, root);
      CHECK(grad.values.cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("depth-one cumulative gradient is the projected root transition") {
  Rng rng(2);
  const GeneratedMdp gen = generate_mdp({Regime::Random, 0.0, 4, 2, 0.85}, 11);
  const TreePolicyConfig config = make_config(gen, Variant::Cumulative, 1, 1.4, rng);
  for (int root = 0; root < 4; ++root) {
    const GradientMatrix grad = grad_cumulative(gen.mdp, config, root);
    const Eigen::VectorXd pi = policy_cumulative(gen.mdp, config, root).probs;
    const Eigen::MatrixXd expected =
        1.4 * 0.85 *
        (gen.mdp.transitions[root] -
         Eigen::VectorXd::Ones(2) * (pi.transpose() * gen.mdp.transitions[root]));
    CHECK((grad.values - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("depth zero returns an explicit zero gradient") {
  Rng rng(3);
  const GeneratedMdp gen = generate_mdp({Regime::Random, 0.0, 3, 2, 0.9}, 13);
  TreePolicyConfig config = make_config(gen, Variant::Cumulative, 0, 1.0, rng);
  const GradientMatrix c = grad_cumulative(gen.mdp, config, 0);
  CHECK(c.trivially_zero);
  CHECK(c.values.cwiseAbs().maxCoeff() == 0.0);
  config.variant = Variant::Exponentiated;
  const GradientMatrix e = grad_exponentiated(gen.mdp, config, 0);
  CHECK(e.trivially_zero);
}

TEST_CASE("cumulative gradient matches central finite differences") {
  Rng rng(4);
  const GeneratedMdp gen = generate_mdp({Regime::Random, 0.0, 4, 2, 0.9}, 17);
  const TreePolicyConfig config = make_config(gen, Variant::Cumulative, 3, 1.3, rng);
  for (int root = 0; root < 4; ++root) {
    const GradientMatrix grad = grad_cumulative(gen.mdp, config, root);
    const Eigen::MatrixXd numeric = oracle::grad_by_finite_differences(gen.mdp, config, root);
    CHECK(oracle::grad_relative_error(grad.values, numeric) < 1e-5);
  }
}

TEST_CASE("constant-reward rank-one chain zeroes the exponentiated gradient") {
  Rng rng(5);
  const GeneratedMdp gen = oracle::rank_one_chain_instance(4, 2, 19, true);
  const TreePolicyConfig config = make_config(gen, Variant::Exponentiated, 2, 1.0, rng);
  for (int root = 0; root < 4; ++root) {
    const GradientMatrix grad = grad_exponentiated(gen.mdp, config, root);
    CHECK(grad.values.cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("exponentiated gradient matches central finite differences") {
  Rng rng(6);
  const GeneratedMdp gen =
      generate_mdp({Regime::Random, 0.0, 4, 2, 0.9, RewardMode::StateOnly}, 23);
  const TreePolicyConfig config = make_config(gen, Variant::Exponentiated, 3, 0.9, rng);
  for (int root = 0; root < 4; ++root) {
    const GradientMatrix grad = grad_exponentiated(gen.mdp, config, root);
    const Eigen::MatrixXd numeric = oracle::grad_by_finite_differences(gen.mdp, config, root);
    CHECK(oracle::grad_relative_error(grad.values, numeric) < 1e-5);
  }
}

TEST_CASE("stabilized and direct exponentiated gradients agree at small beta") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const GeneratedMdp gen = generate_mdp(
        {Regime::Random, 0.0, 4, 3, 0.9, RewardMode::StateOnly}, rng.next_u64());
    const int depth = 1 + static_cast<int>(rng.uniform_int(4));
    const TreePolicyConfig config =
        make_config(gen, Variant::Exponentiated, depth, rng.uniform(0.1, 0.8), rng);
    const GradientMatrix stabilized = grad_exponentiated(gen.mdp, config, 0);
    const GradientMatrix direct = grad_exponentiated_direct(gen.mdp, config, 0);
    CHECK((stabilized.values - direct.values).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("score identity and zero row sums hold across a randomized suite") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const bool exponentiated = trial % 2 == 1;
    const GeneratedMdp gen = generate_mdp(
        {Regime::Random, 0.05, 3 + static_cast<int>(rng.uniform_int(3)),
         2 + static_cast<int>(rng.uniform_int(2)), 0.9,
         exponentiated ? RewardMode::StateOnly : RewardMode::StateAction},
        rng.next_u64());
    const TreePolicyConfig config = make_config(
        gen, exponentiated ? Variant::Exponentiated : Variant::Cumulative,
        1 + static_cast<int>(rng.uniform_int(4)), rng.uniform(0.3, 2.0), rng);
    const int root = static_cast<int>(rng.uniform_int(gen.mdp.num_states));
    const GradientMatrix grad = grad_log_policy(gen.mdp, config, root);
    const Eigen::VectorXd pi = tree_policy(gen.mdp, config, root).probs;
    CHECK((pi.transpose() * grad.values).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(grad.values.rowwise().sum().cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("finite differences validate both variants over fifty triples each") {
  Rng rng(9);
  for (int variant_index = 0; variant_index < 2; ++variant_index) {
    const Variant variant = variant_index == 0 ? Variant::Cumulative : Variant::Exponentiated;
    for (int trial = 0; trial < 50; ++trial) {
      const GeneratedMdp gen = generate_mdp(
          {Regime::Random, 0.0, 3 + static_cast<int>(rng.uniform_int(2)), 2, 0.9,
           variant == Variant::Exponentiated ? RewardMode::StateOnly
                                             : RewardMode::StateAction},
          rng.next_u64());
      const TreePolicyConfig config =
          make_config(gen, variant, 1 + static_cast<int>(rng.uniform_int(3)),
                      rng.uniform(0.3, 1.8), rng);
      const int root = static_cast<int>(rng.uniform_int(gen.mdp.num_states));
      const GradientMatrix grad = grad_log_policy(gen.mdp, config, root);
      const Eigen::MatrixXd numeric = oracle::grad_by_finite_differences(gen.mdp, config, root);
      CHECK(oracle::grad_relative_error(grad.values, numeric) < 1e-5);
    }
  }
}

TEST_CASE("grad_norm_bounds brackets the Frobenius norm on random instances") {
  Rng rng(10);
  int complex_seen = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const GeneratedMdp gen = generate_mdp(
        {Regime::Random, 0.0, 3 + static_cast<int>(rng.uniform_int(4)),
         2 + static_cast<int>(rng.uniform_int(2)), 0.9},
        rng.next_u64());
    TreePolicyConfig config = make_config(gen, Variant::Cumulative, 1, rng.uniform(0.5, 2.0), rng);
    const double lambda2 =
        analyze_spectrum(induce_chain(gen.mdp, gen.behavior)).lambda2_modulus;
    for (int depth = 1; depth <= 8; ++depth) {
      config.depth = depth;
      const GradNormBounds bounds = grad_norm_bounds(gen.mdp, config, 0);
      CHECK(bounds.lower <= bounds.frobenius + 1e-12);
      CHECK(bounds.frobenius <= bounds.upper + 1e-12);
      // constant-explicit envelope sqrt(2) A S beta gamma^d lambda2^(d-1)
      const double explicit_bound = std::sqrt(2.0) * gen.mdp.num_actions *
                                    gen.mdp.num_states * config.beta *
                                    std::pow(gen.mdp.discount, depth) *
                                    std::pow(lambda2, depth - 1);
      CHECK(bounds.frobenius <= explicit_bound + 1e-12);
      if (bounds.complex_lambda2) ++complex_seen;
    }
  }
  // complex second eigenvalues do occur in this suite; the flag must fire
  CHECK(complex_seen > 0);
}

TEST_CASE("grad_norm_bounds collapses to zero for a rank-one chain") {
  Rng rng(11);
  const GeneratedMdp gen = oracle::rank_one_chain_instance(4, 2, 29, false);
  TreePolicyConfig config = make_config(gen, Variant::Cumulative, 2, 1.0, rng);
  for (int depth : {2, 3, 4}) {
    config.depth = depth;
    const GradNormBounds bounds = grad_norm_bounds(gen.mdp, config, 1);
    CHECK(bounds.frobenius < 1e-10);
    CHECK(bounds.lower < 1e-10);
    CHECK(bounds.upper < 1e-10);
  }
}

TEST_CASE("near-permutation chains keep the spectral factor of the upper envelope flat") {
  Rng rng(12);
  const GeneratedMdp gen = generate_mdp({Regime::NearPermutation, 0.02, 5, 2, 0.9}, 31);
  TreePolicyConfig config = make_config(gen, Variant::Cumulative, 1, 1.0, rng);
  std::vector<double> uppers;
  for (int depth = 1; depth <= 6; ++depth) {
    config.depth = depth;
    uppers.push_back(grad_norm_bounds(gen.mdp, config, 0).upper);
  }
  for (std::size_t i = 0; i + 1 < uppers.size(); ++i) {
    const double ratio = uppers[i + 1] / uppers[i];
    // decay comes from gamma only; the lambda2 power is essentially constant
    CHECK(ratio > 0.97 * gen.mdp.discount);
    CHECK(ratio <= gen.mdp.discount + 1e-12);
  }
}

TEST_CASE("grad_norm_bounds refuses exact permutations and the wrong variant") {
  Rng rng(13);
  const GeneratedMdp gen = generate_mdp({Regime::NearPermutation, 0.0, 4, 2, 0.9}, 37);
  TreePolicyConfig config = make_config(gen, Variant::Cumulative, 2, 1.0, rng);
  CHECK_THROWS_AS(grad_norm_bounds(gen.mdp, config, 0), NonMixingChainError);
  const GeneratedMdp mixing = generate_mdp({Regime::Random, 0.0, 4, 2, 0.9}, 37);
  TreePolicyConfig wrong = make_config(mixing, Variant::Exponentiated, 2, 1.0, rng);
  CHECK_THROWS_AS(grad_norm_bounds(mixing.mdp, wrong, 0), std::invalid_argument);
}
