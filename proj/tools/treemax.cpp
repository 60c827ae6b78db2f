// Command-line front end: MDP generation, variance sweeps, gradient checks,
// trainer runs and spectral reports. Every command is deterministic given its
// flags and seed; file writes happen on the coordinating thread only.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "treemax/gradient.hpp"
#include "treemax/mdp.hpp"
#include "treemax/report.hpp"
#include "treemax/spectral.hpp"
#include "treemax/trainer.hpp"
#include "treemax/tree_policy.hpp"
#include "treemax/variance.hpp"

namespace {

using namespace treemax;

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

RewardMode parse_reward_mode(const std::string& name) {
  if (name == "random" || name == "state_action") return RewardMode::StateAction;
  if (name == "state") return RewardMode::StateOnly;
  if (name == "constant") return RewardMode::Constant;
  throw CLI::ValidationError("--rewards", "unknown reward mode: " + name);
}

int resolve_jobs(int flag_value) {
  if (const char* env = std::getenv("TREEMAX_JOBS")) {
    const int parsed = std::atoi(env);
    if (parsed > 0) return parsed;
  }
  if (flag_value > 0) return flag_value;
  const unsigned hardware = std::thread::hardware_concurrency();
  return hardware > 0 ? static_cast<int>(hardware) : 1;
}

/// Runs tasks [0, count) on a bounded pool; tasks write into their own slot.
void run_pool(int jobs, std::size_t count, const std::function<void(std::size_t)>& task) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t index = next.fetch_add(1); index < count; index = next.fetch_add(1))
      task(index);
  };
  const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
  if (threads == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
  for (auto& thread : pool) thread.join();
}

std::uint64_t theta_stream_seed(std::uint64_t seed) { return seed ^ 0x5eedc0ffee123456ULL; }

Eigen::VectorXd draw_theta(int num_states, std::uint64_t seed) {
  Rng rng(theta_stream_seed(seed));
  Eigen::VectorXd theta(num_states);
  for (int i = 0; i < num_states; ++i) theta(i) = rng.uniform();
  return theta;
}

struct GenMdpOptions {
  int states = 5;
  int actions = 3;
  std::string regime = "random";
  double mix = 0.0;
  double gamma = 0.9;
  std::string rewards = "random";
  std::uint64_t seed = 0;
  std::string output;
};

int run_gen_mdp(const GenMdpOptions& opt) {
  RegimeSpec spec;
  spec.regime = parse_regime(opt.regime);
  spec.epsilon = opt.mix;
  spec.num_states = opt.states;
  spec.num_actions = opt.actions;
  spec.gamma = opt.gamma;
  spec.reward_mode = parse_reward_mode(opt.rewards);

  const GeneratedMdp gen = generate_mdp(spec, opt.seed);
  save_mdp(gen.mdp, opt.output);

  const InducedChain chain = induce_chain(gen.mdp, gen.behavior);
  const SpectralReport spectrum = analyze_spectrum(chain);

  nlohmann::json meta;
  meta["regime"] = regime_name(spec.regime);
  meta["mix"] = spec.epsilon;
  meta["seed"] = opt.seed;
  meta["lambda2"] = spectrum.lambda2_modulus;
  meta["mixing"] = spectrum.mixing_flag;
  meta["reward_mode"] = opt.rewards;
  nlohmann::json policy = nlohmann::json::array();
  for (int s = 0; s < gen.mdp.num_states; ++s) {
    nlohmann::json row = nlohmann::json::array();
    for (int a = 0; a < gen.mdp.num_actions; ++a) row.push_back(gen.behavior.probs(s, a));
    policy.push_back(std::move(row));
  }
  meta["behavior_policy"] = std::move(policy);
  write_text_file(opt.output + ".meta.json", meta.dump(2) + "\n");

  std::cout << "wrote " << opt.output << " (lambda2=" << format_double(spectrum.lambda2_modulus)
            << ", mixing=" << (spectrum.mixing_flag ? "yes" : "no") << ")\n";
  return kExitOk;
}

StationaryPolicy behavior_from_meta(const std::string& meta_path, const Mdp& mdp) {
  std::ifstream in(meta_path);
  if (!in) return StationaryPolicy::uniform(mdp.num_states, mdp.num_actions);
  nlohmann::json meta;
  in >> meta;
  if (!meta.contains("behavior_policy"))
    return StationaryPolicy::uniform(mdp.num_states, mdp.num_actions);
  StationaryPolicy policy;
  policy.probs.resize(mdp.num_states, mdp.num_actions);
  const auto& rows = meta.at("behavior_policy");
  for (int s = 0; s < mdp.num_states; ++s)
    for (int a = 0; a < mdp.num_actions; ++a)
      policy.probs(s, a) = rows.at(s).at(a).get<double>();
  policy.validate();
  return policy;
}

struct SweepOptions {
  std::string regime = "all";
  std::optional<double> mix;
  int states = 5;
  int actions = 3;
  double gamma = 0.9;
  double beta = 1.0;
  std::string variant = "C";
  std::string rewards = "state";
  int seeds = 5;
  std::uint64_t seed = 1;
  int min_depth = 1;
  int max_depth = 8;
  std::string output;
  std::string svg;
  std::string mdp_file;
  std::string meta_file;
  int jobs = 0;
};

double default_mix(Regime regime) {
  switch (regime) {
    case Regime::NearUniform: return 0.05;
    case Regime::Random: return 0.0;
    case Regime::NearPermutation: return 0.02;
  }
  return 0.0;
}

int run_sweep(const SweepOptions& opt) {
  std::vector<int> depths;
  for (int d = opt.min_depth; d <= opt.max_depth; ++d) depths.push_back(d);
  if (depths.empty()) throw CLI::ValidationError("--min-depth/--max-depth", "empty depth range");
  const Variant variant = parse_variant(opt.variant);
  const RewardMode reward_mode = parse_reward_mode(opt.rewards);

  struct Task {
    std::string label;
    Regime regime = Regime::Random;
    double mix = 0.0;
    std::uint64_t seed = 0;
  };
  std::vector<Task> tasks;
  std::vector<Regime> regimes;
  if (!opt.mdp_file.empty()) {
    // single fixed MDP; seeds only redraw the score vector
  } else if (opt.regime == "all") {
    regimes = {Regime::NearUniform, Regime::Random, Regime::NearPermutation};
  } else {
    regimes = {parse_regime(opt.regime)};
  }
  for (const Regime regime : regimes) {
    for (int i = 0; i < opt.seeds; ++i) {
      Task task;
      task.regime = regime;
      task.label = regime_name(regime);
      task.mix = opt.mix.value_or(default_mix(regime));
      task.seed = opt.seed + i;
      tasks.push_back(std::move(task));
    }
  }

  std::vector<std::vector<SweepRow>> slots;
  std::string failure;
  int failure_exit = kExitCheckFailed;

  if (!opt.mdp_file.empty()) {
    const Mdp mdp = load_mdp(opt.mdp_file);
    const std::string meta =
        opt.meta_file.empty() ? opt.mdp_file + ".meta.json" : opt.meta_file;
    TreePolicyConfig base;
    base.variant = variant;
    base.depth = depths.front();
    base.beta = opt.beta;
    base.behavior = behavior_from_meta(meta, mdp);
    slots.resize(opt.seeds);
    for (int i = 0; i < opt.seeds; ++i) {
      const std::uint64_t seed = opt.seed + i;
      TreePolicyConfig config = base;
      config.theta = draw_theta(mdp.num_states, seed);
      try {
        slots[i] = sweep_rows("file", seed, mdp, config, depths);
      } catch (const NonMixingChainError& error) {
        failure = error.what();
        failure_exit = kExitNumeric;
        break;
      } catch (const std::invalid_argument& error) {
        failure = error.what();
        failure_exit = kExitUsage;
        break;
      }
    }
  } else {
    slots.resize(tasks.size());
    std::vector<std::string> errors(tasks.size());
    std::vector<int> exits(tasks.size(), kExitCheckFailed);
    run_pool(resolve_jobs(opt.jobs), tasks.size(), [&](std::size_t index) {
      const Task& task = tasks[index];
      try {
        RegimeSpec spec;
        spec.regime = task.regime;
        spec.epsilon = task.mix;
        spec.num_states = opt.states;
        spec.num_actions = opt.actions;
        spec.gamma = opt.gamma;
        spec.reward_mode = reward_mode;
        const GeneratedMdp gen = generate_mdp(spec, task.seed);
        TreePolicyConfig config;
        config.variant = variant;
        config.depth = depths.front();
        config.beta = opt.beta;
        config.theta = draw_theta(opt.states, task.seed);
        config.behavior = gen.behavior;
        slots[index] = sweep_rows(task.label, task.seed, gen.mdp, config, depths);
      } catch (const NonMixingChainError& error) {
        errors[index] = error.what();
        exits[index] = kExitNumeric;
      } catch (const std::invalid_argument& error) {
        errors[index] = error.what();
        exits[index] = kExitUsage;
      } catch (const std::exception& error) {
        errors[index] = error.what();
      }
    });
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (!errors[i].empty() && failure.empty()) {
        failure = errors[i];
        failure_exit = exits[i];
      }
    }
  }

  std::vector<SweepRow> rows;
  for (const auto& slot : slots) rows.insert(rows.end(), slot.begin(), slot.end());
  const std::string status = failure.empty() ? "ok" : "error " + failure;
  write_text_file(opt.output, sweep_csv(rows, status));
  if (!opt.svg.empty()) write_text_file(opt.svg, sweep_svg(rows));
  std::cout << "wrote " << rows.size() << " rows to " << opt.output << "\n";
  if (!failure.empty()) {
    std::cerr << "sweep error: " << failure << "\n";
    return failure_exit;
  }
  return kExitOk;
}

struct GradcheckOptions {
  int suite_size = 50;
  double tolerance = 1e-5;
  std::uint64_t seed = 1;
  bool inject_sign_flip = false;
};

int run_gradcheck(const GradcheckOptions& opt) {
  int failures = 0;
  int checks = 0;
  for (int variant_index = 0; variant_index < 2; ++variant_index) {
    const Variant variant = variant_index == 0 ? Variant::Cumulative : Variant::Exponentiated;
    Rng rng(opt.seed + variant_index * 7919);
    for (int trial = 0; trial < opt.suite_size; ++trial) {
      const std::uint64_t instance_seed = rng.next_u64();
      RegimeSpec spec;
      spec.regime = Regime::Random;
      spec.num_states = 3 + static_cast<int>(rng.uniform_int(3));
      spec.num_actions = 2 + static_cast<int>(rng.uniform_int(2));
      spec.gamma = rng.uniform(0.75, 0.95);
      spec.reward_mode =
          variant == Variant::Exponentiated ? RewardMode::StateOnly : RewardMode::StateAction;
      const GeneratedMdp gen = generate_mdp(spec, instance_seed);

      TreePolicyConfig config;
      config.variant = variant;
      config.depth = 1 + static_cast<int>(rng.uniform_int(4));
      config.beta = rng.uniform(0.3, 2.0);
      config.theta = draw_theta(spec.num_states, instance_seed);
      config.behavior = gen.behavior;
      const int root = static_cast<int>(rng.uniform_int(spec.num_states));

      GradientMatrix grad = grad_log_policy(gen.mdp, config, root);
      if (opt.inject_sign_flip) grad.values = -grad.values;

      // central differences on the log policy, coordinate by coordinate
      const double step = 1e-5;
      Eigen::MatrixXd numeric(spec.num_actions, spec.num_states);
      for (int k = 0; k < spec.num_states; ++k) {
        TreePolicyConfig plus = config;
        TreePolicyConfig minus = config;
        plus.theta(k) += step;
        minus.theta(k) -= step;
        numeric.col(k) = (tree_policy(gen.mdp, plus, root).log_probs -
                          tree_policy(gen.mdp, minus, root).log_probs) /
                         (2.0 * step);
      }

      const Eigen::VectorXd pi = tree_policy(gen.mdp, config, root).probs;
      const double score_residual = (pi.transpose() * grad.values).cwiseAbs().maxCoeff();

      ++checks;
      bool ok = score_residual <= 1e-10;
      double worst = 0.0;
      int worst_a = 0, worst_k = 0;
      for (int a = 0; a < spec.num_actions; ++a) {
        for (int k = 0; k < spec.num_states; ++k) {
          const double denom = std::max(1.0, std::abs(grad.values(a, k)));
          const double err = std::abs(grad.values(a, k) - numeric(a, k)) / denom;
          if (err > worst) {
            worst = err;
            worst_a = a;
            worst_k = k;
          }
        }
      }
      if (worst > opt.tolerance) ok = false;
      if (!ok) {
        ++failures;
        std::cout << "FAIL variant=" << variant_name(variant) << " seed=" << instance_seed
                  << " root=" << root << " depth=" << config.depth << " entry=(" << worst_a
                  << "," << worst_k << ") analytic=" << format_double(grad.values(worst_a, worst_k))
                  << " numeric=" << format_double(numeric(worst_a, worst_k))
                  << " rel_err=" << format_double(worst)
                  << " score_residual=" << format_double(score_residual) << "\n";
      }
    }
  }
  std::cout << (failures == 0 ? "PASS" : "FAIL") << " gradcheck: " << (checks - failures) << "/"
            << checks << " instances within tolerance " << format_double(opt.tolerance) << "\n";
  return failures == 0 ? kExitOk : kExitCheckFailed;
}

struct TrainOptions {
  std::string env = "chain";
  int depth = 2;
  int width = 1 << 20;
  double beta = 2.0;
  double gamma = 0.9;
  double learning_rate = 0.25;
  int batch = 16;
  int iterations = 200;
  std::uint64_t seed = 1;
  std::string output;
  bool baseline = false;
  bool timing = false;
};

int run_train(const TrainOptions& opt) {
  const std::unique_ptr<SimEnvironment> env = make_environment(opt.env);

  auto run_one = [&](int depth, const std::string& path) {
    TrainConfig config;
    config.depth = depth;
    config.width = opt.width;
    config.beta = opt.beta;
    config.gamma = opt.gamma;
    config.learning_rate = opt.learning_rate;
    config.batch_size = opt.batch;
    config.iterations = opt.iterations;
    config.seed = opt.seed;
    const TrainResult result = train(*env, config);
    const std::string status = result.diverged ? "error divergence abort" : "ok";
    write_text_file(path, train_csv(result.records, status, opt.timing));
    std::cout << "wrote " << path << " (" << result.records.size() << " iterations)\n";
    return result.diverged;
  };

  bool diverged = run_one(opt.depth, opt.output);
  if (opt.baseline) {
    const std::filesystem::path base(opt.output);
    const std::filesystem::path paired =
        base.parent_path() / (base.stem().string() + "_baseline" + base.extension().string());
    diverged = run_one(0, paired.string()) || diverged;
  }
  return diverged ? kExitNumeric : kExitOk;
}

struct AnalyzeOptions {
  std::string mdp_file;
  std::string meta_file;
  std::string variant = "C";
  int depth = 3;
  double beta = 1.0;
  std::uint64_t seed = 1;
  std::string output;
};

int run_analyze(const AnalyzeOptions& opt) {
  const Mdp mdp = load_mdp(opt.mdp_file);
  const std::string meta = opt.meta_file.empty() ? opt.mdp_file + ".meta.json" : opt.meta_file;

  TreePolicyConfig config;
  config.variant = parse_variant(opt.variant);
  config.depth = opt.depth;
  config.beta = opt.beta;
  config.theta = draw_theta(mdp.num_states, opt.seed);
  config.behavior = behavior_from_meta(meta, mdp);

  const InducedChain chain = induce_chain(mdp, config.behavior);
  const SpectralReport spectrum = analyze_spectrum(chain);

  std::ostringstream out;
  out << "eigenvalue_moduli";
  for (int i = 0; i < spectrum.eigenvalue_moduli.size(); ++i)
    out << ',' << format_double(spectrum.eigenvalue_moduli(i));
  out << "\n";
  out << "lambda2," << format_double(spectrum.lambda2_modulus) << "\n";
  out << "mixing," << (spectrum.mixing_flag ? "true" : "false") << "\n";
  out << "state";
  for (int a = 0; a < mdp.num_actions; ++a) out << ",pi_a" << a;
  out << "\n";
  for (int s = 0; s < mdp.num_states; ++s) {
    const TreePolicyDistribution dist = tree_policy(mdp, config, s);
    out << s;
    for (int a = 0; a < mdp.num_actions; ++a) out << ',' << format_double(dist.probs(a));
    out << "\n";
  }
  out << "# status=ok\n";
  if (opt.output.empty())
    std::cout << out.str();
  else
    write_text_file(opt.output, out.str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular tree-expansion policy laboratory"};
  app.require_subcommand(1);

  GenMdpOptions gen_opt;
  CLI::App* gen = app.add_subcommand("gen-mdp", "generate an MDP file with metadata sidecar");
  gen->add_option("--states", gen_opt.states, "number of states")->check(CLI::PositiveNumber);
  gen->add_option("--actions", gen_opt.actions, "number of actions")->check(CLI::PositiveNumber);
  gen->add_option("--regime", gen_opt.regime, "uniform|random|permutation");
  gen->add_option("--mix", gen_opt.mix, "blend weight in [0,1]");
  gen->add_option("--gamma", gen_opt.gamma, "discount factor");
  gen->add_option("--rewards", gen_opt.rewards, "random|state|constant");
  gen->add_option("--seed", gen_opt.seed, "generator seed")->required();
  gen->add_option("-o,--output", gen_opt.output, "output MDP json path")->required();

  SweepOptions sweep_opt;
  CLI::App* sweep = app.add_subcommand("sweep", "depth sweep of the exact gradient variance");
  sweep->add_option("--regime", sweep_opt.regime, "all|uniform|random|permutation");
  double mix_flag = -1.0;
  sweep->add_option("--mix", mix_flag, "override the per-regime blend weight");
  sweep->add_option("--states", sweep_opt.states, "number of states");
  sweep->add_option("--actions", sweep_opt.actions, "number of actions");
  sweep->add_option("--gamma", sweep_opt.gamma, "discount factor");
  sweep->add_option("--beta", sweep_opt.beta, "inverse temperature");
  sweep->add_option("--variant", sweep_opt.variant, "C|E");
  sweep->add_option("--rewards", sweep_opt.rewards, "random|state|constant");
  sweep->add_option("--seeds", sweep_opt.seeds, "number of seeds per regime");
  sweep->add_option("--seed", sweep_opt.seed, "base seed")->required();
  sweep->add_option("--min-depth", sweep_opt.min_depth, "first depth");
  sweep->add_option("--max-depth", sweep_opt.max_depth, "last depth");
  sweep->add_option("--mdp", sweep_opt.mdp_file, "sweep a fixed MDP file instead of a regime");
  sweep->add_option("--meta", sweep_opt.meta_file, "metadata sidecar for --mdp");
  sweep->add_option("--jobs", sweep_opt.jobs, "worker pool size (TREEMAX_JOBS overrides)");
  sweep->add_option("-o,--output", sweep_opt.output, "output CSV path")->required();
  sweep->add_option("--svg", sweep_opt.svg, "optional SVG chart path");

  GradcheckOptions grad_opt;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck->add_option("--suite-size", grad_opt.suite_size, "instances per variant");
  gradcheck->add_option("--tolerance", grad_opt.tolerance, "max relative error");
  gradcheck->add_option("--seed", grad_opt.seed, "suite seed")->required();
  gradcheck->add_flag("--inject-sign-flip", grad_opt.inject_sign_flip,
                      "negate the analytic gradient (self-test of the checker)");

  TrainOptions train_opt;
  CLI::App* train_cmd = app.add_subcommand("train", "policy-gradient training run");
  train_cmd->add_option("--env", train_opt.env, "chain|gridworld");
  train_cmd->add_option("--depth", train_opt.depth, "expansion depth (0 = flat softmax)");
  train_cmd->add_option("--width", train_opt.width, "expansion width cap");
  train_cmd->add_option("--beta", train_opt.beta, "inverse temperature");
  train_cmd->add_option("--gamma", train_opt.gamma, "discount factor");
  train_cmd->add_option("--lr", train_opt.learning_rate, "learning rate");
  train_cmd->add_option("--batch", train_opt.batch, "episodes per iteration");
  train_cmd->add_option("--iterations", train_opt.iterations, "training iterations");
  train_cmd->add_option("--seed", train_opt.seed, "run seed")->required();
  train_cmd->add_option("-o,--output", train_opt.output, "output CSV path")->required();
  train_cmd->add_flag("--baseline", train_opt.baseline, "also run the depth-0 softmax");
  train_cmd->add_flag("--timing", train_opt.timing,
                      "append a wall_ms column (breaks byte-identical re-runs)");

  AnalyzeOptions analyze_opt;
  CLI::App* analyze = app.add_subcommand("analyze", "spectral report and policy dump");
  analyze->add_option("--mdp", analyze_opt.mdp_file, "MDP json path")->required();
  analyze->add_option("--meta", analyze_opt.meta_file, "metadata sidecar path");
  analyze->add_option("--variant", analyze_opt.variant, "C|E");
  analyze->add_option("--depth", analyze_opt.depth, "expansion depth");
  analyze->add_option("--beta", analyze_opt.beta, "inverse temperature");
  analyze->add_option("--seed", analyze_opt.seed, "score vector seed")->required();
  analyze->add_option("-o,--output", analyze_opt.output, "write report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& help) {
    return app.exit(help);
  } catch (const CLI::ParseError& error) {
    app.exit(error);
    return kExitUsage;
  }

  try {
    if (*gen) return run_gen_mdp(gen_opt);
    if (*sweep) {
      if (mix_flag >= 0.0) sweep_opt.mix = mix_flag;
      return run_sweep(sweep_opt);
    }
    if (*gradcheck) return run_gradcheck(grad_opt);
    if (*train_cmd) return run_train(train_opt);
    if (*analyze) return run_analyze(analyze_opt);
  } catch (const CLI::ValidationError& error) {
    std::cerr << error.what() << "\n";
    return kExitUsage;
  } catch (const NonMixingChainError& error) {
    std::cerr << error.what() << "\n";
    return kExitNumeric;
  } catch (const std::invalid_argument& error) {
    std::cerr << error.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& error) {
    std::cerr << error.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}
