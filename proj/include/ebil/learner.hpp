#pragma once

// Policy recovery from a fixed surrogate reward: exact soft value iteration
// on the discretized task, direct softmax over the energy, an
// entropy-regularized policy gradient for continuous actions, and
// behavior cloning as the supervised baseline.

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ebil/diffcore.hpp"
#include "ebil/energymodel.hpp"
#include "ebil/envsim.hpp"
#include "ebil/tabular.hpp"

namespace ebil::learner {

using Rng = std::mt19937_64;

struct SoftQTable {
  Eigen::MatrixXd q;
  double alpha = 1.0;
};

/// pi(a|s) proportional to exp(Q(s, a) / alpha), computed with a max shift.
TabularPolicy softmax_policy(const SoftQTable& table);

/// alpha * log sum_a exp(Q(s, a) / alpha) per state.
Eigen::VectorXd soft_values(const SoftQTable& table);

struct SoftViConfig {
  double alpha = 1.0;
  double tol = 1e-10;
  int max_iters = 100000;

  void validate() const;
};

struct SoftViResult {
  SoftQTable q;
  TabularPolicy policy;
  /// Sup-norm change of Q at each iteration.
  std::vector<double> residuals;
};

/// Called after every sweep with the iteration (from 1), the current table
/// and its residual.
using SoftViObserver = std::function<void(int iteration, const SoftQTable& q, double residual)>;

/// Q <- r + gamma * E_{s'}[V(s')], from Q = 0, until the sup-norm change
/// drops below tol. Throws ConvergenceError after max_iters sweeps.
SoftViResult soft_value_iteration(const TabularMdp& mdp, const SoftViConfig& cfg,
                                  const SoftViObserver& observer = {});

/// pi(a|s) proportional to exp(-E(s, a) / alpha) at bin centers.
TabularPolicy softmax_energy_policy(const energymodel::EnergyModel& model, const GridSpec& grid,
                                    double alpha = 1.0);
TabularPolicy softmax_energy_policy(const Eigen::MatrixXd& energy_table, double alpha = 1.0);

/// Temperature maximizing the likelihood of the demonstrated action bins
/// under softmax(-E / alpha). The log-likelihood is concave in 1 / alpha, so
/// the root of its derivative is found by bisection in log space.
double fit_temperature(const Eigen::MatrixXd& energy_table, const envsim::DemoSet& demos,
                       const GridSpec& grid);

// Behavior cloning.

struct BcPolicy {
  GridSpec grid;
  std::vector<double> means;
  std::vector<double> stds;
  /// Demonstrations observed per state bin; bins with none use the global
  /// fit.
  std::vector<std::size_t> counts;
  double global_mean = 0.0;
  double global_std = 1.0;

  double sample(const envsim::EnvSpec& env, double s, Rng& rng) const;
};

inline constexpr double kBcStdFloor = 1e-3;

BcPolicy bc_fit(const envsim::DemoSet& demos, const GridSpec& grid);

// Continuous policy: a = mid + half * tanh(u), u ~ N(mu(s), exp(log_std)^2),
// with mu a small network of the normalized state.

struct GaussianPolicy {
  diffcore::Network mean_net;
  double log_std = -1.0;
  double state_lo = -0.5;
  double state_hi = 10.5;
  double action_lo = -1.0;
  double action_hi = 1.0;

  double normalize_state(double s) const;
  double squash(double u) const;
  /// Pre-squash Gaussian means for a batch of raw states.
  Eigen::RowVectorXd means(const Eigen::RowVectorXd& states) const;
  /// Action at the Gaussian mean.
  double center_action(double s) const;
  double sample(double s, Rng& rng) const;
  /// log pi(a|s) including the change of variables, given the pre-squash u.
  double log_prob(double mu, double u) const;
};

GaussianPolicy make_gaussian_policy(const envsim::EnvSpec& env,
                                    const std::vector<std::size_t>& hidden, double init_log_std,
                                    std::uint64_t seed);

/// Rewards for a batch of (state, action) pairs given as two equal-length
/// rows.
using BatchReward =
    std::function<Eigen::RowVectorXd(const Eigen::RowVectorXd& s, const Eigen::RowVectorXd& a)>;

BatchReward batch_reward(std::function<double(double, double)> reward);
/// -E mapped through scale and offset, one network pass per batch.
BatchReward energy_batch_reward(const energymodel::EnergyModel& model, double scale,
                                double offset);

struct PgConfig {
  std::size_t episodes_per_update = 32;
  double learning_rate = 3e-3;
  double entropy_weight = 1.0;
  int iterations = 6000;
  std::vector<std::size_t> hidden{32, 32};
  double init_log_std = -1.0;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
};

struct PgIterationStats {
  int iteration = 0;
  /// Mean undiscounted environment return per episode.
  double mean_return = 0.0;
  /// Mean per-step entropy estimate -log pi(a|s).
  double entropy = 0.0;
  double log_std = 0.0;
};

struct PgResult {
  GaussianPolicy policy;
  std::vector<PgIterationStats> log;
};

using PgObserver = std::function<void(int iteration, const GaussianPolicy& policy)>;

/// Episodic REINFORCE on r(s, a) - w log pi(a|s) with a per-timestep mean
/// baseline and Adam. Throws NumericError naming the iteration if the
/// parameters stop being finite.
PgResult policy_gradient_train(const envsim::EnvSpec& env, const BatchReward& reward,
                               const PgConfig& cfg, const PgObserver& observer = {});

// Rollouts.

envsim::DemoSet rollout(const TabularPolicy& policy, const GridSpec& grid,
                        const envsim::EnvSpec& env, std::size_t n_traj, std::uint64_t seed);
envsim::DemoSet rollout(const BcPolicy& policy, const envsim::EnvSpec& env, std::size_t n_traj,
                        std::uint64_t seed);
envsim::DemoSet rollout(const GaussianPolicy& policy, const envsim::EnvSpec& env,
                        std::size_t n_traj, std::uint64_t seed);

// Artifacts.

nlohmann::json to_json(const TabularPolicy& policy);
TabularPolicy tabular_policy_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const BcPolicy& policy);
BcPolicy bc_policy_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const GaussianPolicy& policy);
GaussianPolicy gaussian_policy_from_json(const nlohmann::json& doc);

}  // namespace ebil::learner
