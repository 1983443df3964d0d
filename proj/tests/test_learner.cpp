#include <doctest.h>

#include <cmath>
#include <random>

#include "ebil/envsim.hpp"
#include "ebil/error.hpp"
#include "ebil/learner.hpp"

using namespace ebil;
using namespace ebil::learner;

namespace {

// Random MDP with a dense stochastic kernel.
TabularMdp random_mdp(std::mt19937_64& rng, std::size_t ns, std::size_t na, double gamma) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> kernel(ns * na * ns);
  for (std::size_t sa = 0; sa < ns * na; ++sa) {
    double total = 0.0;
    for (std::size_t n = 0; n < ns; ++n) total += kernel[sa * ns + n] = u(rng);
    for (std::size_t n = 0; n < ns; ++n) kernel[sa * ns + n] /= total;
  }
  Eigen::MatrixXd reward(static_cast<Eigen::Index>(ns), static_cast<Eigen::Index>(na));
  for (Eigen::Index i = 0; i < reward.size(); ++i) reward.data()[i] = 4.0 * u(rng) - 2.0;
  Eigen::VectorXd initial = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(ns), 1.0 / double(ns));
  return TabularMdp(ns, na, std::move(kernel), reward, gamma, initial);
}

// Plain-loop soft Bellman iteration for a fixed number of sweeps.
Eigen::MatrixXd brute_force_q(const TabularMdp& mdp, double alpha, int sweeps) {
  const auto ns = mdp.n_states(), na = mdp.n_actions();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ns), static_cast<Eigen::Index>(na));
  for (int it = 0; it < sweeps; ++it) {
    std::vector<double> v(ns);
    for (std::size_t s = 0; s < ns; ++s) {
      double z = 0.0;
      for (std::size_t a = 0; a < na; ++a) z += std::exp(q(s, a) / alpha);
      v[s] = alpha * std::log(z);
    }
    for (std::size_t s = 0; s < ns; ++s) {
      for (std::size_t a = 0; a < na; ++a) {
        double next = 0.0;
        for (std::size_t n = 0; n < ns; ++n) next += mdp.transition(s, a, n) * v[n];
        q(s, a) = mdp.reward()(s, a) + mdp.gamma() * next;
      }
    }
  }
  return q;
}

TabularMdp single_state(Eigen::MatrixXd reward, double gamma) {
  const auto na = static_cast<std::size_t>(reward.cols());
  return TabularMdp(1, na, std::vector<double>(na, 1.0), std::move(reward), gamma,
                    Eigen::VectorXd::Ones(1));
}

envsim::DemoSet expert_demos(std::size_t n, std::uint64_t seed) {
  return envsim::generate_demos(envsim::EnvSpec{}, envsim::ExpertPolicySpec{}, n, seed);
}

}  // namespace

TEST_CASE("constant Q gives a uniform policy and value Q + alpha log n") {
  const SoftQTable table{Eigen::MatrixXd::Constant(3, 4, 10.0), 0.5};
  const TabularPolicy pi = softmax_policy(table);
  CHECK((pi.probs().array() - 0.25).abs().maxCoeff() < 1e-15);
  const Eigen::VectorXd v = soft_values(table);
  for (Eigen::Index s = 0; s < 3; ++s) CHECK(v(s) == doctest::Approx(10.0 + 0.5 * std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("softmax over large Q values does not overflow") {
  Eigen::MatrixXd q(1, 2);
  q << 1000.0, 999.0;
  const TabularPolicy pi = softmax_policy({q, 1.0});
  CHECK(pi(0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-14));
}

TEST_CASE("one-step bandit recovers the logistic policy") {
  Eigen::MatrixXd r(1, 2);
  r << 1.0, 0.0;
  const SoftViResult res = soft_value_iteration(single_state(r, 0.0), SoftViConfig{});
  CHECK(res.policy(0, 0) == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  CHECK(res.policy(0, 1) == doctest::Approx(0.2689414213699951).epsilon(1e-12));
}

TEST_CASE("soft value iteration agrees with a brute-force oracle on random MDPs") {
  std::mt19937_64 rng(2718);
  for (int trial = 0; trial < 8; ++trial) {
    const double alpha = 0.3 + 0.5 * trial / 7.0;
    const TabularMdp mdp = random_mdp(rng, 5, 3, 0.9);
    SoftViConfig cfg;
    cfg.alpha = alpha;
    cfg.tol = 1e-13;
    const SoftViResult res = soft_value_iteration(mdp, cfg);
    const Eigen::MatrixXd oracle = brute_force_q(mdp, alpha, 10000);
    CHECK((res.q.q - oracle).cwiseAbs().maxCoeff() < 1e-8);
    for (std::size_t i = 1; i < res.residuals.size(); ++i) {
      CHECK(res.residuals[i] <= res.residuals[i - 1] * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("soft value iteration reports each sweep and fails loudly without convergence") {
  std::mt19937_64 rng(1);
  const TabularMdp mdp = random_mdp(rng, 4, 2, 0.99);
  int calls = 0;
  const auto res = soft_value_iteration(mdp, SoftViConfig{}, [&](int it, const SoftQTable&, double) {
    CHECK(it == ++calls);
  });
  CHECK(static_cast<std::size_t>(calls) == res.residuals.size());
  SoftViConfig short_run;
  short_run.max_iters = 3;
  CHECK_THROWS_AS(soft_value_iteration(mdp, short_run), ConvergenceError);
  SoftViConfig bad;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(soft_value_iteration(mdp, bad), ConfigError);
}

TEST_CASE("direct softmax over energy equals one-step soft value iteration on -E") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd energy(6, 9);
  for (Eigen::Index i = 0; i < energy.size(); ++i) energy.data()[i] = u(rng);
  std::vector<double> kernel(6 * 9 * 6, 0.0);
  for (std::size_t sa = 0; sa < 6 * 9; ++sa) kernel[sa * 6 + sa % 6] = 1.0;
  const TabularMdp mdp(6, 9, kernel, -energy, 0.0, Eigen::VectorXd::Constant(6, 1.0 / 6));
  const TabularPolicy direct = softmax_energy_policy(energy, 1.0);
  const TabularPolicy vi = soft_value_iteration(mdp, SoftViConfig{}).policy;
  CHECK((direct.probs() - vi.probs()).cwiseAbs().maxCoeff() < 1e-10);
  for (Eigen::Index s = 0; s < 6; ++s) CHECK(std::abs(direct.probs().row(s).sum() - 1.0) < 1e-12);
}

TEST_CASE("two-point energy softmax") {
  Eigen::MatrixXd e(1, 2);
  e << -1.0, 1.0;
  const TabularPolicy pi = softmax_energy_policy(e);
  CHECK(pi(0, 0) == doctest::Approx(0.8807970779778823).epsilon(1e-12));
  CHECK_THROWS_AS(softmax_energy_policy(e, -1.0), ConfigError);
}

TEST_CASE("fitted temperature maximizes the demonstration likelihood") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const envsim::EnvSpec env;
  const GridSpec grid = env.grid(110, 40);
  Eigen::MatrixXd energy(110, 40);
  for (Eigen::Index i = 0; i < energy.size(); ++i) energy.data()[i] = u(rng);
  const double truth = 0.3;
  const auto demos = rollout(softmax_energy_policy(energy, truth), grid, env, 3000, 4);
  const double fitted = fit_temperature(energy, demos, grid);
  CHECK(std::abs(fitted - truth) / truth < 0.05);

  // Plain-loop log-likelihood on a fine temperature grid.
  auto loglik = [&](double alpha) {
    double ll = 0.0;
    for (const auto& traj : demos.trajectories) {
      for (const auto& tr : traj) {
        const std::size_t s = grid.state.bin_of(tr.s), a = grid.action.bin_of(tr.a);
        double z = 0.0;
        for (std::size_t b = 0; b < 40; ++b) z += std::exp(-energy(s, b) / alpha);
        ll += -energy(s, a) / alpha - std::log(z);
      }
    }
    return ll;
  };
  const double at_fit = loglik(fitted);
  for (double f : {0.9, 0.97, 1.03, 1.1}) CHECK(loglik(fitted * f) <= at_fit);
  CHECK_THROWS_AS(fit_temperature(energy, envsim::DemoSet{}, grid), DataError);
  CHECK_THROWS_AS(fit_temperature(energy.topRows(5), demos, grid), DimensionError);
}

TEST_CASE("behavior cloning fits per-bin Gaussians with a std floor and a global fallback") {
  envsim::DemoSet demos;
  demos.trajectories = {{{0.0, 0.3, 0.3}, {0.3, 0.3, 0.6}, {0.6, 0.5, 1.1}, {1.1, 0.7, 1.8}}};
  const GridSpec grid{{11, -0.5, 10.5}, {4, -1.0, 1.0}};
  const BcPolicy bc = bc_fit(demos, grid);
  CHECK(bc.counts[0] == 2);
  CHECK(bc.means[0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(bc.stds[0] == kBcStdFloor);
  CHECK(bc.counts[1] == 2);
  CHECK(bc.means[1] == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(bc.stds[1] == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(bc.global_mean == doctest::Approx(0.45).epsilon(1e-14));
  CHECK(bc.global_std == doctest::Approx(std::sqrt(0.0275)).epsilon(1e-12));
  CHECK(bc.counts[7] == 0);
  CHECK(bc.means[7] == bc.global_mean);
  CHECK(bc.stds[7] == bc.global_std);
  CHECK_THROWS_AS(bc_fit(envsim::DemoSet{}, grid), DataError);
}

TEST_CASE("behavior cloning on expert demos recovers the regime means") {
  const envsim::EnvSpec env;
  const BcPolicy bc = bc_fit(expert_demos(40, 3), env.grid());
  const auto agent = rollout(bc, env, 200, 9);
  double low = 0, high = 0;
  int nl = 0, nh = 0;
  for (const auto& traj : agent.trajectories) {
    for (const auto& tr : traj) {
      if (tr.s < 5.0) {
        low += tr.a;
        ++nl;
      } else {
        high += tr.a;
        ++nh;
      }
    }
  }
  CHECK(std::abs(low / nl - 0.25) < 0.05);
  CHECK(std::abs(high / nh - 0.75) < 0.05);
}

TEST_CASE("rollouts are deterministic for a seed and empty for zero trajectories") {
  const envsim::EnvSpec env;
  const GridSpec grid = env.grid();
  const TabularPolicy uniform = TabularPolicy::uniform(grid.n_states(), grid.n_actions());
  CHECK(rollout(uniform, grid, env, 5, 3) == rollout(uniform, grid, env, 5, 3));
  CHECK(rollout(uniform, grid, env, 0, 3).empty());
  const GaussianPolicy g = make_gaussian_policy(env, {4}, -1.0, 2);
  CHECK(rollout(g, env, 4, 6) == rollout(g, env, 4, 6));
  CHECK(rollout(g, env, 0, 6).trajectories.empty());
}

TEST_CASE("squashed Gaussian log density integrates to one") {
  const envsim::EnvSpec env;
  GaussianPolicy g = make_gaussian_policy(env, {4}, -0.7, 1);
  const double mu = 0.4;
  // Integrate over a in (-1, 1) via the substitution a = tanh(u).
  double total = 0.0;
  const double du = 1e-3;
  for (double u = -12.0; u < 12.0; u += du) {
    const double a = g.squash(u);
    const double da = 1.0 - std::tanh(u) * std::tanh(u);
    total += std::exp(g.log_prob(mu, u)) * da * du;
    CHECK(a >= -1.0);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("policy gradient widens the policy under a constant reward") {
  PgConfig cfg;
  cfg.iterations = 60;
  cfg.hidden = {8};
  cfg.entropy_weight = 1.0;
  cfg.seed = 3;
  const auto res = policy_gradient_train(envsim::EnvSpec{}, batch_reward([](double, double) { return 1.0; }), cfg);
  CHECK(res.log.size() == 60);
  CHECK(res.policy.log_std > cfg.init_log_std);
}

TEST_CASE("policy gradient finds the peak of a quadratic reward") {
  PgConfig cfg;
  cfg.iterations = 400;
  cfg.hidden = {8};
  cfg.entropy_weight = 0.01;
  cfg.learning_rate = 1e-2;
  cfg.seed = 11;
  const auto reward = batch_reward([](double, double a) { return -(a - 0.5) * (a - 0.5); });
  const auto res = policy_gradient_train(envsim::EnvSpec{}, reward, cfg);
  for (double s : {0.0, 2.5, 5.0, 7.5}) CHECK(std::abs(res.policy.center_action(s) - 0.5) < 0.05);
  const auto again = policy_gradient_train(envsim::EnvSpec{}, reward, cfg);
  CHECK(again.policy.mean_net == res.policy.mean_net);
}

TEST_CASE("policy gradient configuration is validated") {
  PgConfig cfg;
  cfg.episodes_per_update = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PgConfig{};
  cfg.entropy_weight = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("policy documents round trip") {
  const envsim::EnvSpec env;
  const GridSpec grid{{5, -0.5, 10.5}, {3, -1.0, 1.0}};
  Eigen::MatrixXd p(5, 3);
  p.setConstant(0.2);
  p.col(0).setConstant(0.6);
  const TabularPolicy tab(p);
  CHECK(tabular_policy_from_json(nlohmann::json::parse(to_json(tab).dump())).probs() == p);

  const BcPolicy bc = bc_fit(expert_demos(2, 1), grid);
  const BcPolicy bc2 = bc_policy_from_json(nlohmann::json::parse(to_json(bc).dump()));
  CHECK(bc2.means == bc.means);
  CHECK(bc2.stds == bc.stds);
  CHECK(bc2.grid == bc.grid);

  const GaussianPolicy g = make_gaussian_policy(env, {3, 3}, -0.5, 4);
  const GaussianPolicy g2 = gaussian_policy_from_json(nlohmann::json::parse(to_json(g).dump()));
  CHECK(g2.mean_net == g.mean_net);
  CHECK(g2.log_std == g.log_std);

  CHECK_THROWS_AS(bc_policy_from_json(to_json(tab)), DataError);
  CHECK_THROWS_AS(tabular_policy_from_json(nlohmann::json{{"format", "x"}}), DataError);
}
