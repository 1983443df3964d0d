#include "ebil/learner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ebil/error.hpp"
#include "ebil/reward.hpp"

namespace ebil::learner {

namespace {

using Eigen::Index;

Index idx(std::size_t i) { return static_cast<Index>(i); }

// Row-wise softmax of logits with a max shift.
Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Index s = 0; s < logits.rows(); ++s) {
    const double m = logits.row(s).maxCoeff();
    p.row(s) = (logits.row(s).array() - m).exp();
    p.row(s) /= p.row(s).sum();
  }
  return p;
}

}  // namespace

TabularPolicy softmax_policy(const SoftQTable& table) {
  if (!(table.alpha > 0.0)) throw ConfigError("temperature must be positive");
  return TabularPolicy(row_softmax(table.q / table.alpha));
}

Eigen::VectorXd soft_values(const SoftQTable& table) {
  Eigen::VectorXd v(table.q.rows());
  for (Index s = 0; s < table.q.rows(); ++s) {
    const double m = table.q.row(s).maxCoeff();
    v(s) = m + table.alpha * std::log(((table.q.row(s).array() - m) / table.alpha).exp().sum());
  }
  return v;
}

void SoftViConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("temperature must be positive");
  if (!(tol > 0.0)) throw ConfigError("soft value iteration tolerance must be positive");
  if (max_iters < 1) throw ConfigError("soft value iteration needs at least one sweep");
}

SoftViResult soft_value_iteration(const TabularMdp& mdp, const SoftViConfig& cfg,
                                  const SoftViObserver& observer) {
  cfg.validate();
  const std::size_t ns = mdp.n_states();
  const std::size_t na = mdp.n_actions();
  SoftQTable table{Eigen::MatrixXd::Zero(idx(ns), idx(na)), cfg.alpha};
  Eigen::MatrixXd next(idx(ns), idx(na));
  std::vector<double> residuals;
  double residual = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= cfg.max_iters; ++it) {
    const Eigen::VectorXd v = soft_values(table);
    for (std::size_t s = 0; s < ns; ++s) {
      for (std::size_t a = 0; a < na; ++a) {
        double expected = 0.0;
        for (const auto& [s2, p] : mdp.successors(s, a)) expected += p * v(idx(s2));
        next(idx(s), idx(a)) = mdp.reward()(idx(s), idx(a)) + mdp.gamma() * expected;
      }
    }
    residual = (next - table.q).cwiseAbs().maxCoeff();
    if (!std::isfinite(residual)) {
      throw NumericError("soft value iteration diverged at sweep " + std::to_string(it));
    }
    table.q.swap(next);
    residuals.push_back(residual);
    if (observer) observer(it, table, residual);
    if (residual < cfg.tol) return {table, softmax_policy(table), std::move(residuals)};
  }
  throw ConvergenceError("soft value iteration did not reach tolerance " +
                             std::to_string(cfg.tol) + " in " + std::to_string(cfg.max_iters) +
                             " sweeps (residual " + std::to_string(residual) + ")",
                         residual, cfg.max_iters);
}

TabularPolicy softmax_energy_policy(const Eigen::MatrixXd& energy_table, double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("temperature must be positive");
  if (!energy_table.allFinite()) throw NumericError("non-finite energy table");
  return TabularPolicy(row_softmax(-energy_table / alpha));
}

TabularPolicy softmax_energy_policy(const energymodel::EnergyModel& model, const GridSpec& grid,
                                    double alpha) {
  return softmax_energy_policy(reward::energy_table(model, grid), alpha);
}

double fit_temperature(const Eigen::MatrixXd& energy_table, const envsim::DemoSet& demos,
                       const GridSpec& grid) {
  if (demos.empty()) throw DataError("cannot fit a temperature without demonstrations");
  if (static_cast<std::size_t>(energy_table.rows()) != grid.n_states() ||
      static_cast<std::size_t>(energy_table.cols()) != grid.n_actions()) {
    throw DimensionError("energy table does not match the grid");
  }
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(energy_table.rows(), energy_table.cols());
  for (const auto& traj : demos.trajectories) {
    for (const auto& tr : traj) {
      counts(idx(grid.state.bin_of(tr.s)), idx(grid.action.bin_of(tr.a))) += 1.0;
    }
  }
  const Eigen::VectorXd visits = counts.rowwise().sum();
  const double demo_energy = (counts.array() * energy_table.array()).sum();
  // Derivative of the log-likelihood in beta = 1 / alpha; decreasing.
  auto slope = [&](double beta) {
    const Eigen::MatrixXd p = row_softmax(-beta * energy_table);
    const Eigen::VectorXd expected = (p.array() * energy_table.array()).rowwise().sum();
    return visits.dot(expected) - demo_energy;
  };
  double lo = std::log(1e-4);
  double hi = std::log(1e4);
  if (slope(std::exp(hi)) >= 0.0) return std::exp(-hi);
  if (slope(std::exp(lo)) <= 0.0) return std::exp(-lo);
  for (int i = 0; i < 200 && hi - lo > 1e-12; ++i) {
    const double mid = 0.5 * (lo + hi);
    (slope(std::exp(mid)) > 0.0 ? lo : hi) = mid;
  }
  return std::exp(-0.5 * (lo + hi));
}

double BcPolicy::sample(const envsim::EnvSpec& env, double s, Rng& rng) const {
  const std::size_t bin = grid.state.bin_of(s);
  const double a = std::normal_distribution<double>(means[bin], stds[bin])(rng);
  return std::clamp(a, env.action_lo, env.action_hi);
}

BcPolicy bc_fit(const envsim::DemoSet& demos, const GridSpec& grid) {
  grid.validate();
  if (demos.empty()) throw DataError("behavior cloning needs demonstrations");
  const std::size_t ns = grid.n_states();
  std::vector<double> sum(ns, 0.0);
  std::vector<double> sum_sq(ns, 0.0);
  BcPolicy policy;
  policy.grid = grid;
  policy.counts.assign(ns, 0);
  double total = 0.0;
  double total_sq = 0.0;
  for (const auto& traj : demos.trajectories) {
    for (const auto& tr : traj) {
      const std::size_t bin = grid.state.bin_of(tr.s);
      sum[bin] += tr.a;
      sum_sq[bin] += tr.a * tr.a;
      ++policy.counts[bin];
      total += tr.a;
      total_sq += tr.a * tr.a;
    }
  }
  auto fit = [](double s1, double s2, double n) {
    const double mean = s1 / n;
    const double var = std::max(0.0, s2 / n - mean * mean);
    return std::pair{mean, std::max(kBcStdFloor, std::sqrt(var))};
  };
  std::tie(policy.global_mean, policy.global_std) =
      fit(total, total_sq, static_cast<double>(demos.num_transitions()));
  policy.means.resize(ns);
  policy.stds.resize(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    if (policy.counts[s] == 0) {
      policy.means[s] = policy.global_mean;
      policy.stds[s] = policy.global_std;
    } else {
      std::tie(policy.means[s], policy.stds[s]) =
          fit(sum[s], sum_sq[s], static_cast<double>(policy.counts[s]));
    }
  }
  return policy;
}

envsim::DemoSet rollout(const TabularPolicy& policy, const GridSpec& grid,
                        const envsim::EnvSpec& env, std::size_t n_traj, std::uint64_t seed) {
  return envsim::generate_demos(env, envsim::GriddedPolicy{policy, grid}, n_traj, seed);
}

envsim::DemoSet rollout(const BcPolicy& policy, const envsim::EnvSpec& env, std::size_t n_traj,
                        std::uint64_t seed) {
  return envsim::rollout_with(
      env, [&](double s, Rng& rng) { return policy.sample(env, s, rng); }, n_traj, seed,
      envsim::DemoGenerator::External);
}

envsim::DemoSet rollout(const GaussianPolicy& policy, const envsim::EnvSpec& env,
                        std::size_t n_traj, std::uint64_t seed) {
  return envsim::rollout_with(
      env, [&](double s, Rng& rng) { return policy.sample(s, rng); }, n_traj, seed,
      envsim::DemoGenerator::External);
}

namespace {

constexpr int kPolicyFormatVersion = 1;

nlohmann::json header(const std::string& kind) {
  return {{"format", "ebil-policy"}, {"version", kPolicyFormatVersion}, {"kind", kind}};
}

void check_header(const nlohmann::json& doc, const std::string& kind) {
  if (!doc.is_object() || doc.value("format", "") != "ebil-policy") {
    throw DataError("not an ebil-policy document");
  }
  if (doc.value("version", 0) != kPolicyFormatVersion) {
    throw DataError("unsupported policy format version");
  }
  if (doc.value("kind", "") != kind) {
    throw DataError("expected a " + kind + " policy, found '" + doc.value("kind", "") + "'");
  }
}

template <typename F>
auto parse(const char* what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed ") + what + " policy: " + e.what());
  }
}

}  // namespace

nlohmann::json to_json(const TabularPolicy& policy) {
  nlohmann::json doc = header("tabular");
  nlohmann::json rows = nlohmann::json::array();
  for (Index s = 0; s < policy.probs().rows(); ++s) {
    rows.push_back(std::vector<double>(policy.probs().row(s).begin(),
                                       policy.probs().row(s).end()));
  }
  doc["probs"] = std::move(rows);
  return doc;
}

TabularPolicy tabular_policy_from_json(const nlohmann::json& doc) {
  check_header(doc, "tabular");
  return parse("tabular", [&] {
    const auto rows = doc.at("probs").get<std::vector<std::vector<double>>>();
    if (rows.empty() || rows.front().empty()) throw DataError("empty tabular policy");
    Eigen::MatrixXd p(idx(rows.size()), idx(rows.front().size()));
    for (std::size_t s = 0; s < rows.size(); ++s) {
      if (rows[s].size() != rows.front().size()) throw DataError("ragged policy table");
      for (std::size_t a = 0; a < rows[s].size(); ++a) p(idx(s), idx(a)) = rows[s][a];
    }
    return TabularPolicy(std::move(p));
  });
}

nlohmann::json to_json(const BcPolicy& policy) {
  nlohmann::json doc = header("bc");
  doc["grid"] = to_json(policy.grid);
  doc["means"] = policy.means;
  doc["stds"] = policy.stds;
  doc["counts"] = policy.counts;
  doc["global_mean"] = policy.global_mean;
  doc["global_std"] = policy.global_std;
  return doc;
}

BcPolicy bc_policy_from_json(const nlohmann::json& doc) {
  check_header(doc, "bc");
  return parse("bc", [&] {
    BcPolicy p;
    p.grid = grid_from_json(doc.at("grid"));
    p.means = doc.at("means").get<std::vector<double>>();
    p.stds = doc.at("stds").get<std::vector<double>>();
    p.counts = doc.at("counts").get<std::vector<std::size_t>>();
    p.global_mean = doc.at("global_mean").get<double>();
    p.global_std = doc.at("global_std").get<double>();
    const std::size_t ns = p.grid.n_states();
    if (p.means.size() != ns || p.stds.size() != ns || p.counts.size() != ns) {
      throw DimensionError("bc policy tables do not match the grid");
    }
    for (double sd : p.stds) {
      if (!(sd > 0.0)) throw DataError("bc policy has a nonpositive std");
    }
    return p;
  });
}

nlohmann::json to_json(const GaussianPolicy& policy) {
  nlohmann::json doc = header("gaussian");
  doc["mean_net"] = diffcore::to_json(policy.mean_net);
  doc["log_std"] = policy.log_std;
  doc["state_bounds"] = {policy.state_lo, policy.state_hi};
  doc["action_bounds"] = {policy.action_lo, policy.action_hi};
  return doc;
}

GaussianPolicy gaussian_policy_from_json(const nlohmann::json& doc) {
  check_header(doc, "gaussian");
  return parse("gaussian", [&] {
    GaussianPolicy p{diffcore::network_from_json(doc.at("mean_net"))};
    p.log_std = doc.at("log_std").get<double>();
    const auto sb = doc.at("state_bounds").get<std::vector<double>>();
    const auto ab = doc.at("action_bounds").get<std::vector<double>>();
    if (sb.size() != 2 || ab.size() != 2) throw DataError("bounds must have two entries");
    p.state_lo = sb[0];
    p.state_hi = sb[1];
    p.action_lo = ab[0];
    p.action_hi = ab[1];
    if (p.mean_net.input_dim() != 1 || p.mean_net.output_dim() != 1) {
      throw DimensionError("policy mean network must map 1 -> 1");
    }
    return p;
  });
}

}  // namespace ebil::learner
