#include "ebil/envsim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ebil/error.hpp"

namespace ebil::envsim {

namespace {

constexpr int kDemoFormatVersion = 1;

nlohmann::json env_to_json(const EnvSpec& env) {
  return {{"env_id", env.env_id},         {"state_lo", env.state_lo},
          {"state_hi", env.state_hi},     {"action_lo", env.action_lo},
          {"action_hi", env.action_hi},   {"init_state", env.init_state},
          {"horizon", env.horizon},       {"switch_point", env.switch_point}};
}

EnvSpec env_from_json(const nlohmann::json& j) {
  EnvSpec env;
  env.env_id = j.at("env_id").get<std::string>();
  env.state_lo = j.at("state_lo").get<double>();
  env.state_hi = j.at("state_hi").get<double>();
  env.action_lo = j.at("action_lo").get<double>();
  env.action_hi = j.at("action_hi").get<double>();
  env.init_state = j.at("init_state").get<double>();
  env.horizon = j.at("horizon").get<int>();
  env.switch_point = j.at("switch_point").get<double>();
  return env;
}

// Inverse-CDF sampling of an action bin from one policy row.
std::size_t sample_bin(const Eigen::MatrixXd& cdf, std::size_t row, Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const auto r = static_cast<Eigen::Index>(row);
  const Eigen::Index n = cdf.cols();
  for (Eigen::Index a = 0; a < n - 1; ++a) {
    if (u < cdf(r, a)) return static_cast<std::size_t>(a);
  }
  return static_cast<std::size_t>(n - 1);
}

}  // namespace

void EnvSpec::validate() const {
  if (!(state_lo < state_hi)) throw ConfigError("state_lo must be below state_hi");
  if (!(action_lo < action_hi)) throw ConfigError("action_lo must be below action_hi");
  if (!(init_state >= state_lo && init_state <= state_hi)) {
    throw ConfigError("init_state outside the state bounds");
  }
  if (horizon < 1) throw ConfigError("horizon must be positive");
}

GridSpec EnvSpec::grid(std::size_t state_bins, std::size_t action_bins) const {
  GridSpec g{{state_bins, state_lo, state_hi}, {action_bins, action_lo, action_hi}};
  g.validate();
  return g;
}

void ExpertPolicySpec::validate(const EnvSpec& env) const {
  if (low_std < 0.0 || high_std < 0.0) throw ConfigError("expert std must be nonnegative");
  if (!env.action_in_bounds(low_mean) || !env.action_in_bounds(high_mean)) {
    throw ConfigError("expert means must lie within the action bounds");
  }
}

std::string to_string(DemoGenerator generator) {
  switch (generator) {
    case DemoGenerator::Expert:
      return "expert";
    case DemoGenerator::UniformRandom:
      return "uniform_random";
    case DemoGenerator::External:
      return "external";
  }
  return "external";
}

DemoGenerator generator_from_string(const std::string& name) {
  if (name == "expert") return DemoGenerator::Expert;
  if (name == "uniform_random") return DemoGenerator::UniformRandom;
  if (name == "external") return DemoGenerator::External;
  throw DataError("unknown demo generator '" + name + "'");
}

std::size_t DemoSet::num_transitions() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.size();
  return n;
}

void DemoSet::validate() const {
  env.validate();
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const Trajectory& traj = trajectories[i];
    if (traj.size() > static_cast<std::size_t>(env.horizon)) {
      throw DataError("trajectory " + std::to_string(i) + " exceeds the horizon");
    }
    for (std::size_t t = 0; t < traj.size(); ++t) {
      const Transition& tr = traj[t];
      if (!env.state_in_bounds(tr.s) || !env.state_in_bounds(tr.s_next) ||
          !env.action_in_bounds(tr.a)) {
        std::ostringstream msg;
        msg << "trajectory " << i << " step " << t << " out of bounds (s=" << tr.s
            << ", a=" << tr.a << ", s_next=" << tr.s_next << ")";
        throw DataError(msg.str());
      }
    }
  }
}

double step(const EnvSpec& env, double s, double a) {
  if (!env.state_in_bounds(s)) throw DataError("state " + std::to_string(s) + " out of bounds");
  if (!env.action_in_bounds(a)) throw DataError("action " + std::to_string(a) + " out of bounds");
  return std::clamp(s + a, env.state_lo, env.state_hi);
}

double expert_action(const ExpertPolicySpec& expert, const EnvSpec& env, double s, Rng& rng) {
  if (!env.state_in_bounds(s)) throw DataError("state " + std::to_string(s) + " out of bounds");
  const bool low = s < env.switch_point;
  const double mean = low ? expert.low_mean : expert.high_mean;
  const double std = low ? expert.low_std : expert.high_std;
  if (std == 0.0) return std::clamp(mean, env.action_lo, env.action_hi);
  const double a = std::normal_distribution<double>(mean, std)(rng);
  return std::clamp(a, env.action_lo, env.action_hi);
}

DemoSet rollout_with(const EnvSpec& env, const ActionSampler& sampler, std::size_t n_traj,
                     std::uint64_t seed, DemoGenerator generator) {
  env.validate();
  DemoSet demos;
  demos.env = env;
  demos.seed = seed;
  demos.generator = generator;
  demos.trajectories.reserve(n_traj);
  Rng rng(seed);
  for (std::size_t i = 0; i < n_traj; ++i) {
    Trajectory traj;
    traj.reserve(static_cast<std::size_t>(env.horizon));
    double s = env.init_state;
    for (int t = 0; t < env.horizon; ++t) {
      const double a = sampler(s, rng);
      const double next = step(env, s, a);
      traj.push_back({s, a, next});
      s = next;
    }
    demos.trajectories.push_back(std::move(traj));
  }
  return demos;
}

DemoSet generate_demos(const EnvSpec& env, const DemoPolicy& policy, std::size_t n_traj,
                       std::uint64_t seed) {
  if (const auto* expert = std::get_if<ExpertPolicySpec>(&policy)) {
    expert->validate(env);
    return rollout_with(
        env, [&](double s, Rng& rng) { return expert_action(*expert, env, s, rng); }, n_traj,
        seed, DemoGenerator::Expert);
  }
  if (std::holds_alternative<UniformPolicy>(policy)) {
    return rollout_with(
        env,
        [&](double, Rng& rng) {
          return std::uniform_real_distribution<double>(env.action_lo, env.action_hi)(rng);
        },
        n_traj, seed, DemoGenerator::UniformRandom);
  }
  const auto& gridded = std::get<GriddedPolicy>(policy);
  gridded.grid.validate();
  if (gridded.policy.n_states() != gridded.grid.n_states() ||
      gridded.policy.n_actions() != gridded.grid.n_actions()) {
    throw DimensionError("tabular policy does not match its grid");
  }
  Eigen::MatrixXd cdf = gridded.policy.probs();
  for (Eigen::Index a = 1; a < cdf.cols(); ++a) cdf.col(a) += cdf.col(a - 1);
  return rollout_with(
      env,
      [&](double s, Rng& rng) {
        const std::size_t bin = sample_bin(cdf, gridded.grid.state.bin_of(s), rng);
        return gridded.grid.action.center(bin);
      },
      n_traj, seed, DemoGenerator::External);
}

TabularMdp discretize(const EnvSpec& env, const GridSpec& grid, double gamma) {
  env.validate();
  grid.validate();
  const std::size_t ns = grid.n_states();
  const std::size_t na = grid.n_actions();
  std::vector<double> kernel(ns * na * ns, 0.0);
  for (std::size_t s = 0; s < ns; ++s) {
    const double sc = std::clamp(grid.state.center(s), env.state_lo, env.state_hi);
    for (std::size_t a = 0; a < na; ++a) {
      const double ac = std::clamp(grid.action.center(a), env.action_lo, env.action_hi);
      const std::size_t next = grid.state.bin_of(step(env, sc, ac));
      kernel[(s * na + a) * ns + next] = 1.0;
    }
  }
  Eigen::VectorXd initial = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ns));
  initial(static_cast<Eigen::Index>(grid.state.bin_of(env.init_state))) = 1.0;
  return TabularMdp(ns, na, std::move(kernel),
                    Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ns),
                                          static_cast<Eigen::Index>(na)),
                    gamma, std::move(initial));
}

EnvSpec tabular_env(const TabularMdp& mdp, int horizon) {
  EnvSpec env;
  env.env_id = "tabular";
  env.state_lo = 0.0;
  env.state_hi = static_cast<double>(mdp.n_states());
  env.action_lo = 0.0;
  env.action_hi = static_cast<double>(mdp.n_actions());
  env.init_state = 0.0;
  env.horizon = horizon;
  env.switch_point = env.state_hi;
  env.validate();
  return env;
}

GridSpec tabular_grid(const TabularMdp& mdp) {
  GridSpec grid{{mdp.n_states(), 0.0, static_cast<double>(mdp.n_states())},
                {mdp.n_actions(), 0.0, static_cast<double>(mdp.n_actions())}};
  grid.validate();
  return grid;
}

DemoSet sample_tabular(const TabularMdp& mdp, const TabularPolicy& policy, std::size_t n_traj,
                       int horizon, std::uint64_t seed) {
  if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions()) {
    throw DimensionError("tabular policy does not match the MDP");
  }
  DemoSet demos;
  demos.env = tabular_env(mdp, horizon);
  demos.seed = seed;
  demos.generator = DemoGenerator::External;
  Eigen::MatrixXd cdf = policy.probs();
  for (Eigen::Index a = 1; a < cdf.cols(); ++a) cdf.col(a) += cdf.col(a - 1);
  Eigen::MatrixXd initial = mdp.initial().transpose();
  for (Eigen::Index s = 1; s < initial.cols(); ++s) initial(0, s) += initial(0, s - 1);
  Rng rng(seed);
  auto next_state = [&](std::size_t s, std::size_t a) {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto& succ = mdp.successors(s, a);
    for (const auto& [n, p] : succ) {
      if (u < p) return n;
      u -= p;
    }
    return succ.back().first;
  };
  demos.trajectories.reserve(n_traj);
  for (std::size_t i = 0; i < n_traj; ++i) {
    Trajectory traj;
    traj.reserve(static_cast<std::size_t>(horizon));
    std::size_t s = sample_bin(initial, 0, rng);
    for (int t = 0; t < horizon; ++t) {
      const std::size_t a = sample_bin(cdf, s, rng);
      const std::size_t n = next_state(s, a);
      traj.push_back({static_cast<double>(s) + 0.5, static_cast<double>(a) + 0.5,
                      static_cast<double>(n) + 0.5});
      s = n;
    }
    demos.trajectories.push_back(std::move(traj));
  }
  return demos;
}

void write_demos(const DemoSet& demos, std::ostream& out) {
  nlohmann::json header = {{"format", "ebil-demos"},
                           {"version", kDemoFormatVersion},
                           {"env_id", demos.env_id()},
                           {"env", env_to_json(demos.env)},
                           {"seed", demos.seed},
                           {"generator", to_string(demos.generator)},
                           {"n_trajectories", demos.trajectories.size()},
                           {"config_hash", demos.config_hash},
                           {"master_seed", demos.master_seed}};
  out << header.dump() << '\n';
  for (const Trajectory& traj : demos.trajectories) {
    nlohmann::json line = nlohmann::json::array();
    for (const Transition& tr : traj) line.push_back({tr.s, tr.a, tr.s_next});
    out << line.dump() << '\n';
  }
}

DemoSet read_demos(std::istream& in, const std::string& source) {
  std::string text;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) -> DataError {
    return DataError(source + ":" + std::to_string(line_no) + ": " + why);
  };

  ++line_no;
  if (!std::getline(in, text)) throw fail("missing header line");
  DemoSet demos;
  std::size_t expected = 0;
  try {
    const auto header = nlohmann::json::parse(text);
    if (header.at("format").get<std::string>() != "ebil-demos") throw fail("not a demo file");
    if (header.at("version").get<int>() != kDemoFormatVersion) {
      throw fail("unsupported demo format version " +
                 std::to_string(header.at("version").get<int>()));
    }
    demos.env = env_from_json(header.at("env"));
    if (header.at("env_id").get<std::string>() != demos.env.env_id) {
      throw fail("env_id disagrees with the env block");
    }
    demos.seed = header.at("seed").get<std::uint64_t>();
    demos.generator = generator_from_string(header.at("generator").get<std::string>());
    demos.config_hash = header.value("config_hash", std::string());
    demos.master_seed = header.value("master_seed", std::uint64_t{0});
    expected = header.at("n_trajectories").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("bad header: ") + e.what());
  }

  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    Trajectory traj;
    try {
      const auto line = nlohmann::json::parse(text);
      if (!line.is_array()) throw fail("trajectory line is not an array");
      for (const auto& triple : line) {
        if (!triple.is_array() || triple.size() != 3) throw fail("transition is not [s, a, s_next]");
        traj.push_back({triple[0].get<double>(), triple[1].get<double>(),
                        triple[2].get<double>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("parse error: ") + e.what());
    }
    demos.trajectories.push_back(std::move(traj));
    try {
      DemoSet single;
      single.env = demos.env;
      single.trajectories.push_back(demos.trajectories.back());
      single.validate();
    } catch (const DataError& e) {
      throw fail(e.what());
    }
  }
  if (demos.trajectories.size() != expected) {
    throw fail("expected " + std::to_string(expected) + " trajectories, found " +
               std::to_string(demos.trajectories.size()));
  }
  return demos;
}

void save_demos(const DemoSet& demos, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_demos(demos, out);
  if (!out) throw DataError("write failed for " + path.string());
}

DemoSet load_demos(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  return read_demos(in, path.string());
}

}  // namespace ebil::envsim
