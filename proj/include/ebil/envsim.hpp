#pragma once

// The one-dimensional motion task: the agent moves along [-0.5, 10.5] with
// actions in [-1, 1], starting at 0, and the expert follows a two-regime
// Gaussian rule (mean 0.25 below the switch point, 0.75 from it on).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "ebil/tabular.hpp"

namespace ebil::envsim {

using Rng = std::mt19937_64;

struct EnvSpec {
  std::string env_id = "oned";
  double state_lo = -0.5;
  double state_hi = 10.5;
  double action_lo = -1.0;
  double action_hi = 1.0;
  double init_state = 0.0;
  int horizon = 30;
  double switch_point = 5.0;

  void validate() const;
  bool state_in_bounds(double s) const { return s >= state_lo && s <= state_hi; }
  bool action_in_bounds(double a) const { return a >= action_lo && a <= action_hi; }
  /// Grid covering the environment bounds.
  GridSpec grid(std::size_t state_bins = 110, std::size_t action_bins = 40) const;

  bool operator==(const EnvSpec&) const = default;
};

/// Expert action distribution per regime. A zero std makes the regime
/// deterministic.
struct ExpertPolicySpec {
  double low_mean = 0.25;
  double low_std = 0.06;
  double high_mean = 0.75;
  double high_std = 0.06;

  void validate(const EnvSpec& env) const;
};

struct UniformPolicy {};

struct GriddedPolicy {
  TabularPolicy policy;
  GridSpec grid;
};

using DemoPolicy = std::variant<ExpertPolicySpec, UniformPolicy, GriddedPolicy>;

struct Transition {
  double s = 0.0;
  double a = 0.0;
  double s_next = 0.0;

  bool operator==(const Transition&) const = default;
};

using Trajectory = std::vector<Transition>;

enum class DemoGenerator { Expert, UniformRandom, External };

std::string to_string(DemoGenerator generator);
DemoGenerator generator_from_string(const std::string& name);

struct DemoSet {
  EnvSpec env;
  std::vector<Trajectory> trajectories;
  std::uint64_t seed = 0;
  DemoGenerator generator = DemoGenerator::External;
  // Provenance of the run that produced the file; empty when unknown.
  std::string config_hash;
  std::uint64_t master_seed = 0;

  const std::string& env_id() const { return env.env_id; }
  std::size_t num_transitions() const;
  bool empty() const { return num_transitions() == 0; }
  /// Throws DataError when a trajectory is too long or leaves the bounds.
  void validate() const;

  bool operator==(const DemoSet&) const = default;
};

/// clamp(s + a) to the state bounds. Rejects out-of-bounds arguments.
double step(const EnvSpec& env, double s, double a);

double expert_action(const ExpertPolicySpec& expert, const EnvSpec& env, double s, Rng& rng);

/// Draws one in-bounds action for state s.
using ActionSampler = std::function<double(double s, Rng& rng)>;

/// n_traj full-horizon trajectories from init_state, one generator seeded
/// with `seed` shared across them in order.
DemoSet rollout_with(const EnvSpec& env, const ActionSampler& sampler, std::size_t n_traj,
                     std::uint64_t seed, DemoGenerator generator);

/// Tabular policies act at action-bin centers of the bin drawn for the
/// current state bin.
DemoSet generate_demos(const EnvSpec& env, const DemoPolicy& policy, std::size_t n_traj,
                       std::uint64_t seed);

/// Maps the deterministic dynamics onto the grid: each (state center,
/// action center) steps and puts all mass on the bin of the result. The
/// reward table is zero and the initial distribution is the bin of
/// init_state.
TabularMdp discretize(const EnvSpec& env, const GridSpec& grid, double gamma = 0.99);

/// A tabular MDP seen as an environment: state i and action j are the
/// points i + 0.5 and j + 0.5 of [0, n_states] and [0, n_actions].
EnvSpec tabular_env(const TabularMdp& mdp, int horizon);
/// Unit bins over tabular_env, one per state and action.
GridSpec tabular_grid(const TabularMdp& mdp);
/// n_traj trajectories of `horizon` steps drawn from the MDP itself:
/// s_0 ~ initial, a_t ~ policy(s_t), s_t+1 ~ P(.|s_t, a_t).
DemoSet sample_tabular(const TabularMdp& mdp, const TabularPolicy& policy, std::size_t n_traj,
                       int horizon, std::uint64_t seed);

// JSON Lines: a header object, then one array of [s, a, s_next] per
// trajectory.
void write_demos(const DemoSet& demos, std::ostream& out);
DemoSet read_demos(std::istream& in, const std::string& source = "<stream>");
void save_demos(const DemoSet& demos, const std::filesystem::path& path);
DemoSet load_demos(const std::filesystem::path& path);

}  // namespace ebil::envsim
