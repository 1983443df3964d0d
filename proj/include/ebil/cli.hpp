#pragma once

// Command-line orchestration: configuration, seed derivation, and the
// gen-expert / train-energy / train-policy / evaluate / pipeline stages.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ebil/energymodel.hpp"
#include "ebil/envsim.hpp"
#include "ebil/learner.hpp"
#include "ebil/reward.hpp"
#include "ebil/tabular.hpp"

namespace CLI {
class App;
}

namespace ebil::cli {

enum class LearnerKind { SoftVi, PolicyGradient, DirectSoftmax, Bc };

std::string to_string(LearnerKind kind);
LearnerKind learner_from_string(const std::string& name);

/// Offsets added to the master seed for each component.
enum class SeedSlot : std::uint64_t {
  ExpertDemos = 1,
  RandomDemos = 2,
  Energy = 3,
  Learner = 4,
  EvalAgent = 5,
  EvalExpert = 6,
  EvalUniform = 7,
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "run";

  envsim::EnvSpec env;
  envsim::ExpertPolicySpec expert;
  std::size_t n_traj = 40;
  std::size_t n_random_traj = 40;

  std::vector<std::size_t> hidden{200, 200, 200};
  energymodel::NoiseModel noise;
  energymodel::TrainConfig train;

  std::string reward_preset = "one_d";
  std::optional<double> reward_scale;
  std::optional<double> reward_offset;

  LearnerKind learner = LearnerKind::SoftVi;
  std::size_t state_bins = 110;
  std::size_t action_bins = 40;
  double gamma = 0.99;
  /// MaxEnt temperature; empty selects the maximum-likelihood fit on the
  /// expert demos.
  std::optional<double> alpha;
  double vi_tol = 1e-10;
  int vi_max_iters = 100000;
  learner::PgConfig pg;

  // Evaluation.
  std::size_t eval_traj = 10000;
  double eval_gamma = 1.0;
  double kl_eps = 1e-6;
  /// Training-log KL cadence in learner iterations; 0 disables it.
  int kl_every = 100;
  std::size_t kl_traj = 1000;
  /// Energy snapshot used for the reward; empty selects the final model.
  std::optional<int> checkpoint_epoch;
  bool ablation = false;
  bool force = false;

  void validate() const;
  GridSpec grid() const;
  reward::SurrogateReward surrogate() const;
  std::uint64_t component_seed(SeedSlot slot) const;

  /// Fields that identify the experiment, in canonical form.
  nlohmann::json identity() const;
  /// FNV-1a 64 of identity(), as 16 hex digits.
  std::string hash() const;
};

/// Registers every RunConfig field as an option of `app`, plus --config for
/// a TOML-style file whose keys are the long option names.
void add_options(CLI::App& app, RunConfig& cfg);

/// Options not covered by RunConfig.
struct PathOptions {
  std::optional<std::filesystem::path> demos;
  std::optional<std::filesystem::path> random_demos;
  std::optional<std::filesystem::path> checkpoint;
  /// Path to a policy artifact, or "expert" / "uniform".
  std::optional<std::string> policy;
  std::optional<std::filesystem::path> reference;
};

// Artifact locations inside the run directory.
std::filesystem::path expert_demos_path(const RunConfig& cfg);
std::filesystem::path random_demos_path(const RunConfig& cfg);
std::filesystem::path energy_dir(const RunConfig& cfg);
std::filesystem::path final_checkpoint_path(const RunConfig& cfg);
std::filesystem::path snapshot_path(const RunConfig& cfg, int epoch);
std::filesystem::path policy_path(const RunConfig& cfg);
std::filesystem::path report_path(const RunConfig& cfg);
std::filesystem::path manifest_path(const RunConfig& cfg);

struct GenExpertResult {
  std::size_t expert_trajectories = 0;
  std::size_t expert_transitions = 0;
  std::size_t random_trajectories = 0;
  std::size_t random_transitions = 0;
};

struct TrainEnergyResult {
  double mean_expert_energy = 0.0;
  double mean_random_energy = 0.0;
  /// Fraction of state bins whose energy argmin lies within 0.15 of the
  /// region's expert mean.
  double mode_agreement = 0.0;
  std::vector<int> snapshot_epochs;
};

struct TrainPolicyResult {
  LearnerKind learner = LearnerKind::SoftVi;
  double alpha = 1.0;
  int iterations = 0;
};

struct EvaluateResult {
  double kl = 0.0;
  double uniform_kl = 0.0;
  double mean_action_low = 0.0;
  double mean_action_high = 0.0;
  /// One row per snapshot epoch when ablation is on.
  struct AblationRow {
    int epoch = 0;
    double kl = 0.0;
    double mean_action_low = 0.0;
    double mean_action_high = 0.0;
  };
  std::vector<AblationRow> ablation;
};

GenExpertResult cmd_gen_expert(const RunConfig& cfg);
TrainEnergyResult cmd_train_energy(const RunConfig& cfg, const PathOptions& paths = {});
TrainPolicyResult cmd_train_policy(const RunConfig& cfg, const PathOptions& paths = {});
EvaluateResult cmd_evaluate(const RunConfig& cfg, const PathOptions& paths = {});
/// Runs every stage and writes manifest.json; returns the manifest.
nlohmann::json cmd_pipeline(const RunConfig& cfg);

/// Parses arguments, runs the subcommand and maps failures to exit codes:
/// 0 success, 2 configuration, 3 data, 4 numeric divergence.
int run(int argc, const char* const* argv);

}  // namespace ebil::cli
