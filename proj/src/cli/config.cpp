#include <cmath>
#include <cstdio>

#include <CLI11.hpp>

#include "ebil/cli.hpp"
#include "ebil/error.hpp"

namespace ebil::cli {

std::string to_string(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::SoftVi: return "soft_vi";
    case LearnerKind::PolicyGradient: return "policy_gradient";
    case LearnerKind::DirectSoftmax: return "direct_softmax";
    case LearnerKind::Bc: return "bc";
  }
  return "unknown";
}

LearnerKind learner_from_string(const std::string& name) {
  for (LearnerKind k : {LearnerKind::SoftVi, LearnerKind::PolicyGradient,
                        LearnerKind::DirectSoftmax, LearnerKind::Bc}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown learner '" + name +
                    "' (expected soft_vi, policy_gradient, direct_softmax or bc)");
}

void RunConfig::validate() const {
  env.validate();
  expert.validate(env);
  noise.validate();
  train.validate();
  pg.validate();
  grid();
  surrogate().validate();
  if (hidden.empty()) throw ConfigError("the energy network needs at least one hidden layer");
  for (std::size_t w : hidden) {
    if (w == 0) throw ConfigError("hidden layer widths must be positive");
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (alpha && !(*alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (!(vi_tol > 0.0)) throw ConfigError("vi-tol must be positive");
  if (vi_max_iters < 1) throw ConfigError("vi-max-iters must be positive");
  if (eval_traj == 0) throw ConfigError("eval-traj must be positive");
  if (!(eval_gamma >= 0.0 && eval_gamma <= 1.0)) throw ConfigError("eval-gamma must lie in [0, 1]");
  if (!(kl_eps > 0.0)) throw ConfigError("kl-eps must be positive");
  if (kl_every < 0) throw ConfigError("kl-every must be nonnegative");
  if (kl_every > 0 && kl_traj == 0) throw ConfigError("kl-traj must be positive");
  if (n_traj == 0) throw ConfigError("n-traj must be positive");
}

GridSpec RunConfig::grid() const { return env.grid(state_bins, action_bins); }

reward::SurrogateReward RunConfig::surrogate() const {
  reward::SurrogateReward h = reward::SurrogateReward::preset(reward_preset);
  if (reward_scale) h.scale = *reward_scale;
  if (reward_offset) h.offset = *reward_offset;
  return h;
}

std::uint64_t RunConfig::component_seed(SeedSlot slot) const {
  return seed + static_cast<std::uint64_t>(slot);
}

nlohmann::json RunConfig::identity() const {
  const reward::SurrogateReward h = surrogate();
  nlohmann::json j;
  j["seed"] = seed;
  j["env"] = {{"env_id", env.env_id},         {"state_lo", env.state_lo},
              {"state_hi", env.state_hi},     {"action_lo", env.action_lo},
              {"action_hi", env.action_hi},   {"init_state", env.init_state},
              {"horizon", env.horizon},       {"switch_point", env.switch_point}};
  j["expert"] = {{"low_mean", expert.low_mean},
                 {"low_std", expert.low_std},
                 {"high_mean", expert.high_mean},
                 {"high_std", expert.high_std}};
  j["demos"] = {{"n_traj", n_traj}, {"n_random_traj", n_random_traj}};
  j["energy"] = {{"hidden", hidden},
                 {"sigma", noise.sigma},
                 {"epochs", train.epochs},
                 {"batch_size", train.batch_size},
                 {"learning_rate", train.learning_rate},
                 {"final_lr_fraction", train.final_lr_fraction},
                 {"checkpoint_every", train.checkpoint_every}};
  j["reward"] = {{"scale", h.scale}, {"offset", h.offset}};
  j["learner"] = {{"kind", to_string(learner)},
                  {"state_bins", state_bins},
                  {"action_bins", action_bins},
                  {"gamma", gamma},
                  {"alpha", alpha ? nlohmann::json(*alpha) : nlohmann::json("auto")},
                  {"vi_tol", vi_tol},
                  {"vi_max_iters", vi_max_iters},
                  {"pg_episodes", pg.episodes_per_update},
                  {"pg_learning_rate", pg.learning_rate},
                  {"pg_iterations", pg.iterations},
                  {"pg_hidden", pg.hidden},
                  {"pg_init_log_std", pg.init_log_std}};
  return j;
}

std::string RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : identity().dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void add_options(CLI::App& app, RunConfig& cfg) {
  app.set_config("--config", "", "TOML-style file of option = value lines");

  app.add_option("--seed", cfg.seed, "Master seed")->capture_default_str();
  app.add_option("--out-dir", cfg.out_dir, "Run directory")->capture_default_str();

  app.add_option("--state-lo", cfg.env.state_lo)->capture_default_str();
  app.add_option("--state-hi", cfg.env.state_hi)->capture_default_str();
  app.add_option("--action-lo", cfg.env.action_lo)->capture_default_str();
  app.add_option("--action-hi", cfg.env.action_hi)->capture_default_str();
  app.add_option("--init-state", cfg.env.init_state)->capture_default_str();
  app.add_option("--horizon", cfg.env.horizon)->capture_default_str();
  app.add_option("--switch-point", cfg.env.switch_point)->capture_default_str();
  app.add_option("--expert-low-mean", cfg.expert.low_mean)->capture_default_str();
  app.add_option("--expert-low-std", cfg.expert.low_std)->capture_default_str();
  app.add_option("--expert-high-mean", cfg.expert.high_mean)->capture_default_str();
  app.add_option("--expert-high-std", cfg.expert.high_std)->capture_default_str();
  app.add_option("--n-traj", cfg.n_traj, "Expert trajectories")->capture_default_str();
  app.add_option("--n-random-traj", cfg.n_random_traj, "Uniform-random trajectories")
      ->capture_default_str();

  app.add_option("--hidden", cfg.hidden, "Energy network hidden widths")
      ->delimiter(',')
      ->capture_default_str();
  app.add_option("--sigma", cfg.noise.sigma, "DEEN noise std (normalized units)")
      ->capture_default_str();
  app.add_option("--epochs", cfg.train.epochs)->capture_default_str();
  app.add_option("--batch-size", cfg.train.batch_size)->capture_default_str();
  app.add_option("--learning-rate", cfg.train.learning_rate)->capture_default_str();
  app.add_option("--final-lr-fraction", cfg.train.final_lr_fraction,
                 "Last-epoch learning rate as a fraction of the first (cosine decay)")
      ->capture_default_str();
  app.add_option("--checkpoint-every", cfg.train.checkpoint_every,
                 "Epochs between snapshots (0: every 10%)")
      ->capture_default_str();

  app.add_option("--reward", cfg.reward_preset, "Reward preset: one_d or normalized")
      ->capture_default_str();
  app.add_option_function<double>(
      "--reward-scale", [&cfg](double v) { cfg.reward_scale = v; }, "Override the preset scale");
  app.add_option_function<double>(
      "--reward-offset", [&cfg](double v) { cfg.reward_offset = v; },
      "Override the preset offset");

  app.add_option_function<std::string>(
         "--learner", [&cfg](const std::string& v) { cfg.learner = learner_from_string(v); },
         "soft_vi, policy_gradient, direct_softmax or bc")
      ->default_str("soft_vi");
  app.add_option("--state-bins", cfg.state_bins)->capture_default_str();
  app.add_option("--action-bins", cfg.action_bins)->capture_default_str();
  app.add_option("--gamma", cfg.gamma, "Soft value iteration discount")->capture_default_str();
  app.add_option_function<std::string>(
         "--alpha",
         [&cfg](const std::string& v) {
           if (v == "auto") {
             cfg.alpha.reset();
             return;
           }
           try {
             std::size_t used = 0;
             cfg.alpha = std::stod(v, &used);
             if (used != v.size()) throw std::invalid_argument(v);
           } catch (const std::exception&) {
             throw ConfigError("alpha must be a number or 'auto', got '" + v + "'");
           }
         },
         "MaxEnt temperature, or auto for the likelihood fit on the demos")
      ->default_str("auto");
  app.add_option("--vi-tol", cfg.vi_tol)->capture_default_str();
  app.add_option("--vi-max-iters", cfg.vi_max_iters)->capture_default_str();
  app.add_option("--pg-episodes", cfg.pg.episodes_per_update)->capture_default_str();
  app.add_option("--pg-learning-rate", cfg.pg.learning_rate)->capture_default_str();
  app.add_option("--pg-iterations", cfg.pg.iterations)->capture_default_str();
  app.add_option("--pg-hidden", cfg.pg.hidden)->delimiter(',')->capture_default_str();
  app.add_option("--pg-init-log-std", cfg.pg.init_log_std)->capture_default_str();

  app.add_option("--eval-traj", cfg.eval_traj, "Rollouts per evaluated policy")
      ->capture_default_str();
  app.add_option("--eval-gamma", cfg.eval_gamma)->capture_default_str();
  app.add_option("--kl-eps", cfg.kl_eps)->capture_default_str();
  app.add_option("--kl-every", cfg.kl_every, "Training-log KL cadence (0: off)")
      ->capture_default_str();
  app.add_option("--kl-traj", cfg.kl_traj)->capture_default_str();
  app.add_option_function<int>(
      "--checkpoint-epoch", [&cfg](int v) { cfg.checkpoint_epoch = v; },
      "Use the energy snapshot from this epoch");
  app.add_flag("--ablation", cfg.ablation, "Evaluate every energy snapshot");
  app.add_flag("--force", cfg.force, "Accept artifacts from a different configuration");
}

}  // namespace ebil::cli
