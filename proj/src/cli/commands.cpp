#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <regex>
#include <variant>

#include <CLI11.hpp>

#include "ebil/cli.hpp"
#include "ebil/error.hpp"
#include "ebil/eval.hpp"

namespace ebil::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kModeTolerance = 0.15;

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void check_origin(const RunConfig& cfg, const std::string& hash, const fs::path& path) {
  if (cfg.force || hash == cfg.hash()) return;
  throw DataError(path.string() + " was produced by configuration " +
                  (hash.empty() ? std::string("<unknown>") : hash) + ", not " + cfg.hash() +
                  " (pass --force to use it anyway)");
}

void stamp(nlohmann::json& doc, const RunConfig& cfg) {
  doc["config_hash"] = cfg.hash();
  doc["master_seed"] = cfg.seed;
}

envsim::DemoSet load_checked_demos(const RunConfig& cfg, const fs::path& path) {
  envsim::DemoSet demos = envsim::load_demos(path);
  check_origin(cfg, demos.config_hash, path);
  if (!(demos.env == cfg.env)) {
    throw DataError(path.string() + " was generated for a different environment");
  }
  return demos;
}

void save_stamped_demos(envsim::DemoSet demos, const RunConfig& cfg, const fs::path& path) {
  demos.config_hash = cfg.hash();
  demos.master_seed = cfg.seed;
  envsim::save_demos(demos, path);
}

struct LoadedEnergy {
  energymodel::EnergyModel model;
  fs::path path;
};

LoadedEnergy load_energy(const RunConfig& cfg, const fs::path& path) {
  const nlohmann::json doc = read_json(path);
  check_origin(cfg, doc.value("config_hash", ""), path);
  return {energymodel::energy_model_from_json(doc), path};
}

LoadedEnergy load_selected_energy(const RunConfig& cfg, const PathOptions& paths) {
  if (paths.checkpoint) return load_energy(cfg, *paths.checkpoint);
  if (cfg.checkpoint_epoch) {
    const fs::path p = snapshot_path(cfg, *cfg.checkpoint_epoch);
    if (!fs::exists(p)) {
      throw DataError("no energy snapshot for epoch " + std::to_string(*cfg.checkpoint_epoch) +
                      " (" + p.string() + ")");
    }
    return load_energy(cfg, p);
  }
  return load_energy(cfg, final_checkpoint_path(cfg));
}

std::vector<int> snapshot_epochs(const RunConfig& cfg) {
  std::vector<int> epochs;
  const std::regex pattern(R"(epoch_(\d+)\.json)");
  if (!fs::exists(energy_dir(cfg))) return epochs;
  for (const auto& entry : fs::directory_iterator(energy_dir(cfg))) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) epochs.push_back(std::stoi(m[1].str()));
  }
  std::sort(epochs.begin(), epochs.end());
  return epochs;
}

double mode_agreement(const Eigen::MatrixXd& energy, const GridSpec& grid,
                      const RunConfig& cfg) {
  const Eigen::VectorXi best = reward::argmin_actions(energy);
  std::size_t hits = 0;
  for (std::size_t s = 0; s < grid.n_states(); ++s) {
    const double target =
        grid.state.center(s) < cfg.env.switch_point ? cfg.expert.low_mean : cfg.expert.high_mean;
    const double a = grid.action.center(static_cast<std::size_t>(best(static_cast<int>(s))));
    if (std::abs(a - target) <= kModeTolerance) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(grid.n_states());
}

void export_all_formats(const Eigen::MatrixXd& values, const fs::path& stem) {
  for (auto f : {eval::ImageFormat::Csv, eval::ImageFormat::Pgm, eval::ImageFormat::Svg}) {
    fs::path p = stem;
    p += eval::extension(f);
    eval::export_heatmap(values, p, f);
  }
}

// A trained policy of any kind, with what is needed to roll it out.
struct AnyPolicy {
  std::variant<TabularPolicy, learner::BcPolicy, learner::GaussianPolicy,
               envsim::ExpertPolicySpec, envsim::UniformPolicy>
      policy;
  GridSpec grid;

  envsim::DemoSet rollout(const envsim::EnvSpec& env, std::size_t n, std::uint64_t seed) const {
    if (const auto* p = std::get_if<TabularPolicy>(&policy)) {
      return learner::rollout(*p, grid, env, n, seed);
    }
    if (const auto* p = std::get_if<learner::BcPolicy>(&policy)) {
      return learner::rollout(*p, env, n, seed);
    }
    if (const auto* p = std::get_if<learner::GaussianPolicy>(&policy)) {
      return learner::rollout(*p, env, n, seed);
    }
    if (const auto* p = std::get_if<envsim::ExpertPolicySpec>(&policy)) {
      return envsim::generate_demos(env, *p, n, seed);
    }
    return envsim::generate_demos(env, envsim::UniformPolicy{}, n, seed);
  }
};

struct KlTracker {
  const RunConfig& cfg;
  std::optional<eval::OccupancyHistogram> reference;
  GridSpec grid;

  bool due(int iteration) const {
    return reference && cfg.kl_every > 0 && iteration % cfg.kl_every == 0;
  }
  double kl(const AnyPolicy& policy, int iteration) const {
    const envsim::DemoSet ro = policy.rollout(
        cfg.env, cfg.kl_traj, cfg.component_seed(SeedSlot::Learner) + 1000003ULL * iteration);
    return eval::kl_divergence(eval::occupancy_histogram(ro, grid, cfg.eval_gamma), *reference,
                               cfg.kl_eps);
  }
};

struct SolvedPolicy {
  AnyPolicy policy;
  nlohmann::json doc;
  eval::LearningCurve log;
  double alpha = 1.0;
  int iterations = 0;
  std::optional<Eigen::MatrixXd> q_table;
  Eigen::MatrixXd csv;
};

double resolve_alpha(const RunConfig& cfg, const Eigen::MatrixXd& energy,
                     const envsim::DemoSet* demos, const GridSpec& grid) {
  if (cfg.alpha) return *cfg.alpha;
  if (!demos) throw ConfigError("alpha = auto needs the expert demos");
  // Temperatures are stated on the reward scale.
  return cfg.surrogate().scale * learner::fit_temperature(energy, *demos, grid);
}

SolvedPolicy solve(const RunConfig& cfg, const energymodel::EnergyModel* model,
                   const envsim::DemoSet* demos, const KlTracker& tracker) {
  const GridSpec grid = cfg.grid();
  const reward::SurrogateReward h = cfg.surrogate();
  SolvedPolicy out{AnyPolicy{envsim::UniformPolicy{}, grid}, {}, {}, 1.0, 0, {}, {}};

  if (cfg.learner == LearnerKind::Bc) {
    if (!demos) throw DataError("behavior cloning needs expert demos");
    learner::BcPolicy bc = learner::bc_fit(*demos, grid);
    out.doc = learner::to_json(bc);
    out.csv.resize(static_cast<Eigen::Index>(grid.n_states()), 3);
    for (std::size_t s = 0; s < grid.n_states(); ++s) {
      const auto r = static_cast<Eigen::Index>(s);
      out.csv.row(r) << bc.means[s], bc.stds[s], static_cast<double>(bc.counts[s]);
    }
    out.policy.policy = std::move(bc);
    out.log.metrics = {"kl"};
    if (tracker.reference) out.log.records.push_back({0, {tracker.kl(out.policy, 0)}});
    return out;
  }

  if (!model) throw DataError("learner " + to_string(cfg.learner) + " needs an energy checkpoint");
  const Eigen::MatrixXd energy = reward::energy_table(*model, grid);
  out.alpha = resolve_alpha(cfg, energy, demos, grid);

  if (cfg.learner == LearnerKind::DirectSoftmax) {
    TabularPolicy p = learner::softmax_energy_policy(energy, out.alpha / h.scale);
    out.doc = learner::to_json(p);
    out.csv = p.probs();
    out.policy.policy = std::move(p);
    out.log.metrics = {"kl"};
    if (tracker.reference) out.log.records.push_back({0, {tracker.kl(out.policy, 0)}});
    return out;
  }

  if (cfg.learner == LearnerKind::SoftVi) {
    const TabularMdp mdp =
        reward::fill_reward_table(*model, h, envsim::discretize(cfg.env, grid, cfg.gamma), grid);
    out.log.metrics = {"residual", "kl"};
    auto observer = [&](int it, const learner::SoftQTable& q, double residual) {
      std::optional<double> kl;
      if (tracker.due(it)) kl = tracker.kl(AnyPolicy{learner::softmax_policy(q), grid}, it);
      out.log.records.push_back({it, {residual, kl}});
    };
    learner::SoftViResult res =
        learner::soft_value_iteration(mdp, {out.alpha, cfg.vi_tol, cfg.vi_max_iters}, observer);
    out.iterations = static_cast<int>(res.residuals.size());
    out.q_table = res.q.q;
    out.doc = learner::to_json(res.policy);
    out.csv = res.policy.probs();
    out.policy.policy = std::move(res.policy);
    return out;
  }

  learner::PgConfig pg = cfg.pg;
  pg.seed = cfg.component_seed(SeedSlot::Learner);
  pg.entropy_weight = out.alpha;
  out.log.metrics = {"mean_return", "entropy", "log_std", "kl"};
  auto observer = [&](int it, const learner::GaussianPolicy& p) {
    std::optional<double> kl;
    if (tracker.due(it)) kl = tracker.kl(AnyPolicy{p, grid}, it);
    out.log.records.push_back({it, {std::nullopt, std::nullopt, std::nullopt, kl}});
  };
  learner::PgResult res = learner::policy_gradient_train(
      cfg.env, learner::energy_batch_reward(*model, h.scale, h.offset), pg, observer);
  for (std::size_t i = 0; i < res.log.size(); ++i) {
    auto& values = out.log.records[i].values;
    values[0] = res.log[i].mean_return;
    values[1] = res.log[i].entropy;
    values[2] = res.log[i].log_std;
  }
  out.iterations = pg.iterations;
  out.doc = learner::to_json(res.policy);
  out.csv.resize(static_cast<Eigen::Index>(grid.n_states()), 1);
  for (std::size_t s = 0; s < grid.n_states(); ++s) {
    out.csv(static_cast<Eigen::Index>(s), 0) = res.policy.center_action(grid.state.center(s));
  }
  out.policy.policy = std::move(res.policy);
  return out;
}

AnyPolicy load_policy(const RunConfig& cfg, const std::string& spec) {
  const GridSpec grid = cfg.grid();
  if (spec == "expert") return {cfg.expert, grid};
  if (spec == "uniform") return {envsim::UniformPolicy{}, grid};
  const nlohmann::json doc = read_json(spec);
  check_origin(cfg, doc.value("config_hash", ""), spec);
  const std::string kind = doc.value("kind", "");
  if (kind == "tabular") {
    if (doc.contains("grid") && !(grid_from_json(doc.at("grid")) == grid)) {
      throw DataError(spec + " uses a different grid than the configuration");
    }
    TabularPolicy p = learner::tabular_policy_from_json(doc);
    if (p.n_states() != grid.n_states() || p.n_actions() != grid.n_actions()) {
      throw DimensionError(spec + " does not match the configured grid");
    }
    return {std::move(p), grid};
  }
  if (kind == "bc") return {learner::bc_policy_from_json(doc), grid};
  if (kind == "gaussian") return {learner::gaussian_policy_from_json(doc), grid};
  throw DataError(spec + ": unknown policy kind '" + kind + "'");
}

template <typename F>
auto in_stage(const std::string& stage, F&& f) {
  auto tag = [&](const std::exception& e) { return stage + ": " + e.what(); };
  try {
    return f();
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(tag(e), e.residual(), e.iterations());
  } catch (const NumericError& e) {
    throw NumericError(tag(e));
  } catch (const DimensionError& e) {
    throw DimensionError(tag(e));
  } catch (const DataError& e) {
    throw DataError(tag(e));
  } catch (const ConfigError& e) {
    throw ConfigError(tag(e));
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

fs::path expert_demos_path(const RunConfig& cfg) { return cfg.out_dir / "expert_demos.jsonl"; }
fs::path random_demos_path(const RunConfig& cfg) { return cfg.out_dir / "random_demos.jsonl"; }
fs::path energy_dir(const RunConfig& cfg) { return cfg.out_dir / "energy"; }
fs::path final_checkpoint_path(const RunConfig& cfg) { return energy_dir(cfg) / "final.json"; }
fs::path snapshot_path(const RunConfig& cfg, int epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%06d.json", epoch);
  return energy_dir(cfg) / name;
}
fs::path policy_path(const RunConfig& cfg) { return cfg.out_dir / "policy.json"; }
fs::path report_path(const RunConfig& cfg) { return cfg.out_dir / "report.json"; }
fs::path manifest_path(const RunConfig& cfg) { return cfg.out_dir / "manifest.json"; }

GenExpertResult cmd_gen_expert(const RunConfig& cfg) {
  cfg.validate();
  ensure_dir(cfg.out_dir);
  const envsim::DemoSet expert = envsim::generate_demos(
      cfg.env, cfg.expert, cfg.n_traj, cfg.component_seed(SeedSlot::ExpertDemos));
  const envsim::DemoSet random =
      envsim::generate_demos(cfg.env, envsim::UniformPolicy{}, cfg.n_random_traj,
                             cfg.component_seed(SeedSlot::RandomDemos));
  save_stamped_demos(expert, cfg, expert_demos_path(cfg));
  save_stamped_demos(random, cfg, random_demos_path(cfg));
  GenExpertResult r{expert.trajectories.size(), expert.num_transitions(),
                    random.trajectories.size(), random.num_transitions()};
  std::cout << "expert: " << r.expert_trajectories << " trajectories, " << r.expert_transitions
            << " transitions -> " << expert_demos_path(cfg).string() << '\n'
            << "random: " << r.random_trajectories << " trajectories, " << r.random_transitions
            << " transitions -> " << random_demos_path(cfg).string() << '\n';
  return r;
}

TrainEnergyResult cmd_train_energy(const RunConfig& cfg, const PathOptions& paths) {
  cfg.validate();
  const fs::path demo_path = paths.demos.value_or(expert_demos_path(cfg));
  const fs::path random_path = paths.random_demos.value_or(random_demos_path(cfg));
  const envsim::DemoSet demos = load_checked_demos(cfg, demo_path);
  std::optional<envsim::DemoSet> random;
  if (paths.random_demos || fs::exists(random_path)) {
    random = load_checked_demos(cfg, random_path);
    if (random->empty()) random.reset();
  }

  energymodel::TrainConfig train = cfg.train;
  train.seed = cfg.component_seed(SeedSlot::Energy);
  const auto layers = diffcore::mlp_layers(2, cfg.hidden, 1, diffcore::Activation::Tanh);
  const energymodel::EnergyTrainResult res =
      energymodel::train_deen(demos, layers, cfg.noise, train, random ? &*random : nullptr);

  ensure_dir(energy_dir(cfg));
  for (const auto& old : snapshot_epochs(cfg)) fs::remove(snapshot_path(cfg, old));
  auto save_model = [&](const energymodel::EnergyModel& m, const fs::path& p) {
    nlohmann::json doc = energymodel::to_json(m);
    stamp(doc, cfg);
    write_json(p, doc);
  };
  save_model(res.model, final_checkpoint_path(cfg));
  TrainEnergyResult out;
  for (const auto& snap : res.snapshots) {
    save_model(res.model_at(snap), snapshot_path(cfg, snap.epoch));
    out.snapshot_epochs.push_back(snap.epoch);
  }

  eval::LearningCurve log{{"loss", "expert_energy", "random_energy", "gap"}, {}};
  for (const auto& st : res.log) {
    std::optional<double> e, r, gap;
    if (random) {
      e = st.mean_expert_energy;
      r = st.mean_random_energy;
      gap = st.mean_random_energy - st.mean_expert_energy;
    }
    log.records.push_back({st.epoch, {st.mean_loss, e, r, gap}});
  }
  eval::export_learning_curve(log, energy_dir(cfg) / "train_log.csv");

  const GridSpec grid = cfg.grid();
  const Eigen::MatrixXd energy = reward::energy_table(res.model, grid);
  export_all_formats(energy, energy_dir(cfg) / "energy");
  out.mode_agreement = mode_agreement(energy, grid, cfg);
  out.mean_expert_energy = res.model.energies(energymodel::demo_state_actions(demos)).mean();
  out.mean_random_energy =
      random ? energymodel::energy_gap(res.model, demos, *random).mean_random_energy
             : std::numeric_limits<double>::quiet_NaN();

  std::cout << "energy: " << train.epochs << " epochs, " << out.snapshot_epochs.size()
            << " snapshots -> " << energy_dir(cfg).string() << '\n'
            << "mean expert energy " << out.mean_expert_energy << ", mean random energy "
            << out.mean_random_energy << ", mode agreement " << out.mode_agreement << '\n';
  return out;
}

TrainPolicyResult cmd_train_policy(const RunConfig& cfg, const PathOptions& paths) {
  cfg.validate();
  const GridSpec grid = cfg.grid();
  const fs::path demo_path = paths.demos.value_or(expert_demos_path(cfg));
  std::optional<envsim::DemoSet> demos;
  if (paths.demos || fs::exists(demo_path)) demos = load_checked_demos(cfg, demo_path);

  std::optional<LoadedEnergy> energy;
  if (cfg.learner != LearnerKind::Bc) energy = load_selected_energy(cfg, paths);

  KlTracker tracker{cfg, std::nullopt, grid};
  if (demos && !demos->empty()) {
    tracker.reference = eval::occupancy_histogram(*demos, grid, cfg.eval_gamma);
  }
  SolvedPolicy solved = solve(cfg, energy ? &energy->model : nullptr, demos ? &*demos : nullptr,
                              tracker);

  ensure_dir(cfg.out_dir);
  solved.doc["grid"] = to_json(grid);
  solved.doc["learner"] = to_string(cfg.learner);
  solved.doc["alpha"] = solved.alpha;
  solved.doc["energy_epoch"] = energy ? nlohmann::json(energy->model.epoch) : nlohmann::json();
  stamp(solved.doc, cfg);
  write_json(policy_path(cfg), solved.doc);
  eval::export_heatmap(solved.csv, cfg.out_dir / "policy.csv", eval::ImageFormat::Csv);
  if (solved.q_table) {
    eval::export_heatmap(*solved.q_table, cfg.out_dir / "q_table.csv", eval::ImageFormat::Csv);
  }
  eval::export_learning_curve(solved.log, cfg.out_dir / "policy_log.csv");

  std::cout << "policy: " << to_string(cfg.learner) << ", alpha " << solved.alpha << ", "
            << solved.iterations << " iterations -> " << policy_path(cfg).string() << '\n';
  return {cfg.learner, solved.alpha, solved.iterations};
}

EvaluateResult cmd_evaluate(const RunConfig& cfg, const PathOptions& paths) {
  cfg.validate();
  const GridSpec grid = cfg.grid();
  const AnyPolicy policy = load_policy(cfg, paths.policy.value_or(policy_path(cfg).string()));

  envsim::DemoSet reference;
  if (paths.reference) {
    reference = load_checked_demos(cfg, *paths.reference);
  } else {
    reference = envsim::generate_demos(cfg.env, cfg.expert, cfg.eval_traj,
                                       cfg.component_seed(SeedSlot::EvalExpert));
  }
  const eval::OccupancyHistogram ref_hist =
      eval::occupancy_histogram(reference, grid, cfg.eval_gamma);

  auto score = [&](const AnyPolicy& p) {
    const envsim::DemoSet ro =
        p.rollout(cfg.env, cfg.eval_traj, cfg.component_seed(SeedSlot::EvalAgent));
    const eval::OccupancyHistogram hist = eval::occupancy_histogram(ro, grid, cfg.eval_gamma);
    return std::pair{hist, eval::region_mean_actions(ro)};
  };

  EvaluateResult out;
  const auto [agent_hist, means] = score(policy);
  out.kl = eval::kl_divergence(agent_hist, ref_hist, cfg.kl_eps);
  out.mean_action_low = means.low;
  out.mean_action_high = means.high;
  const envsim::DemoSet uniform = envsim::generate_demos(
      cfg.env, envsim::UniformPolicy{}, cfg.eval_traj, cfg.component_seed(SeedSlot::EvalUniform));
  out.uniform_kl = eval::kl_divergence(eval::occupancy_histogram(uniform, grid, cfg.eval_gamma),
                                       ref_hist, cfg.kl_eps);

  const fs::path dir = cfg.out_dir / "eval";
  ensure_dir(dir);
  export_all_formats(agent_hist.weights, dir / "agent_occupancy");
  export_all_formats(ref_hist.weights, dir / "expert_occupancy");
  if (const auto* tab = std::get_if<TabularPolicy>(&policy.policy)) {
    export_all_formats(tab->probs(), dir / "policy");
  }
  std::optional<LoadedEnergy> energy;
  if (paths.checkpoint || cfg.checkpoint_epoch || fs::exists(final_checkpoint_path(cfg))) {
    energy = load_selected_energy(cfg, paths);
    export_all_formats(reward::reward_table(energy->model, cfg.surrogate(), grid), dir / "reward");
  }

  if (cfg.ablation) {
    if (cfg.learner == LearnerKind::Bc) throw ConfigError("ablation needs an energy-based learner");
    const fs::path demo_path = paths.demos.value_or(expert_demos_path(cfg));
    std::optional<envsim::DemoSet> demos;
    if (fs::exists(demo_path)) demos = load_checked_demos(cfg, demo_path);
    const KlTracker no_kl{cfg, std::nullopt, grid};
    eval::LearningCurve table{{"kl", "mean_action_low", "mean_action_high"}, {}};
    for (int epoch : snapshot_epochs(cfg)) {
      const LoadedEnergy snap = load_energy(cfg, snapshot_path(cfg, epoch));
      const SolvedPolicy solved = solve(cfg, &snap.model, demos ? &*demos : nullptr, no_kl);
      const auto [hist, m] = score(solved.policy);
      const double kl = eval::kl_divergence(hist, ref_hist, cfg.kl_eps);
      out.ablation.push_back({epoch, kl, m.low, m.high});
      table.records.push_back({epoch, {kl, m.low, m.high}});
    }
    eval::export_learning_curve(table, dir / "ablation.csv");
  }

  nlohmann::json report = {{"kl", out.kl},
                           {"uniform_kl", out.uniform_kl},
                           {"mean_action_low", out.mean_action_low},
                           {"mean_action_high", out.mean_action_high},
                           {"eval_traj", cfg.eval_traj},
                           {"eval_gamma", cfg.eval_gamma},
                           {"kl_eps", cfg.kl_eps}};
  if (energy) report["energy_epoch"] = energy->model.epoch;
  if (cfg.ablation) {
    report["ablation"] = nlohmann::json::array();
    for (const auto& row : out.ablation) {
      report["ablation"].push_back({{"epoch", row.epoch},
                                    {"kl", row.kl},
                                    {"mean_action_low", row.mean_action_low},
                                    {"mean_action_high", row.mean_action_high}});
    }
  }
  stamp(report, cfg);
  write_json(report_path(cfg), report);

  std::cout << "KL to expert " << out.kl << " (uniform " << out.uniform_kl
            << "), mean action below/above switch " << out.mean_action_low << " / "
            << out.mean_action_high << " -> " << report_path(cfg).string() << '\n';
  return out;
}

nlohmann::json cmd_pipeline(const RunConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  nlohmann::json metrics;
  nlohmann::json artifacts;
  nlohmann::json timings;
  auto rel = [&](const fs::path& p) { return fs::relative(p, cfg.out_dir).generic_string(); };

  auto t = std::chrono::steady_clock::now();
  const GenExpertResult gen = in_stage("gen-expert", [&] { return cmd_gen_expert(cfg); });
  timings["gen-expert"] = seconds_since(t);
  std::cout << "[gen-expert] " << timings["gen-expert"].get<double>() << " s\n";
  metrics["expert_transitions"] = gen.expert_transitions;
  metrics["random_transitions"] = gen.random_transitions;
  artifacts["expert_demos"] = rel(expert_demos_path(cfg));
  artifacts["random_demos"] = rel(random_demos_path(cfg));

  if (cfg.learner != LearnerKind::Bc) {
    t = std::chrono::steady_clock::now();
    const TrainEnergyResult energy =
        in_stage("train-energy", [&] { return cmd_train_energy(cfg); });
    timings["train-energy"] = seconds_since(t);
    std::cout << "[train-energy] " << timings["train-energy"].get<double>() << " s\n";
    metrics["mean_expert_energy"] = energy.mean_expert_energy;
    metrics["mean_random_energy"] = energy.mean_random_energy;
    metrics["energy_gap"] = energy.mean_random_energy - energy.mean_expert_energy;
    metrics["mode_agreement"] = energy.mode_agreement;
    artifacts["energy_checkpoint"] = rel(final_checkpoint_path(cfg));
    artifacts["energy_log"] = rel(energy_dir(cfg) / "train_log.csv");
    nlohmann::json snaps = nlohmann::json::array();
    for (int e : energy.snapshot_epochs) snaps.push_back(rel(snapshot_path(cfg, e)));
    artifacts["energy_snapshots"] = std::move(snaps);
  }

  t = std::chrono::steady_clock::now();
  const TrainPolicyResult pol = in_stage("train-policy", [&] { return cmd_train_policy(cfg); });
  timings["train-policy"] = seconds_since(t);
  std::cout << "[train-policy] " << timings["train-policy"].get<double>() << " s\n";
  metrics["alpha"] = pol.alpha;
  metrics["learner_iterations"] = pol.iterations;
  artifacts["policy"] = rel(policy_path(cfg));
  artifacts["policy_log"] = rel(cfg.out_dir / "policy_log.csv");

  t = std::chrono::steady_clock::now();
  const EvaluateResult ev = in_stage("evaluate", [&] { return cmd_evaluate(cfg); });
  timings["evaluate"] = seconds_since(t);
  std::cout << "[evaluate] " << timings["evaluate"].get<double>() << " s\n";
  metrics["kl"] = ev.kl;
  metrics["uniform_kl"] = ev.uniform_kl;
  metrics["mean_action_low"] = ev.mean_action_low;
  metrics["mean_action_high"] = ev.mean_action_high;
  artifacts["report"] = rel(report_path(cfg));
  artifacts["heatmaps"] = rel(cfg.out_dir / "eval");

  timings["total"] = seconds_since(t0);
  nlohmann::json manifest = {{"format", "ebil-manifest"},
                             {"version", 1},
                             {"config", cfg.identity()},
                             {"artifacts", std::move(artifacts)},
                             {"metrics", std::move(metrics)},
                             {"timings", std::move(timings)}};
  stamp(manifest, cfg);
  write_json(manifest_path(cfg), manifest);
  std::cout << "pipeline finished in " << manifest["timings"]["total"].get<double>() << " s -> "
            << manifest_path(cfg).string() << '\n';
  return manifest;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Energy-based imitation learning on the one-dimensional motion task"};
  app.require_subcommand(1);
  app.fallthrough();
  app.allow_config_extras(CLI::config_extras_mode::error);
  RunConfig cfg;
  PathOptions paths;
  add_options(app, cfg);

  auto path_opt = [](CLI::App* sub, const char* name, auto& target, const char* help) {
    sub->add_option_function<std::string>(
        name, [&target](const std::string& v) { target = v; }, help);
  };
  auto* gen = app.add_subcommand("gen-expert", "Write expert and uniform-random demos");
  auto* energy = app.add_subcommand("train-energy", "Fit the energy model to expert demos");
  path_opt(energy, "--demos", paths.demos, "Expert demos (default: run dir)");
  path_opt(energy, "--random-demos", paths.random_demos, "Random demos for the energy gap");
  auto* policy = app.add_subcommand("train-policy", "Recover a policy from the energy");
  path_opt(policy, "--demos", paths.demos, "Expert demos (for bc, alpha = auto and KL)");
  path_opt(policy, "--checkpoint", paths.checkpoint, "Energy checkpoint (default: run dir)");
  auto* evaluate = app.add_subcommand("evaluate", "Compare a policy with the expert");
  path_opt(evaluate, "--policy", paths.policy, "Policy artifact, or expert / uniform");
  path_opt(evaluate, "--reference", paths.reference,
           "Expert demos used as reference (default: fresh expert rollouts)");
  path_opt(evaluate, "--checkpoint", paths.checkpoint, "Energy checkpoint for the reward map");
  path_opt(evaluate, "--demos", paths.demos, "Expert demos (for alpha = auto in ablation)");
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage and write a manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*gen) cmd_gen_expert(cfg);
    if (*energy) cmd_train_energy(cfg, paths);
    if (*policy) cmd_train_policy(cfg, paths);
    if (*evaluate) cmd_evaluate(cfg, paths);
    if (*pipeline) cmd_pipeline(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace ebil::cli
