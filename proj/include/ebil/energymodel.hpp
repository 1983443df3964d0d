#pragma once

// Energy estimation from demonstrations by denoising score matching.
//
// Samples x are corrupted to y = x + N(0, sigma^2 I) and the network energy
// E is fitted so that y - sigma^2 dE/dy(y) recovers x:
//
//     L(theta) = sum_i || x_i - y_i + sigma^2 dE/dy(y_i) ||^2
//
// At the optimum -dE/dy is the score of the sigma-smoothed data density, so
// E is (up to a constant) its negative log-density.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ebil/diffcore.hpp"
#include "ebil/envsim.hpp"
#include "ebil/loss.hpp"

namespace ebil::energymodel {

using diffcore::Matrix;
using diffcore::Network;
using diffcore::RowVector;
using diffcore::Vector;
using Rng = std::mt19937_64;

struct NoiseModel {
  double sigma = 0.1;

  void validate() const;
};

struct TrainConfig {
  int epochs = 3000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  /// Learning rate at the last epoch as a fraction of learning_rate, reached
  /// by cosine decay; 1 keeps it constant.
  double final_lr_fraction = 1.0;
  std::uint64_t seed = 0;
  /// Epochs between snapshots; 0 selects every 10% of the run.
  int checkpoint_every = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
  int snapshot_interval() const;
  double learning_rate_at(int epoch) const;
};

/// Per-dimension affine map of [lo, hi] onto [-1, 1].
struct InputNormalizer {
  std::vector<double> lo;
  std::vector<double> hi;

  static InputNormalizer identity(std::size_t dim);
  /// State bounds first, then action bounds.
  static InputNormalizer for_env(const envsim::EnvSpec& env);

  std::size_t dim() const { return lo.size(); }
  Vector apply(const Vector& raw) const;
  Matrix apply(const Matrix& raw) const;

  bool operator==(const InputNormalizer&) const = default;
};

/// A trained energy over (state, action) together with everything needed to
/// evaluate it on raw environment coordinates.
struct EnergyModel {
  Network net;
  InputNormalizer normalizer;
  NoiseModel noise;
  TrainConfig train_config;
  int epoch = 0;

  double energy(double s, double a) const;
  /// Energies at the raw (s, a) columns of a 2 x n matrix.
  RowVector energies(const Matrix& raw_state_actions) const;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  // NaN when no evaluation sets were supplied.
  double mean_expert_energy = 0.0;
  double mean_random_energy = 0.0;
};

struct Snapshot {
  int epoch = 0;
  Network net;
};

struct TrainResult {
  Network net;
  std::vector<Snapshot> snapshots;
  std::vector<EpochStats> log;
};

struct EnergyTrainResult {
  EnergyModel model;
  std::vector<Snapshot> snapshots;
  std::vector<EpochStats> log;

  EnergyModel model_at(const Snapshot& snapshot) const;
};

struct EnergyGapReport {
  double mean_expert_energy = 0.0;
  double mean_random_energy = 0.0;
  std::vector<EpochStats> series;

  double gap() const { return mean_random_energy - mean_expert_energy; }
};

/// y = x + sigma * N(0, I), drawn coordinate by coordinate from rng.
Vector corrupt(const Vector& x, const NoiseModel& noise, Rng& rng);

/// Batch sum of the denoising objective. Per-pair terms are summed in sorted
/// order, so the result does not depend on the order of the pairs.
double deen_loss(const Network& net, const std::vector<diffcore::VectorPair>& pairs,
                 const NoiseModel& noise);

/// Value and parameter gradient of the denoising objective over the columns
/// of clean / noisy, evaluated as one batch.
diffcore::LossGradient deen_loss_gradient(const Network& net, const Matrix& clean,
                                          const Matrix& noisy, const NoiseModel& noise);

/// Called after each epoch with the current network; returns the (expert,
/// random) mean energies recorded in the log.
using EpochObserver = std::function<std::pair<double, double>(int epoch, const Network& net)>;

/// Adam on the denoising objective over the columns of `samples`, which are
/// already in network coordinates. Fresh noise every epoch.
TrainResult train_deen_samples(const Matrix& samples, const std::vector<diffcore::LayerSpec>& layers,
                               const NoiseModel& noise, const TrainConfig& cfg,
                               const EpochObserver& observer = {});

/// Normalized (s, a) columns of every transition.
Matrix demo_inputs(const envsim::DemoSet& demos, const InputNormalizer& normalizer);
/// Raw (s, a) columns of every transition.
Matrix demo_state_actions(const envsim::DemoSet& demos);

/// Trains on the (s, a) pairs of `demos`. When `random` is given, the log
/// tracks the mean energies of both sets per epoch.
EnergyTrainResult train_deen(const envsim::DemoSet& demos,
                             const std::vector<diffcore::LayerSpec>& layers,
                             const NoiseModel& noise, const TrainConfig& cfg,
                             const envsim::DemoSet* random = nullptr);

double energy(const EnergyModel& model, double s, double a);

/// Score estimate -dE/dy at y (network coordinates).
Vector score(const Network& net, const Vector& y);

EnergyGapReport energy_gap(const EnergyModel& model, const envsim::DemoSet& expert,
                           const envsim::DemoSet& random);

// Checkpoint: the network document plus normalization, noise and training
// settings.
nlohmann::json to_json(const EnergyModel& model);
EnergyModel energy_model_from_json(const nlohmann::json& doc);

}  // namespace ebil::energymodel
