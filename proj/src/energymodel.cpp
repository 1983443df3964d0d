#include "ebil/energymodel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <numeric>

#include "ebil/error.hpp"

namespace ebil::energymodel {

namespace {

struct Adam {
  explicit Adam(std::size_t n, const TrainConfig& cfg)
      : m(Vector::Zero(static_cast<Eigen::Index>(n))),
        v(Vector::Zero(static_cast<Eigen::Index>(n))),
        cfg(cfg) {}

  void step(Vector& params, const Vector& grad, double grad_scale) {
    ++t;
    const double b1 = cfg.adam_beta1;
    const double b2 = cfg.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    const double lr = rate;
    const double eps = cfg.adam_epsilon;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
      const double g = grad(i) * grad_scale;
      m(i) = b1 * m(i) + (1.0 - b1) * g;
      v(i) = b2 * v(i) + (1.0 - b2) * g * g;
      params(i) -= lr * (m(i) / c1) / (std::sqrt(v(i) / c2) + eps);
    }
  }

  Vector m;
  Vector v;
  const TrainConfig& cfg;
  double rate = cfg.learning_rate;
  long t = 0;
};

double mean_energy(const EnergyModel& model, const envsim::DemoSet& demos) {
  return model.energies(demo_state_actions(demos)).mean();
}

}  // namespace

void NoiseModel::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("noise sigma must be >= 0");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0)) {
    throw ConfigError("final learning-rate fraction must lie in (0, 1]");
  }
  if (checkpoint_every < 0) throw ConfigError("checkpoint interval must be nonnegative");
}

double TrainConfig::learning_rate_at(int epoch) const {
  if (final_lr_fraction == 1.0 || epochs <= 1) return learning_rate;
  const double progress = static_cast<double>(epoch - 1) / static_cast<double>(epochs - 1);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return learning_rate * (final_lr_fraction + (1.0 - final_lr_fraction) * cosine);
}

int TrainConfig::snapshot_interval() const {
  if (checkpoint_every > 0) return checkpoint_every;
  return std::max(1, epochs / 10);
}

InputNormalizer InputNormalizer::identity(std::size_t dim) {
  return {std::vector<double>(dim, -1.0), std::vector<double>(dim, 1.0)};
}

InputNormalizer InputNormalizer::for_env(const envsim::EnvSpec& env) {
  return {{env.state_lo, env.action_lo}, {env.state_hi, env.action_hi}};
}

Vector InputNormalizer::apply(const Vector& raw) const {
  if (static_cast<std::size_t>(raw.size()) != dim()) {
    throw DimensionError("normalizer expects dimension " + std::to_string(dim()));
  }
  Vector out(raw.size());
  for (std::size_t i = 0; i < dim(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    out(k) = 2.0 * (raw(k) - lo[i]) / (hi[i] - lo[i]) - 1.0;
  }
  return out;
}

Matrix InputNormalizer::apply(const Matrix& raw) const {
  if (static_cast<std::size_t>(raw.rows()) != dim()) {
    throw DimensionError("normalizer expects dimension " + std::to_string(dim()));
  }
  Matrix out(raw.rows(), raw.cols());
  for (std::size_t i = 0; i < dim(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    out.row(k) = (2.0 * (raw.row(k).array() - lo[i]) / (hi[i] - lo[i]) - 1.0).matrix();
  }
  return out;
}

double EnergyModel::energy(double s, double a) const {
  Vector raw(2);
  raw << s, a;
  return diffcore::forward(net, normalizer.apply(raw));
}

RowVector EnergyModel::energies(const Matrix& raw_state_actions) const {
  return diffcore::forward_batch(net, normalizer.apply(raw_state_actions));
}

EnergyModel EnergyTrainResult::model_at(const Snapshot& snapshot) const {
  EnergyModel m = model;
  m.net = snapshot.net;
  m.epoch = snapshot.epoch;
  return m;
}

Vector corrupt(const Vector& x, const NoiseModel& noise, Rng& rng) {
  noise.validate();
  if (!x.allFinite()) throw NumericError("non-finite sample passed to corrupt");
  Vector y = x;
  if (noise.sigma == 0.0) return y;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += noise.sigma * gauss(rng);
  return y;
}

double deen_loss(const Network& net, const std::vector<diffcore::VectorPair>& pairs,
                 const NoiseModel& noise) {
  noise.validate();
  const double s2 = noise.sigma * noise.sigma;
  std::vector<double> terms;
  terms.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [x, y] = pairs[i];
    if (x.size() != y.size()) throw DimensionError("clean and noisy samples differ in size");
    const Vector r = x - y + s2 * diffcore::input_gradient(net, y);
    const double term = r.squaredNorm();
    if (!std::isfinite(term)) {
      throw NumericError("non-finite denoising loss at pair " + std::to_string(i));
    }
    terms.push_back(term);
  }
  std::sort(terms.begin(), terms.end());
  return std::accumulate(terms.begin(), terms.end(), 0.0);
}

diffcore::LossGradient deen_loss_gradient(const Network& net, const Matrix& clean,
                                          const Matrix& noisy, const NoiseModel& noise) {
  if (clean.rows() != noisy.rows() || clean.cols() != noisy.cols()) {
    throw DimensionError("clean and noisy batches differ in shape");
  }
  const double s2 = noise.sigma * noise.sigma;
  diffcore::ForwardTrace trace(net, noisy);
  const Matrix residual = clean - noisy + s2 * trace.input_gradient();
  diffcore::LossGradient out;
  out.value = residual.squaredNorm();
  out.param_grad = Vector::Zero(static_cast<Eigen::Index>(net.num_params()));
  // d/dG of ||R||^2 is 2 R and G enters with factor sigma^2.
  trace.accumulate_param_gradient(Matrix::Zero(1, noisy.cols()), 2.0 * s2 * residual,
                                  out.param_grad);
  return out;
}

TrainResult train_deen_samples(const Matrix& samples,
                               const std::vector<diffcore::LayerSpec>& layers,
                               const NoiseModel& noise, const TrainConfig& cfg,
                               const EpochObserver& observer) {
  noise.validate();
  cfg.validate();
  if (samples.cols() == 0) throw DataError("no training samples");
  if (!samples.allFinite()) throw DataError("non-finite training sample");

  TrainResult result{Network::initialize(layers, cfg.seed), {}, {}};
  if (static_cast<std::size_t>(samples.rows()) != result.net.input_dim()) {
    throw DimensionError("samples have dimension " + std::to_string(samples.rows()) +
                         ", network expects " + std::to_string(result.net.input_dim()));
  }

  // Network init consumes cfg.seed directly; shuffling and noise use a
  // separate stream.
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Adam adam(result.net.num_params(), cfg);
  Vector params = result.net.params();

  const auto n = static_cast<std::size_t>(samples.cols());
  const auto dim = samples.rows();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const int interval = cfg.snapshot_interval();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    adam.rate = cfg.learning_rate_at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, n - start);
      Matrix clean(dim, static_cast<Eigen::Index>(count));
      for (std::size_t j = 0; j < count; ++j) {
        clean.col(static_cast<Eigen::Index>(j)) = samples.col(order[start + j]);
      }
      Matrix noisy = clean;
      for (Eigen::Index j = 0; j < noisy.cols(); ++j) {
        for (Eigen::Index i = 0; i < dim; ++i) noisy(i, j) += noise.sigma * gauss(rng);
      }
      diffcore::LossGradient g;
      try {
        g = deen_loss_gradient(result.net, clean, noisy, noise);
      } catch (const NumericError& e) {
        throw NumericError("denoising training diverged at epoch " + std::to_string(epoch) +
                           ": " + e.what());
      }
      epoch_loss += g.value;
      adam.step(params, g.param_grad, 1.0 / static_cast<double>(count));
      try {
        result.net.set_params(params);
      } catch (const NumericError&) {
        throw NumericError("denoising training diverged at epoch " + std::to_string(epoch));
      }
    }
    EpochStats stats{epoch, epoch_loss / static_cast<double>(n),
                     std::numeric_limits<double>::quiet_NaN(),
                     std::numeric_limits<double>::quiet_NaN()};
    if (!std::isfinite(stats.mean_loss)) {
      throw NumericError("denoising loss became non-finite at epoch " + std::to_string(epoch));
    }
    if (observer) std::tie(stats.mean_expert_energy, stats.mean_random_energy) = observer(epoch, result.net);
    result.log.push_back(stats);
    if (epoch % interval == 0) result.snapshots.push_back({epoch, result.net});
  }
  return result;
}

Matrix demo_state_actions(const envsim::DemoSet& demos) {
  Matrix out(2, static_cast<Eigen::Index>(demos.num_transitions()));
  Eigen::Index j = 0;
  for (const auto& traj : demos.trajectories) {
    for (const auto& tr : traj) {
      out(0, j) = tr.s;
      out(1, j) = tr.a;
      ++j;
    }
  }
  return out;
}

Matrix demo_inputs(const envsim::DemoSet& demos, const InputNormalizer& normalizer) {
  return normalizer.apply(demo_state_actions(demos));
}

EnergyTrainResult train_deen(const envsim::DemoSet& demos,
                             const std::vector<diffcore::LayerSpec>& layers,
                             const NoiseModel& noise, const TrainConfig& cfg,
                             const envsim::DemoSet* random) {
  if (demos.empty()) throw DataError("cannot train an energy model on an empty demo set");
  demos.validate();
  if (layers.empty() || layers.front().input_dim != 2 || layers.back().output_dim != 1) {
    throw DimensionError("energy network must map (s, a) to a scalar");
  }
  EnergyModel model{Network::zeros(layers), InputNormalizer::for_env(demos.env), noise, cfg,
                    cfg.epochs};
  EpochObserver observer;
  if (random != nullptr) {
    if (random->env != demos.env) throw DataError("random demo set is from another environment");
    const Matrix expert_in = demo_inputs(demos, model.normalizer);
    const Matrix random_in = demo_inputs(*random, model.normalizer);
    observer = [expert_in, random_in](int, const Network& net) {
      return std::make_pair(diffcore::forward_batch(net, expert_in).mean(),
                            diffcore::forward_batch(net, random_in).mean());
    };
  }
  TrainResult trained =
      train_deen_samples(demo_inputs(demos, model.normalizer), layers, noise, cfg, observer);
  model.net = std::move(trained.net);
  return {std::move(model), std::move(trained.snapshots), std::move(trained.log)};
}

double energy(const EnergyModel& model, double s, double a) { return model.energy(s, a); }

Vector score(const Network& net, const Vector& y) { return -diffcore::input_gradient(net, y); }

EnergyGapReport energy_gap(const EnergyModel& model, const envsim::DemoSet& expert,
                           const envsim::DemoSet& random) {
  if (expert.empty() || random.empty()) throw DataError("energy gap needs two nonempty demo sets");
  if (expert.env != random.env) throw DataError("demo sets come from different environments");
  EnergyGapReport report;
  report.mean_expert_energy = mean_energy(model, expert);
  report.mean_random_energy = mean_energy(model, random);
  return report;
}

nlohmann::json to_json(const EnergyModel& model) {
  const TrainConfig& c = model.train_config;
  return {{"format", "ebil-energy"},
          {"version", 1},
          {"network", diffcore::to_json(model.net)},
          {"normalizer", {{"lo", model.normalizer.lo}, {"hi", model.normalizer.hi}}},
          {"noise", {{"sigma", model.noise.sigma}}},
          {"train_config",
           {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"final_lr_fraction", c.final_lr_fraction},
            {"seed", c.seed},
            {"checkpoint_every", c.checkpoint_every},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"adam_epsilon", c.adam_epsilon}}},
          {"epoch", model.epoch}};
}

EnergyModel energy_model_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "ebil-energy") {
      throw DataError("not an energy checkpoint");
    }
    if (doc.at("version").get<int>() != 1) throw DataError("unsupported energy checkpoint version");
    EnergyModel m{diffcore::network_from_json(doc.at("network")), {}, {}, {}, 0};
    m.normalizer.lo = doc.at("normalizer").at("lo").get<std::vector<double>>();
    m.normalizer.hi = doc.at("normalizer").at("hi").get<std::vector<double>>();
    if (m.normalizer.dim() != m.net.input_dim() || m.normalizer.hi.size() != m.normalizer.dim()) {
      throw DataError("normalizer does not match the network input");
    }
    m.noise.sigma = doc.at("noise").at("sigma").get<double>();
    const auto& c = doc.at("train_config");
    m.train_config.epochs = c.at("epochs").get<int>();
    m.train_config.batch_size = c.at("batch_size").get<std::size_t>();
    m.train_config.learning_rate = c.at("learning_rate").get<double>();
    m.train_config.final_lr_fraction = c.value("final_lr_fraction", 1.0);
    m.train_config.seed = c.at("seed").get<std::uint64_t>();
    m.train_config.checkpoint_every = c.at("checkpoint_every").get<int>();
    m.train_config.adam_beta1 = c.at("adam_beta1").get<double>();
    m.train_config.adam_beta2 = c.at("adam_beta2").get<double>();
    m.train_config.adam_epsilon = c.at("adam_epsilon").get<double>();
    m.epoch = doc.at("epoch").get<int>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed energy checkpoint: ") + e.what());
  }
}

}  // namespace ebil::energymodel
