#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ebil/error.hpp"
#include "ebil/learner.hpp"

namespace ebil::learner {

namespace {

using Eigen::Index;

// log(1 - tanh(u)^2), stable for large |u|.
double log_sech2(double u) {
  const double x = std::abs(u);
  return 2.0 * (std::numbers::ln2 - x - std::log1p(std::exp(-2.0 * x)));
}

}  // namespace

double GaussianPolicy::normalize_state(double s) const {
  return 2.0 * (s - state_lo) / (state_hi - state_lo) - 1.0;
}

double GaussianPolicy::squash(double u) const {
  const double a = 0.5 * (action_lo + action_hi) + 0.5 * (action_hi - action_lo) * std::tanh(u);
  return std::clamp(a, action_lo, action_hi);
}

Eigen::RowVectorXd GaussianPolicy::means(const Eigen::RowVectorXd& states) const {
  diffcore::Matrix in(1, states.size());
  for (Index i = 0; i < states.size(); ++i) in(0, i) = normalize_state(states(i));
  return diffcore::forward_batch(mean_net, in);
}

double GaussianPolicy::center_action(double s) const {
  diffcore::Vector in(1);
  in(0) = normalize_state(s);
  return squash(diffcore::forward(mean_net, in));
}

double GaussianPolicy::sample(double s, Rng& rng) const {
  diffcore::Vector in(1);
  in(0) = normalize_state(s);
  const double mu = diffcore::forward(mean_net, in);
  return squash(mu + std::exp(log_std) * std::normal_distribution<double>()(rng));
}

double GaussianPolicy::log_prob(double mu, double u) const {
  const double z = (u - mu) * std::exp(-log_std);
  const double half = 0.5 * (action_hi - action_lo);
  return -0.5 * z * z - log_std - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(half) -
         log_sech2(u);
}

GaussianPolicy make_gaussian_policy(const envsim::EnvSpec& env,
                                    const std::vector<std::size_t>& hidden, double init_log_std,
                                    std::uint64_t seed) {
  env.validate();
  auto layers = diffcore::mlp_layers(1, hidden, 1, diffcore::Activation::Identity);
  GaussianPolicy p{diffcore::Network::initialize(std::move(layers), seed)};
  p.log_std = init_log_std;
  p.state_lo = env.state_lo;
  p.state_hi = env.state_hi;
  p.action_lo = env.action_lo;
  p.action_hi = env.action_hi;
  return p;
}

BatchReward batch_reward(std::function<double(double, double)> reward) {
  return [reward = std::move(reward)](const Eigen::RowVectorXd& s, const Eigen::RowVectorXd& a) {
    Eigen::RowVectorXd r(s.size());
    for (Index i = 0; i < s.size(); ++i) r(i) = reward(s(i), a(i));
    return r;
  };
}

BatchReward energy_batch_reward(const energymodel::EnergyModel& model, double scale,
                                double offset) {
  if (!(scale > 0.0)) throw ConfigError("reward scale must be positive");
  return [model, scale, offset](const Eigen::RowVectorXd& s, const Eigen::RowVectorXd& a) {
    diffcore::Matrix sa(2, s.size());
    sa.row(0) = s;
    sa.row(1) = a;
    return Eigen::RowVectorXd((-scale * model.energies(sa).array() + offset).matrix());
  };
}

void PgConfig::validate() const {
  if (episodes_per_update == 0) throw ConfigError("policy gradient needs episodes per update");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(entropy_weight >= 0.0)) throw ConfigError("entropy weight must be nonnegative");
  if (iterations < 0) throw ConfigError("iterations must be nonnegative");
  if (!std::isfinite(init_log_std)) throw ConfigError("initial log std must be finite");
}

PgResult policy_gradient_train(const envsim::EnvSpec& env, const BatchReward& reward,
                               const PgConfig& cfg, const PgObserver& observer) {
  cfg.validate();
  env.validate();
  PgResult result{make_gaussian_policy(env, cfg.hidden, cfg.init_log_std, cfg.seed), {}};
  GaussianPolicy& policy = result.policy;
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal;

  const auto batch = static_cast<Index>(cfg.episodes_per_update);
  const Index horizon = env.horizon;
  const Index n_net = static_cast<Index>(policy.mean_net.num_params());
  // Parameters optimized jointly: network weights then log std.
  Eigen::VectorXd theta(n_net + 1);
  theta << policy.mean_net.params(), policy.log_std;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n_net + 1);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n_net + 1);

  Eigen::MatrixXd inputs(1, batch * horizon);
  Eigen::MatrixXd mus(horizon, batch), us(horizon, batch), soft(horizon, batch);
  Eigen::RowVectorXd states(batch), actions(batch);

  for (int it = 1; it <= cfg.iterations; ++it) {
    const double sigma = std::exp(policy.log_std);
    states.setConstant(env.init_state);
    double env_return = 0.0;
    double neg_logp = 0.0;
    for (Index t = 0; t < horizon; ++t) {
      const Eigen::RowVectorXd mu = policy.means(states);
      for (Index b = 0; b < batch; ++b) {
        const double u = mu(b) + sigma * normal(rng);
        mus(t, b) = mu(b);
        us(t, b) = u;
        actions(b) = policy.squash(u);
        inputs(0, t * batch + b) = policy.normalize_state(states(b));
      }
      const Eigen::RowVectorXd r = reward(states, actions);
      for (Index b = 0; b < batch; ++b) {
        const double logp = policy.log_prob(mus(t, b), us(t, b));
        soft(t, b) = r(b) - cfg.entropy_weight * logp;
        env_return += r(b);
        neg_logp -= logp;
        states(b) = envsim::step(env, states(b), actions(b));
      }
    }

    // Reward-to-go with a per-timestep mean baseline.
    Eigen::MatrixXd adv(horizon, batch);
    Eigen::RowVectorXd to_go = Eigen::RowVectorXd::Zero(batch);
    for (Index t = horizon - 1; t >= 0; --t) {
      to_go += soft.row(t);
      adv.row(t) = to_go.array() - to_go.mean();
    }

    const double inv_n = 1.0 / static_cast<double>(batch);
    Eigen::MatrixXd mean_weights(1, batch * horizon);
    double log_std_grad = 0.0;
    for (Index t = 0; t < horizon; ++t) {
      for (Index b = 0; b < batch; ++b) {
        const double z = (us(t, b) - mus(t, b)) / sigma;
        mean_weights(0, t * batch + b) = adv(t, b) * z / sigma * inv_n;
        log_std_grad += adv(t, b) * (z * z - 1.0) * inv_n;
      }
    }
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(n_net + 1);
    diffcore::Vector net_grad = diffcore::Vector::Zero(n_net);
    diffcore::accumulate_param_gradient(policy.mean_net, inputs, mean_weights,
                                        diffcore::Matrix(), net_grad);
    grad << net_grad, log_std_grad;

    // Adam ascent.
    m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * grad;
    v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, it);
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, it);
    theta.array() +=
        cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.adam_epsilon);
    if (!theta.allFinite()) {
      throw NumericError("policy gradient diverged at iteration " + std::to_string(it));
    }
    policy.mean_net.set_params(theta.head(n_net));
    policy.log_std = theta(n_net);

    const double steps = static_cast<double>(batch * horizon);
    result.log.push_back({it, env_return * inv_n, neg_logp / steps, policy.log_std});
    if (observer) observer(it, policy);
  }
  return result;
}

}  // namespace ebil::learner
