#pragma once

// Discretized state-action spaces and the tabular objects defined on them.

#include <cstddef>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace ebil {

/// Uniform binning of a closed interval.
struct Axis {
  std::size_t bins = 2;
  double lo = 0.0;
  double hi = 1.0;

  double width() const { return (hi - lo) / static_cast<double>(bins); }
  double center(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * width(); }
  /// Bin containing x; values at or beyond the bounds land in the edge bins.
  std::size_t bin_of(double x) const;

  bool operator==(const Axis&) const = default;
};

struct GridSpec {
  Axis state{110, -0.5, 10.5};
  Axis action{40, -1.0, 1.0};

  std::size_t n_states() const { return state.bins; }
  std::size_t n_actions() const { return action.bins; }
  /// Throws ConfigError on fewer than 2 bins or zero-width bins.
  void validate() const;

  bool operator==(const GridSpec&) const = default;
};

nlohmann::json to_json(const GridSpec& grid);
GridSpec grid_from_json(const nlohmann::json& doc);

/// Row-stochastic matrix pi(a|s), one row per state bin.
class TabularPolicy {
 public:
  explicit TabularPolicy(Eigen::MatrixXd probs);

  static TabularPolicy uniform(std::size_t n_states, std::size_t n_actions);

  const Eigen::MatrixXd& probs() const { return probs_; }
  std::size_t n_states() const { return static_cast<std::size_t>(probs_.rows()); }
  std::size_t n_actions() const { return static_cast<std::size_t>(probs_.cols()); }
  double operator()(std::size_t s, std::size_t a) const {
    return probs_(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
  }

 private:
  Eigen::MatrixXd probs_;
};

/// Finite MDP with a dense transition kernel P(s'|s,a).
class TabularMdp {
 public:
  TabularMdp(std::size_t n_states, std::size_t n_actions, std::vector<double> kernel,
             Eigen::MatrixXd reward, double gamma, Eigen::VectorXd initial);

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  double gamma() const { return gamma_; }
  const Eigen::MatrixXd& reward() const { return reward_; }
  const Eigen::VectorXd& initial() const { return initial_; }
  double transition(std::size_t s, std::size_t a, std::size_t next) const {
    return kernel_[(s * n_actions_ + a) * n_states_ + next];
  }

  /// Successor states with nonzero probability, as (state, probability).
  const std::vector<std::pair<std::size_t, double>>& successors(std::size_t s,
                                                                std::size_t a) const {
    return successors_[s * n_actions_ + a];
  }

  TabularMdp with_reward(Eigen::MatrixXd reward) const;
  TabularMdp with_gamma(double gamma) const;

 private:
  void validate() const;

  std::size_t n_states_;
  std::size_t n_actions_;
  std::vector<double> kernel_;
  Eigen::MatrixXd reward_;
  double gamma_;
  Eigen::VectorXd initial_;
  std::vector<std::vector<std::pair<std::size_t, double>>> successors_;
};

}  // namespace ebil
