#pragma once

// Fixed surrogate reward r(s, a) = h(-E(s, a)) for an increasing affine h.

#include <filesystem>
#include <functional>
#include <string>

#include <Eigen/Dense>

#include "ebil/energymodel.hpp"
#include "ebil/tabular.hpp"

namespace ebil::reward {

/// h(x) = scale * x + offset.
struct SurrogateReward {
  double scale = 1.0;
  double offset = 1.0;

  /// Rewards in [0, 2] for a tanh energy.
  static SurrogateReward one_d() { return {1.0, 1.0}; }
  /// Rewards in [0, 1] for a tanh energy.
  static SurrogateReward normalized() { return {0.5, 0.5}; }
  static SurrogateReward preset(const std::string& name);

  void validate() const;
  double operator()(double x) const { return scale * x + offset; }

  bool operator==(const SurrogateReward&) const = default;
};

using RewardFn = std::function<double(double s, double a)>;

RewardFn make_reward(const energymodel::EnergyModel& model, const SurrogateReward& h);

/// Surrogate reward at every (state center, action center), states as rows.
Eigen::MatrixXd reward_table(const energymodel::EnergyModel& model, const SurrogateReward& h,
                             const GridSpec& grid);

/// Energy at every (state center, action center), states as rows.
Eigen::MatrixXd energy_table(const energymodel::EnergyModel& model, const GridSpec& grid);

TabularMdp fill_reward_table(const energymodel::EnergyModel& model, const SurrogateReward& h,
                             const TabularMdp& mdp, const GridSpec& grid);

/// Best action bin per state row; ties go to the lowest index.
Eigen::VectorXi argmax_actions(const Eigen::MatrixXd& table);
Eigen::VectorXi argmin_actions(const Eigen::MatrixXd& table);

}  // namespace ebil::reward
