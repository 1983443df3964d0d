#include "ebil/reward.hpp"

#include <cmath>

#include "ebil/error.hpp"

namespace ebil::reward {

SurrogateReward SurrogateReward::preset(const std::string& name) {
  if (name == "one_d") return one_d();
  if (name == "normalized") return normalized();
  throw ConfigError("unknown reward preset '" + name + "' (expected one_d or normalized)");
}

void SurrogateReward::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw ConfigError("reward scale must be positive and finite");
  }
  if (!std::isfinite(offset)) throw ConfigError("reward offset must be finite");
}

RewardFn make_reward(const energymodel::EnergyModel& model, const SurrogateReward& h) {
  h.validate();
  return [model, h](double s, double a) { return h(-model.energy(s, a)); };
}

Eigen::MatrixXd energy_table(const energymodel::EnergyModel& model, const GridSpec& grid) {
  grid.validate();
  const auto ns = static_cast<Eigen::Index>(grid.n_states());
  const auto na = static_cast<Eigen::Index>(grid.n_actions());
  diffcore::Matrix points(2, ns * na);
  for (Eigen::Index s = 0; s < ns; ++s) {
    for (Eigen::Index a = 0; a < na; ++a) {
      points(0, s * na + a) = grid.state.center(static_cast<std::size_t>(s));
      points(1, s * na + a) = grid.action.center(static_cast<std::size_t>(a));
    }
  }
  const diffcore::RowVector e = model.energies(points);
  Eigen::MatrixXd table(ns, na);
  for (Eigen::Index s = 0; s < ns; ++s) table.row(s) = e.segment(s * na, na);
  return table;
}

Eigen::MatrixXd reward_table(const energymodel::EnergyModel& model, const SurrogateReward& h,
                             const GridSpec& grid) {
  h.validate();
  return ((-h.scale) * energy_table(model, grid).array() + h.offset).matrix();
}

TabularMdp fill_reward_table(const energymodel::EnergyModel& model, const SurrogateReward& h,
                             const TabularMdp& mdp, const GridSpec& grid) {
  if (mdp.n_states() != grid.n_states() || mdp.n_actions() != grid.n_actions()) {
    throw DimensionError("grid " + std::to_string(grid.n_states()) + "x" +
                         std::to_string(grid.n_actions()) + " does not match MDP " +
                         std::to_string(mdp.n_states()) + "x" + std::to_string(mdp.n_actions()));
  }
  return mdp.with_reward(reward_table(model, h, grid));
}

namespace {

template <typename Better>
Eigen::VectorXi best_per_row(const Eigen::MatrixXd& table, Better better) {
  Eigen::VectorXi out(table.rows());
  for (Eigen::Index s = 0; s < table.rows(); ++s) {
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < table.cols(); ++a) {
      if (better(table(s, a), table(s, best))) best = a;
    }
    out(s) = static_cast<int>(best);
  }
  return out;
}

}  // namespace

Eigen::VectorXi argmax_actions(const Eigen::MatrixXd& table) {
  return best_per_row(table, [](double x, double y) { return x > y; });
}

Eigen::VectorXi argmin_actions(const Eigen::MatrixXd& table) {
  return best_per_row(table, [](double x, double y) { return x < y; });
}

}  // namespace ebil::reward
