#include "ebil/tabular.hpp"

#include <cmath>
#include <string>

#include "ebil/error.hpp"

namespace ebil {

std::size_t Axis::bin_of(double x) const {
  if (x <= lo) return 0;
  if (x >= hi) return bins - 1;
  const auto i = static_cast<std::size_t>(std::floor((x - lo) / width()));
  return i >= bins ? bins - 1 : i;
}

void GridSpec::validate() const {
  for (const Axis* axis : {&state, &action}) {
    if (axis->bins < 2) throw ConfigError("grid axes need at least 2 bins");
    if (!(axis->hi > axis->lo) || !(axis->width() > 0.0)) {
      throw ConfigError("grid axis has zero-width bins");
    }
  }
}

namespace {

nlohmann::json axis_json(const Axis& axis) {
  return {{"bins", axis.bins}, {"lo", axis.lo}, {"hi", axis.hi}};
}

Axis axis_from_json(const nlohmann::json& doc) {
  return {doc.at("bins").get<std::size_t>(), doc.at("lo").get<double>(),
          doc.at("hi").get<double>()};
}

}  // namespace

nlohmann::json to_json(const GridSpec& grid) {
  return {{"state", axis_json(grid.state)}, {"action", axis_json(grid.action)}};
}

GridSpec grid_from_json(const nlohmann::json& doc) {
  try {
    GridSpec grid{axis_from_json(doc.at("state")), axis_from_json(doc.at("action"))};
    grid.validate();
    return grid;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed grid: ") + e.what());
  }
}

TabularPolicy::TabularPolicy(Eigen::MatrixXd probs) : probs_(std::move(probs)) {
  if (probs_.rows() == 0 || probs_.cols() == 0) throw DimensionError("empty tabular policy");
  for (Eigen::Index s = 0; s < probs_.rows(); ++s) {
    if ((probs_.row(s).array() < 0.0).any() || !probs_.row(s).allFinite()) {
      throw NumericError("policy row " + std::to_string(s) + " has invalid probabilities");
    }
    if (std::abs(probs_.row(s).sum() - 1.0) > 1e-9) {
      throw NumericError("policy row " + std::to_string(s) + " does not sum to 1");
    }
  }
}

TabularPolicy TabularPolicy::uniform(std::size_t n_states, std::size_t n_actions) {
  return TabularPolicy(Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n_states),
                                                 static_cast<Eigen::Index>(n_actions),
                                                 1.0 / static_cast<double>(n_actions)));
}

TabularMdp::TabularMdp(std::size_t n_states, std::size_t n_actions, std::vector<double> kernel,
                       Eigen::MatrixXd reward, double gamma, Eigen::VectorXd initial)
    : n_states_(n_states),
      n_actions_(n_actions),
      kernel_(std::move(kernel)),
      reward_(std::move(reward)),
      gamma_(gamma),
      initial_(std::move(initial)) {
  validate();
  successors_.resize(n_states_ * n_actions_);
  for (std::size_t sa = 0; sa < n_states_ * n_actions_; ++sa) {
    for (std::size_t next = 0; next < n_states_; ++next) {
      const double p = kernel_[sa * n_states_ + next];
      if (p > 0.0) successors_[sa].emplace_back(next, p);
    }
  }
}

void TabularMdp::validate() const {
  if (n_states_ == 0 || n_actions_ == 0) throw DimensionError("MDP needs states and actions");
  if (kernel_.size() != n_states_ * n_actions_ * n_states_) {
    throw DimensionError("transition kernel has the wrong size");
  }
  if (static_cast<std::size_t>(reward_.rows()) != n_states_ ||
      static_cast<std::size_t>(reward_.cols()) != n_actions_) {
    throw DimensionError("reward table does not match the MDP");
  }
  if (static_cast<std::size_t>(initial_.size()) != n_states_) {
    throw DimensionError("initial distribution does not match the MDP");
  }
  if (!(gamma_ >= 0.0 && gamma_ < 1.0)) throw ConfigError("discount must lie in [0, 1)");
  if (!reward_.allFinite()) throw NumericError("non-finite reward table");
  for (std::size_t sa = 0; sa < n_states_ * n_actions_; ++sa) {
    double total = 0.0;
    for (std::size_t next = 0; next < n_states_; ++next) {
      const double p = kernel_[sa * n_states_ + next];
      if (!(p >= 0.0)) throw DataError("negative transition probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw DataError("transition row " + std::to_string(sa) + " sums to " +
                      std::to_string(total));
    }
  }
  if ((initial_.array() < 0.0).any() || std::abs(initial_.sum() - 1.0) > 1e-12) {
    throw DataError("initial distribution is not a probability vector");
  }
}

TabularMdp TabularMdp::with_reward(Eigen::MatrixXd reward) const {
  TabularMdp copy = *this;
  copy.reward_ = std::move(reward);
  copy.validate();
  return copy;
}

TabularMdp TabularMdp::with_gamma(double gamma) const {
  TabularMdp copy = *this;
  copy.gamma_ = gamma;
  copy.validate();
  return copy;
}

}  // namespace ebil
