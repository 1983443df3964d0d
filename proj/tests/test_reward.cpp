#include <doctest.h>

#include <random>

#include "ebil/envsim.hpp"
#include "ebil/error.hpp"
#include "ebil/reward.hpp"

using namespace ebil;
using namespace ebil::reward;
using energymodel::EnergyModel;
using energymodel::InputNormalizer;

namespace {

EnergyModel model_with(const diffcore::Network& net) {
  return EnergyModel{net, InputNormalizer::for_env(envsim::EnvSpec{}), {}, {}, 0};
}

EnergyModel random_model(std::uint64_t seed) {
  return model_with(diffcore::Network::initialize(
      diffcore::mlp_layers(2, {10, 10}, 1, diffcore::Activation::Tanh), seed));
}

}  // namespace

TEST_CASE("reward presets") {
  CHECK(SurrogateReward::preset("one_d") == SurrogateReward{1.0, 1.0});
  CHECK(SurrogateReward::preset("normalized") == SurrogateReward{0.5, 0.5});
  CHECK_THROWS_AS(SurrogateReward::preset("mujoco"), ConfigError);
  CHECK(SurrogateReward::one_d()(-1.0) == 0.0);
  CHECK(SurrogateReward::one_d()(1.0) == 2.0);
  CHECK(SurrogateReward::normalized()(1.0) == 1.0);
  CHECK_THROWS_AS((SurrogateReward{0.0, 1.0}.validate()), ConfigError);
  CHECK_THROWS_AS((SurrogateReward{-2.0, 1.0}.validate()), ConfigError);
}

TEST_CASE("zero energy gives the constant reward offset") {
  const auto model = model_with(diffcore::Network::zeros(
      diffcore::mlp_layers(2, {4}, 1, diffcore::Activation::Tanh)));
  const RewardFn r = make_reward(model, SurrogateReward::one_d());
  CHECK(r(0.0, 0.25) == 1.0);
  CHECK(r(9.0, -0.9) == 1.0);
  const Eigen::MatrixXd table = reward_table(model, SurrogateReward::one_d(), GridSpec{});
  CHECK(table.rows() == 110);
  CHECK(table.cols() == 40);
  CHECK((table.array() == 1.0).all());
}

TEST_CASE("reward table entries match pointwise evaluation") {
  const auto model = random_model(3);
  const GridSpec grid{{7, -0.5, 10.5}, {5, -1.0, 1.0}};
  const SurrogateReward h{2.0, -0.5};
  const Eigen::MatrixXd table = reward_table(model, h, grid);
  const Eigen::MatrixXd energies = energy_table(model, grid);
  const RewardFn r = make_reward(model, h);
  for (std::size_t s = 0; s < grid.n_states(); ++s) {
    for (std::size_t a = 0; a < grid.n_actions(); ++a) {
      const auto i = static_cast<Eigen::Index>(s), j = static_cast<Eigen::Index>(a);
      const double e = model.energy(grid.state.center(s), grid.action.center(a));
      CHECK(energies(i, j) == doctest::Approx(e).epsilon(1e-14));
      CHECK(table(i, j) == doctest::Approx(r(grid.state.center(s), grid.action.center(a))).epsilon(1e-14));
      CHECK(table(i, j) == doctest::Approx(-2.0 * e - 0.5).epsilon(1e-14));
    }
  }
}

TEST_CASE("positive affine rescaling keeps every per-state argmax") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> scale(0.01, 50.0), offset(-10.0, 10.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto model = random_model(seed);
    const Eigen::VectorXi base = argmax_actions(reward_table(model, SurrogateReward::one_d(), GridSpec{}));
    CHECK(base == argmin_actions(energy_table(model, GridSpec{})));
    for (int k = 0; k < 5; ++k) {
      const SurrogateReward h{scale(rng), offset(rng)};
      CHECK(argmax_actions(reward_table(model, h, GridSpec{})) == base);
    }
  }
}

TEST_CASE("reward decreases as energy increases") {
  const auto model = random_model(21);
  const RewardFn r = make_reward(model, SurrogateReward{3.0, 0.2});
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> s(-0.5, 10.5), a(-1.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const double s1 = s(rng), a1 = a(rng), s2 = s(rng), a2 = a(rng);
    const double e1 = model.energy(s1, a1), e2 = model.energy(s2, a2);
    if (e1 < e2) CHECK(r(s1, a1) > r(s2, a2));
    if (e1 > e2) CHECK(r(s1, a1) < r(s2, a2));
  }
}

TEST_CASE("argmax and argmin break ties toward the lowest index") {
  Eigen::MatrixXd t(2, 3);
  t << 1, 3, 3,
       2, 2, 2;
  CHECK(argmax_actions(t)(0) == 1);
  CHECK(argmax_actions(t)(1) == 0);
  CHECK(argmin_actions(t)(0) == 0);
}

TEST_CASE("filling an MDP with a mismatched grid is rejected") {
  const envsim::EnvSpec env;
  const GridSpec grid{{11, -0.5, 10.5}, {4, -1.0, 1.0}};
  const TabularMdp mdp = envsim::discretize(env, grid);
  const auto model = random_model(1);
  const TabularMdp filled = fill_reward_table(model, SurrogateReward::one_d(), mdp, grid);
  CHECK(filled.reward() == reward_table(model, SurrogateReward::one_d(), grid));
  CHECK(filled.transition(3, 2, 3) == mdp.transition(3, 2, 3));
  CHECK_THROWS_AS(fill_reward_table(model, SurrogateReward::one_d(), mdp, GridSpec{}), DimensionError);
}
