#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "ebil/energymodel.hpp"
#include "ebil/error.hpp"
#include "oracles.hpp"

using namespace ebil;
using namespace ebil::energymodel;
using diffcore::Activation;
using diffcore::VectorPair;

namespace {

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

envsim::DemoSet expert_demos(std::size_t n, std::uint64_t seed) {
  return envsim::generate_demos(envsim::EnvSpec{}, envsim::ExpertPolicySpec{}, n, seed);
}

envsim::DemoSet uniform_demos(std::size_t n, std::uint64_t seed) {
  return envsim::generate_demos(envsim::EnvSpec{}, envsim::UniformPolicy{}, n, seed);
}

TrainConfig quick_config(int epochs, std::uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.learning_rate = 1e-3;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("corruption with sigma 0 is the identity") {
  Rng rng(1);
  const Vector x = vec2(0.3, -0.7);
  CHECK(corrupt(x, NoiseModel{0.0}, rng) == x);
}

TEST_CASE("corruption is reproducible for a fixed generator state") {
  Rng a(42), b(42);
  const Vector x = vec2(0.1, 0.2);
  CHECK(corrupt(x, NoiseModel{0.1}, a) == corrupt(x, NoiseModel{0.1}, b));
}

TEST_CASE("corruption noise has the requested per-coordinate spread") {
  Rng rng(7);
  const int n = 40000;
  const double sigma = 0.1;
  const Vector x = vec2(0.5, -0.25);
  Vector sum = Vector::Zero(2), sq = Vector::Zero(2);
  for (int i = 0; i < n; ++i) {
    const Vector d = corrupt(x, NoiseModel{sigma}, rng) - x;
    sum += d;
    sq += d.cwiseProduct(d);
  }
  for (Eigen::Index k = 0; k < 2; ++k) {
    const double mean = sum(k) / n;
    const double sd = std::sqrt(sq(k) / n - mean * mean);
    CHECK(std::abs(mean) < 4 * sigma / std::sqrt(double(n)));
    CHECK(std::abs(sd - sigma) / sigma < 0.02);
  }
}

TEST_CASE("corruption rejects negative sigma and non-finite samples") {
  Rng rng(1);
  CHECK_THROWS_AS(corrupt(vec2(0, 0), NoiseModel{-0.1}, rng), ConfigError);
  CHECK_THROWS_AS(corrupt(vec2(0, std::numeric_limits<double>::infinity()), NoiseModel{0.1}, rng),
                  NumericError);
}

TEST_CASE("denoising loss of the zero network is the plain reconstruction error") {
  const Network net = Network::zeros(diffcore::mlp_layers(2, {4}, 1, Activation::Tanh));
  const std::vector<VectorPair> pairs = {{vec2(0, 0), vec2(0.1, -0.2)}, {vec2(1, 1), vec2(0.5, 1)}};
  CHECK(deen_loss(net, pairs, NoiseModel{0.1}) == doctest::Approx(0.05 + 0.25).epsilon(1e-15));
}

TEST_CASE("denoising loss is invariant under reordering of the pairs") {
  std::mt19937_64 rng(3);
  const Network net = Network::initialize(diffcore::mlp_layers(2, {8, 8}, 1, Activation::Tanh), 5);
  std::vector<VectorPair> pairs;
  for (int i = 0; i < 25; ++i) {
    pairs.emplace_back(oracle::random_vector(rng, 2), oracle::random_vector(rng, 2));
  }
  const double base = deen_loss(net, pairs, NoiseModel{0.3});
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    CHECK(deen_loss(net, pairs, NoiseModel{0.3}) == base);
  }
}

TEST_CASE("denoising loss of a linear energy expands by hand") {
  // E(y) = w . y + b has gradient w everywhere.
  Vector p(3);
  p << 2.0, -1.0, 0.5;
  const Network net({{2, 1, Activation::Identity}}, p);
  const double s2 = 0.2 * 0.2;
  const Vector x = vec2(0.3, 0.1), y = vec2(0.4, -0.2);
  const double r0 = 0.3 - 0.4 + s2 * 2.0;
  const double r1 = 0.1 + 0.2 - s2 * 1.0;
  CHECK(deen_loss(net, {{x, y}}, NoiseModel{0.2}) == doctest::Approx(r0 * r0 + r1 * r1).epsilon(1e-14));
}

TEST_CASE("batched denoising gradient matches central differences of the summed loss") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 15; ++trial) {
    const Network net = oracle::random_network(rng, 2);
    Matrix clean(2, 4), noisy(2, 4);
    std::vector<VectorPair> pairs;
    for (int j = 0; j < 4; ++j) {
      clean.col(j) = oracle::random_vector(rng, 2);
      noisy.col(j) = oracle::random_vector(rng, 2);
      pairs.emplace_back(clean.col(j), noisy.col(j));
    }
    const NoiseModel noise{0.5};
    const auto lg = deen_loss_gradient(net, clean, noisy, noise);
    CHECK(lg.value == doctest::Approx(deen_loss(net, pairs, noise)).epsilon(1e-12));
    const Vector fd = oracle::central_diff(
        [&](const Vector& q) { return deen_loss(oracle::with_params(net, q), pairs, noise); },
        net.params());
    for (Eigen::Index i = 0; i < fd.size(); ++i) CHECK(oracle::fd_agrees(lg.param_grad(i), fd(i)));
  }
}

TEST_CASE("score is the negative input gradient") {
  Vector p(3);
  p << 0.7, -0.4, 0.1;
  const Network linear({{2, 1, Activation::Identity}}, p);
  const Vector s = score(linear, vec2(3.0, -8.0));
  CHECK(s(0) == -0.7);
  CHECK(s(1) == 0.4);
  const Network net = Network::initialize(diffcore::mlp_layers(2, {5}, 1, Activation::Tanh), 9);
  const Vector y = vec2(0.2, 0.9);
  CHECK(score(net, y) == -diffcore::input_gradient(net, y));
}

TEST_CASE("zero epochs returns the seeded initialization") {
  const auto layers = diffcore::mlp_layers(2, {6, 6}, 1, Activation::Tanh);
  const auto demos = expert_demos(2, 11);
  const auto res = train_deen(demos, layers, NoiseModel{}, quick_config(0, 99));
  CHECK(res.model.net == Network::initialize(layers, 99));
  CHECK(res.log.empty());
  CHECK(res.snapshots.empty());
}

TEST_CASE("training is reproducible and seed-sensitive") {
  const auto layers = diffcore::mlp_layers(2, {8, 8}, 1, Activation::Tanh);
  const auto demos = expert_demos(3, 5);
  const auto a = train_deen(demos, layers, NoiseModel{}, quick_config(5, 1));
  const auto b = train_deen(demos, layers, NoiseModel{}, quick_config(5, 1));
  const auto c = train_deen(demos, layers, NoiseModel{}, quick_config(5, 2));
  CHECK(a.model.net == b.model.net);
  CHECK_FALSE(a.model.net == c.model.net);
  REQUIRE(a.log.size() == 5);
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].mean_loss == b.log[i].mean_loss);
}

TEST_CASE("snapshots follow the checkpoint interval") {
  const auto layers = diffcore::mlp_layers(2, {3}, 1, Activation::Tanh);
  const auto demos = expert_demos(1, 2);
  auto cfg = quick_config(30);
  auto res = train_deen(demos, layers, NoiseModel{}, cfg);
  REQUIRE(res.snapshots.size() == 10);
  CHECK(res.snapshots.front().epoch == 3);
  CHECK(res.snapshots.back().epoch == 30);
  CHECK(res.snapshots.back().net == res.model.net);
  cfg.checkpoint_every = 7;
  res = train_deen(demos, layers, NoiseModel{}, cfg);
  REQUIRE(res.snapshots.size() == 4);
  CHECK(res.snapshots[3].epoch == 28);
  CHECK(res.model_at(res.snapshots[0]).epoch == 7);
}

TEST_CASE("cosine schedule interpolates from the base rate to the final fraction") {
  TrainConfig cfg;
  cfg.epochs = 101;
  cfg.learning_rate = 2e-3;
  CHECK(cfg.learning_rate_at(1) == 2e-3);
  CHECK(cfg.learning_rate_at(101) == 2e-3);
  cfg.final_lr_fraction = 0.1;
  CHECK(cfg.learning_rate_at(1) == doctest::Approx(2e-3).epsilon(1e-15));
  CHECK(cfg.learning_rate_at(51) == doctest::Approx(2e-3 * 0.55).epsilon(1e-12));
  CHECK(cfg.learning_rate_at(101) == doctest::Approx(2e-4).epsilon(1e-12));
  const double quarter = 2e-3 * (0.1 + 0.9 * 0.5 * (1 + std::cos(std::numbers::pi / 4)));
  CHECK(cfg.learning_rate_at(26) == doctest::Approx(quarter).epsilon(1e-12));
}

TEST_CASE("training configuration is validated") {
  TrainConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.final_lr_fraction = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.epochs = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("training rejects empty or malformed input") {
  const auto layers = diffcore::mlp_layers(2, {3}, 1, Activation::Tanh);
  envsim::DemoSet empty;
  CHECK_THROWS_AS(train_deen(empty, layers, NoiseModel{}, quick_config(1)), DataError);
  CHECK_THROWS_AS(train_deen(expert_demos(1, 1), diffcore::mlp_layers(3, {3}, 1, Activation::Tanh),
                             NoiseModel{}, quick_config(1)),
                  DimensionError);
  Matrix bad = Matrix::Zero(1, 3);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train_deen_samples(bad, diffcore::mlp_layers(1, {3}, 1, Activation::Tanh),
                                     NoiseModel{}, quick_config(1)),
                  DataError);
}

TEST_CASE("training lowers the denoising loss on a Gaussian sample") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 0.5);
  Matrix samples(1, 500);
  for (Eigen::Index j = 0; j < samples.cols(); ++j) samples(0, j) = g(rng);
  const auto res = train_deen_samples(samples, diffcore::mlp_layers(1, {16}, 1, Activation::Identity),
                                      NoiseModel{0.3}, quick_config(40));
  CHECK(res.log.back().mean_loss < res.log.front().mean_loss);
  // Score of N(0, 0.25 + 0.09) has the sign of -y.
  Vector y(1);
  y(0) = 0.5;
  CHECK(score(res.net, y)(0) < 0.0);
  y(0) = -0.5;
  CHECK(score(res.net, y)(0) > 0.0);
}

TEST_CASE("energy gap is zero for the zero network and for identical sets") {
  const auto layers = diffcore::mlp_layers(2, {4}, 1, Activation::Tanh);
  const auto expert = expert_demos(3, 1);
  const auto random = uniform_demos(3, 2);
  EnergyModel zero{Network::zeros(layers), InputNormalizer::for_env(expert.env), {}, {}, 0};
  const auto rep = energy_gap(zero, expert, random);
  CHECK(rep.mean_expert_energy == 0.0);
  CHECK(rep.gap() == 0.0);
  EnergyModel m = zero;
  m.net = Network::initialize(layers, 3);
  CHECK(energy_gap(m, expert, expert).gap() == 0.0);
  CHECK_THROWS_AS(energy_gap(m, expert, envsim::DemoSet{}), DataError);
}

TEST_CASE("tanh-output energies stay in [-1, 1] over the environment") {
  const auto res = train_deen(expert_demos(4, 8), diffcore::mlp_layers(2, {12, 12}, 1, Activation::Tanh),
                              NoiseModel{}, quick_config(3));
  for (double s = -0.5; s <= 10.5; s += 0.25) {
    for (double a = -1.0; a <= 1.0; a += 0.1) {
      const double e = res.model.energy(s, a);
      CHECK(e >= -1.0);
      CHECK(e <= 1.0);
    }
  }
}

TEST_CASE("normalizer maps the environment box onto [-1, 1]") {
  const auto norm = InputNormalizer::for_env(envsim::EnvSpec{});
  const Vector lo = norm.apply(vec2(-0.5, -1.0)), hi = norm.apply(vec2(10.5, 1.0));
  CHECK(lo(0) == -1.0);
  CHECK(lo(1) == -1.0);
  CHECK(hi(0) == 1.0);
  CHECK(hi(1) == 1.0);
  CHECK(norm.apply(vec2(5.0, 0.0))(0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_THROWS_AS(norm.apply(Vector(Vector::Zero(3))), DimensionError);
}

TEST_CASE("energy checkpoints round trip exactly") {
  auto cfg = quick_config(2, 31);
  cfg.final_lr_fraction = 0.25;
  const auto res = train_deen(expert_demos(2, 3), diffcore::mlp_layers(2, {5}, 1, Activation::Tanh),
                              NoiseModel{0.2}, cfg);
  const EnergyModel back = energy_model_from_json(nlohmann::json::parse(to_json(res.model).dump()));
  CHECK(back.net == res.model.net);
  CHECK(back.normalizer == res.model.normalizer);
  CHECK(back.noise.sigma == 0.2);
  CHECK(back.epoch == 2);
  CHECK(back.train_config.seed == 31);
  CHECK(back.train_config.final_lr_fraction == 0.25);
  CHECK(back.energy(4.0, 0.3) == res.model.energy(4.0, 0.3));
  auto doc = to_json(res.model);
  doc["format"] = "nope";
  CHECK_THROWS_AS(energy_model_from_json(doc), DataError);
  CHECK_THROWS_AS(energy_model_from_json(nlohmann::json::object()), DataError);
}
