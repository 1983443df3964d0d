#pragma once

// Seeded random tabular objects shared by the eval tests and the acceptance
// suite.

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "ebil/envsim.hpp"
#include "ebil/eval.hpp"
#include "ebil/tabular.hpp"

namespace fixture {

/// Rows drawn from a flat Dirichlet distribution.
inline Eigen::MatrixXd dirichlet_rows(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::gamma_distribution<double> g(1.0, 1.0);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r) /= m.row(r).sum();
  return m;
}

/// Dense random kernel, zero reward, uniform start.
inline ebil::TabularMdp random_mdp(std::uint64_t seed, std::size_t ns, std::size_t na,
                                   double gamma = 0.99) {
  std::mt19937_64 rng(seed);
  const Eigen::MatrixXd k = dirichlet_rows(rng, ns * na, ns);
  std::vector<double> kernel(ns * na * ns);
  for (std::size_t sa = 0; sa < ns * na; ++sa) {
    for (std::size_t n = 0; n < ns; ++n) {
      kernel[sa * ns + n] = k(static_cast<Eigen::Index>(sa), static_cast<Eigen::Index>(n));
    }
  }
  return ebil::TabularMdp(ns, na, std::move(kernel),
                          Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ns),
                                                static_cast<Eigen::Index>(na)),
                          gamma,
                          Eigen::VectorXd::Constant(static_cast<Eigen::Index>(ns), 1.0 / double(ns)));
}

struct RoundTrip {
  std::size_t visited_rows = 0;
  double worst_tv = 0.0;
};

/// Rolls out a random policy on a random MDP, rebuilds the policy from the
/// discounted occupancy and compares every visited row with the original.
inline RoundTrip occupancy_round_trip(std::uint64_t seed, std::size_t ns, std::size_t na,
                                      std::size_t n_traj, int horizon, double gamma) {
  const ebil::TabularMdp mdp = random_mdp(seed, ns, na);
  std::mt19937_64 rng(seed + 1);
  const ebil::TabularPolicy pi(dirichlet_rows(rng, ns, na));
  const auto demos = ebil::envsim::sample_tabular(mdp, pi, n_traj, horizon, seed + 2);
  const auto hist = ebil::eval::occupancy_histogram(demos, ebil::envsim::tabular_grid(mdp), gamma);
  const ebil::TabularPolicy back = ebil::eval::occupancy_to_policy(hist);
  RoundTrip out;
  for (Eigen::Index s = 0; s < hist.weights.rows(); ++s) {
    if (!(hist.weights.row(s).sum() > 0.0)) continue;
    ++out.visited_rows;
    const double tv = ebil::eval::total_variation(back.probs().row(s), pi.probs().row(s));
    out.worst_tv = std::max(out.worst_tv, tv);
  }
  return out;
}

}  // namespace fixture
