#pragma once

// Reference computations shared by the unit tests. They use only plain
// loops and the public network accessors, never the library's own
// derivative code.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "ebil/diffcore.hpp"

namespace oracle {

using ebil::diffcore::Activation;
using ebil::diffcore::LayerSpec;
using ebil::diffcore::Network;
using ebil::diffcore::Vector;

inline double activate(Activation act, double x) {
  return act == Activation::Tanh ? std::tanh(x) : x;
}

/// Straightforward per-neuron evaluation of a network, all outputs.
inline Vector naive_eval(const Network& net, const Vector& input) {
  Vector h = input;
  for (std::size_t k = 0; k < net.layers().size(); ++k) {
    const auto& spec = net.layers()[k];
    const auto W = net.weights(k);
    const auto b = net.bias(k);
    Vector out(static_cast<Eigen::Index>(spec.output_dim));
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      double z = b(i);
      for (Eigen::Index j = 0; j < h.size(); ++j) z += W(i, j) * h(j);
      out(i) = activate(spec.activation, z);
    }
    h = out;
  }
  return h;
}

inline double naive_forward(const Network& net, const Vector& input) {
  return naive_eval(net, input)(0);
}

/// Fourth-order central differences of f at x with step h.
inline Vector central_diff(const std::function<double(const Vector&)>& f, const Vector& x,
                           double h = 1e-3) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    auto at = [&](double d) {
      Vector xd = x;
      xd(i) += d;
      return f(xd);
    };
    g(i) = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
  }
  return g;
}

/// Network with the same layers and the given parameters.
inline Network with_params(const Network& net, const Vector& params) {
  return Network(net.layers(), params);
}

/// Random tanh MLP: depth 1..max_depth layers, widths 1..max_width, scalar
/// output with tanh or identity.
inline Network random_network(std::mt19937_64& rng, std::size_t input_dim, int max_depth = 4,
                              std::size_t max_width = 16) {
  std::uniform_int_distribution<int> depth_dist(1, max_depth);
  std::uniform_int_distribution<std::size_t> width_dist(1, max_width);
  const int depth = depth_dist(rng);
  std::vector<LayerSpec> layers;
  std::size_t in = input_dim;
  for (int k = 0; k < depth; ++k) {
    const bool last = k == depth - 1;
    const std::size_t out = last ? 1 : width_dist(rng);
    const Activation act =
        last && std::bernoulli_distribution(0.5)(rng) ? Activation::Identity : Activation::Tanh;
    layers.push_back({in, out, act});
    in = out;
  }
  return Network::initialize(layers, rng());
}

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

/// Agreement rule for finite-difference checks: relative tolerance on
/// coordinates of magnitude above 1e-6, absolute tolerance otherwise.
inline bool fd_agrees(double analytic, double numeric, double rel = 1e-4, double abs = 1e-8) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale > 1e-6) return std::abs(analytic - numeric) <= rel * scale;
  return std::abs(analytic - numeric) <= abs;
}

}  // namespace oracle
