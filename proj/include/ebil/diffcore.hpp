#pragma once

// Reverse-mode differentiation for small fully connected networks.
//
// A Network owns one flat parameter vector in canonical order (layer-major,
// each layer's weights row-major followed by its biases). Batched routines
// take inputs column-wise: an input matrix has input_dim rows and one column
// per sample.
//
// Besides the usual value / input-gradient / parameter-gradient passes the
// core exposes accumulate_param_gradient(), which differentiates
//
//     sum_b  c_b . f(y_b)  +  u_b . grad_y E(y_b)
//
// with respect to the parameters. The second term is what makes losses that
// contain input gradients (denoising score matching) trainable: it is
// computed by running a forward tangent pass along u_b next to the primal
// pass and reverse-differentiating both together.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace ebil::diffcore {

using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Matrix = Eigen::MatrixXd;
using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { Tanh, Identity };

std::string to_string(Activation activation);
Activation activation_from_string(const std::string& name);

struct LayerSpec {
  std::size_t input_dim = 1;
  std::size_t output_dim = 1;
  Activation activation = Activation::Tanh;

  bool operator==(const LayerSpec&) const = default;
};

/// Layers for an MLP with tanh hidden units: input -> hidden... -> output.
std::vector<LayerSpec> mlp_layers(std::size_t input_dim,
                                  const std::vector<std::size_t>& hidden,
                                  std::size_t output_dim,
                                  Activation output_activation);

class Network {
 public:
  using WeightMap = Eigen::Map<const RowMajorMatrix>;
  using BiasMap = Eigen::Map<const Vector>;

  /// Validates the layer chain and that params has the right length and is
  /// finite.
  Network(std::vector<LayerSpec> layers, Vector params,
          std::optional<std::uint64_t> seed = std::nullopt);

  /// Per-layer uniform initialization in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static Network initialize(std::vector<LayerSpec> layers, std::uint64_t seed);
  static Network zeros(std::vector<LayerSpec> layers);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t input_dim() const { return layers_.front().input_dim; }
  std::size_t output_dim() const { return layers_.back().output_dim; }
  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }
  const Vector& params() const { return params_; }
  const std::optional<std::uint64_t>& seed() const { return seed_; }

  void set_params(Vector params);

  WeightMap weights(std::size_t layer) const;
  BiasMap bias(std::size_t layer) const;
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const;

  bool operator==(const Network& other) const;

 private:
  std::vector<LayerSpec> layers_;
  Vector params_;
  std::vector<std::size_t> offsets_;
  std::optional<std::uint64_t> seed_;
};

/// Value, input gradient and parameter gradient of a scalar network at one
/// input.
struct GradientBundle {
  double value = 0.0;
  Vector input_grad;
  Vector param_grad;
};

// Single-sample operations. These require output_dim() == 1.
double forward(const Network& net, const Vector& input);
Vector input_gradient(const Network& net, const Vector& input);
GradientBundle gradient_bundle(const Network& net, const Vector& input);

// Batched operations, one sample per column.
Matrix evaluate_batch(const Network& net, const Matrix& inputs);
RowVector forward_batch(const Network& net, const Matrix& inputs);
Matrix input_gradient_batch(const Network& net, const Matrix& inputs);

/// Adds d/dtheta of sum_b [ value_weights(:,b) . f(y_b) + grad_weights(:,b) .
/// grad_y E(y_b) ] into param_grad. value_weights has output_dim rows;
/// grad_weights has input_dim rows and may be empty (no second-order term),
/// in which case the network may have any output dimension. Inputs and both
/// weight matrices share the column count.
void accumulate_param_gradient(const Network& net, const Matrix& inputs,
                               const Matrix& value_weights,
                               const Matrix& grad_weights, Vector& param_grad);

/// Cached primal pass over a batch, so the input gradient and the parameter
/// gradient can share one forward evaluation. Keeps a reference to the
/// network, which must outlive the trace.
class ForwardTrace {
 public:
  ForwardTrace(const Network& net, const Matrix& inputs);

  const Network& network() const { return net_; }
  const Matrix& output() const { return activations_.back(); }
  Matrix input_gradient() const;
  void accumulate_param_gradient(const Matrix& value_weights,
                                 const Matrix& grad_weights,
                                 Vector& param_grad) const;

 private:
  const Network& net_;
  // activations_[0] is the input batch, activations_[k] the output of layer k.
  std::vector<Matrix> activations_;
};

// Checkpoint format.
nlohmann::json to_json(const Network& net);
Network network_from_json(const nlohmann::json& doc);

}  // namespace ebil::diffcore
