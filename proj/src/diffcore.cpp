#include "ebil/diffcore.hpp"

#include <cmath>
#include <random>

#include "ebil/error.hpp"

namespace ebil::diffcore {

namespace {

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw NumericError(std::string("non-finite value in ") + what);
  }
}

// tanh through the vectorized exp: 1 - 2 / (exp(2x) + 1). Absolute error is
// at roundoff level and it saturates correctly at +-1 for large |x|.
void tanh_in_place(Matrix& z) {
  z = (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
}

// Activation derivative expressed through the activation output
// (tanh' = 1 - t^2).
Matrix first_derivative(Activation act, const Matrix& out) {
  if (act == Activation::Identity) return Matrix::Ones(out.rows(), out.cols());
  return (1.0 - out.array().square()).matrix();
}

}  // namespace

std::string to_string(Activation activation) {
  switch (activation) {
    case Activation::Tanh:
      return "tanh";
    case Activation::Identity:
      return "identity";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  throw DataError("unknown activation '" + name + "'");
}

std::vector<LayerSpec> mlp_layers(std::size_t input_dim,
                                  const std::vector<std::size_t>& hidden,
                                  std::size_t output_dim,
                                  Activation output_activation) {
  std::vector<LayerSpec> layers;
  std::size_t in = input_dim;
  for (std::size_t width : hidden) {
    layers.push_back({in, width, Activation::Tanh});
    in = width;
  }
  layers.push_back({in, output_dim, output_activation});
  return layers;
}

Network::Network(std::vector<LayerSpec> layers, Vector params,
                 std::optional<std::uint64_t> seed)
    : layers_(std::move(layers)), seed_(seed) {
  if (layers_.empty()) throw DimensionError("network needs at least one layer");
  std::size_t total = 0;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const LayerSpec& spec = layers_[k];
    if (spec.input_dim == 0 || spec.output_dim == 0) {
      throw DimensionError("layer " + std::to_string(k) + " has a zero dimension");
    }
    if (k > 0 && layers_[k - 1].output_dim != spec.input_dim) {
      throw DimensionError("layer " + std::to_string(k) + " input_dim " +
                           std::to_string(spec.input_dim) +
                           " does not match previous output_dim " +
                           std::to_string(layers_[k - 1].output_dim));
    }
    offsets_.push_back(total);
    total += spec.output_dim * spec.input_dim + spec.output_dim;
  }
  offsets_.push_back(total);
  set_params(std::move(params));
}

Network Network::initialize(std::vector<LayerSpec> layers, std::uint64_t seed) {
  std::size_t total = 0;
  for (const auto& l : layers) total += l.output_dim * l.input_dim + l.output_dim;
  Vector params(static_cast<Eigen::Index>(total));
  std::mt19937_64 rng(seed);
  Eigen::Index i = 0;
  for (const auto& l : layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.input_dim));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const std::size_t n = l.output_dim * l.input_dim + l.output_dim;
    for (std::size_t j = 0; j < n; ++j) params[i++] = dist(rng);
  }
  return Network(std::move(layers), std::move(params), seed);
}

Network Network::zeros(std::vector<LayerSpec> layers) {
  std::size_t total = 0;
  for (const auto& l : layers) total += l.output_dim * l.input_dim + l.output_dim;
  return Network(std::move(layers), Vector::Zero(static_cast<Eigen::Index>(total)));
}

void Network::set_params(Vector params) {
  if (static_cast<std::size_t>(params.size()) != offsets_.back()) {
    throw DimensionError("parameter vector has " + std::to_string(params.size()) +
                         " entries, network expects " +
                         std::to_string(offsets_.back()));
  }
  if (!params.allFinite()) throw NumericError("non-finite network parameter");
  params_ = std::move(params);
}

Network::WeightMap Network::weights(std::size_t layer) const {
  const LayerSpec& l = layers_[layer];
  return WeightMap(params_.data() + offsets_[layer],
                   static_cast<Eigen::Index>(l.output_dim),
                   static_cast<Eigen::Index>(l.input_dim));
}

std::size_t Network::bias_offset(std::size_t layer) const {
  return offsets_[layer] + layers_[layer].output_dim * layers_[layer].input_dim;
}

Network::BiasMap Network::bias(std::size_t layer) const {
  return BiasMap(params_.data() + bias_offset(layer),
                 static_cast<Eigen::Index>(layers_[layer].output_dim));
}

bool Network::operator==(const Network& other) const {
  return layers_ == other.layers_ && params_.size() == other.params_.size() &&
         params_ == other.params_;
}

ForwardTrace::ForwardTrace(const Network& net, const Matrix& inputs) : net_(net) {
  if (static_cast<std::size_t>(inputs.rows()) != net.input_dim()) {
    throw DimensionError("input has dimension " + std::to_string(inputs.rows()) +
                         ", network expects " + std::to_string(net.input_dim()));
  }
  require_finite(inputs, "network input");
  activations_.reserve(net.layers().size() + 1);
  activations_.push_back(inputs);
  for (std::size_t k = 0; k < net.layers().size(); ++k) {
    Matrix z = net.weights(k) * activations_.back();
    z.colwise() += net.bias(k);
    if (net.layers()[k].activation == Activation::Tanh) tanh_in_place(z);
    activations_.push_back(std::move(z));
  }
  require_finite(activations_.back(), "network output");
}

Matrix ForwardTrace::input_gradient() const {
  if (net_.output_dim() != 1) {
    throw DimensionError("input gradient needs a scalar-output network");
  }
  const auto& layers = net_.layers();
  Matrix delta = Matrix::Ones(1, activations_.back().cols());
  for (std::size_t k = layers.size(); k-- > 0;) {
    delta = delta.cwiseProduct(first_derivative(layers[k].activation, activations_[k + 1]));
    delta = net_.weights(k).transpose() * delta;
  }
  require_finite(delta, "input gradient");
  return delta;
}

void ForwardTrace::accumulate_param_gradient(const Matrix& value_weights,
                                             const Matrix& grad_weights,
                                             Vector& param_grad) const {
  const auto& layers = net_.layers();
  const Eigen::Index batch = activations_.front().cols();
  const bool second_order = grad_weights.size() > 0;
  if (value_weights.rows() != static_cast<Eigen::Index>(net_.output_dim()) ||
      value_weights.cols() != batch) {
    throw DimensionError("value weights do not match the network output batch");
  }
  if (second_order) {
    if (net_.output_dim() != 1) {
      throw DimensionError("second-order term needs a scalar-output network");
    }
    if (grad_weights.rows() != static_cast<Eigen::Index>(net_.input_dim()) ||
        grad_weights.cols() != batch) {
      throw DimensionError("gradient weights do not match the input batch");
    }
  }
  if (static_cast<std::size_t>(param_grad.size()) != net_.num_params()) {
    throw DimensionError("parameter gradient has the wrong length");
  }

  // Tangent pass: dot_h[k] is the directional derivative of layer k's output
  // along grad_weights.
  std::vector<Matrix> tangents;
  if (second_order) {
    tangents.reserve(layers.size() + 1);
    tangents.push_back(grad_weights);
    for (std::size_t k = 0; k < layers.size(); ++k) {
      Matrix t = net_.weights(k) * tangents.back();
      t = t.cwiseProduct(first_derivative(layers[k].activation, activations_[k + 1]));
      tangents.push_back(std::move(t));
    }
  }

  // Reverse pass over primal and tangent values together. The scalar being
  // differentiated is sum(value_weights .* h_L) + sum(dot_h_L). In the
  // second-order case the adjoints are kept side by side as [primal | tangent]
  // so each layer needs one product for the weight gradient and one for the
  // propagated adjoint.
  Matrix adj(value_weights.rows(), second_order ? 2 * batch : batch);
  adj.leftCols(batch) = value_weights;
  if (second_order) adj.rightCols(batch).setOnes();

  for (std::size_t k = layers.size(); k-- > 0;) {
    const Matrix& out = activations_[k + 1];
    const Matrix d1 = first_derivative(layers[k].activation, out);
    Matrix adj_pre(adj.rows(), adj.cols());
    adj_pre.leftCols(batch) = adj.leftCols(batch).cwiseProduct(d1);
    if (second_order) {
      // dot_h = f'(z) dot_z, so d(dot_h)/dz = f''(z) dot_z. For tanh,
      // f'' = -2 t f', which turns this into -2 t dot_h with no extra product.
      adj_pre.rightCols(batch) = adj.rightCols(batch).cwiseProduct(d1);
      if (layers[k].activation == Activation::Tanh) {
        adj_pre.leftCols(batch).array() -=
            2.0 * adj.rightCols(batch).array() * out.array() * tangents[k + 1].array();
      }
    }

    const auto rows = static_cast<Eigen::Index>(layers[k].output_dim);
    const auto cols = static_cast<Eigen::Index>(layers[k].input_dim);
    Eigen::Map<RowMajorMatrix> grad_w(param_grad.data() + net_.weight_offset(k), rows, cols);
    Eigen::Map<Vector> grad_b(param_grad.data() + net_.bias_offset(k), rows);
    grad_b += adj_pre.leftCols(batch).rowwise().sum();
    if (second_order) {
      Matrix layer_in(cols, 2 * batch);
      layer_in << activations_[k], tangents[k];
      grad_w.noalias() += adj_pre * layer_in.transpose();
    } else {
      grad_w.noalias() += adj_pre * activations_[k].transpose();
    }

    if (k > 0) adj.noalias() = net_.weights(k).transpose() * adj_pre;
  }
  require_finite(param_grad, "parameter gradient");
}

double forward(const Network& net, const Vector& input) {
  if (net.output_dim() != 1) throw DimensionError("forward needs a scalar-output network");
  return ForwardTrace(net, input).output()(0, 0);
}

Vector input_gradient(const Network& net, const Vector& input) {
  return ForwardTrace(net, input).input_gradient().col(0);
}

GradientBundle gradient_bundle(const Network& net, const Vector& input) {
  if (net.output_dim() != 1) throw DimensionError("gradient bundle needs a scalar-output network");
  ForwardTrace trace(net, input);
  GradientBundle out;
  out.value = trace.output()(0, 0);
  out.input_grad = trace.input_gradient().col(0);
  out.param_grad = Vector::Zero(static_cast<Eigen::Index>(net.num_params()));
  trace.accumulate_param_gradient(Matrix::Ones(1, 1), Matrix(), out.param_grad);
  return out;
}

Matrix evaluate_batch(const Network& net, const Matrix& inputs) {
  return ForwardTrace(net, inputs).output();
}

RowVector forward_batch(const Network& net, const Matrix& inputs) {
  if (net.output_dim() != 1) throw DimensionError("forward needs a scalar-output network");
  return ForwardTrace(net, inputs).output().row(0);
}

Matrix input_gradient_batch(const Network& net, const Matrix& inputs) {
  return ForwardTrace(net, inputs).input_gradient();
}

void accumulate_param_gradient(const Network& net, const Matrix& inputs,
                               const Matrix& value_weights,
                               const Matrix& grad_weights, Vector& param_grad) {
  ForwardTrace(net, inputs).accumulate_param_gradient(value_weights, grad_weights, param_grad);
}

nlohmann::json to_json(const Network& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    layers.push_back({{"input_dim", l.input_dim},
                      {"output_dim", l.output_dim},
                      {"activation", to_string(l.activation)}});
  }
  std::vector<double> params(net.params().data(), net.params().data() + net.params().size());
  nlohmann::json doc = {{"format", "ebil-network"},
                        {"version", 1},
                        {"layers", layers},
                        {"params", params}};
  doc["seed"] = net.seed() ? nlohmann::json(*net.seed()) : nlohmann::json(nullptr);
  return doc;
}

Network network_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "ebil-network") {
      throw DataError("not a network checkpoint");
    }
    if (doc.at("version").get<int>() != 1) {
      throw DataError("unsupported network checkpoint version");
    }
    std::vector<LayerSpec> layers;
    for (const auto& l : doc.at("layers")) {
      layers.push_back({l.at("input_dim").get<std::size_t>(),
                        l.at("output_dim").get<std::size_t>(),
                        activation_from_string(l.at("activation").get<std::string>())});
    }
    const auto values = doc.at("params").get<std::vector<double>>();
    Vector params = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
    std::optional<std::uint64_t> seed;
    if (doc.contains("seed") && !doc.at("seed").is_null()) seed = doc.at("seed").get<std::uint64_t>();
    return Network(std::move(layers), std::move(params), seed);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed network checkpoint: ") + e.what());
  }
}

}  // namespace ebil::diffcore
