#include "ebil/loss.hpp"

#include <cmath>
#include <string>

#include "ebil/error.hpp"

namespace ebil::diffcore {

namespace {

std::size_t arity(LossOp op) {
  switch (op) {
    case LossOp::First:
    case LossOp::Second:
    case LossOp::Constant:
      return 0;
    case LossOp::Forward:
    case LossOp::InputGradient:
    case LossOp::Scale:
    case LossOp::SquaredNorm:
      return 1;
    case LossOp::Add:
    case LossOp::Subtract:
      return 2;
  }
  throw ConfigError("unsupported loss primitive " + std::to_string(static_cast<int>(op)));
}

// Value of every node for one batch element plus the network sites the
// reverse pass needs.
struct ElementPass {
  std::vector<Vector> values;
};

ElementPass evaluate_nodes(const Network& net, const Loss& loss, const VectorPair& pair) {
  const auto& nodes = loss.nodes();
  ElementPass pass;
  pass.values.resize(loss.root() + 1);
  for (std::size_t i = 0; i <= loss.root(); ++i) {
    const LossNode& n = nodes[i];
    Vector& v = pass.values[i];
    auto arg = [&](std::size_t k) -> const Vector& { return pass.values[n.args[k]]; };
    switch (n.op) {
      case LossOp::First:
        v = pair.first;
        break;
      case LossOp::Second:
        v = pair.second;
        break;
      case LossOp::Constant:
        v = n.constant;
        break;
      case LossOp::Forward:
        v = Vector::Constant(1, forward(net, arg(0)));
        break;
      case LossOp::InputGradient:
        v = input_gradient(net, arg(0));
        break;
      case LossOp::Add:
      case LossOp::Subtract:
        if (arg(0).size() != arg(1).size()) {
          throw DimensionError("operands of dimension " + std::to_string(arg(0).size()) +
                               " and " + std::to_string(arg(1).size()));
        }
        v = n.op == LossOp::Add ? Vector(arg(0) + arg(1)) : Vector(arg(0) - arg(1));
        break;
      case LossOp::Scale:
        v = n.scale * arg(0);
        break;
      case LossOp::SquaredNorm:
        v = Vector::Constant(1, arg(0).squaredNorm());
        break;
    }
    if (!v.allFinite()) throw NumericError("non-finite intermediate in loss node " + std::to_string(i));
  }
  if (pass.values[loss.root()].size() != 1) throw DimensionError("loss root must be scalar");
  return pass;
}

}  // namespace

LossExpr operator+(LossExpr a, LossExpr b) { return a.owner_->add(a, b); }
LossExpr operator-(LossExpr a, LossExpr b) { return a.owner_->subtract(a, b); }
LossExpr operator*(double c, LossExpr a) { return a.owner_->scale(c, a); }

LossExpr LossBuilder::first() { return node(LossOp::First, {}); }
LossExpr LossBuilder::second() { return node(LossOp::Second, {}); }
LossExpr LossBuilder::constant(Vector value) {
  return node(LossOp::Constant, {}, 1.0, std::move(value));
}
LossExpr LossBuilder::forward(LossExpr input) { return node(LossOp::Forward, {input}); }
LossExpr LossBuilder::input_gradient(LossExpr input) {
  return node(LossOp::InputGradient, {input});
}
LossExpr LossBuilder::add(LossExpr a, LossExpr b) { return node(LossOp::Add, {a, b}); }
LossExpr LossBuilder::subtract(LossExpr a, LossExpr b) {
  return node(LossOp::Subtract, {a, b});
}
LossExpr LossBuilder::scale(double c, LossExpr a) { return node(LossOp::Scale, {a}, c); }
LossExpr LossBuilder::squared_norm(LossExpr a) { return node(LossOp::SquaredNorm, {a}); }

LossExpr LossBuilder::node(LossOp op, std::vector<LossExpr> args, double scale,
                           Vector constant) {
  if (args.size() != arity(op)) {
    throw ConfigError("loss primitive " + std::to_string(static_cast<int>(op)) + " takes " +
                      std::to_string(arity(op)) + " arguments");
  }
  LossNode n{op, {}, scale, std::move(constant), false};
  for (const LossExpr& a : args) {
    if (a.owner_ != this || a.index_ >= nodes_.size()) {
      throw ConfigError("loss argument belongs to another builder");
    }
    n.args.push_back(a.index_);
    n.depends_on_params = n.depends_on_params || nodes_[a.index_].depends_on_params;
  }
  if (op == LossOp::Forward || op == LossOp::InputGradient) {
    if (n.depends_on_params) {
      throw ConfigError("network inputs may not depend on network parameters");
    }
    n.depends_on_params = true;
  }
  if (op == LossOp::Constant && n.constant.size() == 0) {
    throw ConfigError("empty constant in loss");
  }
  if (op == LossOp::Scale && !std::isfinite(scale)) {
    throw ConfigError("non-finite scale in loss");
  }
  nodes_.push_back(std::move(n));
  return LossExpr(this, nodes_.size() - 1);
}

Loss LossBuilder::build(LossExpr root) const {
  if (root.owner_ != this || root.index_ >= nodes_.size()) {
    throw ConfigError("loss root belongs to another builder");
  }
  const LossOp op = nodes_[root.index_].op;
  if (op != LossOp::Forward && op != LossOp::SquaredNorm && op != LossOp::Add &&
      op != LossOp::Subtract && op != LossOp::Scale) {
    throw ConfigError("loss root must be a scalar expression");
  }
  return Loss(std::vector<LossNode>(nodes_.begin(), nodes_.begin() + root.index_ + 1),
              root.index_);
}

double evaluate_loss(const Network& net, const Loss& loss,
                     const std::vector<VectorPair>& batch) {
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    try {
      total += evaluate_nodes(net, loss, batch[b]).values[loss.root()](0);
    } catch (const NumericError& e) {
      throw NumericError("batch element " + std::to_string(b) + ": " + e.what());
    }
  }
  return total;
}

LossGradient loss_value_and_gradient(const Network& net, const Loss& loss,
                                     const std::vector<VectorPair>& batch) {
  const auto& nodes = loss.nodes();
  LossGradient out;
  out.param_grad = Vector::Zero(static_cast<Eigen::Index>(net.num_params()));

  // Network sites reached by the reverse pass: input, value weight and
  // input-gradient weight, one column each.
  std::vector<Vector> site_inputs;
  std::vector<double> site_value_weights;
  std::vector<Vector> site_grad_weights;
  bool second_order = false;

  for (std::size_t b = 0; b < batch.size(); ++b) {
    try {
      ElementPass pass = evaluate_nodes(net, loss, batch[b]);
      out.value += pass.values[loss.root()](0);

      std::vector<Vector> adj(loss.root() + 1);
      adj[loss.root()] = Vector::Ones(1);
      for (std::size_t i = loss.root() + 1; i-- > 0;) {
        const LossNode& n = nodes[i];
        if (!n.depends_on_params || adj[i].size() == 0) continue;
        const Vector& g = adj[i];
        auto push = [&](std::size_t target, const Vector& contribution) {
          if (!nodes[target].depends_on_params) return;
          if (adj[target].size() == 0) {
            adj[target] = contribution;
          } else {
            adj[target] += contribution;
          }
        };
        switch (n.op) {
          case LossOp::Forward:
            site_inputs.push_back(pass.values[n.args[0]]);
            site_value_weights.push_back(g(0));
            site_grad_weights.push_back(Vector::Zero(pass.values[n.args[0]].size()));
            break;
          case LossOp::InputGradient:
            site_inputs.push_back(pass.values[n.args[0]]);
            site_value_weights.push_back(0.0);
            site_grad_weights.push_back(g);
            second_order = true;
            break;
          case LossOp::Add:
            push(n.args[0], g);
            push(n.args[1], g);
            break;
          case LossOp::Subtract:
            push(n.args[0], g);
            push(n.args[1], -g);
            break;
          case LossOp::Scale:
            push(n.args[0], n.scale * g);
            break;
          case LossOp::SquaredNorm:
            push(n.args[0], 2.0 * g(0) * pass.values[n.args[0]]);
            break;
          case LossOp::First:
          case LossOp::Second:
          case LossOp::Constant:
            break;
        }
      }
    } catch (const NumericError& e) {
      throw NumericError("batch element " + std::to_string(b) + ": " + e.what());
    }
  }

  if (site_inputs.empty()) return out;
  const auto dim = static_cast<Eigen::Index>(net.input_dim());
  const auto count = static_cast<Eigen::Index>(site_inputs.size());
  Matrix inputs(dim, count);
  Matrix value_weights(1, count);
  Matrix grad_weights;
  if (second_order) grad_weights.resize(dim, count);
  for (Eigen::Index j = 0; j < count; ++j) {
    inputs.col(j) = site_inputs[static_cast<std::size_t>(j)];
    value_weights(0, j) = site_value_weights[static_cast<std::size_t>(j)];
    if (second_order) grad_weights.col(j) = site_grad_weights[static_cast<std::size_t>(j)];
  }
  accumulate_param_gradient(net, inputs, value_weights, grad_weights, out.param_grad);
  return out;
}

Vector loss_param_gradient(const Network& net, const Loss& loss,
                           const std::vector<VectorPair>& batch) {
  return loss_value_and_gradient(net, loss, batch).param_grad;
}

Loss deen_loss_expression(double sigma) {
  LossBuilder b;
  LossExpr residual = b.first() - b.second() + (sigma * sigma) * b.input_gradient(b.second());
  return b.build(b.squared_norm(residual));
}

}  // namespace ebil::diffcore
