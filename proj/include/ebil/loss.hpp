#pragma once

// Losses assembled from network evaluations, summed over a batch of vector
// pairs, and their exact parameter gradients.
//
//   LossBuilder b;
//   auto x = b.first(), y = b.second();
//   auto r = x - y + 0.01 * b.input_gradient(y);
//   Loss loss = b.build(b.squared_norm(r));
//
// Every node is a vector; forward() yields a 1-vector. Network evaluations
// must take inputs that do not themselves depend on the parameters, so the
// parameter gradient is fully captured by accumulate_param_gradient().

#include <utility>
#include <vector>

#include "ebil/diffcore.hpp"

namespace ebil::diffcore {

enum class LossOp {
  First,         // pair.first
  Second,        // pair.second
  Constant,
  Forward,       // E(input), a 1-vector
  InputGradient, // dE/dinput
  Add,
  Subtract,
  Scale,         // constant * node
  SquaredNorm,   // ||node||^2, a 1-vector
};

class LossBuilder;

/// Handle to a node owned by a LossBuilder.
class LossExpr {
 public:
  std::size_t index() const { return index_; }

 private:
  friend class LossBuilder;
  LossExpr(LossBuilder* owner, std::size_t index) : owner_(owner), index_(index) {}

  LossBuilder* owner_;
  std::size_t index_;

  friend LossExpr operator+(LossExpr a, LossExpr b);
  friend LossExpr operator-(LossExpr a, LossExpr b);
  friend LossExpr operator*(double c, LossExpr a);
};

struct LossNode {
  LossOp op;
  std::vector<std::size_t> args;
  double scale = 1.0;
  Vector constant;
  bool depends_on_params = false;
};

using VectorPair = std::pair<Vector, Vector>;

class Loss {
 public:
  const std::vector<LossNode>& nodes() const { return nodes_; }
  std::size_t root() const { return root_; }

 private:
  friend class LossBuilder;
  Loss(std::vector<LossNode> nodes, std::size_t root)
      : nodes_(std::move(nodes)), root_(root) {}

  std::vector<LossNode> nodes_;
  std::size_t root_;
};

class LossBuilder {
 public:
  LossExpr first();
  LossExpr second();
  LossExpr constant(Vector value);
  LossExpr forward(LossExpr input);
  LossExpr input_gradient(LossExpr input);
  LossExpr add(LossExpr a, LossExpr b);
  LossExpr subtract(LossExpr a, LossExpr b);
  LossExpr scale(double c, LossExpr a);
  LossExpr squared_norm(LossExpr a);

  /// Generic entry point; rejects ops outside the supported set and
  /// malformed argument lists.
  LossExpr node(LossOp op, std::vector<LossExpr> args, double scale = 1.0,
                Vector constant = Vector());

  Loss build(LossExpr root) const;

 private:
  std::vector<LossNode> nodes_;
};

struct LossGradient {
  double value = 0.0;
  Vector param_grad;
};

/// Evaluates sum_i loss(pair_i).
double evaluate_loss(const Network& net, const Loss& loss,
                     const std::vector<VectorPair>& batch);

/// Value and d/dtheta of sum_i loss(pair_i), parameters in canonical order.
LossGradient loss_value_and_gradient(const Network& net, const Loss& loss,
                                     const std::vector<VectorPair>& batch);

Vector loss_param_gradient(const Network& net, const Loss& loss,
                           const std::vector<VectorPair>& batch);

/// sum_i || x_i - y_i + sigma^2 dE/dy(y_i) ||^2 as a composed loss.
Loss deen_loss_expression(double sigma);

}  // namespace ebil::diffcore
