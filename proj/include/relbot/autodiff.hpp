#pragma once
// Define-by-run reverse-mode differentiation over dense float64 tensors.
//
// A Graph records every primitive application as a node. Node identifiers are
// assigned in creation order, so operands always carry smaller identifiers than
// their consumers and the reverse sweep is a plain descending loop. A graph is
// meant to live for one forward/backward pass.
//
// Shape rules (m, n, k extents; only the second operand may broadcast):
//   matmul        [m,k]·[k,n] -> [m,n]; [m,k]·[k] -> [m]; transpose_b: [m,k]·[n,k]ᵀ -> [m,n]
//   add/sub/multiply  equal shapes, or rhs [1,n] (row broadcast), [m,1] (column
//                 broadcast) or a single element against a rank-2 lhs [m,n]
//   relu sigmoid square sqrt exp log scale   elementwise, shape preserved
//   sum/mean      axis -1 -> [1]; axis 0 -> [1,n]; axis 1 -> [m,1]
//   concat        rank-2 operands; axis 1 joins columns (equal rows), axis 0 rows
//   softmax_row   rank 2, softmax over each row
// Reductions accumulate strictly left to right in row-major order.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "relbot/tensor.hpp"

namespace relbot::ad {

enum class Primitive {
  kLeaf,
  kMatmul,
  kAdd,
  kSub,
  kMultiply,
  kRelu,
  kSigmoid,
  kSquare,
  kSqrt,
  kSum,
  kMean,
  kConcat,
  kScale,
  kExp,
  kLog,
  kSoftmaxRow,
};

std::string_view primitive_name(Primitive op);

struct PrimitiveAttrs {
  int axis = -1;
  double factor = 1.0;
  bool transpose_b = false;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

/// Gradients keyed by node identifier.
class GradientMap {
 public:
  bool contains(std::size_t id) const;
  bool contains(Var v) const { return contains(v.id); }
  const Tensor& at(std::size_t id) const;
  const Tensor& at(Var v) const { return at(v.id); }
  std::size_t size() const;

 private:
  friend class Graph;
  std::vector<std::optional<Tensor>> grads_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var apply(Primitive op, std::span<const Var> operands, const PrimitiveAttrs& attrs = {});
  Var apply(Primitive op, std::initializer_list<Var> operands, const PrimitiveAttrs& attrs = {}) {
    return apply(op, std::span<const Var>(operands.begin(), operands.size()), attrs);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a one-element loss. Every node that requires a gradient
  /// and is reachable from the loss receives an entry; multiple consumers add.
  GradientMap backward(Var loss) const;

 private:
  struct Node {
    Primitive op;
    std::vector<std::size_t> operands;
    PrimitiveAttrs attrs;
    Tensor value;
    bool requires_grad;
  };
  void check_owned(Var v) const;
  void backprop_node(const Node& node, const Tensor& grad,
                     std::vector<std::optional<Tensor>>& grads) const;

  std::vector<Node> nodes_;
};

// Named wrappers over Graph::apply.
Var matmul(Var a, Var b, bool transpose_b = false);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var multiply(Var a, Var b);
Var relu(Var x);
Var sigmoid(Var x);
Var square(Var x);
Var sqrt(Var x);
Var sum(Var x, int axis = -1);
Var mean(Var x, int axis = -1);
Var concat(std::span<const Var> parts, int axis = 1);
Var concat(Var a, Var b, int axis = 1);
Var scale(Var x, double factor);
Var exp(Var x);
Var log(Var x);
Var softmax_row(Var x);

/// Per-row Euclidean distance between two [m,n] tensors -> [m,1].
Var euclidean_distance(Var a, Var b);

/// Builds a scalar loss from parameter leaves registered on a fresh graph.
using ScalarFunction = std::function<Var(Graph&, std::span<const Var> params)>;

/// Largest |analytic - central difference| / max(1e-8, |analytic| + |central difference|)
/// over every entry of every parameter.
double finite_difference_check(const ScalarFunction& fn, std::span<const Tensor> params,
                               double epsilon);

/// Gradients of fn at params (one tensor per parameter, zero where unreachable).
std::vector<Tensor> gradients(const ScalarFunction& fn, std::span<const Tensor> params);

}  // namespace relbot::ad
