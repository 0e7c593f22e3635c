#include "relbot/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "relbot/errors.hpp"
#include "relbot/kernels.hpp"

namespace relbot::ad {
namespace {

enum class Broadcast { kNone, kRow, kColumn, kScalar };

[[noreturn]] void shape_fail(Primitive op, const std::string& detail) {
  throw ShapeError(std::string(primitive_name(op)) + ": " + detail);
}

std::string shapes_of(std::span<const Tensor* const> ts) {
  std::string out;
  for (std::size_t i = 0; i < ts.size(); ++i) out += (i ? ", " : "") + shape_string(ts[i]->shape());
  return out;
}

Broadcast broadcast_kind(Primitive op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  const Tensor* both[] = {&a, &b};
  if (a.rank() == 2) {
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    if (b.size() == 1) return Broadcast::kScalar;
    if (b.rank() == 2 && b.shape()[0] == 1 && b.shape()[1] == n) return Broadcast::kRow;
    if (b.rank() == 2 && b.shape()[0] == m && b.shape()[1] == 1) return Broadcast::kColumn;
  }
  shape_fail(op, "operand shapes do not conform: " + shapes_of(both));
}

// Materializes b at a's shape.
Tensor expand(const Tensor& a, const Tensor& b, Broadcast kind) {
  if (kind == Broadcast::kNone) return b;
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out(a.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double v = 0.0;
      switch (kind) {
        case Broadcast::kRow: v = b[j]; break;
        case Broadcast::kColumn: v = b[i]; break;
        case Broadcast::kScalar: v = b[0]; break;
        case Broadcast::kNone: break;
      }
      out.at(i, j) = v;
    }
  return out;
}

// Sums g down to the broadcast operand's shape, accumulating rows in order.
Tensor reduce_to(const Tensor& g, const Shape& target, Broadcast kind) {
  if (kind == Broadcast::kNone) return g;
  const std::size_t m = g.shape()[0], n = g.shape()[1];
  Tensor out(target);
  switch (kind) {
    case Broadcast::kRow:
      for (std::size_t i = 0; i < m; ++i) kernels::active().accumulate(g.raw() + i * n, out.raw(), n);
      break;
    case Broadcast::kColumn:
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g.at(i, j);
        out[i] = acc;
      }
      break;
    case Broadcast::kScalar: {
      double acc = 0.0;
      for (double v : g.data()) acc += v;
      out[0] = acc;
      break;
    }
    case Broadcast::kNone:
      break;
  }
  return out;
}

Tensor transposed(const Tensor& t) {
  const std::size_t m = t.rows(), n = t.cols();
  Tensor out({n, m});
  kernels::transpose(t.raw(), out.raw(), m, n);
  return out;
}

Tensor gemm(const Tensor& a, const Tensor& b, Shape out_shape, std::size_t m, std::size_t k,
            std::size_t n) {
  Tensor out(std::move(out_shape));
  kernels::active().gemm(a.raw(), b.raw(), out.raw(), m, k, n);
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

Shape reduced_shape(Primitive op, const Tensor& x, int axis) {
  if (axis == -1) return {1};
  if (x.rank() != 2) shape_fail(op, "axis reduction needs rank 2, got " + shape_string(x.shape()));
  if (axis == 0) return {1, x.shape()[1]};
  if (axis == 1) return {x.shape()[0], 1};
  shape_fail(op, "axis must be -1, 0 or 1, got " + std::to_string(axis));
}

Tensor reduce_sum(const Tensor& x, int axis, Shape shape) {
  Tensor out(std::move(shape));
  if (axis == -1) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    out[0] = acc;
  } else if (axis == 0) {
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    for (std::size_t i = 0; i < m; ++i) kernels::active().accumulate(x.raw() + i * n, out.raw(), n);
  } else {
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += x.at(i, j);
      out[i] = acc;
    }
  }
  return out;
}

std::size_t reduced_count(const Tensor& x, int axis) {
  if (axis == -1) return x.size();
  return axis == 0 ? x.shape()[0] : x.shape()[1];
}

// Spreads g (reduced shape) back over x's shape.
Tensor spread(const Tensor& g, const Tensor& x, int axis, double factor) {
  Tensor out(x.shape());
  if (axis == -1) {
    for (double& v : out.data()) v = g[0] * factor;
  } else {
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) = (axis == 0 ? g[j] : g[i]) * factor;
  }
  return out;
}

Tensor forward(Primitive op, std::span<const Tensor* const> in, const PrimitiveAttrs& attrs) {
  auto expect_arity = [&](std::size_t n) {
    if (in.size() != n)
      shape_fail(op, "expected " + std::to_string(n) + " operands, got " + std::to_string(in.size()));
  };
  const auto& k = kernels::active();
  switch (op) {
    case Primitive::kLeaf:
      shape_fail(op, "leaves are created with Graph::leaf");
    case Primitive::kMatmul: {
      expect_arity(2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.rank() != 2) shape_fail(op, "left operand must be rank 2: " + shapes_of(in));
      const std::size_t m = a.shape()[0], inner = a.shape()[1];
      if (b.rank() == 1) {
        if (attrs.transpose_b || b.shape()[0] != inner)
          shape_fail(op, "inner extents differ: " + shapes_of(in));
        return gemm(a, b, {m}, m, inner, 1);
      }
      if (b.rank() != 2) shape_fail(op, "right operand must be rank 1 or 2: " + shapes_of(in));
      if (attrs.transpose_b) {
        if (b.shape()[1] != inner) shape_fail(op, "inner extents differ (transposed rhs): " + shapes_of(in));
        const std::size_t n = b.shape()[0];
        return gemm(a, transposed(b), {m, n}, m, inner, n);
      }
      if (b.shape()[0] != inner) shape_fail(op, "inner extents differ: " + shapes_of(in));
      const std::size_t n = b.shape()[1];
      return gemm(a, b, {m, n}, m, inner, n);
    }
    case Primitive::kAdd:
    case Primitive::kSub:
    case Primitive::kMultiply: {
      expect_arity(2);
      const Tensor& a = *in[0];
      const Broadcast kind = broadcast_kind(op, a, *in[1]);
      const Tensor b = expand(a, *in[1], kind);
      Tensor out(a.shape());
      auto fn = op == Primitive::kAdd ? k.add : op == Primitive::kSub ? k.sub : k.mul;
      fn(a.raw(), b.raw(), out.raw(), a.size());
      return out;
    }
    case Primitive::kRelu: {
      expect_arity(1);
      Tensor out(in[0]->shape());
      k.relu(in[0]->raw(), out.raw(), out.size());
      return out;
    }
    case Primitive::kSigmoid:
      expect_arity(1);
      return map(*in[0], stable_sigmoid);
    case Primitive::kSquare: {
      expect_arity(1);
      Tensor out(in[0]->shape());
      k.mul(in[0]->raw(), in[0]->raw(), out.raw(), out.size());
      return out;
    }
    case Primitive::kSqrt:
      expect_arity(1);
      for (double v : in[0]->data())
        if (!(v >= 0.0)) throw DomainError("sqrt: operand outside [0, inf): " + std::to_string(v));
      return map(*in[0], [](double v) { return std::sqrt(v); });
    case Primitive::kSum:
    case Primitive::kMean: {
      expect_arity(1);
      const Tensor& x = *in[0];
      Tensor s = reduce_sum(x, attrs.axis, reduced_shape(op, x, attrs.axis));
      if (op == Primitive::kMean) {
        const double count = static_cast<double>(reduced_count(x, attrs.axis));
        for (double& v : s.data()) v = v / count;
      }
      return s;
    }
    case Primitive::kConcat: {
      if (in.size() < 2) shape_fail(op, "needs at least two operands");
      for (const Tensor* t : in)
        if (t->rank() != 2) shape_fail(op, "operands must be rank 2: " + shapes_of(in));
      if (attrs.axis == 1) {
        const std::size_t m = in[0]->shape()[0];
        std::size_t n = 0;
        for (const Tensor* t : in) {
          if (t->shape()[0] != m) shape_fail(op, "row counts differ: " + shapes_of(in));
          n += t->shape()[1];
        }
        Tensor out({m, n});
        for (std::size_t i = 0; i < m; ++i) {
          std::size_t offset = 0;
          for (const Tensor* t : in) {
            const std::size_t w = t->shape()[1];
            std::copy_n(t->raw() + i * w, w, out.raw() + i * n + offset);
            offset += w;
          }
        }
        return out;
      }
      if (attrs.axis == 0) {
        const std::size_t n = in[0]->shape()[1];
        std::size_t m = 0;
        for (const Tensor* t : in) {
          if (t->shape()[1] != n) shape_fail(op, "column counts differ: " + shapes_of(in));
          m += t->shape()[0];
        }
        Tensor out({m, n});
        std::size_t offset = 0;
        for (const Tensor* t : in) {
          std::copy_n(t->raw(), t->size(), out.raw() + offset);
          offset += t->size();
        }
        return out;
      }
      shape_fail(op, "axis must be 0 or 1");
    }
    case Primitive::kScale: {
      expect_arity(1);
      Tensor out(in[0]->shape());
      k.scale(attrs.factor, in[0]->raw(), out.raw(), out.size());
      return out;
    }
    case Primitive::kExp:
      expect_arity(1);
      return map(*in[0], [](double v) { return std::exp(v); });
    case Primitive::kLog:
      expect_arity(1);
      for (double v : in[0]->data())
        if (!(v > 0.0)) throw DomainError("log: operand outside (0, inf): " + std::to_string(v));
      return map(*in[0], [](double v) { return std::log(v); });
    case Primitive::kSoftmaxRow: {
      expect_arity(1);
      const Tensor& x = *in[0];
      if (x.rank() != 2) shape_fail(op, "needs rank 2, got " + shapes_of(in));
      const std::size_t m = x.shape()[0], n = x.shape()[1];
      Tensor out(x.shape());
      for (std::size_t i = 0; i < m; ++i) {
        double mx = x.at(i, 0);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          out.at(i, j) = std::exp(x.at(i, j) - mx);
          total += out.at(i, j);
        }
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = out.at(i, j) / total;
      }
      return out;
    }
  }
  shape_fail(op, "unknown primitive");
}

void accumulate_into(std::optional<Tensor>& slot, Tensor contribution) {
  if (!slot) {
    slot = std::move(contribution);
    return;
  }
  kernels::active().accumulate(contribution.raw(), slot->raw(), contribution.size());
}

}  // namespace

std::string_view primitive_name(Primitive op) {
  switch (op) {
    case Primitive::kLeaf: return "leaf";
    case Primitive::kMatmul: return "matmul";
    case Primitive::kAdd: return "add";
    case Primitive::kSub: return "sub";
    case Primitive::kMultiply: return "multiply";
    case Primitive::kRelu: return "relu";
    case Primitive::kSigmoid: return "sigmoid";
    case Primitive::kSquare: return "square";
    case Primitive::kSqrt: return "sqrt";
    case Primitive::kSum: return "sum";
    case Primitive::kMean: return "mean";
    case Primitive::kConcat: return "concat";
    case Primitive::kScale: return "scale";
    case Primitive::kExp: return "exp";
    case Primitive::kLog: return "log";
    case Primitive::kSoftmaxRow: return "softmax_row";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph->value(id); }
bool Var::requires_grad() const { return graph->requires_grad(id); }

bool GradientMap::contains(std::size_t id) const { return id < grads_.size() && grads_[id].has_value(); }

const Tensor& GradientMap::at(std::size_t id) const {
  if (!contains(id)) throw ShapeError("no gradient recorded for node " + std::to_string(id));
  return *grads_[id];
}

std::size_t GradientMap::size() const {
  return static_cast<std::size_t>(
      std::count_if(grads_.begin(), grads_.end(), [](const auto& g) { return g.has_value(); }));
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{Primitive::kLeaf, {}, {}, std::move(value), requires_grad});
  return Var{this, nodes_.size() - 1};
}

void Graph::check_owned(Var v) const {
  if (v.graph != this || v.id >= nodes_.size())
    throw ShapeError("operand does not belong to this graph");
}

Var Graph::apply(Primitive op, std::span<const Var> operands, const PrimitiveAttrs& attrs) {
  std::vector<const Tensor*> inputs;
  std::vector<std::size_t> ids;
  bool needs_grad = false;
  for (Var v : operands) {
    check_owned(v);
    inputs.push_back(&nodes_[v.id].value);
    ids.push_back(v.id);
    needs_grad = needs_grad || nodes_[v.id].requires_grad;
  }
  Tensor value = forward(op, inputs, attrs);
  nodes_.push_back(Node{op, std::move(ids), attrs, std::move(value), needs_grad});
  return Var{this, nodes_.size() - 1};
}

GradientMap Graph::backward(Var loss) const {
  check_owned(loss);
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.size() != 1)
    throw ShapeError("backward: loss must hold a single element, got shape " + shape_string(lv.shape()));
  GradientMap result;
  result.grads_.resize(nodes_.size());
  if (!nodes_[loss.id].requires_grad) return result;
  result.grads_[loss.id] = Tensor::filled(lv.shape(), 1.0);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!result.grads_[id] || node.op == Primitive::kLeaf) continue;
    backprop_node(node, *result.grads_[id], result.grads_);
  }
  return result;
}

void Graph::backprop_node(const Node& node, const Tensor& g,
                          std::vector<std::optional<Tensor>>& grads) const {
  const auto& k = kernels::active();
  auto operand = [&](std::size_t i) -> const Tensor& { return nodes_[node.operands[i]].value; };
  auto wants = [&](std::size_t i) { return nodes_[node.operands[i]].requires_grad; };
  auto give = [&](std::size_t i, Tensor contribution) {
    accumulate_into(grads[node.operands[i]], std::move(contribution));
  };
  const Tensor& y = node.value;

  switch (node.op) {
    case Primitive::kLeaf:
      return;
    case Primitive::kMatmul: {
      const Tensor& a = operand(0);
      const Tensor& b = operand(1);
      const std::size_t m = a.shape()[0], inner = a.shape()[1];
      if (b.rank() == 1) {
        if (wants(0)) give(0, gemm(g, b, a.shape(), m, 1, inner));
        if (wants(1)) give(1, gemm(transposed(a), g, b.shape(), inner, m, 1));
      } else if (node.attrs.transpose_b) {
        const std::size_t n = b.shape()[0];
        if (wants(0)) give(0, gemm(g, b, a.shape(), m, n, inner));
        if (wants(1)) give(1, gemm(transposed(g), a, b.shape(), n, m, inner));
      } else {
        const std::size_t n = b.shape()[1];
        if (wants(0)) give(0, gemm(g, transposed(b), a.shape(), m, n, inner));
        if (wants(1)) give(1, gemm(transposed(a), g, b.shape(), inner, m, n));
      }
      return;
    }
    case Primitive::kAdd:
    case Primitive::kSub: {
      const Broadcast kind = broadcast_kind(node.op, operand(0), operand(1));
      if (wants(0)) give(0, g);
      if (wants(1)) {
        Tensor r = reduce_to(g, operand(1).shape(), kind);
        if (node.op == Primitive::kSub) k.scale(-1.0, r.raw(), r.raw(), r.size());
        give(1, std::move(r));
      }
      return;
    }
    case Primitive::kMultiply: {
      const Tensor& a = operand(0);
      const Broadcast kind = broadcast_kind(node.op, a, operand(1));
      if (wants(0)) {
        const Tensor b = expand(a, operand(1), kind);
        Tensor da(a.shape());
        k.mul(g.raw(), b.raw(), da.raw(), da.size());
        give(0, std::move(da));
      }
      if (wants(1)) {
        Tensor ga(a.shape());
        k.mul(g.raw(), a.raw(), ga.raw(), ga.size());
        give(1, reduce_to(ga, operand(1).shape(), kind));
      }
      return;
    }
    case Primitive::kRelu: {
      Tensor dx(y.shape());
      k.relu_backward(operand(0).raw(), g.raw(), dx.raw(), dx.size());
      give(0, std::move(dx));
      return;
    }
    case Primitive::kSigmoid: {
      Tensor dx(y.shape());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = g[i] * y[i] * (1.0 - y[i]);
      give(0, std::move(dx));
      return;
    }
    case Primitive::kSquare: {
      const Tensor& x = operand(0);
      Tensor dx(y.shape());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = 2.0 * x[i] * g[i];
      give(0, std::move(dx));
      return;
    }
    case Primitive::kSqrt: {
      // subgradient 0 at the origin, where the derivative is unbounded
      Tensor dx(y.shape());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = y[i] > 0.0 ? g[i] / (2.0 * y[i]) : 0.0;
      give(0, std::move(dx));
      return;
    }
    case Primitive::kSum:
      give(0, spread(g, operand(0), node.attrs.axis, 1.0));
      return;
    case Primitive::kMean: {
      const double count = static_cast<double>(reduced_count(operand(0), node.attrs.axis));
      give(0, spread(g, operand(0), node.attrs.axis, 1.0 / count));
      return;
    }
    case Primitive::kConcat: {
      if (node.attrs.axis == 1) {
        const std::size_t m = y.shape()[0], n = y.shape()[1];
        std::size_t offset = 0;
        for (std::size_t p = 0; p < node.operands.size(); ++p) {
          const std::size_t w = operand(p).shape()[1];
          if (wants(p)) {
            Tensor part(operand(p).shape());
            for (std::size_t i = 0; i < m; ++i) std::copy_n(g.raw() + i * n + offset, w, part.raw() + i * w);
            give(p, std::move(part));
          }
          offset += w;
        }
      } else {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < node.operands.size(); ++p) {
          const std::size_t len = operand(p).size();
          if (wants(p)) {
            Tensor part(operand(p).shape());
            std::copy_n(g.raw() + offset, len, part.raw());
            give(p, std::move(part));
          }
          offset += len;
        }
      }
      return;
    }
    case Primitive::kScale: {
      Tensor dx(y.shape());
      k.scale(node.attrs.factor, g.raw(), dx.raw(), dx.size());
      give(0, std::move(dx));
      return;
    }
    case Primitive::kExp: {
      Tensor dx(y.shape());
      k.mul(g.raw(), y.raw(), dx.raw(), dx.size());
      give(0, std::move(dx));
      return;
    }
    case Primitive::kLog: {
      const Tensor& x = operand(0);
      Tensor dx(y.shape());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = g[i] / x[i];
      give(0, std::move(dx));
      return;
    }
    case Primitive::kSoftmaxRow: {
      const std::size_t m = y.shape()[0], n = y.shape()[1];
      Tensor dx(y.shape());
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g.at(i, j) * y.at(i, j);
        for (std::size_t j = 0; j < n; ++j) dx.at(i, j) = y.at(i, j) * (g.at(i, j) - dot);
      }
      give(0, std::move(dx));
      return;
    }
  }
}

Var matmul(Var a, Var b, bool transpose_b) {
  PrimitiveAttrs attrs;
  attrs.transpose_b = transpose_b;
  return a.graph->apply(Primitive::kMatmul, {a, b}, attrs);
}
Var add(Var a, Var b) { return a.graph->apply(Primitive::kAdd, {a, b}); }
Var sub(Var a, Var b) { return a.graph->apply(Primitive::kSub, {a, b}); }
Var multiply(Var a, Var b) { return a.graph->apply(Primitive::kMultiply, {a, b}); }
Var relu(Var x) { return x.graph->apply(Primitive::kRelu, {x}); }
Var sigmoid(Var x) { return x.graph->apply(Primitive::kSigmoid, {x}); }
Var square(Var x) { return x.graph->apply(Primitive::kSquare, {x}); }
Var sqrt(Var x) { return x.graph->apply(Primitive::kSqrt, {x}); }
Var sum(Var x, int axis) {
  PrimitiveAttrs attrs;
  attrs.axis = axis;
  return x.graph->apply(Primitive::kSum, {x}, attrs);
}
Var mean(Var x, int axis) {
  PrimitiveAttrs attrs;
  attrs.axis = axis;
  return x.graph->apply(Primitive::kMean, {x}, attrs);
}
Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: needs at least two operands");
  PrimitiveAttrs attrs;
  attrs.axis = axis;
  return parts[0].graph->apply(Primitive::kConcat, parts, attrs);
}
Var concat(Var a, Var b, int axis) {
  const Var parts[] = {a, b};
  return concat(parts, axis);
}
Var scale(Var x, double factor) {
  PrimitiveAttrs attrs;
  attrs.factor = factor;
  return x.graph->apply(Primitive::kScale, {x}, attrs);
}
Var exp(Var x) { return x.graph->apply(Primitive::kExp, {x}); }
Var log(Var x) { return x.graph->apply(Primitive::kLog, {x}); }
Var softmax_row(Var x) { return x.graph->apply(Primitive::kSoftmaxRow, {x}); }

Var euclidean_distance(Var a, Var b) {
  const Var diff = sub(a, b);
  if (diff.value().rank() == 1) return sqrt(sum(square(diff)));
  return sqrt(sum(square(diff), 1));
}

std::vector<Tensor> gradients(const ScalarFunction& fn, std::span<const Tensor> params) {
  Graph graph;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(graph.leaf(p, true));
  const Var loss = fn(graph, leaves);
  const GradientMap grads = graph.backward(loss);
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    out.push_back(grads.contains(leaves[i]) ? grads.at(leaves[i]) : Tensor::zeros(params[i].shape()));
  return out;
}

double finite_difference_check(const ScalarFunction& fn, std::span<const Tensor> params,
                               double epsilon) {
  if (!(epsilon > 0.0)) throw ValidationError("finite_difference_check: epsilon must be positive");
  const std::vector<Tensor> analytic = gradients(fn, params);
  std::vector<Tensor> probe(params.begin(), params.end());
  auto evaluate = [&] {
    Graph graph;
    std::vector<Var> leaves;
    for (const Tensor& p : probe) leaves.push_back(graph.leaf(p, false));
    return fn(graph, leaves).value().item();
  };
  double worst = 0.0;
  for (std::size_t p = 0; p < probe.size(); ++p) {
    for (std::size_t i = 0; i < probe[p].size(); ++i) {
      const double original = probe[p][i];
      probe[p][i] = original + epsilon;
      const double up = evaluate();
      probe[p][i] = original - epsilon;
      const double down = evaluate();
      probe[p][i] = original;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[p][i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace relbot::ad
