#pragma once

// Tape-style reverse-mode differentiation over dense tensors.
//
// Every node value is computed eagerly when the node is created. The
// backward rule of each primitive is written in terms of other primitives,
// so the gradients produced by gradient_nodes() are themselves graph nodes
// and can be differentiated again (grad_as_node). A graph serves one
// optimization step and is discarded afterwards.

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prism/error.hpp"
#include "prism/kernels.hpp"
#include "prism/tensor.hpp"

namespace prism {

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kMatMul,
  kTranspose,
  kConv3d,
  kConv3dInputGrad,
  kConv3dWeightGrad,
  kBiasAdd,
  kRelu,
  kAvgPool2,
  kAvgPool2Adjoint,
  kMaxPool2,
  kSumAxis,
  kBroadcastAxis,
  kSum,
  kMean,
  kExpand,
  kSquaredNorm,
  kSoftmax,
  kSoftmaxCrossEntropy,
  kReshape,
  kConcat,
  kSlice,
  kPadSlice,
};

constexpr const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "subtract";
    case Op::kMul: return "multiply";
    case Op::kScale: return "scale";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kConv3d: return "conv3d";
    case Op::kConv3dInputGrad: return "conv3d_input_grad";
    case Op::kConv3dWeightGrad: return "conv3d_weight_grad";
    case Op::kBiasAdd: return "bias_add";
    case Op::kRelu: return "relu";
    case Op::kAvgPool2: return "avg_pool2";
    case Op::kAvgPool2Adjoint: return "avg_pool2_adjoint";
    case Op::kMaxPool2: return "max_pool2";
    case Op::kSumAxis: return "sum_axis";
    case Op::kBroadcastAxis: return "broadcast_axis";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kExpand: return "expand";
    case Op::kSquaredNorm: return "squared_norm";
    case Op::kSoftmax: return "softmax";
    case Op::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Op::kReshape: return "reshape";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kPadSlice: return "pad_slice";
  }
  return "unknown";
}

// Primitives whose backward rule is not expressed through other primitives.
constexpr bool has_second_order_rule(Op op) { return op != Op::kMaxPool2; }

enum class LeafKind : std::uint8_t { kNone, kParameter, kData, kConstant };

struct OpAttrs {
  int axis = 0;
  Index start = 0;
  Index length = 0;
  double factor = 1.0;
  Shape shape;
  kernels::Kernel3 kernel{};
  std::vector<int> labels;
  std::vector<Index> argmax;
};

template <typename S>
struct NodeRecord {
  Op op = Op::kLeaf;
  LeafKind leaf = LeafKind::kNone;
  bool requires_grad = false;
  std::vector<int> parents;
  BasicTensor<S> value;
  OpAttrs attrs;
};

template <typename S>
class Graph;

/// Lightweight handle to a node in a Graph. Copyable; valid for the
/// lifetime of its graph.
template <typename S>
class Node {
 public:
  Node() = default;
  Node(Graph<S>* graph, int id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  Graph<S>& graph() const { return *graph_; }
  int id() const { return id_; }
  const NodeRecord<S>& record() const { return graph_->record(id_); }
  const BasicTensor<S>& value() const { return record().value; }
  const Shape& shape() const { return value().shape(); }
  Op op() const { return record().op; }

 private:
  Graph<S>* graph_ = nullptr;
  int id_ = -1;
};

template <typename S>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Node<S> parameter(BasicTensor<S> value) { return leaf(std::move(value), LeafKind::kParameter); }
  Node<S> data(BasicTensor<S> value) { return leaf(std::move(value), LeafKind::kData); }
  Node<S> constant(BasicTensor<S> value) { return leaf(std::move(value), LeafKind::kConstant); }

  Node<S> leaf(BasicTensor<S> value, LeafKind kind) {
    NodeRecord<S> r;
    r.leaf = kind;
    r.requires_grad = kind != LeafKind::kConstant;
    r.value = std::move(value);
    return push(std::move(r));
  }

  Node<S> emplace(Op op, std::vector<int> parents, BasicTensor<S> value, OpAttrs attrs = {}) {
    NodeRecord<S> r;
    r.op = op;
    for (int p : parents) r.requires_grad = r.requires_grad || nodes_[static_cast<std::size_t>(p)].requires_grad;
    r.parents = std::move(parents);
    r.value = std::move(value);
    r.attrs = std::move(attrs);
    if (check_finite_ && !r.value.all_finite()) {
      throw NumericError(std::string("non-finite value produced by ") + op_name(op));
    }
    return push(std::move(r));
  }

  const NodeRecord<S>& record(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Debug mode: reject any node whose value contains NaN or Inf.
  void set_finite_check(bool on) { check_finite_ = on; }

 private:
  Node<S> push(NodeRecord<S> r) {
    if (check_finite_ && !r.value.all_finite()) throw NumericError("non-finite leaf value");
    nodes_.push_back(std::move(r));
    return Node<S>(this, static_cast<int>(nodes_.size()) - 1);
  }

  // deque: references to records stay valid while nodes are appended.
  std::deque<NodeRecord<S>> nodes_;
  bool check_finite_ = false;
};

namespace detail {

template <typename S>
void same_graph(const Node<S>& a, const Node<S>& b, const char* op) {
  if (&a.graph() != &b.graph()) throw Error(std::string(op) + ": operands belong to different graphs");
}

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

[[noreturn]] inline void bad_shape(const char* op, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op) + ": shape " + to_string(a) + " " + why);
}

inline void check_axis(const char* op, const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size())) bad_shape(op, s, "has no axis " + std::to_string(axis));
}

template <typename S, typename F>
Node<S> elementwise(Op op, Node<S> a, Node<S> b, F f) {
  same_graph(a, b, op_name(op));
  if (a.shape() != b.shape()) shape_mismatch(op_name(op), a.shape(), b.shape());
  BasicTensor<S> out = a.value();
  const BasicTensor<S>& bv = b.value();
  for (Index i = 0; i < out.size(); ++i) out[i] = f(out[i], bv[i]);
  return a.graph().emplace(op, {a.id(), b.id()}, std::move(out));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives

template <typename S>
Node<S> add(Node<S> a, Node<S> b) {
  return detail::elementwise(Op::kAdd, a, b, [](S x, S y) { return x + y; });
}

template <typename S>
Node<S> sub(Node<S> a, Node<S> b) {
  return detail::elementwise(Op::kSub, a, b, [](S x, S y) { return x - y; });
}

template <typename S>
Node<S> mul(Node<S> a, Node<S> b) {
  return detail::elementwise(Op::kMul, a, b, [](S x, S y) { return x * y; });
}

template <typename S>
Node<S> scale(Node<S> a, double factor) {
  BasicTensor<S> out = a.value();
  out.array() *= static_cast<S>(factor);
  OpAttrs attrs;
  attrs.factor = factor;
  return a.graph().emplace(Op::kScale, {a.id()}, std::move(out), std::move(attrs));
}

template <typename S>
Node<S> matmul(Node<S> a, Node<S> b) {
  detail::same_graph(a, b, "matmul");
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[0]) {
    detail::shape_mismatch("matmul", a.shape(), b.shape());
  }
  return a.graph().emplace(Op::kMatMul, {a.id(), b.id()}, kernels::matmul(a.value(), b.value()));
}

template <typename S>
Node<S> transpose(Node<S> a) {
  if (a.value().rank() != 2) detail::bad_shape("transpose", a.shape(), "is not a matrix");
  return a.graph().emplace(Op::kTranspose, {a.id()}, kernels::transpose(a.value()));
}

/// 3D cross-correlation of x [B,T,H,W,Ci] with w [kT,kH,kW,Ci,Co], stride 1,
/// zero padding that preserves T, H, W. Kernel extents must be odd.
template <typename S>
Node<S> conv3d(Node<S> x, Node<S> w) {
  detail::same_graph(x, w, "conv3d");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 5 || ws.size() != 5 || xs[4] != ws[3]) detail::shape_mismatch("conv3d", xs, ws);
  for (int k = 0; k < 3; ++k) {
    if (ws[static_cast<std::size_t>(k)] % 2 == 0) detail::bad_shape("conv3d", ws, "needs odd kernel extents");
  }
  OpAttrs attrs;
  attrs.kernel = {ws[0], ws[1], ws[2]};
  return x.graph().emplace(Op::kConv3d, {x.id(), w.id()}, kernels::conv3d(x.value(), w.value()), std::move(attrs));
}

// Adjoint of conv3d with respect to its input.
template <typename S>
Node<S> conv3d_input_grad(Node<S> grad_out, Node<S> w) {
  detail::same_graph(grad_out, w, "conv3d_input_grad");
  const Shape& gs = grad_out.shape();
  const Shape& ws = w.shape();
  if (gs.size() != 5 || ws.size() != 5 || gs[4] != ws[4]) detail::shape_mismatch("conv3d_input_grad", gs, ws);
  OpAttrs attrs;
  attrs.kernel = {ws[0], ws[1], ws[2]};
  return grad_out.graph().emplace(Op::kConv3dInputGrad, {grad_out.id(), w.id()},
                                  kernels::conv3d_input_grad(grad_out.value(), w.value()), std::move(attrs));
}

// Adjoint of conv3d with respect to its weight.
template <typename S>
Node<S> conv3d_weight_grad(Node<S> x, Node<S> grad_out, kernels::Kernel3 kernel) {
  detail::same_graph(x, grad_out, "conv3d_weight_grad");
  const Shape& xs = x.shape();
  const Shape& gs = grad_out.shape();
  if (xs.size() != 5 || gs.size() != 5 || !std::equal(xs.begin(), xs.begin() + 4, gs.begin())) {
    detail::shape_mismatch("conv3d_weight_grad", xs, gs);
  }
  OpAttrs attrs;
  attrs.kernel = kernel;
  return x.graph().emplace(Op::kConv3dWeightGrad, {x.id(), grad_out.id()},
                           kernels::conv3d_weight_grad(x.value(), grad_out.value(), kernel), std::move(attrs));
}

// x [..., C] plus b [C] on the last axis.
template <typename S>
Node<S> bias_add(Node<S> x, Node<S> b) {
  detail::same_graph(x, b, "bias_add");
  if (b.value().rank() != 1 || x.shape().back() != b.shape()[0]) detail::shape_mismatch("bias_add", x.shape(), b.shape());
  return x.graph().emplace(Op::kBiasAdd, {x.id(), b.id()}, kernels::bias_add(x.value(), b.value()));
}

template <typename S>
Node<S> relu(Node<S> x) {
  BasicTensor<S> out = x.value();
  out.array() = out.array().max(S(0));
  return x.graph().emplace(Op::kRelu, {x.id()}, std::move(out));
}

template <typename S>
Node<S> avg_pool2(Node<S> x) {
  const Shape& s = x.shape();
  if (s.size() != 5 || s[2] % 2 || s[3] % 2) detail::bad_shape("avg_pool2", s, "needs [B,T,H,W,C] with even H, W");
  return x.graph().emplace(Op::kAvgPool2, {x.id()}, kernels::avg_pool2(x.value()));
}

template <typename S>
Node<S> avg_pool2_adjoint(Node<S> g) {
  if (g.value().rank() != 5) detail::bad_shape("avg_pool2_adjoint", g.shape(), "is not rank 5");
  return g.graph().emplace(Op::kAvgPool2Adjoint, {g.id()}, kernels::avg_pool2_adjoint(g.value()));
}

// First-order only: its backward routes values eagerly and cannot be
// differentiated again.
template <typename S>
Node<S> max_pool2(Node<S> x) {
  const Shape& s = x.shape();
  if (s.size() != 5 || s[2] % 2 || s[3] % 2) detail::bad_shape("max_pool2", s, "needs [B,T,H,W,C] with even H, W");
  OpAttrs attrs;
  BasicTensor<S> out = kernels::max_pool2(x.value(), attrs.argmax);
  return x.graph().emplace(Op::kMaxPool2, {x.id()}, std::move(out), std::move(attrs));
}

template <typename S>
Node<S> sum_axis(Node<S> x, int axis) {
  detail::check_axis("sum_axis", x.shape(), axis);
  OpAttrs attrs;
  attrs.axis = axis;
  return x.graph().emplace(Op::kSumAxis, {x.id()}, kernels::sum_axis(x.value(), axis), std::move(attrs));
}

// Replicates x along a new axis so that the result has `shape`.
template <typename S>
Node<S> broadcast_axis(Node<S> x, int axis, Shape shape) {
  detail::check_axis("broadcast_axis", shape, axis);
  Shape reduced = shape;
  reduced.erase(reduced.begin() + axis);
  if (reduced.empty()) reduced = {1};
  if (reduced != x.shape()) detail::shape_mismatch("broadcast_axis", x.shape(), shape);
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.shape = shape;
  return x.graph().emplace(Op::kBroadcastAxis, {x.id()}, kernels::broadcast_axis(x.value(), axis, shape),
                           std::move(attrs));
}

template <typename S>
Node<S> sum(Node<S> x) {
  return x.graph().emplace(Op::kSum, {x.id()}, BasicTensor<S>::scalar(static_cast<S>(kernels::sum_all(x.value()))));
}

template <typename S>
Node<S> mean(Node<S> x) {
  const double n = static_cast<double>(x.value().size());
  return x.graph().emplace(Op::kMean, {x.id()},
                           BasicTensor<S>::scalar(static_cast<S>(kernels::sum_all(x.value()) / n)));
}

// Fills `shape` with the single value of x.
template <typename S>
Node<S> expand(Node<S> x, Shape shape) {
  if (x.value().size() != 1) detail::bad_shape("expand", x.shape(), "is not a scalar");
  BasicTensor<S> out(shape, x.value()[0]);
  OpAttrs attrs;
  attrs.shape = std::move(shape);
  return x.graph().emplace(Op::kExpand, {x.id()}, std::move(out), std::move(attrs));
}

template <typename S>
Node<S> squared_norm(Node<S> x) {
  double acc = 0.0;
  for (Index i = 0; i < x.value().size(); ++i) acc += static_cast<double>(x.value()[i]) * x.value()[i];
  return x.graph().emplace(Op::kSquaredNorm, {x.id()}, BasicTensor<S>::scalar(static_cast<S>(acc)));
}

// Row-wise softmax of [N,K].
template <typename S>
Node<S> softmax(Node<S> z) {
  if (z.value().rank() != 2) detail::bad_shape("softmax", z.shape(), "is not [N,K]");
  return z.graph().emplace(Op::kSoftmax, {z.id()}, kernels::softmax(z.value()));
}

/// Mean softmax cross-entropy of logits [N,K] against integer labels.
template <typename S>
Node<S> softmax_cross_entropy(Node<S> logits, std::vector<int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2) detail::bad_shape("softmax_cross_entropy", s, "is not [N,K]");
  if (static_cast<Index>(labels.size()) != s[0]) {
    detail::bad_shape("softmax_cross_entropy", s, "does not match " + std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || y >= s[1]) throw Error("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
  }
  const S loss = kernels::softmax_cross_entropy(logits.value(), labels);
  OpAttrs attrs;
  attrs.labels = std::move(labels);
  return logits.graph().emplace(Op::kSoftmaxCrossEntropy, {logits.id()}, BasicTensor<S>::scalar(loss),
                                std::move(attrs));
}

template <typename S>
Node<S> reshape(Node<S> x, Shape shape) {
  if (numel(shape) != x.value().size()) detail::shape_mismatch("reshape", x.shape(), shape);
  if (shape == x.shape()) return x;
  return x.graph().emplace(Op::kReshape, {x.id()}, x.value().reshaped(shape));
}

template <typename S>
Node<S> concat(std::span<const Node<S>> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts.front().shape();
  detail::check_axis("concat", first, axis);
  std::vector<const BasicTensor<S>*> values;
  std::vector<int> ids;
  for (const Node<S>& p : parts) {
    detail::same_graph(parts.front(), p, "concat");
    Shape a = first, b = p.shape();
    if (a.size() != b.size()) detail::shape_mismatch("concat", first, p.shape());
    a[static_cast<std::size_t>(axis)] = b[static_cast<std::size_t>(axis)] = 0;
    if (a != b) detail::shape_mismatch("concat", first, p.shape());
    values.push_back(&p.value());
    ids.push_back(p.id());
  }
  OpAttrs attrs;
  attrs.axis = axis;
  return parts.front().graph().emplace(Op::kConcat, std::move(ids), kernels::concat(values, axis), std::move(attrs));
}

template <typename S>
Node<S> concat(const std::vector<Node<S>>& parts, int axis) {
  return concat(std::span<const Node<S>>(parts), axis);
}

template <typename S>
Node<S> slice(Node<S> x, int axis, Index start, Index length) {
  detail::check_axis("slice", x.shape(), axis);
  if (start < 0 || length <= 0 || start + length > x.shape()[static_cast<std::size_t>(axis)]) {
    detail::bad_shape("slice", x.shape(), "cannot supply [" + std::to_string(start) + ", " +
                                               std::to_string(start + length) + ") on axis " + std::to_string(axis));
  }
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.start = start;
  attrs.length = length;
  return x.graph().emplace(Op::kSlice, {x.id()}, kernels::slice(x.value(), axis, start, length), std::move(attrs));
}

// Embeds x at offset `start` of a zero tensor whose `axis` has `full_extent`.
template <typename S>
Node<S> pad_slice(Node<S> x, int axis, Index start, Index full_extent) {
  detail::check_axis("pad_slice", x.shape(), axis);
  const Index len = x.shape()[static_cast<std::size_t>(axis)];
  if (start < 0 || start + len > full_extent) detail::bad_shape("pad_slice", x.shape(), "does not fit the target");
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.start = start;
  attrs.length = full_extent;
  return x.graph().emplace(Op::kPadSlice, {x.id()}, kernels::pad_slice(x.value(), axis, start, full_extent),
                           std::move(attrs));
}

template <typename S>
Node<S> operator+(Node<S> a, Node<S> b) { return add(a, b); }
template <typename S>
Node<S> operator-(Node<S> a, Node<S> b) { return sub(a, b); }
template <typename S>
Node<S> operator*(Node<S> a, Node<S> b) { return mul(a, b); }
template <typename S>
Node<S> operator*(double s, Node<S> a) { return scale(a, s); }
template <typename S>
Node<S> operator-(Node<S> a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Reverse mode

namespace detail {

// Vector-Jacobian product of node `id` for parent `slot`, given the adjoint
// of the node's output.
template <typename S>
Node<S> vjp(Graph<S>& g, int id, std::size_t slot, Node<S> adj, bool create_graph) {
  const NodeRecord<S>& r = g.record(id);
  const OpAttrs& at = r.attrs;
  auto parent = [&](std::size_t k) { return Node<S>(&g, r.parents[k]); };
  const Shape& pshape = g.record(r.parents[slot]).value.shape();

  switch (r.op) {
    case Op::kAdd:
      return adj;
    case Op::kSub:
      return slot == 0 ? adj : scale(adj, -1.0);
    case Op::kMul:
      return mul(adj, parent(1 - slot));
    case Op::kScale:
      return scale(adj, at.factor);
    case Op::kMatMul:
      return slot == 0 ? matmul(adj, transpose(parent(1))) : matmul(transpose(parent(0)), adj);
    case Op::kTranspose:
      return transpose(adj);
    case Op::kConv3d:
      return slot == 0 ? conv3d_input_grad(adj, parent(1)) : conv3d_weight_grad(parent(0), adj, at.kernel);
    case Op::kConv3dInputGrad:  // parents: (grad_out, w)
      return slot == 0 ? conv3d(adj, parent(1)) : conv3d_weight_grad(adj, parent(0), at.kernel);
    case Op::kConv3dWeightGrad:  // parents: (x, grad_out)
      return slot == 0 ? conv3d_input_grad(parent(1), adj) : conv3d(parent(0), adj);
    case Op::kBiasAdd: {
      if (slot == 0) return adj;
      const Index c = pshape[0];
      return sum_axis(reshape(adj, Shape{adj.value().size() / c, c}), 0);
    }
    case Op::kRelu: {
      // Second derivative is zero everywhere, so the mask is a constant.
      BasicTensor<S> mask = parent(0).value();
      for (Index i = 0; i < mask.size(); ++i) mask[i] = mask[i] > S(0) ? S(1) : S(0);
      return mul(adj, g.constant(std::move(mask)));
    }
    case Op::kAvgPool2:
      return avg_pool2_adjoint(adj);
    case Op::kAvgPool2Adjoint:
      return avg_pool2(adj);
    case Op::kMaxPool2: {
      if (create_graph) {
        throw Error(std::string("no second-order rule for primitive '") + op_name(r.op) + "'");
      }
      BasicTensor<S> out(pshape);
      for (std::size_t o = 0; o < at.argmax.size(); ++o) out[at.argmax[o]] += adj.value()[static_cast<Index>(o)];
      return g.constant(std::move(out));
    }
    case Op::kSumAxis:
      return broadcast_axis(adj, at.axis, pshape);
    case Op::kBroadcastAxis:
      return sum_axis(adj, at.axis);
    case Op::kSum:
      return expand(adj, pshape);
    case Op::kMean:
      return scale(expand(adj, pshape), 1.0 / static_cast<double>(numel(pshape)));
    case Op::kExpand:
      return sum(adj);
    case Op::kSquaredNorm:
      return scale(mul(expand(adj, pshape), parent(0)), 2.0);
    case Op::kSoftmax: {
      const Node<S> p(&g, id);
      return mul(p, sub(adj, broadcast_axis(sum_axis(mul(adj, p), 1), 1, pshape)));
    }
    case Op::kSoftmaxCrossEntropy: {
      const Node<S> z = parent(0);
      BasicTensor<S> onehot(pshape);
      for (std::size_t i = 0; i < at.labels.size(); ++i) onehot[static_cast<Index>(i) * pshape[1] + at.labels[i]] = S(1);
      const Node<S> residual = scale(sub(softmax(z), g.constant(std::move(onehot))), 1.0 / static_cast<double>(pshape[0]));
      return mul(expand(adj, pshape), residual);
    }
    case Op::kReshape:
      return reshape(adj, pshape);
    case Op::kConcat: {
      Index offset = 0;
      for (std::size_t k = 0; k < slot; ++k) offset += g.record(r.parents[k]).value.shape()[static_cast<std::size_t>(at.axis)];
      return slice(adj, at.axis, offset, pshape[static_cast<std::size_t>(at.axis)]);
    }
    case Op::kSlice:
      return pad_slice(adj, at.axis, at.start, pshape[static_cast<std::size_t>(at.axis)]);
    case Op::kPadSlice:
      return slice(adj, at.axis, at.start, pshape[static_cast<std::size_t>(at.axis)]);
    case Op::kLeaf:
      break;
  }
  throw Error(std::string("no backward rule for primitive '") + op_name(r.op) + "'");
}

}  // namespace detail

/// Gradients of scalar `root` with respect to each leaf in `wrt`, as graph
/// nodes. Leaves that do not influence root receive constant zeros. With
/// create_graph, every primitive on the path must have a second-order rule.
template <typename S>
std::vector<Node<S>> gradient_nodes(Node<S> root, std::span<const Node<S>> wrt, bool create_graph) {
  Graph<S>& g = root.graph();
  if (root.value().size() != 1) {
    throw Error("backward: root must be scalar, got shape " + to_string(root.shape()));
  }
  const int n = root.id() + 1;
  std::vector<char> depends(static_cast<std::size_t>(n), 0);
  for (const Node<S>& w : wrt) {
    if (&w.graph() != &g || w.id() >= g.size() || w.record().leaf == LeafKind::kNone) {
      throw Error("backward: node " + std::to_string(w.id()) + " is not a leaf of this graph");
    }
    if (w.id() < n) depends[static_cast<std::size_t>(w.id())] = 1;
  }
  for (int i = 0; i < n; ++i) {
    if (depends[static_cast<std::size_t>(i)]) continue;
    for (int p : g.record(i).parents) {
      if (depends[static_cast<std::size_t>(p)]) {
        depends[static_cast<std::size_t>(i)] = 1;
        break;
      }
    }
  }

  std::vector<std::optional<Node<S>>> adjoint(static_cast<std::size_t>(n));
  if (depends[static_cast<std::size_t>(root.id())]) {
    adjoint[static_cast<std::size_t>(root.id())] = g.constant(BasicTensor<S>::ones(root.shape()));
  }
  for (int i = n - 1; i >= 0; --i) {
    const auto& adj = adjoint[static_cast<std::size_t>(i)];
    if (!adj || g.record(i).op == Op::kLeaf) continue;
    if (create_graph && !has_second_order_rule(g.record(i).op)) {
      throw Error(std::string("grad_as_node: no second-order rule for primitive '") + op_name(g.record(i).op) + "'");
    }
    const std::vector<int> parents = g.record(i).parents;
    for (std::size_t k = 0; k < parents.size(); ++k) {
      const auto p = static_cast<std::size_t>(parents[k]);
      if (!depends[p]) continue;
      Node<S> contribution = detail::vjp(g, i, k, *adj, create_graph);
      adjoint[p] = adjoint[p] ? add(*adjoint[p], contribution) : contribution;
    }
  }

  std::vector<Node<S>> out;
  out.reserve(wrt.size());
  for (const Node<S>& w : wrt) {
    const auto& a = w.id() < n ? adjoint[static_cast<std::size_t>(w.id())] : std::nullopt;
    out.push_back(a ? *a : g.constant(BasicTensor<S>::zeros(w.shape())));
  }
  return out;
}

/// Exact reverse-mode gradients of scalar `root`, one tensor per `wrt` leaf.
template <typename S>
std::vector<BasicTensor<S>> backward(Node<S> root, std::span<const Node<S>> wrt) {
  std::vector<BasicTensor<S>> out;
  for (const Node<S>& n : gradient_nodes(root, wrt, false)) out.push_back(n.value());
  return out;
}

template <typename S>
std::vector<BasicTensor<S>> backward(Node<S> root, const std::vector<Node<S>>& wrt) {
  return backward(root, std::span<const Node<S>>(wrt));
}

/// Flattened gradient of `root` with respect to `wrt`, as a node that can be
/// differentiated further (e.g. with respect to data leaves).
template <typename S>
Node<S> grad_as_node(Node<S> root, std::span<const Node<S>> wrt) {
  std::vector<Node<S>> flat;
  for (const Node<S>& n : gradient_nodes(root, wrt, true)) flat.push_back(reshape(n, Shape{n.value().size()}));
  return concat(flat, 0);
}

template <typename S>
Node<S> grad_as_node(Node<S> root, const std::vector<Node<S>>& wrt) {
  return grad_as_node(root, std::span<const Node<S>>(wrt));
}

}  // namespace prism
