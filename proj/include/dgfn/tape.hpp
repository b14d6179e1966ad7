#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dgfn/tensor.hpp"

namespace dgfn {

/// Reverse-mode gradient tape over a fixed primitive set: the operations a
/// small MLP policy with masked log-softmax heads needs, plus the index
/// plumbing (gather, segment sums, slices, pair differences) that assembles
/// per-trajectory losses. No broadcasting beyond what is listed here.
///
/// Nodes are appended in evaluation order, so node order is a topological
/// order and the backward pass is a single reverse sweep. Forward values are
/// checked for NaN/Inf as they are produced; a non-finite value is a hard
/// error.
class Tape {
 public:
  using NodeId = std::uint32_t;

  enum class Op : std::uint8_t {
    kLeaf,
    kAffine,         // (X[B,n], W[m,n], b[m]) -> X*W^T + b, [B,m]
    kLeakyRelu,      // elementwise, slope in aux_scalar
    kLogSoftmaxRows, // row-wise log-softmax of [B,C]
    kAdd,            // same shape
    kSub,            // same shape
    kMul,            // same shape, elementwise
    kAddScalar,      // (x, s[1]) -> x + s broadcast
    kSquare,
    kSum,            // -> [1]
    kScale,          // x * aux_scalar
    kGather,         // (X[B,C]) -> out[k] = X(rows[k], cols[k])
    kSegmentSum,     // (x[N]) -> out[t] = sum of segment t (offsets in aux)
    kSlice,          // (x[N]) -> x[begin:end]
    kConcat,         // 1-D inputs -> concatenation
    kCumSum,         // 1-D inclusive prefix sum
    kPairDiff,       // (x[N]) -> out[p] = x[j_p] - x[i_p]
    kReshape,
  };

  // --- leaves ---------------------------------------------------------

  /// Constant input; receives no gradient.
  NodeId input(Tensor value) { return emit_leaf(std::move(value), false, {}); }

  /// Differentiable leaf. The value is copied; gradients are retrieved from
  /// the backward() result at the returned id.
  NodeId param(const Tensor& value, std::string name) {
    return emit_leaf(value, true, std::move(name));
  }

  // --- primitives -----------------------------------------------------

  NodeId affine(NodeId x, NodeId w, NodeId b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    if (xv.shape.size() != 2 || wv.shape.size() != 2 || bv.shape.size() != 1 ||
        xv.shape[1] != wv.shape[1] || bv.shape[0] != wv.shape[0]) {
      throw Error("affine: shape mismatch");
    }
    const auto rows = xv.shape[0], out_c = wv.shape[0];
    Tensor out = Tensor::zeros({rows, out_c});
    mat(out).noalias() = cmat(xv) * cmat(wv).transpose();
    mat(out).rowwise() += cvec(bv).transpose();
    return emit(Op::kAffine, {x, w, b}, std::move(out));
  }

  NodeId leaky_relu(NodeId x, double slope) {
    Tensor out = value(x);
    for (double& v : out.data) {
      if (v < 0) v *= slope;
    }
    NodeId id = emit(Op::kLeakyRelu, {x}, std::move(out));
    nodes_[id].aux_scalar = slope;
    return id;
  }

  NodeId log_softmax_rows(NodeId x) {
    const Tensor& xv = value(x);
    if (xv.shape.size() != 2) throw Error("log_softmax_rows: want a matrix");
    Tensor out = xv;
    const std::size_t c = xv.shape[1];
    for (std::size_t r = 0; r < xv.shape[0]; ++r) {
      double* row = out.data.data() + r * c;
      double mx = *std::max_element(row, row + c);
      double acc = 0;
      for (std::size_t j = 0; j < c; ++j) acc += std::exp(row[j] - mx);
      const double lse = mx + std::log(acc);
      for (std::size_t j = 0; j < c; ++j) row[j] -= lse;
    }
    return emit(Op::kLogSoftmaxRows, {x}, std::move(out));
  }

  NodeId add(NodeId a, NodeId b) { return binary(Op::kAdd, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::kSub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary(Op::kMul, a, b); }

  NodeId add_scalar(NodeId x, NodeId s) {
    if (!value(s).is_scalar()) throw Error("add_scalar: rhs must be scalar");
    Tensor out = value(x);
    const double sv = value(s).data[0];
    for (double& v : out.data) v += sv;
    return emit(Op::kAddScalar, {x, s}, std::move(out));
  }

  NodeId square(NodeId x) {
    Tensor out = value(x);
    for (double& v : out.data) v *= v;
    return emit(Op::kSquare, {x}, std::move(out));
  }

  NodeId sum(NodeId x) {
    double acc = 0;
    for (double v : value(x).data) acc += v;
    return emit(Op::kSum, {x}, Tensor::scalar(acc));
  }

  NodeId scale(NodeId x, double c) {
    Tensor out = value(x);
    for (double& v : out.data) v *= c;
    NodeId id = emit(Op::kScale, {x}, std::move(out));
    nodes_[id].aux_scalar = c;
    return id;
  }

  NodeId mean(NodeId x) {
    const std::size_t n = value(x).numel();
    if (n == 0) throw Error("mean: empty input");
    return scale(sum(x), 1.0 / static_cast<double>(n));
  }

  NodeId gather(NodeId x, std::vector<std::int64_t> rows,
                std::vector<std::int64_t> cols) {
    const Tensor& xv = value(x);
    if (xv.shape.size() != 2) throw Error("gather: want a matrix");
    if (rows.size() != cols.size()) throw Error("gather: index size mismatch");
    Tensor out = Tensor::zeros({rows.size()});
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto r = static_cast<std::size_t>(rows[k]);
      const auto c = static_cast<std::size_t>(cols[k]);
      if (r >= xv.shape[0] || c >= xv.shape[1]) throw Error("gather: index out of range");
      out.data[k] = xv.at(r, c);
    }
    NodeId id = emit(Op::kGather, {x}, std::move(out));
    auto& aux = nodes_[id].aux_ints;
    aux = std::move(rows);
    aux.insert(aux.end(), cols.begin(), cols.end());
    return id;
  }

  /// offsets has T+1 entries; segment t covers [offsets[t], offsets[t+1]).
  /// Empty segments sum to zero.
  NodeId segment_sum(NodeId x, std::vector<std::int64_t> offsets) {
    const Tensor& xv = value(x);
    if (xv.shape.size() != 1) throw Error("segment_sum: want a vector");
    if (offsets.empty() || offsets.front() != 0 ||
        static_cast<std::size_t>(offsets.back()) != xv.numel()) {
      throw Error("segment_sum: bad offsets");
    }
    const std::size_t t = offsets.size() - 1;
    Tensor out = Tensor::zeros({t});
    for (std::size_t s = 0; s < t; ++s) {
      double acc = 0;
      for (std::int64_t i = offsets[s]; i < offsets[s + 1]; ++i) acc += xv.data[static_cast<std::size_t>(i)];
      out.data[s] = acc;
    }
    NodeId id = emit(Op::kSegmentSum, {x}, std::move(out));
    nodes_[id].aux_ints = std::move(offsets);
    return id;
  }

  NodeId slice(NodeId x, std::int64_t begin, std::int64_t end) {
    const Tensor& xv = value(x);
    if (xv.shape.size() != 1) throw Error("slice: want a vector");
    if (begin < 0 || end < begin || static_cast<std::size_t>(end) > xv.numel()) {
      throw Error("slice: range out of bounds");
    }
    Tensor out(
        {static_cast<std::size_t>(end - begin)},
        std::vector<double>(xv.data.begin() + begin, xv.data.begin() + end));
    NodeId id = emit(Op::kSlice, {x}, std::move(out));
    nodes_[id].aux_ints = {begin, end};
    return id;
  }

  NodeId concat(std::span<const NodeId> parts) {
    if (parts.empty()) throw Error("concat: no inputs");
    std::vector<double> out;
    for (NodeId p : parts) {
      const Tensor& v = value(p);
      if (v.shape.size() != 1) throw Error("concat: want vectors");
      out.insert(out.end(), v.data.begin(), v.data.end());
    }
    return emit(Op::kConcat, {parts.begin(), parts.end()},
                Tensor::row_vector(std::move(out)));
  }

  NodeId cumsum(NodeId x) {
    const Tensor& xv = value(x);
    if (xv.shape.size() != 1) throw Error("cumsum: want a vector");
    Tensor out = xv;
    double acc = 0;
    for (double& v : out.data) {
      acc += v;
      v = acc;
    }
    return emit(Op::kCumSum, {x}, std::move(out));
  }

  /// pairs is a flat (i0,j0,i1,j1,...) list; out[p] = x[j_p] - x[i_p].
  NodeId pair_diff(NodeId x, std::vector<std::int64_t> pairs) {
    const Tensor& xv = value(x);
    if (xv.shape.size() != 1) throw Error("pair_diff: want a vector");
    if (pairs.size() % 2 != 0) throw Error("pair_diff: odd index list");
    Tensor out = Tensor::zeros({pairs.size() / 2});
    for (std::size_t p = 0; p < out.numel(); ++p) {
      const auto i = static_cast<std::size_t>(pairs[2 * p]);
      const auto j = static_cast<std::size_t>(pairs[2 * p + 1]);
      if (i >= xv.numel() || j >= xv.numel()) throw Error("pair_diff: index out of range");
      out.data[p] = xv.data[j] - xv.data[i];
    }
    NodeId id = emit(Op::kPairDiff, {x}, std::move(out));
    nodes_[id].aux_ints = std::move(pairs);
    return id;
  }

  NodeId reshape_node(NodeId x, std::vector<std::size_t> shape) {
    Tensor out = reshape(value(x), std::move(shape));
    return emit(Op::kReshape, {x}, std::move(out));
  }

  // --- access ---------------------------------------------------------

  const Tensor& value(NodeId id) const { return values_[id]; }
  std::size_t size() const { return nodes_.size(); }
  const std::string& param_name(NodeId id) const { return nodes_[id].name; }

  /// Gradient of `loss` (a scalar node) with respect to every node, indexed
  /// by NodeId. Differentiable leaves that do not participate in the loss
  /// get explicit zero gradients; other untouched nodes are left empty.
  /// Forward values are not modified.
  std::vector<Tensor> backward(NodeId loss) const {
    if (loss >= nodes_.size()) throw Error("backward: no such node");
    if (!value(loss).is_scalar()) throw Error("backward: loss must be a scalar node");
    std::vector<Tensor> grads(nodes_.size());
    grads[loss] = Tensor::scalar(1.0);
    for (std::size_t idx = nodes_.size(); idx-- > 0;) {
      const NodeId id = static_cast<NodeId>(idx);
      if (grads[id].data.empty()) continue;
      propagate(id, grads);
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].op == Op::kLeaf && nodes_[i].requires_grad && grads[i].data.empty()) {
        grads[i] = Tensor::zeros(values_[i].shape);
      }
    }
    return grads;
  }

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::vector<NodeId> inputs;
    double aux_scalar = 0;
    std::vector<std::int64_t> aux_ints;
    bool requires_grad = false;
    std::string name;  // differentiable leaves only
  };

  using RowMat =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  static Eigen::Map<RowMat> mat(Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
            static_cast<Eigen::Index>(t.shape[1])};
  }
  static Eigen::Map<const RowMat> cmat(const Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
            static_cast<Eigen::Index>(t.shape[1])};
  }
  static Eigen::Map<const Eigen::VectorXd> cvec(const Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.numel())};
  }
  static Eigen::Map<Eigen::VectorXd> vec(Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.numel())};
  }

  NodeId emit_leaf(Tensor value, bool requires_grad, std::string name) {
    Node n;
    n.op = Op::kLeaf;
    n.requires_grad = requires_grad;
    n.name = std::move(name);
    return push(std::move(n), std::move(value), /*check_finite=*/true);
  }

  NodeId emit(Op op, std::vector<NodeId> inputs, Tensor value) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    return push(std::move(n), std::move(value), /*check_finite=*/true);
  }

  NodeId push(Node node, Tensor value, bool check_finite) {
    if (check_finite && !value.all_finite()) {
      throw Error("tape: non-finite value produced by " + op_name(node.op));
    }
    nodes_.push_back(std::move(node));
    values_.push_back(std::move(value));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId binary(Op op, NodeId a, NodeId b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) throw Error(op_name(op) + ": shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) {
      switch (op) {
        case Op::kAdd: out.data[i] = av.data[i] + bv.data[i]; break;
        case Op::kSub: out.data[i] = av.data[i] - bv.data[i]; break;
        case Op::kMul: out.data[i] = av.data[i] * bv.data[i]; break;
        default: throw Error("binary: bad op");
      }
    }
    return emit(op, {a, b}, std::move(out));
  }

  Tensor& grad_buffer(std::vector<Tensor>& grads, NodeId id) const {
    if (grads[id].data.empty()) grads[id] = Tensor::zeros(values_[id].shape);
    return grads[id];
  }

  void propagate(NodeId id, std::vector<Tensor>& grads) const {
    const Node& n = nodes_[id];
    const Tensor& g = grads[id];
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAffine: {
        const Tensor& xv = values_[n.inputs[0]];
        const Tensor& wv = values_[n.inputs[1]];
        Tensor& gx = grad_buffer(grads, n.inputs[0]);
        Tensor& gw = grad_buffer(grads, n.inputs[1]);
        Tensor& gb = grad_buffer(grads, n.inputs[2]);
        mat(gx).noalias() += cmat(g) * cmat(wv);
        mat(gw).noalias() += cmat(g).transpose() * cmat(xv);
        vec(gb) += cmat(g).colwise().sum().transpose();
        break;
      }
      case Op::kLeakyRelu: {
        const Tensor& xv = values_[n.inputs[0]];
        Tensor& gx = grad_buffer(grads, n.inputs[0]);
        for (std::size_t i = 0; i < xv.numel(); ++i) {
          gx.data[i] += g.data[i] * (xv.data[i] > 0 ? 1.0 : n.aux_scalar);
        }
        break;
      }
      case Op::kLogSoftmaxRows: {
        const Tensor& out = values_[id];
        Tensor& gx = grad_buffer(grads, n.inputs[0]);
        const std::size_t c = out.shape[1];
        for (std::size_t r = 0; r < out.shape[0]; ++r) {
          double dot = 0;
          for (std::size_t j = 0; j < c; ++j) dot += g.at(r, j);
          for (std::size_t j = 0; j < c; ++j) {
            gx.at(r, j) += g.at(r, j) - std::exp(out.at(r, j)) * dot;
          }
        }
        break;
      }
      case Op::kAdd: {
        accumulate(grads, n.inputs[0], g, 1.0);
        accumulate(grads, n.inputs[1], g, 1.0);
        break;
      }
      case Op::kSub: {
        accumulate(grads, n.inputs[0], g, 1.0);
        accumulate(grads, n.inputs[1], g, -1.0);
        break;
      }
      case Op::kMul: {
        const Tensor& av = values_[n.inputs[0]];
        const Tensor& bv = values_[n.inputs[1]];
        Tensor& ga = grad_buffer(grads, n.inputs[0]);
        Tensor& gb = grad_buffer(grads, n.inputs[1]);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          ga.data[i] += g.data[i] * bv.data[i];
          gb.data[i] += g.data[i] * av.data[i];
        }
        break;
      }
      case Op::kAddScalar: {
        accumulate(grads, n.inputs[0], g, 1.0);
        Tensor& gs = grad_buffer(grads, n.inputs[1]);
        for (double v : g.data) gs.data[0] += v;
        break;
      }
      case Op::kSquare: {
        const Tensor& xv = values_[n.inputs[0]];
        Tensor& gx = grad_buffer(grads, n.inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          gx.data[i] += 2.0 * xv.data[i] * g.data[i];
        }
        break;
      }
      case Op::kSum: {
        Tensor& gx = grad_buffer(grads, n.inputs[0]);
        for (double& v : gx.data) v += g.data[0];
        break;
      }
      case Op::kScale: {
        accumulate(grads, n.inputs[0], g, n.aux_scalar);
        break;
      }
      case Op::kGather: {
        Tensor& gx = grad_buffer(grads, n.inputs[0]);
        const std::size_t k = g.numel();
        for (std::size_t p = 0; p < k; ++p) {
          const auto r = static_cast<std::size_t>(n.aux_ints[p]);
          const auto c = static_cast<std::size_t>(n.aux_ints[k + p]);
          gx.at(r, c) += g.data[p];
        }
        break;
      }
      case Op::kSegmentSum: {
        Tensor& gx = grad_buffer(grads, n.inputs[0]);
        for (std::size_t s = 0; s + 1 < n.aux_ints.size(); ++s) {
          for (std::int64_t i = n.aux_ints[s]; i < n.aux_ints[s + 1]; ++i) {
            gx.data[static_cast<std::size_t>(i)] += g.data[s];
          }
        }
        break;
      }
      case Op::kSlice: {
        Tensor& gx = grad_buffer(grads, n.inputs[0]);
        const auto begin = static_cast<std::size_t>(n.aux_ints[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) gx.data[begin + i] += g.data[i];
        break;
      }
      case Op::kConcat: {
        std::size_t pos = 0;
        for (NodeId in : n.inputs) {
          Tensor& gi = grad_buffer(grads, in);
          for (std::size_t i = 0; i < gi.numel(); ++i) gi.data[i] += g.data[pos + i];
          pos += gi.numel();
        }
        break;
      }
      case Op::kCumSum: {
        Tensor& gx = grad_buffer(grads, n.inputs[0]);
        double acc = 0;
        for (std::size_t i = g.numel(); i-- > 0;) {
          acc += g.data[i];
          gx.data[i] += acc;
        }
        break;
      }
      case Op::kPairDiff: {
        Tensor& gx = grad_buffer(grads, n.inputs[0]);
        for (std::size_t p = 0; p < g.numel(); ++p) {
          gx.data[static_cast<std::size_t>(n.aux_ints[2 * p])] -= g.data[p];
          gx.data[static_cast<std::size_t>(n.aux_ints[2 * p + 1])] += g.data[p];
        }
        break;
      }
      case Op::kReshape: {
        Tensor& gx = grad_buffer(grads, n.inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i];
        break;
      }
      default:
        throw Error("backward: unsupported primitive");
    }
  }

  static void accumulate(std::vector<Tensor>& grads, NodeId id, const Tensor& g,
                         double factor) {
    // callers guarantee matching shapes
    Tensor& dst = grads[id].data.empty()
                      ? (grads[id] = Tensor::zeros(g.shape))
                      : grads[id];
    for (std::size_t i = 0; i < g.numel(); ++i) dst.data[i] += factor * g.data[i];
  }

  static std::string op_name(Op op) {
    switch (op) {
      case Op::kLeaf: return "leaf";
      case Op::kAffine: return "affine";
      case Op::kLeakyRelu: return "leaky_relu";
      case Op::kLogSoftmaxRows: return "log_softmax_rows";
      case Op::kAdd: return "add";
      case Op::kSub: return "sub";
      case Op::kMul: return "mul";
      case Op::kAddScalar: return "add_scalar";
      case Op::kSquare: return "square";
      case Op::kSum: return "sum";
      case Op::kScale: return "scale";
      case Op::kGather: return "gather";
      case Op::kSegmentSum: return "segment_sum";
      case Op::kSlice: return "slice";
      case Op::kConcat: return "concat";
      case Op::kCumSum: return "cumsum";
      case Op::kPairDiff: return "pair_diff";
      case Op::kReshape: return "reshape";
    }
    return "?";
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> values_;
};

}  // namespace dgfn
