#pragma once

// Define-by-run reverse-mode differentiation over dense matrices.
//
// A Tape is an append-only node list. Every op records its inputs (always
// earlier nodes) plus whatever activations its backward rule needs, so the
// reverse sweep is a single pass over the nodes in reverse creation order.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "teachclip/core_math.hpp"
#include "teachclip/errors.hpp"
#include "teachclip/tensor.hpp"

namespace teachclip {

using NodeId = std::size_t;

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatMul,
  kTranspose,
  kAdd,
  kAddRow,
  kMul,
  kRelu,
  kScale,
  kRowSoftmax,
  kMeanRows,
  kWeightedSumRows,
  kCosineRows,
  kNormalizeRows,
  kLayerNorm,
  kConcatRows,
  kConcatCols,
  kSliceRows,
  kSliceCols,
  kSum,
  kCustom,
};

class Tape;

/// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  NodeId id() const noexcept { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
  double scalar() const { return value().data.at(0); }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Backward rule for custom nodes: receives the output gradient and one
/// gradient accumulator per input (nullptr when that input needs none).
using CustomBackward = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grads_in)>;

class Tape {
 public:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;
    Tensor saved;         // op-specific activation (normalized rows, x-hat, ...)
    Tensor saved_aux;     // second activation slot (norms, rstd)
    double param = 0.0;   // scale factor / temperature
    std::size_t offset = 0;
    bool requires_grad = false;
    CustomBackward custom;
  };

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    if (!value.all_finite()) throw InvalidInput("leaf: non-finite value");
    Node n;
    n.kind = OpKind::kLeaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Node& node(NodeId id) const { return nodes_.at(id); }
  Node& node(NodeId id) { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient accumulated for `v` by the last backward(). Zero tensor if the
  /// node did not require a gradient.
  const Tensor& grad(Var v) const { return nodes_.at(v.id()).grad; }

  Var push(Node n) {
    for (NodeId in : n.inputs) {
      if (in >= nodes_.size()) throw InvalidInput("tape: input id out of range");
      if (nodes_[in].requires_grad) n.requires_grad = true;
    }
    if (n.kind == OpKind::kLeaf && !n.inputs.empty()) throw InvalidInput("tape: leaf with inputs");
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  void backward(Var loss);

 private:
  void backward_node(NodeId id);

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->node(id_).value; }

namespace detail {

inline void same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw InvalidInput("autodiff: operands live on different tapes");
}

inline Tape::Node make_node(OpKind kind, std::vector<NodeId> inputs, Tensor value) {
  Tape::Node n;
  n.kind = kind;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  return n;
}

inline void normalize_rows_into(const Tensor& x, Tensor& out, Tensor& norms) {
  out = Tensor(x.rows, x.cols);
  norms = Tensor(x.rows, 1);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double sq = 0.0;
    for (double v : x.row(r)) sq += v * v;
    const double nrm = std::sqrt(sq);
    norms(r, 0) = nrm;
    const double denom = std::max(nrm, kNormFloor);
    for (std::size_t c = 0; c < x.cols; ++c) out(r, c) = x(r, c) / denom;
  }
}

// Gradient of y = x / max(|x|, eps) per row, accumulated into dx.
inline void normalize_rows_backward(const Tensor& y, const Tensor& norms, const Tensor& dy,
                                    Tensor& dx) {
  for (std::size_t r = 0; r < y.rows; ++r) {
    const double nrm = norms(r, 0);
    if (nrm > kNormFloor) {
      double proj = 0.0;
      for (std::size_t c = 0; c < y.cols; ++c) proj += y(r, c) * dy(r, c);
      for (std::size_t c = 0; c < y.cols; ++c) dx(r, c) += (dy(r, c) - y(r, c) * proj) / nrm;
    } else {
      for (std::size_t c = 0; c < y.cols; ++c) dx(r, c) += dy(r, c) / kNormFloor;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward ops
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols != B.rows) {
    throw InvalidShape("matmul: " + A.shape_string() + " x " + B.shape_string());
  }
  Tensor C(A.rows, B.cols);
  for (std::size_t i = 0; i < A.rows; ++i) {
    double* crow = C.data.data() + i * C.cols;
    for (std::size_t k = 0; k < A.cols; ++k) {
      const double aik = A.data[i * A.cols + k];
      if (aik == 0.0) continue;
      const double* brow = B.data.data() + k * B.cols;
      for (std::size_t j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return a.tape().push(detail::make_node(OpKind::kMatMul, {a.id(), b.id()}, std::move(C)));
}

inline Var transpose(Var a) {
  const Tensor& A = a.value();
  Tensor T(A.cols, A.rows);
  for (std::size_t i = 0; i < A.rows; ++i)
    for (std::size_t j = 0; j < A.cols; ++j) T(j, i) = A(i, j);
  return a.tape().push(detail::make_node(OpKind::kTranspose, {a.id()}, std::move(T)));
}

/// Elementwise sum. `b` may also be a 1 x cols row broadcast over a's rows.
inline Var add(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.same_shape(B)) {
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
    return a.tape().push(detail::make_node(OpKind::kAdd, {a.id(), b.id()}, std::move(C)));
  }
  if (B.rows == 1 && B.cols == A.cols) {
    Tensor C = A;
    for (std::size_t r = 0; r < C.rows; ++r)
      for (std::size_t c = 0; c < C.cols; ++c) C(r, c) += B(0, c);
    return a.tape().push(detail::make_node(OpKind::kAddRow, {a.id(), b.id()}, std::move(C)));
  }
  throw InvalidShape("add: " + A.shape_string() + " + " + B.shape_string());
}

inline Var mul(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (!A.same_shape(B)) throw InvalidShape("mul: " + A.shape_string() + " * " + B.shape_string());
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.data[i] *= B.data[i];
  return a.tape().push(detail::make_node(OpKind::kMul, {a.id(), b.id()}, std::move(C)));
}

/// max(x, 0); the derivative at exactly 0 is taken to be 0.
inline Var relu(Var a) {
  Tensor C = a.value();
  for (double& v : C.data) v = v > 0.0 ? v : 0.0;
  return a.tape().push(detail::make_node(OpKind::kRelu, {a.id()}, std::move(C)));
}

inline Var scale(Var a, double factor) {
  Tensor C = a.value();
  for (double& v : C.data) v *= factor;
  auto n = detail::make_node(OpKind::kScale, {a.id()}, std::move(C));
  n.param = factor;
  return a.tape().push(std::move(n));
}

inline Var row_softmax(Var a, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw InvalidInput("row_softmax: temperature must be positive");
  const Tensor& A = a.value();
  Tensor C(A.rows, A.cols);
  for (std::size_t r = 0; r < A.rows; ++r) {
    auto p = softmax(A.row(r), temperature);
    std::copy(p.begin(), p.end(), C.row(r).begin());
  }
  auto n = detail::make_node(OpKind::kRowSoftmax, {a.id()}, std::move(C));
  n.param = temperature;
  return a.tape().push(std::move(n));
}

/// Column-wise mean over rows: (r x c) -> (1 x c).
inline Var mean_rows(Var a) {
  const Tensor& A = a.value();
  if (A.rows == 0) throw InvalidShape("mean_rows: no rows");
  Tensor C(1, A.cols);
  for (std::size_t r = 0; r < A.rows; ++r)
    for (std::size_t c = 0; c < A.cols; ++c) C(0, c) += A(r, c);
  for (double& v : C.data) v /= static_cast<double>(A.rows);
  return a.tape().push(detail::make_node(OpKind::kMeanRows, {a.id()}, std::move(C)));
}

/// sum_i w_i * x_i over the rows of x: (m x d), (1 x m) -> (1 x d).
inline Var weighted_sum_rows(Var x, Var w) {
  detail::same_tape(x, w);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  if (W.rows != 1 || W.cols != X.rows) {
    throw InvalidShape("weighted_sum_rows: " + X.shape_string() + " with weights " +
                       W.shape_string());
  }
  Tensor C(1, X.cols);
  for (std::size_t r = 0; r < X.rows; ++r)
    for (std::size_t c = 0; c < X.cols; ++c) C(0, c) += W(0, r) * X(r, c);
  return x.tape().push(detail::make_node(OpKind::kWeightedSumRows, {x.id(), w.id()}, std::move(C)));
}

/// Rows scaled to unit L2 norm (norms floored at kNormFloor).
inline Var normalize_rows(Var a) {
  Tensor out, norms;
  detail::normalize_rows_into(a.value(), out, norms);
  auto n = detail::make_node(OpKind::kNormalizeRows, {a.id()}, out);
  n.saved = std::move(out);
  n.saved_aux = std::move(norms);
  return a.tape().push(std::move(n));
}

/// Pairwise cosine between the rows of a (n x d) and b (k x d): (n x k).
inline Var cosine_rows(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols != B.cols) {
    throw InvalidShape("cosine_rows: " + A.shape_string() + " vs " + B.shape_string());
  }
  Tensor an, a_norms, bn, b_norms;
  detail::normalize_rows_into(A, an, a_norms);
  detail::normalize_rows_into(B, bn, b_norms);
  Tensor C(A.rows, B.rows);
  for (std::size_t i = 0; i < A.rows; ++i)
    for (std::size_t j = 0; j < B.rows; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < A.cols; ++c) s += an(i, c) * bn(j, c);
      C(i, j) = s;
    }
  auto n = detail::make_node(OpKind::kCosineRows, {a.id(), b.id()}, std::move(C));
  // Both normalized operands packed as rows [an; bn], norms likewise.
  n.saved = Tensor(A.rows + B.rows, A.cols);
  std::copy(an.data.begin(), an.data.end(), n.saved.data.begin());
  std::copy(bn.data.begin(), bn.data.end(), n.saved.data.begin() + an.size());
  n.saved_aux = Tensor(A.rows + B.rows, 1);
  std::copy(a_norms.data.begin(), a_norms.data.end(), n.saved_aux.data.begin());
  std::copy(b_norms.data.begin(), b_norms.data.end(), n.saved_aux.data.begin() + A.rows);
  n.offset = A.rows;
  return a.tape().push(std::move(n));
}

inline constexpr double kLayerNormEps = 1e-5;

/// Row-wise layer normalization with learned gain and bias (both 1 x cols).
inline Var layer_norm(Var x, Var gain, Var bias) {
  detail::same_tape(x, gain);
  detail::same_tape(x, bias);
  const Tensor& X = x.value();
  const Tensor& G = gain.value();
  const Tensor& Bv = bias.value();
  if (G.rows != 1 || G.cols != X.cols || !G.same_shape(Bv)) {
    throw InvalidShape("layer_norm: gain/bias must be 1 x " + std::to_string(X.cols));
  }
  Tensor xhat(X.rows, X.cols), rstd(X.rows, 1), Y(X.rows, X.cols);
  const double inv_c = 1.0 / static_cast<double>(X.cols);
  for (std::size_t r = 0; r < X.rows; ++r) {
    double mean = 0.0;
    for (double v : X.row(r)) mean += v;
    mean *= inv_c;
    double var = 0.0;
    for (double v : X.row(r)) var += (v - mean) * (v - mean);
    var *= inv_c;
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd(r, 0) = rs;
    for (std::size_t c = 0; c < X.cols; ++c) {
      xhat(r, c) = (X(r, c) - mean) * rs;
      Y(r, c) = xhat(r, c) * G(0, c) + Bv(0, c);
    }
  }
  auto n = detail::make_node(OpKind::kLayerNorm, {x.id(), gain.id(), bias.id()}, std::move(Y));
  n.saved = std::move(xhat);
  n.saved_aux = std::move(rstd);
  return x.tape().push(std::move(n));
}

/// Vertical concatenation; all parts need the same column count.
inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidShape("concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  std::vector<NodeId> ids;
  for (const Var& p : parts) {
    detail::same_tape(parts.front(), p);
    if (p.cols() != cols) throw InvalidShape("concat_rows: column mismatch");
    rows += p.rows();
    ids.push_back(p.id());
  }
  Tensor C(rows, cols);
  std::size_t at = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), C.data.begin() + at);
    at += p.value().size();
  }
  return parts.front().tape().push(detail::make_node(OpKind::kConcatRows, std::move(ids), std::move(C)));
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidShape("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<NodeId> ids;
  for (const Var& p : parts) {
    detail::same_tape(parts.front(), p);
    if (p.rows() != rows) throw InvalidShape("concat_cols: row mismatch");
    cols += p.cols();
    ids.push_back(p.id());
  }
  Tensor C(rows, cols);
  std::size_t at = 0;
  for (const Var& p : parts) {
    const Tensor& P = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < P.cols; ++c) C(r, at + c) = P(r, c);
    at += P.cols;
  }
  return parts.front().tape().push(detail::make_node(OpKind::kConcatCols, std::move(ids), std::move(C)));
}

inline Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const Tensor& A = a.value();
  if (start + count > A.rows || count == 0) throw InvalidShape("slice_rows: range out of bounds");
  Tensor C(count, A.cols);
  std::copy(A.data.begin() + start * A.cols, A.data.begin() + (start + count) * A.cols,
            C.data.begin());
  auto n = detail::make_node(OpKind::kSliceRows, {a.id()}, std::move(C));
  n.offset = start;
  return a.tape().push(std::move(n));
}

inline Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Tensor& A = a.value();
  if (start + count > A.cols || count == 0) throw InvalidShape("slice_cols: range out of bounds");
  Tensor C(A.rows, count);
  for (std::size_t r = 0; r < A.rows; ++r)
    for (std::size_t c = 0; c < count; ++c) C(r, c) = A(r, start + c);
  auto n = detail::make_node(OpKind::kSliceCols, {a.id()}, std::move(C));
  n.offset = start;
  return a.tape().push(std::move(n));
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return a.tape().push(detail::make_node(OpKind::kSum, {a.id()}, Tensor(1, 1, s)));
}

/// Node with a caller-supplied value and backward rule.
inline Var custom_op(std::span<const Var> inputs, Tensor value, CustomBackward backward) {
  if (inputs.empty()) throw InvalidInput("custom_op: no inputs");
  std::vector<NodeId> ids;
  for (const Var& v : inputs) {
    detail::same_tape(inputs.front(), v);
    ids.push_back(v.id());
  }
  auto n = detail::make_node(OpKind::kCustom, std::move(ids), std::move(value));
  n.custom = std::move(backward);
  return inputs.front().tape().push(std::move(n));
}

// ---------------------------------------------------------------------------
// Reverse sweep
// ---------------------------------------------------------------------------

inline void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw InvalidInput("backward: loss lives on another tape");
  const Tensor& lv = nodes_.at(loss.id()).value;
  if (lv.rows != 1 || lv.cols != 1) {
    throw InvalidInput("backward: loss must be 1x1, got " + lv.shape_string());
  }
  for (Node& n : nodes_) {
    if (n.requires_grad) {
      n.grad = Tensor(n.value.rows, n.value.cols);
    } else {
      n.grad = Tensor();
    }
  }
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad.data[0] = 1.0;
  for (NodeId id = loss.id() + 1; id-- > 0;) backward_node(id);
}

inline void Tape::backward_node(NodeId id) {
  Node& n = nodes_[id];
  if (!n.requires_grad || n.kind == OpKind::kLeaf) return;
  const Tensor& g = n.grad;

  auto input_grad = [&](std::size_t k) -> Tensor* {
    Node& in = nodes_[n.inputs[k]];
    return in.requires_grad ? &in.grad : nullptr;
  };
  auto input_value = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

  switch (n.kind) {
    case OpKind::kLeaf:
      break;
    case OpKind::kMatMul: {
      const Tensor& A = input_value(0);
      const Tensor& B = input_value(1);
      if (Tensor* dA = input_grad(0)) {
        for (std::size_t i = 0; i < A.rows; ++i)
          for (std::size_t k = 0; k < A.cols; ++k) {
            double s = 0.0;
            const double* grow = g.data.data() + i * g.cols;
            const double* brow = B.data.data() + k * B.cols;
            for (std::size_t j = 0; j < B.cols; ++j) s += grow[j] * brow[j];
            dA->data[i * A.cols + k] += s;
          }
      }
      if (Tensor* dB = input_grad(1)) {
        for (std::size_t i = 0; i < A.rows; ++i) {
          const double* grow = g.data.data() + i * g.cols;
          for (std::size_t k = 0; k < A.cols; ++k) {
            const double aik = A.data[i * A.cols + k];
            if (aik == 0.0) continue;
            double* dbrow = dB->data.data() + k * B.cols;
            for (std::size_t j = 0; j < B.cols; ++j) dbrow[j] += aik * grow[j];
          }
        }
      }
      break;
    }
    case OpKind::kTranspose: {
      if (Tensor* dA = input_grad(0)) {
        for (std::size_t i = 0; i < dA->rows; ++i)
          for (std::size_t j = 0; j < dA->cols; ++j) (*dA)(i, j) += g(j, i);
      }
      break;
    }
    case OpKind::kAdd: {
      for (std::size_t k = 0; k < 2; ++k)
        if (Tensor* d = input_grad(k))
          for (std::size_t i = 0; i < g.size(); ++i) d->data[i] += g.data[i];
      break;
    }
    case OpKind::kAddRow: {
      if (Tensor* dA = input_grad(0))
        for (std::size_t i = 0; i < g.size(); ++i) dA->data[i] += g.data[i];
      if (Tensor* dB = input_grad(1))
        for (std::size_t r = 0; r < g.rows; ++r)
          for (std::size_t c = 0; c < g.cols; ++c) (*dB)(0, c) += g(r, c);
      break;
    }
    case OpKind::kMul: {
      const Tensor& A = input_value(0);
      const Tensor& B = input_value(1);
      if (Tensor* dA = input_grad(0))
        for (std::size_t i = 0; i < g.size(); ++i) dA->data[i] += g.data[i] * B.data[i];
      if (Tensor* dB = input_grad(1))
        for (std::size_t i = 0; i < g.size(); ++i) dB->data[i] += g.data[i] * A.data[i];
      break;
    }
    case OpKind::kRelu: {
      const Tensor& A = input_value(0);
      if (Tensor* dA = input_grad(0))
        for (std::size_t i = 0; i < g.size(); ++i)
          if (A.data[i] > 0.0) dA->data[i] += g.data[i];
      break;
    }
    case OpKind::kScale: {
      if (Tensor* dA = input_grad(0))
        for (std::size_t i = 0; i < g.size(); ++i) dA->data[i] += n.param * g.data[i];
      break;
    }
    case OpKind::kRowSoftmax: {
      if (Tensor* dA = input_grad(0)) {
        const Tensor& Y = n.value;
        for (std::size_t r = 0; r < Y.rows; ++r) {
          double inner = 0.0;
          for (std::size_t c = 0; c < Y.cols; ++c) inner += Y(r, c) * g(r, c);
          for (std::size_t c = 0; c < Y.cols; ++c)
            (*dA)(r, c) += Y(r, c) * (g(r, c) - inner) / n.param;
        }
      }
      break;
    }
    case OpKind::kMeanRows: {
      if (Tensor* dA = input_grad(0)) {
        const double inv = 1.0 / static_cast<double>(dA->rows);
        for (std::size_t r = 0; r < dA->rows; ++r)
          for (std::size_t c = 0; c < dA->cols; ++c) (*dA)(r, c) += g(0, c) * inv;
      }
      break;
    }
    case OpKind::kWeightedSumRows: {
      const Tensor& X = input_value(0);
      const Tensor& W = input_value(1);
      if (Tensor* dX = input_grad(0))
        for (std::size_t r = 0; r < X.rows; ++r)
          for (std::size_t c = 0; c < X.cols; ++c) (*dX)(r, c) += W(0, r) * g(0, c);
      if (Tensor* dW = input_grad(1))
        for (std::size_t r = 0; r < X.rows; ++r) {
          double s = 0.0;
          for (std::size_t c = 0; c < X.cols; ++c) s += X(r, c) * g(0, c);
          (*dW)(0, r) += s;
        }
      break;
    }
    case OpKind::kNormalizeRows: {
      if (Tensor* dA = input_grad(0)) detail::normalize_rows_backward(n.saved, n.saved_aux, g, *dA);
      break;
    }
    case OpKind::kCosineRows: {
      const std::size_t na = n.offset;
      const std::size_t nb = n.saved.rows - na;
      const std::size_t d = n.saved.cols;
      Tensor an(na, d), bn(nb, d), a_norm(na, 1), b_norm(nb, 1);
      std::copy(n.saved.data.begin(), n.saved.data.begin() + na * d, an.data.begin());
      std::copy(n.saved.data.begin() + na * d, n.saved.data.end(), bn.data.begin());
      std::copy(n.saved_aux.data.begin(), n.saved_aux.data.begin() + na, a_norm.data.begin());
      std::copy(n.saved_aux.data.begin() + na, n.saved_aux.data.end(), b_norm.data.begin());
      if (Tensor* dA = input_grad(0)) {
        Tensor dan(na, d);
        for (std::size_t i = 0; i < na; ++i)
          for (std::size_t j = 0; j < nb; ++j)
            for (std::size_t c = 0; c < d; ++c) dan(i, c) += g(i, j) * bn(j, c);
        detail::normalize_rows_backward(an, a_norm, dan, *dA);
      }
      if (Tensor* dB = input_grad(1)) {
        Tensor dbn(nb, d);
        for (std::size_t i = 0; i < na; ++i)
          for (std::size_t j = 0; j < nb; ++j)
            for (std::size_t c = 0; c < d; ++c) dbn(j, c) += g(i, j) * an(i, c);
        detail::normalize_rows_backward(bn, b_norm, dbn, *dB);
      }
      break;
    }
    case OpKind::kLayerNorm: {
      const Tensor& xhat = n.saved;
      const Tensor& G = input_value(1);
      if (Tensor* dG = input_grad(1))
        for (std::size_t r = 0; r < xhat.rows; ++r)
          for (std::size_t c = 0; c < xhat.cols; ++c) (*dG)(0, c) += g(r, c) * xhat(r, c);
      if (Tensor* dB = input_grad(2))
        for (std::size_t r = 0; r < g.rows; ++r)
          for (std::size_t c = 0; c < g.cols; ++c) (*dB)(0, c) += g(r, c);
      if (Tensor* dX = input_grad(0)) {
        const double inv_c = 1.0 / static_cast<double>(xhat.cols);
        for (std::size_t r = 0; r < xhat.rows; ++r) {
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (std::size_t c = 0; c < xhat.cols; ++c) {
            const double dxh = g(r, c) * G(0, c);
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xhat(r, c);
          }
          mean_dxh *= inv_c;
          mean_dxh_xh *= inv_c;
          const double rs = n.saved_aux(r, 0);
          for (std::size_t c = 0; c < xhat.cols; ++c) {
            const double dxh = g(r, c) * G(0, c);
            (*dX)(r, c) += rs * (dxh - mean_dxh - xhat(r, c) * mean_dxh_xh);
          }
        }
      }
      break;
    }
    case OpKind::kConcatRows: {
      std::size_t at = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t len = input_value(k).size();
        if (Tensor* d = input_grad(k))
          for (std::size_t i = 0; i < len; ++i) d->data[i] += g.data[at + i];
        at += len;
      }
      break;
    }
    case OpKind::kConcatCols: {
      std::size_t at = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t w = input_value(k).cols;
        if (Tensor* d = input_grad(k))
          for (std::size_t r = 0; r < g.rows; ++r)
            for (std::size_t c = 0; c < w; ++c) (*d)(r, c) += g(r, at + c);
        at += w;
      }
      break;
    }
    case OpKind::kSliceRows: {
      if (Tensor* dA = input_grad(0))
        for (std::size_t i = 0; i < g.size(); ++i) dA->data[n.offset * g.cols + i] += g.data[i];
      break;
    }
    case OpKind::kSliceCols: {
      if (Tensor* dA = input_grad(0))
        for (std::size_t r = 0; r < g.rows; ++r)
          for (std::size_t c = 0; c < g.cols; ++c) (*dA)(r, n.offset + c) += g(r, c);
      break;
    }
    case OpKind::kSum: {
      if (Tensor* dA = input_grad(0))
        for (double& v : dA->data) v += g.data[0];
      break;
    }
    case OpKind::kCustom: {
      std::vector<Tensor*> grads(n.inputs.size());
      for (std::size_t k = 0; k < n.inputs.size(); ++k) grads[k] = input_grad(k);
      n.custom(g, grads);
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

/// Builds a scalar loss on a fresh tape from leaves bound to `params`.
using GraphFunction = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients with central differences at every
/// coordinate. The error per coordinate is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
inline GradCheckReport grad_check_report(const GraphFunction& f, std::vector<Tensor> params,
                                         double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw InvalidInput("grad_check: step must lie in [1e-7, 1e-3]");
  for (const Tensor& p : params)
    if (!p.all_finite()) throw InvalidInput("grad_check: non-finite parameters");

  auto evaluate = [&](bool with_grad, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const Tensor& p : params) leaves.push_back(tape.leaf(p, with_grad));
    Var out = f(tape, leaves);
    if (out.rows() != 1 || out.cols() != 1) throw InvalidInput("grad_check: f must be scalar");
    const double value = out.scalar();
    if (!std::isfinite(value)) throw ProbeFailure("grad_check: f is not finite at probe point");
    if (with_grad) {
      tape.backward(out);
      grads->clear();
      for (const Var& l : leaves) {
        const Tensor& gr = tape.grad(l);
        grads->push_back(gr.empty() ? Tensor(l.rows(), l.cols()) : gr);
      }
    }
    return value;
  };

  std::vector<Tensor> analytic;
  evaluate(true, &analytic);

  GradCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double saved = params[t].data[i];
      params[t].data[i] = saved + h;
      const double up = evaluate(false, nullptr);
      params[t].data[i] = saved - h;
      const double down = evaluate(false, nullptr);
      params[t].data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t].data[i];
      const double err =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++report.coordinates;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_tensor = t;
        report.worst_index = i;
      }
    }
  }
  return report;
}

inline double grad_check(const GraphFunction& f, std::vector<Tensor> params, double h) {
  return grad_check_report(f, std::move(params), h).max_rel_error;
}

/// Single-tensor convenience overload.
inline double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& param, double h) {
  return grad_check([&](Tape& t, std::span<const Var> v) { return f(t, v[0]); },
                    std::vector<Tensor>{param}, h);
}

}  // namespace teachclip
