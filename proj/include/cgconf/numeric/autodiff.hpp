#pragma once

// Reverse-mode differentiation over dense Eigen matrices.
//
// A Tape records every operation applied to its Vars.  Each recorded node
// keeps its value and, if any input requires a gradient, a closure that
// pushes the node's adjoint back onto its inputs.  Equivariant vector
// features are laid out as F x 3N matrices: node I occupies columns
// [3I, 3I + 3), and channel mixing acts by left multiplication.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace cgconf {

class ParameterStore;

namespace ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  explicit Tape(const ParameterStore* store) : store_(store) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  // Leaf bound to a named entry of the attached store.  Repeated lookups of
  // the same name return the same Var.
  Var parameter(const std::string& name);

  Var record(Matrix value, std::vector<std::size_t> parents, Backward backward);

  // Seeds d(root)/d(root) = 1; root must be 1x1.
  void backward(const Var& root);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  // Zero matrix of the node's shape when nothing flowed into it.
  Matrix grad(const Var& v) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Raw adjoint of a node; only meaningful inside a backward closure.
  const Matrix& adjoint(std::size_t id) const { return nodes_[id].grad; }
  void accumulate(std::size_t id, const Matrix& g);

  // Adds parameter-leaf gradients into the store's gradient slots.
  void accumulate_parameter_grads(ParameterStore& store) const;

  const ParameterStore* store() const { return store_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> parents;
    Backward backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> params_;
  const ParameterStore* store_ = nullptr;
};

// --- elementwise & linear algebra ---------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
// x (B x k) + 1 * bias (1 x k)
Var add_row(const Var& x, const Var& bias);
// x (B x k) scaled per row by s (B x 1)
Var scale_rows(const Var& x, const Var& s);
Var silu(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var reciprocal(const Var& a);
Var square(const Var& a);
// sqrt(a + eps), elementwise
Var sqrt_eps(const Var& a, double eps);
Var clamp(const Var& a, double lo, double hi);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

// --- reductions ----------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
Var row_sq_norm(const Var& a);  // B x k -> B x 1
Var row_dot(const Var& a, const Var& b);
Var softmax_rows(const Var& a);

// --- structure -----------------------------------------------------------
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& a, Index start, Index count);
Var slice_cols(const Var& a, Index start, Index count);
Var gather_rows(const Var& a, std::span<const Index> index);
// out.row(index[r]) += a.row(r); out has `count` rows.
Var segment_sum(const Var& a, std::span<const Index> index, Index count);
// Segment mean; empty segments yield zero rows.
Var segment_mean(const Var& a, std::span<const Index> index, Index count);

// --- vector-neuron layout (F x 3N) ---------------------------------------
// Per (channel, node) inner product of 3-vectors: F x 3N, F x 3N -> F x N.
Var vn_dot(const Var& a, const Var& b);
// Per (channel, node) scaling: F x 3N, F x N -> F x 3N.
Var vn_scale(const Var& v, const Var& s);
// Per (channel, edge) outer product: F x E, E x 3 -> F x 3E.
Var vn_outer(const Var& c, const Var& r);
Var vn_gather(const Var& v, std::span<const Index> index);
Var vn_scatter_sum(const Var& v, std::span<const Index> index, Index count);

// Converts between the F x 3N layout and a list of per-node F x 3 blocks.
Matrix vn_pack(const std::vector<Matrix>& per_node);       // each F x 3
std::vector<Matrix> vn_unpack(const Matrix& v);             // F x 3N

}  // namespace ad
}  // namespace cgconf
