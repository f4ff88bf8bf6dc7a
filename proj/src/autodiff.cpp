#include "cgconf/numeric/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include "cgconf/numeric/parameters.hpp"

namespace cgconf::ad {

namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::logic_error("operation on an unbound Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw std::logic_error("operands recorded on different tapes");
  return t;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

// --- Var / Tape ------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::invalid_argument("scalar() on a non-1x1 Var");
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const std::string& name) {
  if (store_ == nullptr) throw std::logic_error("tape has no parameter store");
  if (auto it = params_.find(name); it != params_.end()) return Var(this, it->second);
  Var v = variable(store_->value(name));
  params_.emplace(name, v.id());
  return v;
}

Var Tape::record(Matrix value, std::vector<std::size_t> parents, Backward backward) {
  bool needs = false;
  for (std::size_t p : parents) needs = needs || nodes_[p].requires_grad;
  if (!needs) return constant(std::move(value));
  nodes_.push_back(Node{std::move(value), {}, std::move(parents), std::move(backward), true});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(const Var& root) {
  if (root.tape() != this) throw std::logic_error("root recorded on a different tape");
  if (root.value().size() != 1) throw std::invalid_argument("backward() needs a 1x1 root");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  accumulate(root.id(), Matrix::Ones(1, 1));
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, i);
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate_parameter_grads(ParameterStore& store) const {
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[id];
    if (n.grad.size() != 0) store.at(name).grad += n.grad;
  }
}

// --- elementwise & linear algebra -------------------------------------------

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "add");
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.adjoint(self));
    t.accumulate(ib, t.adjoint(self));
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "sub");
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.adjoint(self));
    t.accumulate(ib, -t.adjoint(self));
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "mul");
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value().cwiseProduct(b.value()), {ia, ib},
                  [ia, ib](Tape& t, std::size_t self) {
                    const Matrix& g = t.adjoint(self);
                    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                  });
}

Var scale(const Var& a, double s) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(s * a.value(), {ia},
                  [ia, s](Tape& t, std::size_t self) { t.accumulate(ia, s * t.adjoint(self)); });
}

Var add_scalar(const Var& a, double s) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(a.value().array() + s, {ia},
                  [ia](Tape& t, std::size_t self) { t.accumulate(ia, t.adjoint(self)); });
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + ")");
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value(), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var transpose(const Var& a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(a.value().transpose(), {ia}, [ia](Tape& t, std::size_t self) {
    t.accumulate(ia, t.adjoint(self).transpose());
  });
}

Var add_row(const Var& x, const Var& bias) {
  Tape& t = tape_of(x, bias);
  if (bias.rows() != 1 || bias.cols() != x.cols())
    throw std::invalid_argument("add_row: bias must be 1 x " + std::to_string(x.cols()));
  const std::size_t ix = x.id(), ib = bias.id();
  Matrix out = x.value().rowwise() + bias.value().row(0);
  return t.record(std::move(out), {ix, ib}, [ix, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    t.accumulate(ix, g);
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

Var scale_rows(const Var& x, const Var& s) {
  Tape& t = tape_of(x, s);
  if (s.cols() != 1 || s.rows() != x.rows())
    throw std::invalid_argument("scale_rows: scale must be " + std::to_string(x.rows()) + " x 1");
  const std::size_t ix = x.id(), is = s.id();
  Matrix out = x.value().array().colwise() * s.value().col(0).array();
  return t.record(std::move(out), {ix, is}, [ix, is](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    if (t.requires_grad(ix))
      t.accumulate(ix, (g.array().colwise() * t.value(is).col(0).array()).matrix());
    if (t.requires_grad(is))
      t.accumulate(is, g.cwiseProduct(t.value(ix)).rowwise().sum());
  });
}

Var silu(const Var& a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  Matrix out = a.value().unaryExpr([](double v) { return v * sigmoid(v); });
  return t.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    Matrix d = t.value(ia).unaryExpr([](double v) {
      const double s = sigmoid(v);
      return s * (1.0 + v * (1.0 - s));
    });
    t.accumulate(ia, t.adjoint(self).cwiseProduct(d));
  });
}

Var relu(const Var& a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(a.value().cwiseMax(0.0), {ia}, [ia](Tape& t, std::size_t self) {
    Matrix mask = (t.value(ia).array() > 0.0).cast<double>();
    t.accumulate(ia, t.adjoint(self).cwiseProduct(mask));
  });
}

Var exp(const Var& a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(a.value().array().exp().matrix(), {ia}, [ia](Tape& t, std::size_t self) {
    t.accumulate(ia, t.adjoint(self).cwiseProduct(t.value(self)));
  });
}

Var reciprocal(const Var& a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(a.value().cwiseInverse(), {ia}, [ia](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    t.accumulate(ia, -t.adjoint(self).cwiseProduct(y.cwiseProduct(y)));
  });
}

Var square(const Var& a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(a.value().array().square().matrix(), {ia}, [ia](Tape& t, std::size_t self) {
    t.accumulate(ia, 2.0 * t.adjoint(self).cwiseProduct(t.value(ia)));
  });
}

Var sqrt_eps(const Var& a, double eps) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  Matrix out = (a.value().array() + eps).sqrt().matrix();
  return t.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    Matrix d = (0.5 / t.value(self).array()).matrix();
    t.accumulate(ia, t.adjoint(self).cwiseProduct(d));
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return t.record(std::move(out), {ia}, [ia, lo, hi](Tape& t, std::size_t self) {
    Matrix mask =
        ((t.value(ia).array() >= lo) && (t.value(ia).array() <= hi)).cast<double>().matrix();
    t.accumulate(ia, t.adjoint(self).cwiseProduct(mask));
  });
}

// --- reductions --------------------------------------------------------------

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Matrix& v = t.value(ia);
    t.accumulate(ia, Matrix::Constant(v.rows(), v.cols(), t.adjoint(self)(0, 0)));
  });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw std::invalid_argument("mean of an empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var row_sq_norm(const Var& a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(a.value().rowwise().squaredNorm(), {ia}, [ia](Tape& t, std::size_t self) {
    Matrix g = 2.0 * (t.value(ia).array().colwise() * t.adjoint(self).col(0).array());
    t.accumulate(ia, g);
  });
}

Var row_dot(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "row_dot");
  const std::size_t ia = a.id(), ib = b.id();
  Matrix out = a.value().cwiseProduct(b.value()).rowwise().sum();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const auto g = t.adjoint(self).col(0).array();
    if (t.requires_grad(ia)) t.accumulate(ia, (t.value(ib).array().colwise() * g).matrix());
    if (t.requires_grad(ib)) t.accumulate(ib, (t.value(ia).array().colwise() * g).matrix());
  });
}

Var softmax_rows(const Var& a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  Matrix out = a.value();
  for (Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return t.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.adjoint(self);
    Matrix dot = g.cwiseProduct(y).rowwise().sum();
    Matrix d = y.cwiseProduct((g.colwise() - dot.col(0)));
    t.accumulate(ia, d);
  });
}

// --- structure ---------------------------------------------------------------

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& t = tape_of(parts[0]);
  const Index rows = parts[0].rows();
  Index cols = 0;
  std::vector<std::size_t> ids;
  std::vector<Index> offsets;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw std::logic_error("operands recorded on different tapes");
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row counts differ");
    offsets.push_back(cols);
    cols += p.cols();
    ids.push_back(p.id());
  }
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k)
    out.middleCols(offsets[k], parts[k].cols()) = parts[k].value();
  return t.record(std::move(out), ids, [ids, offsets](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    for (std::size_t k = 0; k < ids.size(); ++k)
      if (t.requires_grad(ids[k]))
        t.accumulate(ids[k], g.middleCols(offsets[k], t.value(ids[k]).cols()));
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Tape& t = tape_of(parts[0]);
  const Index cols = parts[0].cols();
  Index rows = 0;
  std::vector<std::size_t> ids;
  std::vector<Index> offsets;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw std::logic_error("operands recorded on different tapes");
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column counts differ");
    offsets.push_back(rows);
    rows += p.rows();
    ids.push_back(p.id());
  }
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k)
    out.middleRows(offsets[k], parts[k].rows()) = parts[k].value();
  return t.record(std::move(out), ids, [ids, offsets](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    for (std::size_t k = 0; k < ids.size(); ++k)
      if (t.requires_grad(ids[k]))
        t.accumulate(ids[k], g.middleRows(offsets[k], t.value(ids[k]).rows()));
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.rows())
    throw std::out_of_range("slice_rows out of range");
  const std::size_t ia = a.id();
  return t.record(a.value().middleRows(start, count), {ia},
                  [ia, start, count](Tape& t, std::size_t self) {
                    const Matrix& v = t.value(ia);
                    Matrix g = Matrix::Zero(v.rows(), v.cols());
                    g.middleRows(start, count) = t.adjoint(self);
                    t.accumulate(ia, g);
                  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.cols())
    throw std::out_of_range("slice_cols out of range");
  const std::size_t ia = a.id();
  return t.record(a.value().middleCols(start, count), {ia},
                  [ia, start, count](Tape& t, std::size_t self) {
                    const Matrix& v = t.value(ia);
                    Matrix g = Matrix::Zero(v.rows(), v.cols());
                    g.middleCols(start, count) = t.adjoint(self);
                    t.accumulate(ia, g);
                  });
}

Var gather_rows(const Var& a, std::span<const Index> index) {
  Tape& t = tape_of(a);
  const Matrix& v = a.value();
  Matrix out(static_cast<Index>(index.size()), v.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= v.rows()) throw std::out_of_range("gather_rows index");
    out.row(static_cast<Index>(r)) = v.row(index[r]);
  }
  const std::size_t ia = a.id();
  std::vector<Index> idx(index.begin(), index.end());
  return t.record(std::move(out), {ia}, [ia, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    Matrix acc = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
    for (std::size_t r = 0; r < idx.size(); ++r) acc.row(idx[r]) += g.row(static_cast<Index>(r));
    t.accumulate(ia, acc);
  });
}

Var segment_sum(const Var& a, std::span<const Index> index, Index count) {
  Tape& t = tape_of(a);
  const Matrix& v = a.value();
  if (static_cast<Index>(index.size()) != v.rows())
    throw std::invalid_argument("segment_sum: index length must equal row count");
  Matrix out = Matrix::Zero(count, v.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= count) throw std::out_of_range("segment_sum index");
    out.row(index[r]) += v.row(static_cast<Index>(r));
  }
  const std::size_t ia = a.id();
  std::vector<Index> idx(index.begin(), index.end());
  return t.record(std::move(out), {ia}, [ia, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    Matrix acc(static_cast<Index>(idx.size()), g.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) acc.row(static_cast<Index>(r)) = g.row(idx[r]);
    t.accumulate(ia, acc);
  });
}

Var segment_mean(const Var& a, std::span<const Index> index, Index count) {
  Tape& t = tape_of(a);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(count);
  for (Index i : index)
    if (i >= 0 && i < count) counts(i) += 1.0;
  Matrix inv(static_cast<Index>(index.size()), 1);
  for (std::size_t r = 0; r < index.size(); ++r)
    inv(static_cast<Index>(r), 0) =
        (index[r] >= 0 && index[r] < count) ? 1.0 / counts(index[r]) : 0.0;
  return segment_sum(scale_rows(a, t.constant(std::move(inv))), index, count);
}

// --- vector-neuron layout ----------------------------------------------------

Var vn_dot(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "vn_dot");
  if (a.cols() % 3 != 0) throw std::invalid_argument("vn_dot: column count not a multiple of 3");
  const Index n = a.cols() / 3;
  const Matrix prod = a.value().cwiseProduct(b.value());
  Matrix out(a.rows(), n);
  for (Index i = 0; i < n; ++i) out.col(i) = prod.middleCols(3 * i, 3).rowwise().sum();
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, n](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    const Matrix& va = t.value(ia);
    const Matrix& vb = t.value(ib);
    Matrix ga(va.rows(), va.cols()), gb(vb.rows(), vb.cols());
    for (Index i = 0; i < n; ++i) {
      ga.middleCols(3 * i, 3) = vb.middleCols(3 * i, 3).array().colwise() * g.col(i).array();
      gb.middleCols(3 * i, 3) = va.middleCols(3 * i, 3).array().colwise() * g.col(i).array();
    }
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
}

Var vn_scale(const Var& v, const Var& s) {
  Tape& t = tape_of(v, s);
  if (v.cols() != 3 * s.cols() || v.rows() != s.rows())
    throw std::invalid_argument("vn_scale: scale must be F x N for an F x 3N input");
  const Index n = s.cols();
  Matrix out(v.rows(), v.cols());
  for (Index i = 0; i < n; ++i)
    out.middleCols(3 * i, 3) = v.value().middleCols(3 * i, 3).array().colwise() *
                               s.value().col(i).array();
  const std::size_t iv = v.id(), is = s.id();
  return t.record(std::move(out), {iv, is}, [iv, is, n](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    const Matrix& vv = t.value(iv);
    const Matrix& sv = t.value(is);
    if (t.requires_grad(iv)) {
      Matrix gv(vv.rows(), vv.cols());
      for (Index i = 0; i < n; ++i)
        gv.middleCols(3 * i, 3) = g.middleCols(3 * i, 3).array().colwise() * sv.col(i).array();
      t.accumulate(iv, gv);
    }
    if (t.requires_grad(is)) {
      Matrix gs(sv.rows(), n);
      for (Index i = 0; i < n; ++i)
        gs.col(i) = g.middleCols(3 * i, 3).cwiseProduct(vv.middleCols(3 * i, 3)).rowwise().sum();
      t.accumulate(is, gs);
    }
  });
}

Var vn_outer(const Var& c, const Var& r) {
  Tape& t = tape_of(c, r);
  if (r.cols() != 3 || r.rows() != c.cols())
    throw std::invalid_argument("vn_outer: expected F x E and E x 3 operands");
  const Index e = c.cols();
  Matrix out(c.rows(), 3 * e);
  for (Index k = 0; k < e; ++k) out.middleCols(3 * k, 3) = c.value().col(k) * r.value().row(k);
  const std::size_t ic = c.id(), ir = r.id();
  return t.record(std::move(out), {ic, ir}, [ic, ir, e](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    const Matrix& cv = t.value(ic);
    const Matrix& rv = t.value(ir);
    if (t.requires_grad(ic)) {
      Matrix gc(cv.rows(), e);
      for (Index k = 0; k < e; ++k) gc.col(k) = g.middleCols(3 * k, 3) * rv.row(k).transpose();
      t.accumulate(ic, gc);
    }
    if (t.requires_grad(ir)) {
      Matrix gr(e, 3);
      for (Index k = 0; k < e; ++k) gr.row(k) = cv.col(k).transpose() * g.middleCols(3 * k, 3);
      t.accumulate(ir, gr);
    }
  });
}

Var vn_gather(const Var& v, std::span<const Index> index) {
  Tape& t = tape_of(v);
  const Matrix& val = v.value();
  const Index n = val.cols() / 3;
  Matrix out(val.rows(), 3 * static_cast<Index>(index.size()));
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] < 0 || index[k] >= n) throw std::out_of_range("vn_gather index");
    out.middleCols(3 * static_cast<Index>(k), 3) = val.middleCols(3 * index[k], 3);
  }
  const std::size_t iv = v.id();
  std::vector<Index> idx(index.begin(), index.end());
  return t.record(std::move(out), {iv}, [iv, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    Matrix acc = Matrix::Zero(t.value(iv).rows(), t.value(iv).cols());
    for (std::size_t k = 0; k < idx.size(); ++k)
      acc.middleCols(3 * idx[k], 3) += g.middleCols(3 * static_cast<Index>(k), 3);
    t.accumulate(iv, acc);
  });
}

Var vn_scatter_sum(const Var& v, std::span<const Index> index, Index count) {
  Tape& t = tape_of(v);
  const Matrix& val = v.value();
  if (val.cols() != 3 * static_cast<Index>(index.size()))
    throw std::invalid_argument("vn_scatter_sum: one index per 3-column block required");
  Matrix out = Matrix::Zero(val.rows(), 3 * count);
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] < 0 || index[k] >= count) throw std::out_of_range("vn_scatter_sum index");
    out.middleCols(3 * index[k], 3) += val.middleCols(3 * static_cast<Index>(k), 3);
  }
  const std::size_t iv = v.id();
  std::vector<Index> idx(index.begin(), index.end());
  return t.record(std::move(out), {iv}, [iv, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    Matrix acc(g.rows(), 3 * static_cast<Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k)
      acc.middleCols(3 * static_cast<Index>(k), 3) = g.middleCols(3 * idx[k], 3);
    t.accumulate(iv, acc);
  });
}

Matrix vn_pack(const std::vector<Matrix>& per_node) {
  if (per_node.empty()) return Matrix(0, 0);
  const Index f = per_node.front().rows();
  Matrix out(f, 3 * static_cast<Index>(per_node.size()));
  for (std::size_t i = 0; i < per_node.size(); ++i)
    out.middleCols(3 * static_cast<Index>(i), 3) = per_node[i];
  return out;
}

std::vector<Matrix> vn_unpack(const Matrix& v) {
  std::vector<Matrix> out;
  for (Index i = 0; i < v.cols() / 3; ++i) out.emplace_back(v.middleCols(3 * i, 3));
  return out;
}

}  // namespace cgconf::ad
