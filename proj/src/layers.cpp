#include "cgconf/numeric/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace cgconf {

using ad::Tape;
using ad::Var;

void Dense::init(ParameterStore& store, Rng& rng) const {
  store.add(name + ".w", in, out, in, rng);
  store.add(name + ".b", 1, out, in, rng);
}

Var Dense::operator()(Tape& tape, const Var& x) const {
  if (x.cols() != in)
    throw std::invalid_argument(name + ": expected " + std::to_string(in) + " input columns, got " +
                                std::to_string(x.cols()));
  return ad::add_row(ad::matmul(x, tape.parameter(name + ".w")), tape.parameter(name + ".b"));
}

void Mlp::init(ParameterStore& store, Rng& rng) const {
  first().init(store, rng);
  second().init(store, rng);
}

Var Mlp::operator()(Tape& tape, const Var& x) const {
  return second()(tape, ad::silu(first()(tape, x)));
}

void VnLinear::init(ParameterStore& store, Rng& rng) const {
  store.add(name + ".w", out, in, in, rng);
}

Var VnLinear::operator()(Tape& tape, const Var& v) const {
  if (v.rows() != in)
    throw std::invalid_argument(name + ": expected " + std::to_string(in) + " channels, got " +
                                std::to_string(v.rows()));
  return ad::matmul(tape.parameter(name + ".w"), v);
}

void VnLeakyRelu::init(ParameterStore& store, Rng& rng) const {
  store.add(name + ".u", channels, channels, channels, rng);
}

Var VnLeakyRelu::operator()(Tape& tape, const Var& q) const {
  const Var k = ad::matmul(tape.parameter(name + ".u"), q);
  const Var qk = ad::vn_dot(q, k);
  const Var kk = ad::add_scalar(ad::vn_dot(k, k), eps);
  // min(qk, 0) = -relu(-qk)
  const Var neg = ad::scale(ad::relu(ad::scale(qk, -1.0)), -1.0);
  const Var coef = ad::scale(ad::mul(neg, ad::reciprocal(kk)), 1.0 - slope);
  return ad::sub(q, ad::vn_scale(k, coef));
}

void VnMlp::init(ParameterStore& store, Rng& rng) const {
  first().init(store, rng);
  act().init(store, rng);
  second().init(store, rng);
}

Var VnMlp::operator()(Tape& tape, const Var& v) const {
  return second()(tape, act()(tape, first()(tape, v)));
}

Eigen::VectorXd RbfBasis::centers() const {
  return Eigen::VectorXd::LinSpaced(num_basis, 0.0, max_distance);
}

double RbfBasis::width() const {
  return num_basis > 1 ? max_distance / static_cast<double>(num_basis - 1) : max_distance;
}

Eigen::MatrixXd RbfBasis::expand(const Eigen::MatrixXd& distances) const {
  const Eigen::VectorXd c = centers();
  const double w = width();
  Eigen::MatrixXd out(distances.rows(), num_basis);
  for (Eigen::Index e = 0; e < distances.rows(); ++e) {
    const double d = distances(e, 0);
    if (!(d >= 0.0)) throw std::invalid_argument(name + ": negative or NaN distance");
    for (Eigen::Index k = 0; k < num_basis; ++k) {
      const double z = d - c(k);
      out(e, k) = std::exp(-z * z / (2.0 * w * w));
    }
  }
  return out;
}

void RbfBasis::init(ParameterStore& store, Rng& rng) const {
  store.add(name + ".w", num_basis, out, num_basis, rng);
}

Var RbfBasis::operator()(Tape& tape, const Var& distances) const {
  if (distances.cols() != 1) throw std::invalid_argument(name + ": distances must be E x 1");
  // d/d(distance) of the basis: -(d - c)/w^2 * basis
  const Eigen::MatrixXd basis = expand(distances.value());
  const Eigen::VectorXd c = centers();
  const double w = width();
  const std::size_t id = distances.id();
  Var phi = tape.record(basis, {id}, [id, c, w](Tape& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    const auto& b = t.value(self);
    const auto& d = t.value(id);
    Eigen::MatrixXd gd(d.rows(), 1);
    for (Eigen::Index e = 0; e < d.rows(); ++e) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < b.cols(); ++k)
        acc += g(e, k) * b(e, k) * (-(d(e, 0) - c(k)) / (w * w));
      gd(e, 0) = acc;
    }
    t.accumulate(id, gd);
  });
  return ad::matmul(phi, tape.parameter(name + ".w"));
}

void CrossAttention::init(ParameterStore& store, Rng& rng) const {
  store.add(name + ".q", dim, dim, dim, rng);
  store.add(name + ".k", dim, dim, dim, rng);
  store.add(name + ".v", dim, dim, dim, rng);
}

Var CrossAttention::operator()(Tape& tape, const Var& receivers, const Var& senders) const {
  const Var q = ad::matmul(receivers, tape.parameter(name + ".q"));
  const Var k = ad::matmul(senders, tape.parameter(name + ".k"));
  const Var scores = ad::scale(ad::matmul(q, ad::transpose(k)),
                               1.0 / std::sqrt(static_cast<double>(dim)));
  const Var values = ad::matmul(senders, tape.parameter(name + ".v"));
  return ad::matmul(ad::softmax_rows(scores), values);
}

Var vn_channel_norms(const Var& v, double eps) {
  return ad::transpose(ad::sqrt_eps(ad::vn_dot(v, v), eps));
}

Eigen::VectorXd mlp(const ParameterStore& store, const Mlp& net, const Eigen::VectorXd& x) {
  Tape tape(&store);
  Var out = net(tape, tape.constant(x.transpose()));
  return out.value().row(0).transpose();
}

Eigen::MatrixXd vn_mlp(const ParameterStore& store, const VnMlp& net, const Eigen::MatrixXd& v) {
  Tape tape(&store);
  return net(tape, tape.constant(v)).value();
}

Eigen::VectorXd rbf_expand(const ParameterStore& store, const RbfBasis& basis, double distance) {
  Tape tape(&store);
  Eigen::MatrixXd d(1, 1);
  d(0, 0) = distance;
  return basis(tape, tape.constant(d)).value().row(0).transpose();
}

}  // namespace cgconf
