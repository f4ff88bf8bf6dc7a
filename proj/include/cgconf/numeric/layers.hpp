#pragma once

// Learned building blocks shared by the encoder, latent heads and decoder.
// Each block owns only parameter names; values live in a ParameterStore and
// are pulled onto a Tape when the block is applied.

#include <string>

#include <Eigen/Dense>

#include "cgconf/numeric/autodiff.hpp"
#include "cgconf/numeric/parameters.hpp"

namespace cgconf {

// x W + b, rows are samples.
struct Dense {
  std::string name;
  Eigen::Index in = 0;
  Eigen::Index out = 0;

  void init(ParameterStore& store, Rng& rng) const;
  ad::Var operator()(ad::Tape& tape, const ad::Var& x) const;
};

// Two affine layers with SiLU between them.
struct Mlp {
  std::string name;
  Eigen::Index in = 0;
  Eigen::Index hidden = 0;
  Eigen::Index out = 0;

  Dense first() const { return {name + ".l1", in, hidden}; }
  Dense second() const { return {name + ".l2", hidden, out}; }

  void init(ParameterStore& store, Rng& rng) const;
  ad::Var operator()(ad::Tape& tape, const ad::Var& x) const;
};

// Channel mixing W v for vector features in the F x 3N layout.
struct VnLinear {
  std::string name;
  Eigen::Index in = 0;
  Eigen::Index out = 0;

  void init(ParameterStore& store, Rng& rng) const;
  ad::Var operator()(ad::Tape& tape, const ad::Var& v) const;
};

// Vector-neuron leaky ReLU: with a learned direction k = U v, the component
// of each channel pointing against k is removed (scaled by `slope`).
struct VnLeakyRelu {
  std::string name;
  Eigen::Index channels = 0;
  double slope = 0.2;
  double eps = 1e-8;

  void init(ParameterStore& store, Rng& rng) const;
  ad::Var operator()(ad::Tape& tape, const ad::Var& v) const;
};

// VnLinear -> VnLeakyRelu -> VnLinear.  Commutes with right multiplication
// of every 3-vector by a rotation.
struct VnMlp {
  std::string name;
  Eigen::Index in = 0;
  Eigen::Index hidden = 0;
  Eigen::Index out = 0;
  double slope = 0.2;

  VnLinear first() const { return {name + ".l1", in, hidden}; }
  VnLeakyRelu act() const { return {name + ".act", hidden, slope}; }
  VnLinear second() const { return {name + ".l2", hidden, out}; }

  void init(ParameterStore& store, Rng& rng) const;
  ad::Var operator()(ad::Tape& tape, const ad::Var& v) const;
};

// Gaussian radial basis exp(-(d - c_k)^2 / 2w^2) followed by a learned
// linear map to `out` channels.
struct RbfBasis {
  std::string name;
  Eigen::Index num_basis = 16;
  double max_distance = 10.0;
  Eigen::Index out = 0;

  Eigen::VectorXd centers() const;
  double width() const;

  // Raw basis values for a column of distances (E x 1) -> E x num_basis.
  Eigen::MatrixXd expand(const Eigen::MatrixXd& distances) const;

  void init(ParameterStore& store, Rng& rng) const;
  ad::Var operator()(ad::Tape& tape, const ad::Var& distances) const;
};

// Scaled dot-product attention from sender features onto receiver features,
// returning sum_j a_{j->i} W h_j for every receiver i.
struct CrossAttention {
  std::string name;
  Eigen::Index dim = 0;

  void init(ParameterStore& store, Rng& rng) const;
  ad::Var operator()(ad::Tape& tape, const ad::Var& receivers, const ad::Var& senders) const;
};

// Channel-wise norms of F x 3N features, returned as N x F.
ad::Var vn_channel_norms(const ad::Var& v, double eps = 1e-12);

// Single-sample conveniences on a scratch tape.
Eigen::VectorXd mlp(const ParameterStore& store, const Mlp& net, const Eigen::VectorXd& x);
Eigen::MatrixXd vn_mlp(const ParameterStore& store, const VnMlp& net, const Eigen::MatrixXd& v);
Eigen::VectorXd rbf_expand(const ParameterStore& store, const RbfBasis& basis, double distance);

}  // namespace cgconf
