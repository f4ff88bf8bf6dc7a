#pragma once

// Equivariant Gaussian latents over beads.  A latent tensor is stored in the
// F x 3N vector-neuron layout; the variance is one value per (bead, channel)
// shared by the three axes, so rotating mu never changes the distribution's
// shape.

#include <Eigen/Dense>

#include "cgconf/molio.hpp"
#include "cgconf/numeric/autodiff.hpp"
#include "cgconf/numeric/layers.hpp"

namespace cgconf {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

struct GaussianLatent {
  ad::Var mu;       // F x 3N, equivariant
  ad::Var log_var;  // N x F, invariant, clamped to [kLogVarMin, kLogVarMax]
};

struct LatentConfig {
  Eigen::Index hidden = 32;
  Eigen::Index channels = 32;
};

class LatentHeads {
 public:
  explicit LatentHeads(LatentConfig config = {}) : config_(config) {}

  const LatentConfig& config() const { return config_; }
  void init(ParameterStore& store, Rng& rng) const;

  // Rows of (Z, Z_ref) are concatenated ground truth first.
  GaussianLatent posterior_params(ad::Tape& tape, const ad::Var& z, const ad::Var& z_ref) const;
  GaussianLatent prior_params(ad::Tape& tape, const ad::Var& z_ref) const;

  VnMlp posterior_mu() const { return {"lat.post.mu", 2 * config_.channels, config_.channels, config_.channels}; }
  Mlp posterior_log_var() const { return {"lat.post.logvar", 2 * config_.channels, config_.hidden, config_.channels}; }
  VnMlp prior_mu() const { return {"lat.prior.mu", config_.channels, config_.channels, config_.channels}; }
  Mlp prior_log_var() const { return {"lat.prior.logvar", config_.channels, config_.hidden, config_.channels}; }

 private:
  LatentConfig config_;
};

// Orthonormal frame (rows e1, e2, e3) that co-rotates with `centered`.  Built
// from the first atom with a non-negligible radius and the first atom off
// that axis; falls back to the identity for degenerate (collinear or single
// atom) inputs.
Eigen::Matrix3d equivariant_frame(const Conformer& centered);

// Standard normal noise, drawn bead by bead, channel by channel, axis by axis,
// and expressed in `frame` so that rotating the frame rotates the noise.
Eigen::MatrixXd latent_noise(Eigen::Index channels, Eigen::Index beads, Rng& rng,
                             const Eigen::Matrix3d& frame = Eigen::Matrix3d::Identity());

// mu + sigma * noise with sigma = exp(log_var / 2) broadcast over axes.
ad::Var sample(ad::Tape& tape, const GaussianLatent& g, const Eigen::MatrixXd& noise);
ad::Var sample(ad::Tape& tape, const GaussianLatent& g, Rng& rng,
               const Eigen::Matrix3d& frame = Eigen::Matrix3d::Identity());

// KL(post || prior) summed over beads, channels and axes.
ad::Var kl_divergence(const GaussianLatent& post, const GaussianLatent& prior);

}  // namespace cgconf
