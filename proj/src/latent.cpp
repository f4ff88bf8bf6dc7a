#include "cgconf/latent.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace cgconf {

using ad::Var;

namespace {

Var log_var_head(ad::Tape& tape, const Mlp& net, const Var& norms) {
  return ad::clamp(net(tape, norms), kLogVarMin, kLogVarMax);
}

}  // namespace

void LatentHeads::init(ParameterStore& store, Rng& rng) const {
  posterior_mu().init(store, rng);
  posterior_log_var().init(store, rng);
  prior_mu().init(store, rng);
  prior_log_var().init(store, rng);
}

GaussianLatent LatentHeads::posterior_params(ad::Tape& tape, const Var& z, const Var& z_ref) const {
  if (z.rows() != z_ref.rows() || z.cols() != z_ref.cols())
    throw std::invalid_argument("posterior_params: latent shapes differ");
  if (z.rows() != config_.channels)
    throw std::invalid_argument("posterior_params: channel count does not match the heads");
  const std::vector<Var> both{z, z_ref};
  const Var stacked = ad::concat_rows(both);
  return {posterior_mu()(tape, stacked),
          log_var_head(tape, posterior_log_var(), vn_channel_norms(stacked))};
}

GaussianLatent LatentHeads::prior_params(ad::Tape& tape, const Var& z_ref) const {
  if (z_ref.rows() != config_.channels)
    throw std::invalid_argument("prior_params: channel count does not match the heads");
  return {prior_mu()(tape, z_ref), log_var_head(tape, prior_log_var(), vn_channel_norms(z_ref))};
}

Eigen::Matrix3d equivariant_frame(const Conformer& centered) {
  const Eigen::Index n = centered.rows();
  double scale = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) scale = std::max(scale, centered.row(i).norm());
  const double tol = 1e-3 * scale;
  if (scale == 0.0) return Eigen::Matrix3d::Identity();

  Eigen::RowVector3d e1 = Eigen::RowVector3d::Zero();
  for (Eigen::Index i = 0; i < n; ++i)
    if (centered.row(i).norm() > tol) {
      e1 = centered.row(i).normalized();
      break;
    }
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::RowVector3d p = centered.row(i) - centered.row(i).dot(e1) * e1;
    if (p.norm() > tol) {
      const Eigen::RowVector3d e2 = p.normalized();
      Eigen::Matrix3d frame;
      frame.row(0) = e1;
      frame.row(1) = e2;
      frame.row(2) = e1.cross(e2);
      return frame;
    }
  }
  return Eigen::Matrix3d::Identity();
}

Eigen::MatrixXd latent_noise(Eigen::Index channels, Eigen::Index beads, Rng& rng,
                             const Eigen::Matrix3d& frame) {
  Eigen::MatrixXd eps(channels, 3 * beads);
  for (Eigen::Index b = 0; b < beads; ++b)
    for (Eigen::Index c = 0; c < channels; ++c)
      for (Eigen::Index a = 0; a < 3; ++a) eps(c, 3 * b + a) = rng.normal();
  for (Eigen::Index b = 0; b < beads; ++b)
    eps.middleCols(3 * b, 3) = (eps.middleCols(3 * b, 3) * frame).eval();
  return eps;
}

Var sample(ad::Tape& tape, const GaussianLatent& g, const Eigen::MatrixXd& noise) {
  if (noise.rows() != g.mu.rows() || noise.cols() != g.mu.cols())
    throw std::invalid_argument("sample: noise shape does not match mu");
  const Var sigma = ad::exp(ad::scale(ad::transpose(g.log_var), 0.5));
  return g.mu + ad::vn_scale(tape.constant(noise), sigma);
}

Var sample(ad::Tape& tape, const GaussianLatent& g, Rng& rng, const Eigen::Matrix3d& frame) {
  return sample(tape, g, latent_noise(g.mu.rows(), g.mu.cols() / 3, rng, frame));
}

Var kl_divergence(const GaussianLatent& post, const GaussianLatent& prior) {
  if (post.mu.rows() != prior.mu.rows() || post.mu.cols() != prior.mu.cols() ||
      post.log_var.rows() != prior.log_var.rows() || post.log_var.cols() != prior.log_var.cols())
    throw std::invalid_argument("kl_divergence: shape mismatch");
  // Per (bead, channel): 3/2 (lp - lq + exp(lq - lp) - 1) + |mu_q - mu_p|^2 / (2 exp(lp)).
  const Var diff = post.mu - prior.mu;
  const Var sq = ad::transpose(ad::vn_dot(diff, diff));  // N x F
  const Var var_term = ad::scale(prior.log_var - post.log_var, 1.5) +
                       ad::scale(ad::exp(post.log_var - prior.log_var), 1.5);
  const Var mean_term = ad::scale(ad::mul(sq, ad::exp(ad::scale(prior.log_var, -1.0))), 0.5);
  const double n = static_cast<double>(post.log_var.rows() * post.log_var.cols());
  return ad::add_scalar(ad::sum(var_term + mean_term), -1.5 * n);
}

}  // namespace cgconf
