#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cgconf/molio.hpp"
#include "cgconf/numeric/autodiff.hpp"

namespace cgconf {

// Mean over atoms of the squared distance between `model` and `truth` after
// Kabsch-aligning `truth` onto `model`.  The alignment is held fixed during
// backpropagation; because it minimizes the loss, the gradient is exact.
ad::Var aligned_mse(ad::Tape& tape, const ad::Var& model, const Conformer& truth);
double aligned_mse(const Conformer& model, const Conformer& truth);

// Unordered pairs (i < j) joined by one or two covalent bonds.
std::vector<AtomPair> hop_pairs(const MolecularGraph& graph);

// Mean over 1- and 2-hop pairs of (|r_ij| - |r_ij_true|)^2; zero without pairs.
ad::Var distance_loss(ad::Tape& tape, const ad::Var& x, const Conformer& truth,
                      const MolecularGraph& graph);
double distance_loss(const Conformer& x, const Conformer& truth, const MolecularGraph& graph);

struct LossWeights {
  double beta1 = 0.0;
  double beta2 = 0.0;
};

// beta1 climbs a x`factor` ladder per epoch from `start` and stops at `cap`.
// beta2 either follows the same ladder or stays at `beta2_fixed`.
struct AnnealSchedule {
  double start = 1e-6;
  double factor = 10.0;
  double cap = 1e-1;
  bool beta2_follows_ladder = false;
  double beta2_fixed = 0.5;

  double ladder(int epoch) const;
  LossWeights at(int epoch) const;
};

struct ElboTerms {
  ad::Var total;
  double recon = 0.0;
  double kl = 0.0;
  double dist = 0.0;
  LossWeights weights;
};

ElboTerms elbo_loss(const ad::Var& recon, const ad::Var& kl, const ad::Var& dist,
                    const LossWeights& weights);
ElboTerms elbo_loss(const ad::Var& recon, const ad::Var& kl, const ad::Var& dist,
                    const AnnealSchedule& schedule, int epoch);

// Uniform-marginal transport: rows sum to 1/K, columns to 1/L.
struct TransportPlan {
  Eigen::MatrixXd plan;  // K x L
  double objective = 0.0;
};

// Exact minimum-cost transport between uniform marginals.  Throws on empty or
// non-finite costs.
TransportPlan emd_solve(const Eigen::MatrixXd& cost);

struct OtResult {
  ad::Var loss;
  Eigen::MatrixXd cost;  // K x L pairwise aligned MSE + distance error
  TransportPlan transport;
};

// sum_kl T_kl cost_kl with T at the optimum of the current costs.  T is a
// constant for backpropagation.
OtResult ot_loss(ad::Tape& tape, const std::vector<ad::Var>& generated,
                 const std::vector<Conformer>& truth, const MolecularGraph& graph);
double ot_loss(const std::vector<Conformer>& generated, const std::vector<Conformer>& truth,
               const MolecularGraph& graph);

}  // namespace cgconf
