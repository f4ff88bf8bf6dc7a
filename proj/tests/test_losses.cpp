#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include <gtest/gtest.h>

#include "cgconf/corpus.hpp"
#include "cgconf/losses.hpp"
#include "cgconf/pipeline.hpp"
#include "support.hpp"

namespace cgconf {
namespace {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using testing::random_matrix;

// Uniform-marginal transport as an assignment problem: row k is copied L
// times and column l K times, so permutations of the KL x KL copy cover
// every vertex of the transport polytope.
double brute_force_emd(const Matrix& cost) {
  const Eigen::Index k = cost.rows(), l = cost.cols(), n = k * l;
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double acc = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) acc += cost(r / l, perm[r] / k);
    best = std::min(best, acc);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

// Square case: the optimum sits on a permutation matrix scaled by 1/K.
double permutation_emd(const Matrix& cost) {
  std::vector<int> perm(static_cast<std::size_t>(cost.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double acc = 0.0;
    for (Eigen::Index r = 0; r < cost.rows(); ++r) acc += cost(r, perm[r]);
    best = std::min(best, acc);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(cost.rows());
}

void expect_marginals(const TransportPlan& t) {
  const double k = static_cast<double>(t.plan.rows()), l = static_cast<double>(t.plan.cols());
  EXPECT_GE(t.plan.minCoeff(), 0.0);
  EXPECT_LE((t.plan.rowwise().sum().array() - 1.0 / k).abs().maxCoeff(), 1e-12);
  EXPECT_LE((t.plan.colwise().sum().array() - 1.0 / l).abs().maxCoeff(), 1e-12);
}

Conformer moved(const Conformer& x, Rng& rng) {
  const Eigen::Matrix3d r = random_rotation(rng);
  return (x * r.transpose()).rowwise() + Eigen::RowVector3d(rng.normal(), rng.normal(), rng.normal());
}

// Central differences of a conformer-valued loss against its tape gradient.
template <typename Value, typename Build>
void expect_coordinate_gradient(const Conformer& x0, Value value, Build build, double tol) {
  Tape tape;
  const Var v = tape.variable(x0);
  tape.backward(build(tape, v));
  const Matrix analytic = tape.grad(v);
  Conformer x = x0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x(i);
    x(i) = keep + 1e-6;
    const double up = value(x);
    x(i) = keep - 1e-6;
    const double down = value(x);
    x(i) = keep;
    EXPECT_NEAR(analytic(i), (up - down) / 2e-6, tol) << i;
  }
}

TEST(Anneal, LadderClimbsByDecadesToTheCap) {
  const AnnealSchedule s;
  const std::vector<double> expected{1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1e-1, 1e-1};
  for (int e = 0; e < static_cast<int>(expected.size()); ++e) EXPECT_DOUBLE_EQ(s.ladder(e), expected[e]) << e;
  EXPECT_EQ(s.ladder(5), 1e-1);
  EXPECT_EQ(s.at(2).beta2, 0.5);
  AnnealSchedule both;
  both.beta2_follows_ladder = true;
  EXPECT_DOUBLE_EQ(both.at(3).beta2, 1e-3);
  EXPECT_THROW(s.ladder(-1), std::invalid_argument);
}

TEST(Elbo, CombinesTermsWithWeights) {
  Tape tape;
  const Var recon = tape.constant(Matrix::Constant(1, 1, 2.0));
  const Var kl = tape.constant(Matrix::Constant(1, 1, 3.0));
  const Var dist = tape.constant(Matrix::Constant(1, 1, 5.0));
  const ElboTerms t = elbo_loss(recon, kl, dist, LossWeights{0.1, 0.5});
  EXPECT_DOUBLE_EQ(t.total.scalar(), 2.0 + 0.3 + 2.5);
  EXPECT_EQ(t.recon, 2.0);
  EXPECT_EQ(t.kl, 3.0);
  EXPECT_EQ(t.dist, 5.0);
  EXPECT_DOUBLE_EQ(elbo_loss(recon, kl, dist, AnnealSchedule{}, 0).total.scalar(), 2.0 + 3e-6 + 2.5);
  EXPECT_THROW(elbo_loss(recon, kl, dist, LossWeights{-1.0, 0.0}), std::invalid_argument);
}

TEST(AlignedMse, VanishesUnderRigidMotion) {
  Rng rng(1);
  const Conformer x = testing::random_cloud(9, rng);
  EXPECT_LE(aligned_mse(x, moved(x, rng)), 1e-20);
  const Conformer y = testing::random_cloud(9, rng);
  EXPECT_NEAR(aligned_mse(x, y), std::pow(kabsch_align(y, x).rmsd, 2), 1e-12);
}

TEST(AlignedMse, TapeMatchesValueAndGradient) {
  Rng rng(2);
  const Conformer truth = testing::random_cloud(6, rng);
  const Conformer x0 = testing::random_cloud(6, rng);
  Tape tape;
  EXPECT_NEAR(aligned_mse(tape, tape.constant(x0), truth).scalar(), aligned_mse(x0, truth), 1e-14);
  expect_coordinate_gradient(
      x0, [&](const Conformer& x) { return aligned_mse(x, truth); },
      [&](Tape& t, const Var& x) { return aligned_mse(t, x, truth); }, 1e-7);
}

TEST(DistanceLoss, HopPairsCoverOneAndTwoBonds) {
  const MolecularGraph g = testing::butane();
  const std::vector<AtomPair> expected{{0, 1}, {0, 2}, {1, 2}, {1, 3}, {2, 3}};
  EXPECT_EQ(hop_pairs(g), expected);
  EXPECT_TRUE(hop_pairs(testing::molecule({Element::C}, {})).empty());
}

TEST(DistanceLoss, ValueInvarianceAndGradient) {
  Rng rng(3);
  const MolecularGraph g = testing::butane();
  const Conformer truth = testing::random_cloud(4, rng);
  const Conformer x0 = testing::random_cloud(4, rng);
  EXPECT_LE(distance_loss(moved(truth, rng), truth, g), 1e-24);
  double manual = 0.0;
  for (auto [i, j] : hop_pairs(g)) {
    const double e = (x0.row(i) - x0.row(j)).norm() - (truth.row(i) - truth.row(j)).norm();
    manual += e * e / 5.0;
  }
  EXPECT_NEAR(distance_loss(x0, truth, g), manual, 1e-14);
  Tape tape;
  EXPECT_NEAR(distance_loss(tape, tape.constant(x0), truth, g).scalar(), manual, 1e-14);
  expect_coordinate_gradient(
      x0, [&](const Conformer& x) { return distance_loss(x, truth, g); },
      [&](Tape& t, const Var& x) { return distance_loss(t, x, truth, g); }, 1e-7);
}

TEST(Emd, SquareMatchesPermutationBruteForce) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = rng.uniform_int(1, 4);
    const Matrix cost = random_matrix(k, k, rng).cwiseAbs();
    const TransportPlan t = emd_solve(cost);
    EXPECT_NEAR(t.objective, permutation_emd(cost), 1e-9);
    EXPECT_NEAR(t.objective, (t.plan.array() * cost.array()).sum(), 1e-12);
    expect_marginals(t);
  }
}

TEST(Emd, RectangularMatchesExpandedBruteForce) {
  Rng rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const int k = rng.uniform_int(1, 2), l = rng.uniform_int(1, 4);
    const Matrix cost = random_matrix(k, l, rng).cwiseAbs();
    const TransportPlan t = emd_solve(cost);
    EXPECT_NEAR(t.objective, brute_force_emd(cost), 1e-9) << k << "x" << l;
    expect_marginals(t);
  }
}

TEST(Emd, TwoByThreeVertices) {
  // Rows carry 1/2, columns 1/3: the vertices put (1/3, 1/6, 0) in some order
  // on the first row.
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix c = random_matrix(2, 3, rng);
    double best = std::numeric_limits<double>::infinity();
    std::array<double, 3> row{0.0, 1.0 / 6.0, 1.0 / 3.0};
    do {
      double acc = 0.0;
      for (int j = 0; j < 3; ++j) acc += row[j] * c(0, j) + (1.0 / 3.0 - row[j]) * c(1, j);
      best = std::min(best, acc);
    } while (std::next_permutation(row.begin(), row.end()));
    EXPECT_NEAR(emd_solve(c).objective, best, 1e-12);
  }
}

TEST(Emd, RejectsBadCosts) {
  EXPECT_THROW(emd_solve(Matrix(0, 0)), std::invalid_argument);
  Matrix c = Matrix::Ones(2, 2);
  c(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(emd_solve(c), std::invalid_argument);
}

TEST(OtLoss, BoundedByCostExtremesAndMean) {
  const ToyMolecule mol = make_corpus(1, 7).front();
  Rng rng(7);
  std::vector<Conformer> generated, truth(mol.truths.begin(), mol.truths.begin() + 3);
  for (int k = 0; k < 4; ++k)
    generated.push_back(mol.ref + testing::random_cloud(static_cast<int>(mol.ref.rows()), rng, 0.3));
  Tape tape;
  std::vector<Var> vars;
  for (const Conformer& g : generated) vars.push_back(tape.variable(g));
  const OtResult r = ot_loss(tape, vars, truth, mol.graph);
  for (int k = 0; k < 4; ++k)
    for (int l = 0; l < 3; ++l)
      EXPECT_NEAR(r.cost(k, l),
                  aligned_mse(generated[k], truth[l]) + distance_loss(generated[k], truth[l], mol.graph), 1e-12);
  const double v = r.loss.scalar();
  EXPECT_GE(v, r.cost.minCoeff() - 1e-12);
  EXPECT_GE(v, std::max(r.cost.rowwise().minCoeff().mean(), r.cost.colwise().minCoeff().mean()) - 1e-12);
  EXPECT_LE(v, r.cost.mean() + 1e-12);
  EXPECT_NEAR(v, ot_loss(generated, truth, mol.graph), 1e-12);
  expect_marginals(r.transport);

  // With the plan fixed the gradient is the plan-weighted cost gradient.
  tape.backward(r.loss);
  for (int k = 0; k < 4; ++k) {
    Tape t;
    const Var x = t.variable(generated[k]);
    Var acc = t.constant(Matrix::Zero(1, 1));
    for (int l = 0; l < 3; ++l)
      acc = acc + ad::scale(aligned_mse(t, x, truth[l]) + distance_loss(t, x, truth[l], mol.graph),
                            r.transport.plan(k, l));
    t.backward(acc);
    EXPECT_LE((tape.grad(vars[k]) - t.grad(x)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(OtLoss, SinglePairIsTheCost) {
  const ToyMolecule mol = make_corpus(1, 8).front();
  const std::vector<Conformer> g{mol.ref}, t{mol.truths[0]};
  EXPECT_NEAR(ot_loss(g, t, mol.graph),
              aligned_mse(mol.ref, mol.truths[0]) + distance_loss(mol.ref, mol.truths[0], mol.graph), 1e-12);
}

}  // namespace
}  // namespace cgconf
