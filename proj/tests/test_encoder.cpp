#include <cmath>
#include <string>

#include <gtest/gtest.h>

#include "cgconf/corpus.hpp"
#include "cgconf/encoder.hpp"
#include "cgconf/pipeline.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace cgconf {
namespace {

using ad::Matrix;
using ad::Tape;
using testing::random_matrix;

EncoderConfig small_config() {
  EncoderConfig c;
  c.hidden = 8;
  c.channels = 4;
  c.layers = 2;
  return c;
}

struct Fixture {
  ToyMolecule mol;
  Encoder encoder;
  ParameterStore store;

  explicit Fixture(EncoderConfig config = small_config(), std::uint64_t seed = 3)
      : mol(make_corpus(1, seed).front()), encoder(config) {
    Rng rng(seed);
    encoder.init(store, rng);
  }

  EncoderOutput encode(Tape& tape, const Conformer& gt, const Conformer& ref) const {
    return encoder.encode(tape, gt, ref, mol.graph, mol.mapping);
  }
};

Conformer moved(const Conformer& x, const Eigen::Matrix3d& r, const Eigen::RowVector3d& t) {
  return (x * r.transpose()).rowwise() + t;
}

double relative(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

TEST(Center, RemovesTheCentroid) {
  Rng rng(1);
  const Conformer x = testing::random_cloud(7, rng, 3.0).rowwise() + Eigen::RowVector3d(5, -2, 1);
  const auto [c, mean] = center(x);
  EXPECT_LE(c.colwise().mean().norm(), 1e-14);
  EXPECT_LE((mean - x.colwise().mean()).norm(), 1e-14);
  EXPECT_LE((c.rowwise() + mean - x).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Center, CenteredInputIsUnchangedAndTranslationMovesTheCentroid) {
  Rng rng(9);
  const Conformer x = testing::random_cloud(5, rng);
  const Conformer c = center(x).first;
  const auto [again, zero] = center(c);
  EXPECT_LE((again - c).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE(zero.norm(), 1e-15);
  const Eigen::RowVector3d t(3, -4, 0.5);
  const auto [shifted, mean] = center(Conformer(x.rowwise() + t));
  EXPECT_LE((shifted - c).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE((mean - center(x).second - t).norm(), 1e-14);
}

// Two atoms, one bond: each atom's message mean is its single message.
TEST(Encoder, FineLayerMatchesHandEvaluation) {
  const Conformer x = testing::zigzag(2);
  const MolecularGraph g = testing::molecule({Element::C, Element::O}, {{0, 1}}, x);
  const Encoder enc(small_config());
  ParameterStore store;
  Rng rng(10);
  enc.init(store, rng);
  const EncoderConfig& c = enc.config();

  Tape tape(&store);
  const Conformer gt0 = center(testing::random_cloud(2, rng)).first;
  const Conformer ref0 = center(testing::random_cloud(2, rng)).first;
  FgState gt = enc.initial_fg(tape, Path::GroundTruth, g, gt0);
  FgState ref = enc.initial_fg(tape, Path::Reference, g, ref0);
  const Matrix gt_x = gt0 + testing::random_cloud(2, rng, 0.2);
  const Matrix gt_h = random_matrix(2, c.hidden, rng);
  const Matrix ref_h = random_matrix(2, c.hidden, rng);
  gt.x = tape.constant(gt_x);
  gt.h = tape.constant(gt_h);
  ref.h = tape.constant(ref_h);
  const EdgeSet edges = atom_edges(g, gt_x, c.cutoff);
  ASSERT_EQ(edges.size(), 2u);
  const FgState out = enc.fg_update(tape, 0, Path::GroundTruth, gt, edges, &ref);

  const std::string p = enc.prefix(0, Path::GroundTruth);
  const Matrix f = gt.f.value();
  Eigen::RowVectorXd single = Eigen::RowVectorXd::Zero(kEdgeFeatureDim);
  single(0) = 1.0;
  const Matrix u = oracle::attention(store, "enc.L0.fg.attn", gt_h, ref_h);
  for (int i = 0; i < 2; ++i) {
    const int j = 1 - i;
    const Eigen::RowVector3d rel = gt_x.row(i) - gt_x.row(j);
    const Matrix in = oracle::hcat({gt_h.row(i), gt_h.row(j), Matrix::Constant(1, 1, rel.squaredNorm()), single});
    const Matrix m = oracle::mlp(store, p + "fg.edge", in);
    const double w = oracle::mlp(store, p + "fg.coord", m)(0, 0);
    const Eigen::RowVector3d x_new = c.eta_x * gt0.row(i) + (1 - c.eta_x) * gt_x.row(i) + w * rel;
    const Matrix node = oracle::mlp(store, p + "fg.node", oracle::hcat({gt_h.row(i), m, u.row(i), f.row(i)}));
    const Matrix h_new = (1 - c.eta_h) * gt_h.row(i) + c.eta_h * node;
    EXPECT_LE((out.x.value().row(i) - x_new).cwiseAbs().maxCoeff(), 1e-12) << i;
    EXPECT_LE((out.h.value().row(i) - h_new).cwiseAbs().maxCoeff(), 1e-12) << i;
  }
}

// Two beads joined by one severed bond, with random H, X and v.
TEST(Encoder, CoarseLayerMatchesHandEvaluation) {
  const Conformer x = testing::zigzag(4);
  const MolecularGraph g = testing::butane();
  const CGMapping m = coarse_grain_with(g, x, {1});
  ASSERT_EQ(m.bead_count(), 2);
  const Encoder enc(small_config());
  ParameterStore store;
  Rng rng(11);
  enc.init(store, rng);
  const EncoderConfig& c = enc.config();
  const Eigen::Index d = c.hidden, nf = c.channels;

  Tape tape(&store);
  const Matrix h = random_matrix(2, d, rng), xb = random_matrix(2, 3, rng, 1.5);
  const Matrix v = random_matrix(nf, 6, rng), sender_h = random_matrix(2, d, rng);
  CgState gt{tape.constant(h), tape.constant(xb), tape.constant(xb), tape.constant(h), tape.constant(v)};
  CgState ref = gt;
  ref.H = tape.constant(sender_h);
  EdgeSet edges;
  edges.src = {0, 1};
  edges.dst = {1, 0};
  edges.features = Matrix::Ones(2, 1);
  const CgState out = enc.cg_update(tape, 1, Path::GroundTruth, gt, edges, &ref);

  const std::string p = enc.prefix(1, Path::GroundTruth);
  const Matrix h1 = oracle::mlp(store, p + "cg.mix1", oracle::hcat({h, oracle::channel_norms(oracle::vn_mlp(store, p + "cg.vn1", v))}));
  const Matrix h2 = oracle::mlp(store, p + "cg.mix2", oracle::hcat({h, oracle::channel_norms(oracle::vn_mlp(store, p + "cg.vn2", v))}));
  const Matrix gate = oracle::mlp(store, p + "cg.mix3", h);
  Matrix v3 = oracle::vn_mlp(store, p + "cg.vn3", v);
  for (Eigen::Index ch = 0; ch < nf; ++ch)
    for (int b = 0; b < 2; ++b) v3.block(ch, 3 * b, 1, 3) *= gate(b, ch);
  const Matrix u = oracle::attention(store, "enc.L1.cg.attn", h, sender_h);

  Matrix agg_h(2, d), agg_v(nf, 6);
  for (int i = 0; i < 2; ++i) {
    const int j = 1 - i;
    const Eigen::RowVector3d rel = xb.row(i) - xb.row(j);
    const double dist = std::sqrt(rel.squaredNorm() + 1e-12);
    const Eigen::RowVectorXd k1 = oracle::rbf(store, p + "cg.ker1", dist);
    const Eigen::RowVectorXd k2 = oracle::rbf(store, p + "cg.ker2", dist);
    const Eigen::RowVectorXd k3 = oracle::rbf(store, p + "cg.ker3", dist);
    agg_h.row(i) = k1.cwiseProduct(h1.row(j));
    for (Eigen::Index ch = 0; ch < nf; ++ch)
      agg_v.block(ch, 3 * i, 1, 3) = k2(ch) * v3.block(ch, 3 * j, 1, 3) + k3(ch) * h2(j, ch) * rel;
  }
  const Matrix h_new = (1 - c.eta_H) * h + c.eta_H * oracle::mlp(store, p + "cg.node", oracle::hcat({h, agg_h, u}));
  Matrix stacked(2 * nf, 6);
  stacked << v, agg_v;
  const Matrix v_new = (1 - c.eta_v) * v + c.eta_v * oracle::vn_mlp(store, p + "cg.vn4", stacked);
  EXPECT_LE((out.H.value() - h_new).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((out.v.value() - v_new).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encoder, ZeroVectorsStayZeroWithoutRadialKernels) {
  Fixture f;
  const std::string p = f.encoder.prefix(1, Path::Reference);
  f.store.value(p + "cg.ker2.w").setZero();
  f.store.value(p + "cg.ker3.w").setZero();
  Tape tape(&f.store);
  const Conformer c = center(f.mol.ref).first;
  const PathGraph g = f.encoder.path_graph(f.mol.graph, f.mol.mapping, c);
  const FgState fg = f.encoder.initial_fg(tape, Path::Reference, f.mol.graph, c);
  CgState cg = f.encoder.initial_cg(tape, fg, f.mol.mapping);
  ASSERT_TRUE(cg.v.value().isZero(0.0));
  const CgState out = f.encoder.cg_update(tape, 1, Path::Reference, cg, g.beads, nullptr);
  EXPECT_TRUE(out.v.value().isZero(0.0));
}

TEST(Encoder, ZeroCoordinateHeadLeavesAnchorMixing) {
  Fixture f;
  for (const Parameter& p : f.store.entries()) {
    const bool coord = p.name.find("fg.coord.l2") != std::string::npos ||
                       p.name.find("pool.coord.l2") != std::string::npos;
    if (coord) f.store.value(p.name).setZero();
  }
  Tape tape(&f.store);
  const Conformer c = center(f.mol.ref).first;
  const PathGraph g = f.encoder.path_graph(f.mol.graph, f.mol.mapping, c);
  FgState fg = f.encoder.initial_fg(tape, Path::Reference, f.mol.graph, c);
  Rng rng(2);
  const Matrix drifted = c + testing::random_cloud(static_cast<int>(c.rows()), rng, 0.5);
  fg.x = tape.constant(drifted);
  const FgState next = f.encoder.fg_update(tape, 0, Path::Reference, fg, g.atoms, nullptr);
  const double eta = f.encoder.config().eta_x;
  EXPECT_LE((next.x.value() - (eta * c + (1 - eta) * drifted)).cwiseAbs().maxCoeff(), 1e-14);

  CgState cg = f.encoder.initial_cg(tape, next, f.mol.mapping);
  const Matrix x0 = cg.X0.value();
  const Matrix bead_drift = x0 + testing::random_matrix(x0.rows(), 3, rng, 0.5);
  cg.X = tape.constant(bead_drift);
  const CgState pooled = f.encoder.pool_layer(tape, 0, Path::Reference, next, cg, g.pooling);
  const double eta_b = f.encoder.config().eta_X;
  EXPECT_LE((pooled.X.value() - (eta_b * x0 + (1 - eta_b) * bead_drift)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Encoder, LatentsRotateWithTheInputs) {
  Fixture f;
  Rng rng(4);
  Tape base_tape(&f.store);
  const EncoderOutput base = f.encode(base_tape, f.mol.truths[0], f.mol.ref);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Matrix3d r = random_rotation(rng);
    const Eigen::RowVector3d t1(rng.normal(), rng.normal(), rng.normal());
    const Eigen::RowVector3d t2(rng.normal(), rng.normal(), rng.normal());
    Tape tape(&f.store);
    const EncoderOutput out = f.encode(tape, moved(f.mol.truths[0], r, t1), moved(f.mol.ref, r, t2));
    EXPECT_LE(relative(out.z.value(), rotate_blocks(base.z.value(), r)), 1e-10);
    EXPECT_LE(relative(out.z_ref.value(), rotate_blocks(base.z_ref.value(), r)), 1e-10);
  }
}

TEST(Encoder, SharedPathsWithoutAttentionAgreeOnIdenticalInputs) {
  EncoderConfig c = small_config();
  c.cross_attention = false;
  Fixture f(c);
  Tape tape(&f.store);
  const EncoderOutput out = f.encode(tape, f.mol.ref, f.mol.ref);
  EXPECT_EQ(out.z.value(), out.z_ref.value());
  EXPECT_GT(out.z.value().norm(), 0.0);
}

TEST(Encoder, AttentionOrSeparateWeightsSplitIdenticalInputs) {
  Fixture attended;
  Tape t1(&attended.store);
  const EncoderOutput a = attended.encode(t1, attended.mol.ref, attended.mol.ref);
  EXPECT_GT(relative(a.z.value(), a.z_ref.value()), 1e-6);

  EncoderConfig c = small_config();
  c.cross_attention = false;
  c.share_paths = false;
  Fixture separate(c);
  Tape t2(&separate.store);
  const EncoderOutput s = separate.encode(t2, separate.mol.ref, separate.mol.ref);
  EXPECT_GT(relative(s.z.value(), s.z_ref.value()), 1e-6);
}

TEST(Encoder, SingleBeadGivesOneBlock) {
  const Conformer x = testing::zigzag(2);
  const MolecularGraph g = testing::molecule({Element::C, Element::C}, {{0, 1}}, x);
  const CGMapping m = coarse_grain(g, x);
  ASSERT_EQ(m.bead_count(), 1);
  const Encoder enc(small_config());
  ParameterStore store;
  Rng rng(5);
  enc.init(store, rng);
  Tape tape(&store);
  const EncoderOutput out = enc.encode(tape, x, x, g, m);
  EXPECT_EQ(out.z.rows(), 4);
  EXPECT_EQ(out.z.cols(), 3);
  EXPECT_EQ(out.z_ref.cols(), 3);
  EXPECT_TRUE(out.z.value().allFinite());
}

TEST(Encoder, ReferenceLatentIgnoresTheGroundTruth) {
  Fixture f;
  Tape t1(&f.store), t2(&f.store), t3(&f.store);
  const EncoderOutput a = f.encode(t1, f.mol.truths[0], f.mol.ref);
  const EncoderOutput b = f.encode(t2, f.mol.truths[1], f.mol.ref);
  const Matrix alone = f.encoder.encode_reference(t3, f.mol.ref, f.mol.graph, f.mol.mapping).value();
  EXPECT_EQ(a.z_ref.value(), b.z_ref.value());
  EXPECT_EQ(a.z_ref.value(), alone);
  EXPECT_NE(a.z.value(), b.z.value());

  // No ground-truth-only parameter receives gradient from the reference latent.
  Tape tape(&f.store);
  const EncoderOutput out = f.encode(tape, f.mol.truths[0], f.mol.ref);
  tape.backward(ad::sum(ad::square(out.z_ref)));
  f.store.zero_grad();
  tape.accumulate_parameter_grads(f.store);
  for (const Parameter& p : f.store.entries())
    if (p.name.find(".attn.") != std::string::npos) EXPECT_TRUE(p.grad.isZero(0.0)) << p.name;
}

TEST(RotateBlocks, RejectsRaggedInput) {
  EXPECT_THROW(rotate_blocks(Matrix::Zero(2, 4), Eigen::Matrix3d::Identity()), std::invalid_argument);
}

}  // namespace
}  // namespace cgconf
