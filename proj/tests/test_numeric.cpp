#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>

#include <gtest/gtest.h>

#include "cgconf/encoder.hpp"
#include "cgconf/numeric/autodiff.hpp"
#include "cgconf/numeric/checkpoint.hpp"
#include "cgconf/numeric/kabsch.hpp"
#include "cgconf/numeric/layers.hpp"
#include "cgconf/pipeline.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace cgconf {
namespace {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using testing::random_matrix;

double silu(double x) { return x / (1.0 + std::exp(-x)); }

// Straight-line two-layer perceptron.
Eigen::VectorXd reference_mlp(const ParameterStore& s, const Mlp& net, const Eigen::VectorXd& x) {
  const Matrix& w1 = s.value(net.name + ".l1.w");
  const Matrix& b1 = s.value(net.name + ".l1.b");
  const Matrix& w2 = s.value(net.name + ".l2.w");
  const Matrix& b2 = s.value(net.name + ".l2.b");
  Eigen::VectorXd hidden(net.hidden);
  for (Eigen::Index j = 0; j < net.hidden; ++j) {
    double acc = b1(0, j);
    for (Eigen::Index i = 0; i < net.in; ++i) acc += x(i) * w1(i, j);
    hidden(j) = silu(acc);
  }
  Eigen::VectorXd out(net.out);
  for (Eigen::Index j = 0; j < net.out; ++j) {
    double acc = b2(0, j);
    for (Eigen::Index i = 0; i < net.hidden; ++i) acc += hidden(i) * w2(i, j);
    out(j) = acc;
  }
  return out;
}

Eigen::Matrix3d rotation(Rng& rng) { return random_rotation(rng); }

TEST(Mlp, ZeroWeightsGiveBias) {
  Rng rng(1);
  ParameterStore s;
  const Mlp net{"m", 4, 5, 3};
  net.init(s, rng);
  s.value("m.l1.w").setZero();
  s.value("m.l2.w").setZero();
  const Eigen::VectorXd out = mlp(s, net, random_matrix(4, 1, rng).col(0));
  EXPECT_EQ(out.transpose(), s.value("m.l2.b"));
}

TEST(Mlp, IdentityLayersGiveSilu) {
  ParameterStore s;
  s.add("m.l1.w", Matrix::Identity(1, 1));
  s.add("m.l1.b", Matrix::Zero(1, 1));
  s.add("m.l2.w", Matrix::Identity(1, 1));
  s.add("m.l2.b", Matrix::Zero(1, 1));
  for (double x : {-3.0, -0.5, 0.0, 0.7, 4.0})
    EXPECT_DOUBLE_EQ(mlp(s, {"m", 1, 1, 1}, Eigen::VectorXd::Constant(1, x))(0), silu(x));
}

TEST(Mlp, MatchesStraightLineImplementation) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    ParameterStore s;
    const Mlp net{"m", rng.uniform_int(1, 7), rng.uniform_int(1, 7), rng.uniform_int(1, 7)};
    net.init(s, rng);
    const Eigen::VectorXd x = random_matrix(net.in, 1, rng).col(0);
    EXPECT_LE((mlp(s, net, x) - reference_mlp(s, net, x)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Mlp, ShapeMismatchThrows) {
  Rng rng(3);
  ParameterStore s;
  const Mlp net{"m", 3, 2, 1};
  net.init(s, rng);
  EXPECT_THROW(mlp(s, net, Eigen::VectorXd::Zero(4)), std::invalid_argument);
}

TEST(VnMlp, OriginIsFixed) {
  Rng rng(4);
  ParameterStore s;
  const VnMlp net{"v", 3, 4, 2};
  net.init(s, rng);
  EXPECT_TRUE(vn_mlp(s, net, Matrix::Zero(3, 6)).isZero(0.0));
}

TEST(VnMlp, RotationCommutes) {
  Rng rng(5);
  ParameterStore s;
  const VnMlp net{"v", 4, 6, 3};
  net.init(s, rng);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix v = random_matrix(4, 9, rng);
    const Eigen::Matrix3d r = rotation(rng);
    const Matrix lhs = vn_mlp(s, net, rotate_blocks(v, r));
    const Matrix rhs = rotate_blocks(vn_mlp(s, net, v), r);
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(VnMlp, MatchesLoopEvaluation) {
  const VnMlp net{"vn", 3, 5, 2};
  ParameterStore store;
  Rng rng(12);
  net.init(store, rng);
  const Matrix v = random_matrix(3, 12, rng);
  Tape tape(&store);
  const Matrix got = net(tape, tape.constant(v)).value();
  EXPECT_LE((got - oracle::vn_mlp(store, "vn", v)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(VnMlp, SingleChannelPassThrough) {
  // k = u q with u > 0 gives q.k >= 0, so the gate is the identity.
  ParameterStore s;
  s.add("v.l1.w", Matrix::Identity(1, 1));
  s.add("v.act.u", Matrix::Constant(1, 1, 0.7));
  s.add("v.l2.w", Matrix::Identity(1, 1));
  Matrix v(1, 6);
  v << 0.3, -1.2, 2.0, 5.0, 0.0, -0.1;
  EXPECT_EQ(vn_mlp(s, {"v", 1, 1, 1}, v), v);
}

TEST(VnLeakyRelu, RemovesOpposingComponent) {
  // With k = -q every channel points against its direction: q.k = -|q|^2,
  // so out = q - (1 - slope) * (-|q|^2 / |q|^2) * (-q) = slope * q.
  ParameterStore s;
  s.add("a.u", Matrix::Constant(1, 1, -1.0));
  Tape tape(&s);
  Matrix q(1, 3);
  q << 1.0, 2.0, -2.0;
  const VnLeakyRelu act{"a", 1, 0.2, 0.0};
  const Matrix out = act(tape, tape.constant(q)).value();
  EXPECT_LE((out - 0.2 * q).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Rbf, CenterGivesUnitBasis) {
  const RbfBasis basis{"r", 16, 10.0, 4};
  const Eigen::VectorXd c = basis.centers();
  for (Eigen::Index k = 0; k < 16; ++k) {
    Matrix d(1, 1);
    d(0, 0) = c(k);
    EXPECT_DOUBLE_EQ(basis.expand(d)(0, k), 1.0);
  }
  EXPECT_DOUBLE_EQ(basis.width(), 10.0 / 15.0);
}

TEST(Rbf, FarDistanceVanishes) {
  const RbfBasis basis{"r", 16, 10.0, 4};
  Matrix d(1, 1);
  d(0, 0) = 10.0 + 10.0 * basis.width();
  EXPECT_LE(basis.expand(d).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Rbf, MatchesClosedForm) {
  Rng rng(6);
  ParameterStore s;
  const RbfBasis basis{"r", 16, 10.0, 3};
  basis.init(s, rng);
  const double w = 10.0 / 15.0;
  for (int trial = 0; trial < 20; ++trial) {
    const double d = rng.uniform(0.0, 12.0);
    Eigen::VectorXd expected = Eigen::VectorXd::Zero(3);
    for (int k = 0; k < 16; ++k) {
      const double z = d - 10.0 * k / 15.0;
      expected += std::exp(-z * z / (2 * w * w)) * s.value("r.w").row(k).transpose();
    }
    EXPECT_LE((rbf_expand(s, basis, d) - expected).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_THROW(rbf_expand(s, basis, -0.1), std::invalid_argument);
}

TEST(Rbf, InvariantUnderRigidMotion) {
  Rng rng(7);
  ParameterStore s;
  const RbfBasis basis{"r", 16, 10.0, 3};
  basis.init(s, rng);
  const Conformer x = testing::random_cloud(2, rng, 2.0);
  const Eigen::Matrix3d r = rotation(rng);
  const Conformer y = (x * r.transpose()).rowwise() + Eigen::RowVector3d(4, -1, 2);
  const double dx = (x.row(0) - x.row(1)).norm();
  const double dy = (y.row(0) - y.row(1)).norm();
  EXPECT_LE(std::abs(dx - dy), 1e-14);
  EXPECT_LE((rbf_expand(s, basis, dx) - rbf_expand(s, basis, dy)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Kabsch, IdenticalSetsGiveIdentity) {
  Rng rng(8);
  const Conformer p = testing::random_cloud(6, rng);
  const auto a = kabsch_align(p, p);
  EXPECT_LE(a.rmsd, 1e-9);
  EXPECT_LE((a.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE(a.translation.norm(), 1e-9);
}

TEST(Kabsch, RigidMotionIsSuperposable) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Conformer p = testing::random_cloud(8, rng);
    const Eigen::Matrix3d r = rotation(rng);
    const Eigen::RowVector3d t(rng.normal(), rng.normal(), rng.normal());
    const Conformer q = (p * r.transpose()).rowwise() + t;
    const auto a = kabsch_align(p, q);
    EXPECT_LE(a.rmsd, 1e-9);
    EXPECT_LE((a.apply(p) - q).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Kabsch, BeatsRandomRotations) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const Conformer p = testing::random_cloud(8, rng);
    const Conformer q = testing::random_cloud(8, rng);
    const double analytic = kabsch_align(p, q).rmsd;
    const Conformer pc = p.rowwise() - centroid(p);
    const Conformer qc = q.rowwise() - centroid(q);
    for (int s = 0; s < 2000; ++s) {
      const Eigen::Matrix3d r = rotation(rng);
      const double trial_rmsd = std::sqrt((pc * r.transpose() - qc).rowwise().squaredNorm().mean());
      ASSERT_LE(analytic, trial_rmsd + 1e-12);
    }
  }
}

TEST(Kabsch, MirrorInputsStayProper) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Conformer p = testing::random_cloud(5, rng);
    Conformer q = p;
    q.col(2) *= -1.0;
    const auto a = kabsch_align(p, q);
    EXPECT_NEAR(a.rotation.determinant(), 1.0, 1e-12);
    EXPECT_LE((a.rotation * a.rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Kabsch, CollinearInputIsFlagged) {
  Conformer p(3, 3);
  p << 0, 0, 0, 1, 0, 0, 2, 0, 0;
  const auto a = kabsch_align(p, p);
  EXPECT_FALSE(a.unique);
  EXPECT_LE(a.rmsd, 1e-12);
  EXPECT_THROW(kabsch_align(Conformer(0, 3), Conformer(0, 3)), std::invalid_argument);
}

// Central differences of a scalar function of one input matrix.
Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, Matrix x, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x(i);
    x(i) = keep + h;
    const double up = f(x);
    x(i) = keep - h;
    const double down = f(x);
    x(i) = keep;
    g(i) = (up - down) / (2 * h);
  }
  return g;
}

using Op = std::function<Var(Tape&, const Var&)>;

void expect_gradient(const std::string& label, const Op& op, const Matrix& x0, Rng& rng) {
  Tape probe;
  const Matrix out_shape = op(probe, probe.variable(x0)).value();
  const Matrix w = random_matrix(out_shape.rows(), out_shape.cols(), rng);
  auto value = [&](const Matrix& x) {
    Tape t;
    return ad::sum(ad::mul(t.constant(w), op(t, t.constant(x)))).scalar();
  };
  Tape tape;
  const Var x = tape.variable(x0);
  const Var loss = ad::sum(ad::mul(tape.constant(w), op(tape, x)));
  tape.backward(loss);
  const Matrix analytic = tape.grad(x);
  const Matrix numeric = numeric_gradient(value, x0);
  const double scale = std::max(1.0, numeric.cwiseAbs().maxCoeff());
  EXPECT_LE((analytic - numeric).cwiseAbs().maxCoeff() / scale, 1e-6) << label;
}

TEST(Autodiff, SumGradientIsOnes) {
  Tape tape;
  const Var x = tape.variable(Matrix::Random(3, 4));
  tape.backward(ad::sum(x));
  EXPECT_EQ(tape.grad(x), Matrix::Ones(3, 4));
}

TEST(Autodiff, ConstantSubgraphHasZeroGradient) {
  Tape tape;
  const Var x = tape.variable(Matrix::Random(2, 2));
  const Var c = tape.constant(Matrix::Random(2, 2));
  tape.backward(ad::sum(ad::add(x, ad::exp(c))));
  EXPECT_TRUE(tape.grad(c).isZero(0.0));
  EXPECT_FALSE(c.requires_grad());
}

TEST(Autodiff, EveryOpMatchesFiniteDifferences) {
  Rng rng(12);
  const Matrix a = random_matrix(3, 4, rng);
  const Matrix b = random_matrix(3, 4, rng);
  const Matrix c = random_matrix(4, 2, rng);
  const Matrix row = random_matrix(1, 4, rng);
  const Matrix col = random_matrix(3, 1, rng);
  const Matrix vn = random_matrix(2, 9, rng);  // F = 2, N = 3
  const Matrix vs = random_matrix(2, 3, rng);
  const Matrix r = random_matrix(4, 3, rng);
  const Matrix coef = random_matrix(2, 4, rng);
  const std::vector<Eigen::Index> idx{2, 0, 2, 1};
  const std::vector<Eigen::Index> seg{0, 2, 0};

  expect_gradient("add", [&](Tape& t, const Var& x) { return ad::add(x, t.constant(b)); }, a, rng);
  expect_gradient("sub", [&](Tape& t, const Var& x) { return ad::sub(t.constant(b), x); }, a, rng);
  expect_gradient("mul", [&](Tape& t, const Var& x) { return ad::mul(x, ad::mul(x, t.constant(b))); }, a, rng);
  expect_gradient("scale", [](Tape&, const Var& x) { return ad::scale(x, -2.5); }, a, rng);
  expect_gradient("add_scalar", [](Tape&, const Var& x) { return ad::square(ad::add_scalar(x, 0.3)); }, a, rng);
  expect_gradient("matmul lhs", [&](Tape& t, const Var& x) { return ad::matmul(x, t.constant(c)); }, a, rng);
  expect_gradient("matmul rhs", [&](Tape& t, const Var& x) { return ad::matmul(t.constant(a), x); }, c, rng);
  expect_gradient("transpose", [](Tape&, const Var& x) { return ad::transpose(x); }, a, rng);
  expect_gradient("add_row", [&](Tape& t, const Var& x) { return ad::add_row(t.constant(a), x); }, row, rng);
  expect_gradient("scale_rows x", [&](Tape& t, const Var& x) { return ad::scale_rows(x, t.constant(col)); }, a, rng);
  expect_gradient("scale_rows s", [&](Tape& t, const Var& s) { return ad::scale_rows(t.constant(a), s); }, col, rng);
  expect_gradient("silu", [](Tape&, const Var& x) { return ad::silu(x); }, a, rng);
  expect_gradient("relu", [](Tape&, const Var& x) { return ad::relu(x); }, a.array() + 0.05 * a.array().sign(), rng);
  expect_gradient("exp", [](Tape&, const Var& x) { return ad::exp(x); }, a, rng);
  expect_gradient("reciprocal", [](Tape&, const Var& x) { return ad::reciprocal(x); },
                  (a.array().abs() + 0.5).matrix(), rng);
  expect_gradient("sqrt_eps", [](Tape&, const Var& x) { return ad::sqrt_eps(x, 1e-3); },
                  (a.array().abs() + 0.1).matrix(), rng);
  expect_gradient("clamp", [](Tape&, const Var& x) { return ad::clamp(x, -10.0, 10.0); }, a, rng);
  expect_gradient("mean", [](Tape&, const Var& x) { return ad::mean(ad::square(x)); }, a, rng);
  expect_gradient("row_sq_norm", [](Tape&, const Var& x) { return ad::row_sq_norm(x); }, a, rng);
  expect_gradient("row_dot", [&](Tape& t, const Var& x) { return ad::row_dot(x, ad::mul(x, t.constant(b))); }, a, rng);
  expect_gradient("softmax_rows", [](Tape&, const Var& x) { return ad::softmax_rows(x); }, a, rng);
  expect_gradient("concat_cols", [&](Tape& t, const Var& x) {
    const std::vector<Var> parts{x, t.constant(b), ad::square(x)};
    return ad::concat_cols(parts);
  }, a, rng);
  expect_gradient("concat_rows", [&](Tape& t, const Var& x) {
    const std::vector<Var> parts{ad::silu(x), t.constant(b)};
    return ad::concat_rows(parts);
  }, a, rng);
  expect_gradient("slice_rows", [](Tape&, const Var& x) { return ad::slice_rows(x, 1, 2); }, a, rng);
  expect_gradient("slice_cols", [](Tape&, const Var& x) { return ad::slice_cols(x, 1, 2); }, a, rng);
  expect_gradient("gather_rows", [&](Tape&, const Var& x) { return ad::gather_rows(x, idx); }, a, rng);
  expect_gradient("segment_sum", [&](Tape&, const Var& x) { return ad::segment_sum(x, seg, 3); }, a, rng);
  expect_gradient("segment_mean", [&](Tape&, const Var& x) { return ad::segment_mean(x, seg, 4); }, a, rng);
  expect_gradient("vn_dot", [&](Tape&, const Var& x) { return ad::vn_dot(x, ad::square(x)); }, vn, rng);
  expect_gradient("vn_scale v", [&](Tape& t, const Var& x) { return ad::vn_scale(x, t.constant(vs)); }, vn, rng);
  expect_gradient("vn_scale s", [&](Tape& t, const Var& s) { return ad::vn_scale(t.constant(vn), s); }, vs, rng);
  expect_gradient("vn_outer c", [&](Tape& t, const Var& x) { return ad::vn_outer(x, t.constant(r)); }, coef, rng);
  expect_gradient("vn_outer r", [&](Tape& t, const Var& x) { return ad::vn_outer(t.constant(coef), x); }, r, rng);
  expect_gradient("vn_gather", [&](Tape&, const Var& x) { return ad::vn_gather(x, std::vector<Eigen::Index>{2, 2, 0}); },
                  vn, rng);
  expect_gradient("vn_scatter_sum", [&](Tape&, const Var& x) { return ad::vn_scatter_sum(x, seg, 3); }, vn, rng);
}

TEST(Autodiff, MlpLossParametersMatchFiniteDifferences) {
  Rng rng(13);
  ParameterStore s;
  const Mlp net{"m", 3, 5, 2};
  net.init(s, rng);
  const Matrix x = random_matrix(4, 3, rng);
  const Matrix y = random_matrix(4, 2, rng);
  auto loss = [&](Tape& t) { return ad::mean(ad::square(ad::sub(net(t, t.constant(x)), t.constant(y)))); };
  Tape tape(&s);
  tape.backward(loss(tape));
  s.zero_grad();
  tape.accumulate_parameter_grads(s);
  for (Parameter& p : s.entries()) {
    const Matrix analytic = p.grad;
    const Matrix numeric = numeric_gradient(
        [&](const Matrix& v) {
          const Matrix keep = p.value;
          p.value = v;
          Tape t(&s);
          const double out = loss(t).scalar();
          p.value = keep;
          return out;
        },
        p.value);
    for (Eigen::Index i = 0; i < numeric.size(); ++i) {
      const double denom = std::max(std::abs(numeric(i)) + std::abs(analytic(i)), 1e-8);
      EXPECT_LE(std::abs(analytic(i) - numeric(i)) / denom, 1e-4) << p.name << "[" << i << "]";
    }
  }
}

TEST(Autodiff, BackwardRequiresScalarRoot) {
  Tape tape;
  const Var x = tape.variable(Matrix::Ones(2, 2));
  EXPECT_THROW(tape.backward(x), std::invalid_argument);
}

TEST(ParameterStore, SgdAndIdentity) {
  Rng rng(14);
  ParameterStore a;
  a.add("w", 2, 3, 3, rng);
  const double bound = 1.0 / std::sqrt(3.0);
  EXPECT_LE(a.value("w").cwiseAbs().maxCoeff(), bound);
  ParameterStore b = a;
  EXPECT_TRUE(a.identical(b));
  a.zero_grad();
  a.at("w").grad.setConstant(1.0);
  a.sgd_step(0.5);
  EXPECT_EQ(a.value("w"), (b.value("w").array() - 0.5).matrix());
  EXPECT_FALSE(a.identical(b));
  EXPECT_EQ(a.scalar_count(), 6u);
}

TEST(Rng, StateRestoresTheStream) {
  Rng rng(15);
  rng.normal();
  const std::string state = rng.state();
  const double x = rng.normal();
  const std::uint64_t y = rng.next();
  Rng other(0);
  other.restore(state);
  EXPECT_EQ(other.normal(), x);
  EXPECT_EQ(other.next(), y);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(16);
  Checkpoint ck;
  ck.params.add("a.w", 3, 4, 4, rng);
  ck.params.add("b", Matrix::Constant(1, 1, std::numeric_limits<double>::denorm_min()));
  ck.params.add("c", Matrix::Constant(2, 1, -0.0));
  ck.seed = 42;
  ck.step = 7;
  ck.rng_state = rng.state();
  ck.metadata = {{"note", "x"}};
  const std::string bytes = serialize_checkpoint(ck);
  EXPECT_EQ(bytes.substr(0, 8), std::string(kCheckpointMagic, 8));
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_TRUE(back.params.identical(ck.params));
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.step, 7u);
  EXPECT_EQ(back.rng_state, ck.rng_state);
  EXPECT_EQ(back.metadata, ck.metadata);
  EXPECT_EQ(serialize_checkpoint(back), bytes);

  const auto path = std::filesystem::temp_directory_path() / "cgconf_numeric_roundtrip.ckpt";
  save_checkpoint(path, ck);
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(path)), bytes);
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptInputIsRejected) {
  Checkpoint ck;
  ck.params.add("w", Matrix::Ones(2, 2));
  std::string bytes = serialize_checkpoint(ck);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), std::exception);
  bytes[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bytes), std::exception);
}

}  // namespace
}  // namespace cgconf
