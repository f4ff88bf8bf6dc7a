#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace cgconf {

template <typename Scalar>
using Points = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>;

template <typename Scalar>
struct RigidAlignment {
  Eigen::Matrix<Scalar, 3, 3> rotation = Eigen::Matrix<Scalar, 3, 3>::Identity();
  Eigen::Matrix<Scalar, 1, 3> translation = Eigen::Matrix<Scalar, 1, 3>::Zero();
  Scalar rmsd = 0;
  // False for collinear or coincident inputs, where any optimal rotation
  // is returned.
  bool unique = true;

  // Applies the motion to row-vector points: P R^T + t.
  template <typename Derived>
  Points<Scalar> apply(const Eigen::MatrixBase<Derived>& points) const {
    return (points * rotation.transpose()).rowwise() + translation;
  }
};

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 1, 3> centroid(const Eigen::MatrixBase<Derived>& points) {
  if (points.rows() == 0) throw std::invalid_argument("centroid of an empty point set");
  return points.colwise().mean();
}

// Root-mean-square deviation without any alignment.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar raw_rmsd(const Eigen::MatrixBase<DerivedA>& a,
                                   const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.rows() != b.rows() || a.rows() == 0)
    throw std::invalid_argument("rmsd: point sets must be nonempty and equally sized");
  return std::sqrt((a - b).rowwise().squaredNorm().sum() / static_cast<Scalar>(a.rows()));
}

// Proper rotation R and translation t minimizing sum_i |R p_i + t - q_i|^2.
// The reflection case is folded away with the SVD sign correction, so
// det(R) = +1 always.
template <typename DerivedP, typename DerivedQ>
RigidAlignment<typename DerivedP::Scalar> kabsch_align(const Eigen::MatrixBase<DerivedP>& p,
                                                       const Eigen::MatrixBase<DerivedQ>& q) {
  using Scalar = typename DerivedP::Scalar;
  using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
  if (p.cols() != 3 || q.cols() != 3) throw std::invalid_argument("kabsch: points must be m x 3");
  if (p.rows() != q.rows()) throw std::invalid_argument("kabsch: point counts differ");
  if (p.rows() < 1) throw std::invalid_argument("kabsch: need at least one point");

  const Eigen::Matrix<Scalar, 1, 3> cp = centroid(p);
  const Eigen::Matrix<Scalar, 1, 3> cq = centroid(q);
  const Points<Scalar> pc = p.rowwise() - cp;
  const Points<Scalar> qc = q.rowwise() - cq;
  const Mat3 h = pc.transpose() * qc;

  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0) d(2, 2) = -1;

  RigidAlignment<Scalar> out;
  out.rotation = v * d * u.transpose();
  out.translation = cq - cp * out.rotation.transpose();
  const auto& s = svd.singularValues();
  const Scalar scale = std::max<Scalar>(s(0), Scalar(1));
  out.unique = s(1) > Scalar(1e-10) * scale;
  out.rmsd = raw_rmsd(out.apply(p), q);
  return out;
}

// Minimum RMSD over all rigid motions.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar aligned_rmsd(const Eigen::MatrixBase<DerivedA>& a,
                                       const Eigen::MatrixBase<DerivedB>& b) {
  return kabsch_align(a, b).rmsd;
}

}  // namespace cgconf
