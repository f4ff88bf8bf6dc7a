#include "cgconf/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "cgconf/numeric/kabsch.hpp"

namespace cgconf {

std::vector<int> heavy_atoms(const MolecularGraph& graph) {
  std::vector<int> out;
  for (int i = 0; i < graph.atom_count(); ++i)
    if (graph.atoms[i].element != Element::H) out.push_back(i);
  return out;
}

double rmsd(const Conformer& a, const Conformer& b, const std::vector<int>& subset) {
  if (a.rows() != b.rows()) throw std::invalid_argument("rmsd: conformers differ in atom count");
  // Identical inputs are exactly zero rather than SVD roundoff.
  if (subset.empty()) return a == b ? 0.0 : aligned_rmsd(a, b);
  Conformer sa(static_cast<Eigen::Index>(subset.size()), 3), sb(sa.rows(), 3);
  for (std::size_t k = 0; k < subset.size(); ++k) {
    if (subset[k] < 0 || subset[k] >= a.rows()) throw std::out_of_range("rmsd: subset index out of range");
    sa.row(static_cast<Eigen::Index>(k)) = a.row(subset[k]);
    sb.row(static_cast<Eigen::Index>(k)) = b.row(subset[k]);
  }
  return sa == sb ? 0.0 : aligned_rmsd(sa, sb);
}

EnsembleReport report_from_matrix(const Eigen::MatrixXd& m, double delta) {
  if (m.rows() < 1 || m.cols() < 1) throw std::invalid_argument("ensemble_report: empty ensemble");
  EnsembleReport r;
  r.k = static_cast<int>(m.rows());
  r.l = static_cast<int>(m.cols());
  r.delta = delta;
  r.rmsd_matrix = m;
  r.precision_minima = m.rowwise().minCoeff();
  r.recall_minima = m.colwise().minCoeff().transpose();
  auto covered = [delta](const Eigen::VectorXd& v) {
    return 100.0 * static_cast<double>((v.array() < delta).count()) / static_cast<double>(v.size());
  };
  r.cov_precision = covered(r.precision_minima);
  r.cov_recall = covered(r.recall_minima);
  r.amr_precision = r.precision_minima.mean();
  r.amr_recall = r.recall_minima.mean();
  return r;
}

namespace {

Eigen::MatrixXd rmsd_matrix(const std::vector<Conformer>& generated, const std::vector<Conformer>& truth,
                            const std::vector<int>& subset) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(generated.size()), static_cast<Eigen::Index>(truth.size()));
  for (std::size_t i = 0; i < generated.size(); ++i)
    for (std::size_t j = 0; j < truth.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rmsd(generated[i], truth[j], subset);
  return m;
}

}  // namespace

EnsembleReport ensemble_report(const std::vector<Conformer>& generated, const std::vector<Conformer>& truth,
                               double delta, const std::vector<int>& subset) {
  if (generated.empty() || truth.empty()) throw std::invalid_argument("ensemble_report: empty ensemble");
  return report_from_matrix(rmsd_matrix(generated, truth, subset), delta);
}

std::vector<EnsembleReport> budget_sweep(const std::vector<Conformer>& pool, const std::vector<Conformer>& truth,
                                         const std::vector<int>& budgets, double delta,
                                         const std::vector<int>& subset) {
  if (pool.empty() || truth.empty()) throw std::invalid_argument("budget_sweep: empty ensemble");
  const Eigen::MatrixXd full = rmsd_matrix(pool, truth, subset);
  std::vector<EnsembleReport> out;
  for (int b : budgets) {
    if (b < 1 || b > static_cast<int>(pool.size()))
      throw std::out_of_range("budget_sweep: budget outside 1.." + std::to_string(pool.size()));
    out.push_back(report_from_matrix(full.topRows(b), delta));
  }
  return out;
}

Histogram histogram(const std::vector<double>& values, int bins, double lo, double hi) {
  if (bins < 1 || !(hi > lo)) throw std::invalid_argument("histogram: need bins >= 1 and hi > lo");
  Histogram h;
  const double width = (hi - lo) / bins;
  for (int b = 0; b <= bins; ++b) h.edges.push_back(lo + width * b);
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    const int b = std::clamp(static_cast<int>((v - lo) / width), 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

std::string format_report(const EnsembleReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "generated = %d\ntruth = %d\ndelta = %.4f\ncov_precision = %.2f\ncov_recall = %.2f\n"
                "amr_precision = %.6f\namr_recall = %.6f\n",
                r.k, r.l, r.delta, r.cov_precision, r.cov_recall, r.amr_precision, r.amr_recall);
  return buf;
}

std::string format_histogram(const Histogram& h) {
  std::string out = "# bin_lo bin_hi count\n";
  char buf[96];
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%.6f %.6f %ld\n", h.edges[b], h.edges[b + 1], h.counts[b]);
    out += buf;
  }
  return out;
}

}  // namespace cgconf
