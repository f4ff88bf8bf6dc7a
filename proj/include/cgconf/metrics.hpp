#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cgconf/molio.hpp"

namespace cgconf {

// Atom indices of non-hydrogen atoms.
std::vector<int> heavy_atoms(const MolecularGraph& graph);

// Kabsch-minimized RMSD over all atoms, or over `subset` when non-empty.
double rmsd(const Conformer& a, const Conformer& b, const std::vector<int>& subset = {});

struct EnsembleReport {
  double cov_precision = 0.0;  // percent
  double cov_recall = 0.0;     // percent
  double amr_precision = 0.0;  // angstrom
  double amr_recall = 0.0;     // angstrom
  Eigen::MatrixXd rmsd_matrix;           // K x L, generated by truth
  Eigen::VectorXd precision_minima;      // K, min over truth
  Eigen::VectorXd recall_minima;         // L, min over generated
  int k = 0;
  int l = 0;
  double delta = 0.0;
};

// Coverage counts entries strictly below `delta`.
EnsembleReport report_from_matrix(const Eigen::MatrixXd& rmsd_matrix, double delta);
EnsembleReport ensemble_report(const std::vector<Conformer>& generated,
                               const std::vector<Conformer>& truth, double delta,
                               const std::vector<int>& subset = {});

// One report per budget, each on the first `budget` generated conformers.
std::vector<EnsembleReport> budget_sweep(const std::vector<Conformer>& pool,
                                         const std::vector<Conformer>& truth,
                                         const std::vector<int>& budgets, double delta,
                                         const std::vector<int>& subset = {});

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<long> counts;   // bins
};

// Equal-width bins over [lo, hi]; values outside are clamped into the end bins.
Histogram histogram(const std::vector<double>& values, int bins, double lo, double hi);

std::string format_report(const EnsembleReport& report);
std::string format_histogram(const Histogram& histogram);

}  // namespace cgconf
