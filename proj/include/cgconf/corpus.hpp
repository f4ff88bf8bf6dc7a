#pragma once

// Synthetic alkane/ether-like molecules for training and tests.
//
// A molecule is a chain of core units joined by single bonds.  A unit is
// either one sp3 atom (carbon or ether oxygen) or a rigid C=C pair; every
// core-core bond is rotatable and every other heavy atom is a terminal
// substituent, so the bead count is the core unit count.  Hydrogens are
// optional and off by default.

#include <string>
#include <vector>

#include "cgconf/coarsen.hpp"
#include "cgconf/molio.hpp"
#include "cgconf/numeric/parameters.hpp"

namespace cgconf {

struct CorpusOptions {
  int min_heavy = 6;
  int max_heavy = 20;
  int min_rotatable = 1;
  int max_rotatable = 5;
  int truths = 5;                 // ground-truth conformers per molecule
  double noise_sigma = 0.3;       // per-coordinate reference noise, angstrom
  double torsion_sigma_deg = 30;  // reference torsion perturbation
  bool hydrogens = false;
  double cutoff = 4.0;
};

struct ToyMolecule {
  std::string name;
  MolecularGraph graph;  // auxiliary edges from `ref`
  CGMapping mapping;     // from `ref`
  std::vector<Conformer> truths;
  Conformer ref;
};

// Deterministic in (count, seed, options).
std::vector<ToyMolecule> make_corpus(int count, std::uint64_t seed, const CorpusOptions& options = {});

// Rotates the atoms on `bond.end`'s side of a rotatable bond about the bond
// axis by `angle` radians.
void rotate_torsion(const MolecularGraph& graph, int bond, double angle, Conformer& coords);

// Natural extension of reference frame: places d so that |cd| = length,
// angle(bcd) = angle and dihedral(abcd) = torsion (radians).
Eigen::RowVector3d place_atom(const Eigen::RowVector3d& a, const Eigen::RowVector3d& b,
                              const Eigen::RowVector3d& c, double length, double angle, double torsion);

double dihedral(const Eigen::RowVector3d& a, const Eigen::RowVector3d& b, const Eigen::RowVector3d& c,
                const Eigen::RowVector3d& d);

}  // namespace cgconf
