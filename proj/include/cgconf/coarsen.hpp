#pragma once

#include <vector>

#include "cgconf/molio.hpp"

namespace cgconf {

// Which single bonds count as torsions.  A "terminal" atom has at most one
// heavy neighbor.
struct RotatableRules {
  bool exclude_amides = true;
  // X=Y-Z=W: the single bond is locked when both ends carry a double or
  // aromatic bond to some other atom.
  bool exclude_conjugated = true;
  // Ring bonds cannot be severed without leaving the ring connected.
  bool exclude_ring_bonds = true;
};

std::vector<int> find_rotatable_bonds(const MolecularGraph& graph, const RotatableRules& rules = {});

// Surjective atom -> bead map.  Beads are numbered by their lowest atom index.
struct CGMapping {
  std::vector<int> assignment;
  std::vector<std::vector<int>> members;
  Conformer bead_centroids;
  std::vector<int> severed_bonds;
  // Bead pair joined by each severed bond (same order as severed_bonds).
  std::vector<AtomPair> severed_bead_pairs;

  int bead_count() const { return static_cast<int>(members.size()); }
  int atom_count() const { return static_cast<int>(assignment.size()); }
};

// Member-coordinate means, one row per bead.
Conformer bead_centroids(const CGMapping& mapping, const Conformer& coords);

// Severs every rotatable bond and makes one bead per connected component.
CGMapping coarse_grain(const MolecularGraph& graph, const Conformer& conformer,
                       const RotatableRules& rules = {});
// Same, with an explicit list of bonds to sever.
CGMapping coarse_grain_with(const MolecularGraph& graph, const Conformer& conformer,
                            const std::vector<int>& severed);

// Atom i -> bead assignment[i]; exactly one edge per atom.
struct PoolingGraph {
  int atom_count = 0;
  int bead_count = 0;
  std::vector<int> source;
  std::vector<int> target;
};

PoolingGraph build_pooling_graph(const CGMapping& mapping);

struct BeadGraph {
  int bead_count = 0;
  Conformer centroids;
  // Beads joined by a severed bond.
  std::vector<AtomPair> bond_edges;
  // Beads whose centroids lie within the cutoff and are not already bonded.
  std::vector<AtomPair> aux_edges;

  std::vector<AtomPair> edges() const;
};

BeadGraph build_bead_graph(const CGMapping& mapping, double cutoff = 4.0);
BeadGraph build_bead_graph(const CGMapping& mapping, const Conformer& centroids, double cutoff);

// Breadth-first generation order.  Starts from the largest bead (ties: more
// severed-bond neighbors, then lower index) and expands each frontier with
// the same priority.  Depends only on topology and bead sizes.
std::vector<int> order_beads(const CGMapping& mapping, const BeadGraph& graph);

}  // namespace cgconf
