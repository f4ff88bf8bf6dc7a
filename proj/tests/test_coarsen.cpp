#include <algorithm>
#include <functional>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "cgconf/coarsen.hpp"
#include "cgconf/corpus.hpp"
#include "support.hpp"

namespace cgconf {
namespace {

using E = Element;

MolecularGraph ethane_with_hydrogens() {
  std::vector<Bond> bonds{{0, 1}};
  for (int h = 2; h < 5; ++h) bonds.push_back({0, h});
  for (int h = 5; h < 8; ++h) bonds.push_back({1, h});
  return testing::molecule({E::C, E::C, E::H, E::H, E::H, E::H, E::H, E::H}, bonds);
}

// CH3-C(=O)-NH2 with hydrogens.
MolecularGraph acetamide() {
  std::vector<Bond> bonds{{0, 1}, {1, 2, BondOrder::Double}, {1, 3}};
  for (int h = 4; h < 7; ++h) bonds.push_back({0, h});
  bonds.push_back({3, 7});
  bonds.push_back({3, 8});
  return testing::molecule({E::C, E::C, E::O, E::N, E::H, E::H, E::H, E::H, E::H}, bonds);
}

// Butane with hydrogens: C0..C3, then 10 hydrogens.
MolecularGraph butane_with_hydrogens() {
  std::vector<Element> el{E::C, E::C, E::C, E::C};
  std::vector<Bond> bonds{{0, 1}, {1, 2}, {2, 3}};
  const int per_carbon[4] = {3, 2, 2, 3};
  for (int c = 0; c < 4; ++c)
    for (int k = 0; k < per_carbon[c]; ++k) {
      bonds.push_back({c, static_cast<int>(el.size())});
      el.push_back(E::H);
    }
  return testing::molecule(el, bonds);
}

TEST(Rotatable, EthaneHasNone) {
  EXPECT_TRUE(find_rotatable_bonds(ethane_with_hydrogens()).empty());
  EXPECT_TRUE(find_rotatable_bonds(testing::molecule({E::C, E::C}, {{0, 1}})).empty());
}

TEST(Rotatable, ButaneCentralBondOnly) {
  EXPECT_EQ(find_rotatable_bonds(testing::butane()), std::vector<int>{1});
  EXPECT_EQ(find_rotatable_bonds(butane_with_hydrogens()), std::vector<int>{1});
}

TEST(Rotatable, AcetamideHasNone) { EXPECT_TRUE(find_rotatable_bonds(acetamide()).empty()); }

TEST(Rotatable, AmideRuleIsSwitchable) {
  // N-methylacetamide: C1-N3 is the amide bond between two non-terminal atoms.
  const MolecularGraph g =
      testing::molecule({E::C, E::C, E::O, E::N, E::C}, {{0, 1}, {1, 2, BondOrder::Double}, {1, 3}, {3, 4}});
  EXPECT_TRUE(find_rotatable_bonds(g).empty());
  RotatableRules loose;
  loose.exclude_amides = false;
  EXPECT_EQ(find_rotatable_bonds(g, loose), std::vector<int>{2});
}

TEST(Rotatable, ConjugatedSingleBondExcluded) {
  // Butadiene-like C0=C1-C2=C3 plus methyl caps so both middle atoms are non-terminal.
  const MolecularGraph g = testing::molecule(
      {E::C, E::C, E::C, E::C, E::C, E::C},
      {{4, 0}, {0, 1, BondOrder::Double}, {1, 2}, {2, 3, BondOrder::Double}, {3, 5}});
  const auto rot = find_rotatable_bonds(g);
  EXPECT_EQ(std::count(rot.begin(), rot.end(), 2), 0);
  RotatableRules loose;
  loose.exclude_conjugated = false;
  const auto all = find_rotatable_bonds(g, loose);
  EXPECT_EQ(std::count(all.begin(), all.end(), 2), 1);
}

TEST(CoarseGrain, NoRotatableBondsGivesOneBead) {
  const MolecularGraph g = ethane_with_hydrogens();
  const CGMapping m = coarse_grain(g, testing::zigzag(g.atom_count()));
  EXPECT_EQ(m.bead_count(), 1);
  EXPECT_EQ(m.members[0].size(), 8u);
}

TEST(CoarseGrain, ButaneBeadsCarryTheirHydrogens) {
  const MolecularGraph g = butane_with_hydrogens();
  const CGMapping m = coarse_grain(g, testing::zigzag(g.atom_count()));
  ASSERT_EQ(m.bead_count(), 2);
  const std::vector<int> left{0, 1, 4, 5, 6, 7, 8};
  const std::vector<int> right{2, 3, 9, 10, 11, 12, 13};
  EXPECT_EQ(m.members[0], left);
  EXPECT_EQ(m.members[1], right);
  EXPECT_EQ(m.severed_bonds, std::vector<int>{1});
}

TEST(CoarseGrain, CentroidsArePlainMeans) {
  Rng rng(4);
  const MolecularGraph g = butane_with_hydrogens();
  const Conformer x = testing::random_cloud(g.atom_count(), rng, 2.0);
  const CGMapping m = coarse_grain(g, x);
  for (int b = 0; b < m.bead_count(); ++b) {
    Eigen::RowVector3d mean = Eigen::RowVector3d::Zero();
    for (int a : m.members[b]) mean += x.row(a);
    mean /= static_cast<double>(m.members[b].size());
    EXPECT_LE((m.bead_centroids.row(b) - mean).norm(), 1e-12);
  }
}

TEST(CoarseGrain, DisconnectedInputIsAnError) {
  const MolecularGraph g = testing::molecule({E::C, E::C, E::C}, {{0, 1}});
  EXPECT_THROW(coarse_grain(g, testing::zigzag(3)), std::invalid_argument);
}

TEST(CoarseGrain, CorpusInvariants) {
  for (const ToyMolecule& mol : make_corpus(60, 21)) {
    const CGMapping& m = mol.mapping;
    const auto rot = find_rotatable_bonds(mol.graph);
    EXPECT_EQ(m.bead_count(), static_cast<int>(rot.size()) + 1) << mol.name;

    std::vector<int> all;
    for (int b = 0; b < m.bead_count(); ++b) {
      for (int a : m.members[b]) EXPECT_EQ(m.assignment[a], b);
      all.insert(all.end(), m.members[b].begin(), m.members[b].end());
    }
    std::sort(all.begin(), all.end());
    std::vector<int> expected(static_cast<std::size_t>(mol.graph.atom_count()));
    std::iota(expected.begin(), expected.end(), 0);
    EXPECT_EQ(all, expected);

    // Re-adding the severed bonds reconnects everything into one component.
    std::vector<int> parent(static_cast<std::size_t>(m.bead_count()));
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int i) { return parent[i] == i ? i : parent[i] = find(parent[i]); };
    for (auto [a, b] : m.severed_bead_pairs) parent[find(a)] = find(b);
    std::set<int> roots;
    for (int b = 0; b < m.bead_count(); ++b) roots.insert(find(b));
    EXPECT_EQ(roots.size(), 1u);
  }
}

TEST(CoarseGrain, KTorsionsGiveKPlusOneBeads) {
  // Pentane: the two inner C-C bonds rotate.
  const MolecularGraph g = testing::molecule({E::C, E::C, E::C, E::C, E::C},
                                             {{0, 1}, {1, 2}, {2, 3}, {3, 4}});
  const auto rot = find_rotatable_bonds(g);
  ASSERT_EQ(rot.size(), 2u);
  EXPECT_EQ(coarse_grain(g, testing::zigzag(5)).bead_count(), 3);
}

TEST(PoolingGraph, OneBeadThreeAtoms) {
  const MolecularGraph g = testing::molecule({E::C, E::O, E::C}, {{0, 1}, {1, 2}});
  const CGMapping m = coarse_grain_with(g, testing::zigzag(3), {});
  const PoolingGraph p = build_pooling_graph(m);
  EXPECT_EQ(p.source, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(p.target, (std::vector<int>{0, 0, 0}));
  EXPECT_EQ(p.bead_count, 1);
}

TEST(PoolingGraph, ButaneEdgesFollowAssignment) {
  const MolecularGraph g = butane_with_hydrogens();
  const CGMapping m = coarse_grain(g, testing::zigzag(g.atom_count()));
  const PoolingGraph p = build_pooling_graph(m);
  ASSERT_EQ(p.source.size(), static_cast<std::size_t>(g.atom_count()));
  for (std::size_t e = 0; e < p.source.size(); ++e) EXPECT_EQ(p.target[e], m.assignment[p.source[e]]);
}

TEST(BeadGraph, SingleBeadAndButane) {
  const MolecularGraph e = ethane_with_hydrogens();
  EXPECT_TRUE(build_bead_graph(coarse_grain(e, testing::zigzag(8))).edges().empty());
  const MolecularGraph b = testing::butane();
  const BeadGraph bg = build_bead_graph(coarse_grain(b, testing::zigzag(4)));
  ASSERT_EQ(bg.edges().size(), 1u);
  EXPECT_EQ(bg.bond_edges.size(), 1u);
}

TEST(BeadGraph, AuxEdgesMatchBruteForce) {
  Rng rng(5);
  // Six single-atom beads: a chain of five rotatable bonds needs caps, so
  // sever an explicit bond list instead.
  const MolecularGraph g = testing::molecule(std::vector<Element>(6, E::C),
                                             {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}});
  const CGMapping m = coarse_grain_with(g, testing::zigzag(6), {0, 1, 2, 3, 4});
  ASSERT_EQ(m.bead_count(), 6);
  for (int trial = 0; trial < 20; ++trial) {
    const Conformer c = testing::random_cloud(6, rng, 4.0);
    const BeadGraph bg = build_bead_graph(m, c, 4.0);
    std::set<AtomPair> bonded(bg.bond_edges.begin(), bg.bond_edges.end()), expected;
    for (int i = 0; i < 6; ++i)
      for (int j = i + 1; j < 6; ++j)
        if (!bonded.count({i, j}) && (c.row(i) - c.row(j)).norm() <= 4.0) expected.insert({i, j});
    EXPECT_EQ(std::set<AtomPair>(bg.aux_edges.begin(), bg.aux_edges.end()), expected);
  }
}

TEST(OrderBeads, SingleBead) {
  const MolecularGraph g = ethane_with_hydrogens();
  const CGMapping m = coarse_grain(g, testing::zigzag(8));
  EXPECT_EQ(order_beads(m, build_bead_graph(m)), std::vector<int>{0});
}

TEST(OrderBeads, StarStartsAtLargestCenter) {
  // Center bead of 5 atoms (indices 0..4), three 2-atom arms.
  std::vector<Bond> bonds{{0, 1}, {1, 2}, {2, 3}, {3, 4}};
  bonds.push_back({0, 5});
  bonds.push_back({5, 6});
  bonds.push_back({2, 7});
  bonds.push_back({7, 8});
  bonds.push_back({4, 9});
  bonds.push_back({9, 10});
  const MolecularGraph g = testing::molecule(std::vector<Element>(11, E::C), bonds);
  const CGMapping m = coarse_grain_with(g, testing::zigzag(11), {4, 6, 8});
  ASSERT_EQ(m.bead_count(), 4);
  const BeadGraph bg = build_bead_graph(m, m.bead_centroids, 0.0);
  const auto order = order_beads(m, bg);
  EXPECT_EQ(order.front(), m.assignment[0]);
  EXPECT_EQ(m.members[order.front()].size(), 5u);
}

TEST(OrderBeads, PathOfEqualBeadsStartsInTheMiddle) {
  const MolecularGraph g = testing::molecule(std::vector<Element>(6, E::C),
                                             {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}});
  const CGMapping m = coarse_grain_with(g, testing::zigzag(6), {1, 3});
  ASSERT_EQ(m.bead_count(), 3);
  const BeadGraph bg = build_bead_graph(m, m.bead_centroids, 0.0);
  EXPECT_EQ(order_beads(m, bg), (std::vector<int>{1, 0, 2}));
}

TEST(OrderBeads, InvariantUnderRigidMotion) {
  Rng rng(6);
  for (const ToyMolecule& mol : make_corpus(10, 31)) {
    const BeadGraph bg = build_bead_graph(mol.mapping, mol.mapping.bead_centroids, 4.0);
    const auto order = order_beads(mol.mapping, bg);
    std::vector<int> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> ids(sorted.size());
    std::iota(ids.begin(), ids.end(), 0);
    EXPECT_EQ(sorted, ids);

    Eigen::Matrix3d q = testing::random_matrix(3, 3, rng).householderQr().householderQ();
    if (q.determinant() < 0) q.col(0) *= -1.0;
    const Conformer moved = (mol.ref * q.transpose()).rowwise() + Eigen::RowVector3d(1.0, -2.0, 3.0);
    const CGMapping m2 = coarse_grain(mol.graph, moved);
    EXPECT_EQ(order_beads(m2, build_bead_graph(m2, m2.bead_centroids, 4.0)), order);
  }
}

}  // namespace
}  // namespace cgconf
