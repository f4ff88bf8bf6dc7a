#include "cgconf/coarsen.hpp"

#include <algorithm>
#include <deque>
#include <numeric>
#include <set>
#include <stdexcept>

namespace cgconf {

namespace {

bool is_unsaturated(BondOrder o) { return o == BondOrder::Double || o == BondOrder::Aromatic; }

// True when `atom` has a double/aromatic bond to someone other than `exclude`.
bool has_unsaturated_bond(const MolecularGraph& g,
                          const std::vector<std::vector<std::pair<int, int>>>& adj, int atom,
                          int exclude) {
  for (auto [nb, bond] : adj[atom])
    if (nb != exclude && is_unsaturated(g.bonds[bond].order)) return true;
  return false;
}

bool is_amide_carbon(const MolecularGraph& g,
                     const std::vector<std::vector<std::pair<int, int>>>& adj, int carbon) {
  if (g.atoms[carbon].element != Element::C) return false;
  for (auto [nb, bond] : adj[carbon])
    if (g.atoms[nb].element == Element::O && g.bonds[bond].order == BondOrder::Double) return true;
  return false;
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// Connected components over all bonds except `skip`; labels are the lowest
// atom index of each component.
std::vector<int> component_roots(const MolecularGraph& g, const std::vector<bool>& skip) {
  UnionFind uf(g.atom_count());
  for (std::size_t k = 0; k < g.bonds.size(); ++k)
    if (!skip[k]) uf.unite(g.bonds[k].begin, g.bonds[k].end);
  std::vector<int> roots(g.atom_count());
  for (int i = 0; i < g.atom_count(); ++i) roots[i] = uf.find(i);
  return roots;
}

bool is_ring_bond(const MolecularGraph& g, int bond) {
  std::vector<bool> skip(g.bonds.size(), false);
  skip[bond] = true;
  const auto roots = component_roots(g, skip);
  return roots[g.bonds[bond].begin] == roots[g.bonds[bond].end];
}

}  // namespace

std::vector<int> find_rotatable_bonds(const MolecularGraph& graph, const RotatableRules& rules) {
  const auto adj = graph.adjacency();
  std::vector<int> out;
  for (std::size_t k = 0; k < graph.bonds.size(); ++k) {
    const Bond& b = graph.bonds[k];
    if (b.order != BondOrder::Single) continue;
    const Atom& a = graph.atoms[b.begin];
    const Atom& c = graph.atoms[b.end];
    if (a.element == Element::H || c.element == Element::H) continue;
    if (a.degree_heavy < 2 || c.degree_heavy < 2) continue;
    if (rules.exclude_amides) {
      const bool amide =
          (c.element == Element::N && is_amide_carbon(graph, adj, b.begin)) ||
          (a.element == Element::N && is_amide_carbon(graph, adj, b.end));
      if (amide) continue;
    }
    if (rules.exclude_conjugated && has_unsaturated_bond(graph, adj, b.begin, b.end) &&
        has_unsaturated_bond(graph, adj, b.end, b.begin))
      continue;
    if (rules.exclude_ring_bonds && is_ring_bond(graph, static_cast<int>(k))) continue;
    out.push_back(static_cast<int>(k));
  }
  return out;
}

Conformer bead_centroids(const CGMapping& mapping, const Conformer& coords) {
  if (coords.rows() != mapping.atom_count())
    throw std::invalid_argument("bead_centroids: conformer does not match the mapping");
  Conformer out(mapping.bead_count(), 3);
  for (int b = 0; b < mapping.bead_count(); ++b) {
    Eigen::RowVector3d acc = Eigen::RowVector3d::Zero();
    for (int i : mapping.members[b]) acc += coords.row(i);
    out.row(b) = acc / static_cast<double>(mapping.members[b].size());
  }
  return out;
}

CGMapping coarse_grain(const MolecularGraph& graph, const Conformer& conformer,
                       const RotatableRules& rules) {
  return coarse_grain_with(graph, conformer, find_rotatable_bonds(graph, rules));
}

CGMapping coarse_grain_with(const MolecularGraph& graph, const Conformer& conformer,
                            const std::vector<int>& severed) {
  const int n = graph.atom_count();
  if (n == 0) throw std::invalid_argument("coarse_grain: no atoms");
  if (conformer.rows() != n) throw std::invalid_argument("coarse_grain: conformer/atom mismatch");

  const auto whole = component_roots(graph, std::vector<bool>(graph.bonds.size(), false));
  for (int i = 0; i < n; ++i)
    if (whole[i] != 0)
      throw std::invalid_argument("coarse_grain: covalent graph is disconnected (atom " +
                                  std::to_string(i) + " unreachable from atom 0)");

  std::vector<bool> skip(graph.bonds.size(), false);
  for (int k : severed) {
    if (k < 0 || k >= static_cast<int>(graph.bonds.size()))
      throw std::out_of_range("coarse_grain: severed bond id out of range");
    skip[k] = true;
  }
  const auto roots = component_roots(graph, skip);

  CGMapping m;
  m.assignment.assign(n, -1);
  std::vector<int> bead_of_root(n, -1);
  for (int i = 0; i < n; ++i) {
    int& bead = bead_of_root[roots[i]];
    if (bead < 0) {
      bead = static_cast<int>(m.members.size());
      m.members.emplace_back();
    }
    m.assignment[i] = bead;
    m.members[bead].push_back(i);
  }
  m.severed_bonds = severed;
  for (int k : severed)
    m.severed_bead_pairs.emplace_back(m.assignment[graph.bonds[k].begin],
                                      m.assignment[graph.bonds[k].end]);
  m.bead_centroids = bead_centroids(m, conformer);
  return m;
}

PoolingGraph build_pooling_graph(const CGMapping& mapping) {
  PoolingGraph p;
  p.atom_count = mapping.atom_count();
  p.bead_count = mapping.bead_count();
  for (int i = 0; i < p.atom_count; ++i) {
    p.source.push_back(i);
    p.target.push_back(mapping.assignment[i]);
  }
  return p;
}

std::vector<AtomPair> BeadGraph::edges() const {
  std::set<AtomPair> all;
  for (auto [a, b] : bond_edges) all.insert(std::minmax(a, b));
  for (auto [a, b] : aux_edges) all.insert(std::minmax(a, b));
  return {all.begin(), all.end()};
}

BeadGraph build_bead_graph(const CGMapping& mapping, double cutoff) {
  return build_bead_graph(mapping, mapping.bead_centroids, cutoff);
}

BeadGraph build_bead_graph(const CGMapping& mapping, const Conformer& centroids, double cutoff) {
  if (centroids.rows() != mapping.bead_count())
    throw std::invalid_argument("build_bead_graph: centroid count does not match bead count");
  BeadGraph g;
  g.bead_count = mapping.bead_count();
  g.centroids = centroids;
  std::set<AtomPair> bonded;
  for (auto [a, b] : mapping.severed_bead_pairs)
    if (a != b) bonded.insert(std::minmax(a, b));
  g.bond_edges.assign(bonded.begin(), bonded.end());
  const double c2 = cutoff * cutoff;
  for (int a = 0; a < g.bead_count; ++a)
    for (int b = a + 1; b < g.bead_count; ++b)
      if (!bonded.count({a, b}) && (centroids.row(a) - centroids.row(b)).squaredNorm() <= c2)
        g.aux_edges.emplace_back(a, b);
  return g;
}

std::vector<int> order_beads(const CGMapping& mapping, const BeadGraph& graph) {
  const int n = graph.bead_count;
  if (n != mapping.bead_count()) throw std::invalid_argument("order_beads: bead count mismatch");
  std::vector<std::vector<int>> adj(n);
  for (auto [a, b] : graph.bond_edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  auto before = [&](int a, int b) {
    const auto sa = mapping.members[a].size(), sb = mapping.members[b].size();
    if (sa != sb) return sa > sb;
    if (adj[a].size() != adj[b].size()) return adj[a].size() > adj[b].size();
    return a < b;
  };
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  const int start = *std::min_element(all.begin(), all.end(), before);

  std::vector<int> order;
  std::vector<bool> seen(n, false);
  std::deque<int> queue{start};
  seen[start] = true;
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    order.push_back(cur);
    std::vector<int> next;
    for (int nb : adj[cur])
      if (!seen[nb]) {
        seen[nb] = true;
        next.push_back(nb);
      }
    std::sort(next.begin(), next.end(), before);
    queue.insert(queue.end(), next.begin(), next.end());
  }
  if (static_cast<int>(order.size()) != n)
    throw std::invalid_argument("order_beads: bead graph is disconnected");
  return order;
}

}  // namespace cgconf
