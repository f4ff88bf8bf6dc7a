#include "cgconf/corpus.hpp"

#include <cmath>
#include <cstdio>
#include <deque>
#include <numbers>
#include <stdexcept>

namespace cgconf {

namespace {

constexpr double kTetrahedral = 109.4712206 * std::numbers::pi / 180.0;
constexpr double kTrigonal = 120.0 * std::numbers::pi / 180.0;
constexpr double kDeg = std::numbers::pi / 180.0;

struct Topology {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  std::vector<int> capacity;  // remaining sigma partners
  std::vector<bool> sp2;

  int add_atom(Element e, int sigma_partners, bool trigonal) {
    Atom a;
    a.element = e;
    atoms.push_back(a);
    capacity.push_back(sigma_partners);
    sp2.push_back(trigonal);
    return static_cast<int>(atoms.size()) - 1;
  }
  void bond(int a, int b, BondOrder order) {
    bonds.push_back({a, b, order});
    --capacity[a];
    --capacity[b];
  }
  int heavy_count() const {
    int n = 0;
    for (const Atom& a : atoms) n += a.element != Element::H;
    return n;
  }
};

double bond_length(Element a, Element b, BondOrder order, bool trigonal) {
  if (a == Element::H || b == Element::H) return (a == Element::O || b == Element::O) ? 0.96 : 1.09;
  if (a == Element::O || b == Element::O) return 1.43;
  if (order == BondOrder::Double) return 1.34;
  return trigonal ? 1.50 : 1.53;
}

// Returns false when the drawn topology misses the requested ranges.
bool draw_topology(Rng& rng, const CorpusOptions& opt, Topology& t, int& rotatable) {
  t = Topology{};
  rotatable = rng.uniform_int(opt.min_rotatable, opt.max_rotatable);
  const int units = rotatable + 1;

  enum class Unit { Carbon, Oxygen, Alkene };
  std::vector<Unit> kind;
  for (int u = 0; u < units; ++u) {
    const bool prev_alkene = u > 0 && kind.back() == Unit::Alkene;
    const bool prev_oxygen = u > 0 && kind.back() == Unit::Oxygen;
    const double r = rng.uniform(0.0, 1.0);
    if (r < 0.25 && !prev_alkene)
      kind.push_back(Unit::Alkene);
    else if (r < 0.45 && !prev_oxygen)
      kind.push_back(Unit::Oxygen);
    else
      kind.push_back(Unit::Carbon);
  }

  std::vector<int> in_atom, out_atom;
  for (int u = 0; u < units; ++u) {
    if (kind[u] == Unit::Alkene) {
      const int a = t.add_atom(Element::C, 3, true);
      const int b = t.add_atom(Element::C, 3, true);
      t.bond(a, b, BondOrder::Double);
      in_atom.push_back(a);
      out_atom.push_back(b);
    } else {
      const bool oxygen = kind[u] == Unit::Oxygen;
      const int a = t.add_atom(oxygen ? Element::O : Element::C, oxygen ? 2 : 4, false);
      in_atom.push_back(a);
      out_atom.push_back(a);
    }
    if (u > 0) t.bond(out_atom[u - 1], in_atom[u], BondOrder::Single);
  }

  auto substitute = [&](int parent) {
    const bool oxygen_ok = t.atoms[parent].element == Element::C && rng.uniform(0.0, 1.0) < 0.2;
    const Element e = oxygen_ok ? Element::O : Element::C;
    const int s = t.add_atom(e, e == Element::O ? 2 : 4, false);
    t.bond(parent, s, BondOrder::Single);
  };
  // Single-atom end units need a second heavy neighbor for their core bond
  // to count as a torsion.
  if (units > 1) {
    if (kind.front() != Unit::Alkene) substitute(out_atom.front());
    if (kind.back() != Unit::Alkene) substitute(in_atom.back());
  }

  std::vector<int> core;
  for (int u = 0; u < units; ++u) {
    core.push_back(in_atom[u]);
    if (out_atom[u] != in_atom[u]) core.push_back(out_atom[u]);
  }
  const int target = rng.uniform_int(std::max(opt.min_heavy, t.heavy_count()), opt.max_heavy);
  for (int guard = 0; t.heavy_count() < target && guard < 200; ++guard) {
    const int parent = core[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(core.size()) - 1))];
    if (t.capacity[parent] > 0) substitute(parent);
  }
  const int heavy = t.heavy_count();
  return heavy >= opt.min_heavy && heavy <= opt.max_heavy;
}

void add_hydrogens(Topology& t) {
  const int heavy = static_cast<int>(t.atoms.size());
  for (int i = 0; i < heavy; ++i)
    while (t.capacity[i] > 0) {
      const int h = t.add_atom(Element::H, 1, false);
      t.bond(i, h, BondOrder::Single);
    }
}

// Idealized geometry by breadth-first placement: staggered (sp3) or planar
// (sp2) torsions about each parent bond.
Conformer build_geometry(const Topology& t) {
  const int n = static_cast<int>(t.atoms.size());
  std::vector<std::vector<std::pair<int, int>>> adj(n);
  for (std::size_t k = 0; k < t.bonds.size(); ++k) {
    adj[t.bonds[k].begin].push_back({t.bonds[k].end, static_cast<int>(k)});
    adj[t.bonds[k].end].push_back({t.bonds[k].begin, static_cast<int>(k)});
  }
  Conformer x = Conformer::Zero(n, 3);
  std::vector<int> parent(n, -1);
  std::vector<bool> placed(n, false);
  placed[0] = true;
  std::deque<int> queue{0};
  const Eigen::RowVector3d up(0.0, 1.0, 0.0);

  while (!queue.empty()) {
    const int p = queue.front();
    queue.pop_front();
    const double angle = t.sp2[p] ? kTrigonal : kTetrahedral;
    std::vector<std::pair<int, int>> children;
    for (auto [c, bond] : adj[p])
      if (!placed[c]) children.push_back({c, bond});

    int slot = 0;
    for (auto [c, bond] : children) {
      const Bond& b = t.bonds[bond];
      const double len = bond_length(t.atoms[p].element, t.atoms[c].element, b.order, t.sp2[p] || t.sp2[c]);
      const int g = parent[p];
      if (g < 0) {
        // Root: first child on +x, later ones fanned around it.
        int first = -1;
        for (auto [c2, b2] : children) {
          (void)b2;
          if (placed[c2]) {
            first = c2;
            break;
          }
        }
        if (first < 0) {
          x.row(c) = x.row(p) + Eigen::RowVector3d(len, 0.0, 0.0);
        } else {
          const double tors = (t.sp2[p] ? 180.0 : 120.0 * slot) * kDeg;
          x.row(c) = place_atom(x.row(first) + up, x.row(first), x.row(p), len, angle, tors);
        }
      } else {
        int r = parent[g];
        if (r < 0)
          for (auto [c2, b2] : adj[g]) {
            (void)b2;
            if (c2 != p && placed[c2]) {
              r = c2;
              break;
            }
          }
        const Eigen::RowVector3d ref_point = r >= 0 ? Eigen::RowVector3d(x.row(r)) : x.row(g) + up;
        const double tors = t.sp2[p] ? (slot == 0 ? 180.0 : 0.0) * kDeg : (180.0 + 120.0 * slot) * kDeg;
        x.row(c) = place_atom(ref_point, x.row(g), x.row(p), len, angle, tors);
      }
      parent[c] = p;
      placed[c] = true;
      queue.push_back(c);
      ++slot;
    }
  }
  return x;
}

std::vector<std::vector<int>> hop_distances(const MolecularGraph& g) {
  const int n = g.atom_count();
  const auto adj = g.adjacency();
  std::vector<std::vector<int>> d(n, std::vector<int>(n, -1));
  for (int s = 0; s < n; ++s) {
    std::deque<int> q{s};
    d[s][s] = 0;
    while (!q.empty()) {
      const int u = q.front();
      q.pop_front();
      for (auto [v, bond] : adj[u]) {
        (void)bond;
        if (d[s][v] < 0) {
          d[s][v] = d[s][u] + 1;
          q.push_back(v);
        }
      }
    }
  }
  return d;
}

bool clash_free(const Conformer& x, const std::vector<std::vector<int>>& hops) {
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x.rows(); ++j)
      if (hops[i][j] >= 3 && (x.row(i) - x.row(j)).norm() < 2.2) return false;
  return true;
}

}  // namespace

Eigen::RowVector3d place_atom(const Eigen::RowVector3d& a, const Eigen::RowVector3d& b,
                              const Eigen::RowVector3d& c, double length, double angle, double torsion) {
  const Eigen::RowVector3d bc = (c - b).normalized();
  const Eigen::RowVector3d n = (b - a).cross(bc).normalized();
  const Eigen::RowVector3d m = n.cross(bc);
  const double dx = -length * std::cos(angle);
  const double dy = length * std::sin(angle) * std::cos(torsion);
  const double dz = length * std::sin(angle) * std::sin(torsion);
  return c + dx * bc + dy * m + dz * n;
}

double dihedral(const Eigen::RowVector3d& a, const Eigen::RowVector3d& b, const Eigen::RowVector3d& c,
                const Eigen::RowVector3d& d) {
  const Eigen::RowVector3d b0 = a - b, b1 = (c - b).normalized(), b2 = d - c;
  const Eigen::RowVector3d v = b0 - b0.dot(b1) * b1;
  const Eigen::RowVector3d w = b2 - b2.dot(b1) * b1;
  return std::atan2(b1.cross(v).dot(w), v.dot(w));
}

void rotate_torsion(const MolecularGraph& graph, int bond, double angle, Conformer& coords) {
  const Bond& b = graph.bonds.at(static_cast<std::size_t>(bond));
  const auto adj = graph.adjacency();
  std::vector<bool> side(graph.atom_count(), false);
  std::deque<int> q{b.end};
  side[b.end] = true;
  while (!q.empty()) {
    const int u = q.front();
    q.pop_front();
    for (auto [v, k] : adj[u])
      if (k != bond && !side[v]) {
        if (v == b.begin) throw std::invalid_argument("rotate_torsion: bond lies on a ring");
        side[v] = true;
        q.push_back(v);
      }
  }
  const Eigen::RowVector3d pivot = coords.row(b.begin);
  const Eigen::Vector3d axis = (coords.row(b.end) - pivot).transpose().normalized();
  const Eigen::Matrix3d rot = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  for (int i = 0; i < graph.atom_count(); ++i)
    if (side[i]) coords.row(i) = (coords.row(i) - pivot) * rot.transpose() + pivot;
}

std::vector<ToyMolecule> make_corpus(int count, std::uint64_t seed, const CorpusOptions& opt) {
  if (count < 0) throw std::invalid_argument("make_corpus: negative count");
  if (opt.truths < 1) throw std::invalid_argument("make_corpus: need at least one ground truth");
  Rng rng(seed);
  std::vector<ToyMolecule> out;
  while (static_cast<int>(out.size()) < count) {
    Topology topo;
    int rotatable = 0;
    if (!draw_topology(rng, opt, topo, rotatable)) continue;
    if (opt.hydrogens) add_hydrogens(topo);
    const Conformer base = build_geometry(topo);

    // Graph with auxiliary edges from the base geometry, only for torsion
    // bookkeeping; the final graph takes them from the reference.
    MolecularGraph scratch = build_graph(topo.atoms, topo.bonds, base, opt.cutoff);
    const std::vector<int> torsions = find_rotatable_bonds(scratch);
    if (static_cast<int>(torsions.size()) != rotatable) continue;
    const auto hops = hop_distances(scratch);

    ToyMolecule mol;
    for (int l = 0; l < opt.truths; ++l) {
      Conformer x = base;
      for (int attempt = 0; attempt < 100; ++attempt) {
        x = base;
        for (int k : torsions) rotate_torsion(scratch, k, rng.uniform(-std::numbers::pi, std::numbers::pi), x);
        if (clash_free(x, hops)) break;
      }
      mol.truths.push_back(x);
    }

    mol.ref = mol.truths.front();
    if (opt.torsion_sigma_deg > 0.0)
      for (int k : torsions) rotate_torsion(scratch, k, rng.normal() * opt.torsion_sigma_deg * kDeg, mol.ref);
    if (opt.noise_sigma > 0.0)
      for (Eigen::Index i = 0; i < mol.ref.rows(); ++i)
        for (int a = 0; a < 3; ++a) mol.ref(i, a) += opt.noise_sigma * rng.normal();

    mol.graph = build_graph(topo.atoms, topo.bonds, mol.ref, opt.cutoff);
    mol.mapping = coarse_grain(mol.graph, mol.ref);
    char name[32];
    std::snprintf(name, sizeof name, "toy_%03d", static_cast<int>(out.size()));
    mol.name = name;
    out.push_back(std::move(mol));
  }
  return out;
}

}  // namespace cgconf
