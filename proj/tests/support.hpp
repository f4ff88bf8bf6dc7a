#pragma once

// Shared fixtures for the unit tests.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cgconf/molio.hpp"
#include "cgconf/numeric/parameters.hpp"

namespace cgconf::testing {

inline Conformer random_cloud(int n, Rng& rng, double scale = 1.0) {
  Conformer x(n, 3);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a) x(i, a) = scale * rng.normal();
  return x;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

// Zigzag placement, about 1.5 A between consecutive atoms.
inline Conformer zigzag(int n) {
  Conformer x(n, 3);
  for (int i = 0; i < n; ++i) x.row(i) << 1.25 * i, (i % 2) * 0.85, 0.0;
  return x;
}

inline std::vector<Atom> atoms_of(const std::vector<Element>& elements) {
  std::vector<Atom> atoms(elements.size());
  for (std::size_t i = 0; i < elements.size(); ++i) atoms[i].element = elements[i];
  return atoms;
}

inline MolecularGraph molecule(const std::vector<Element>& elements, const std::vector<Bond>& bonds,
                               const Conformer& coords) {
  return build_graph(atoms_of(elements), bonds, coords);
}

inline MolecularGraph molecule(const std::vector<Element>& elements, const std::vector<Bond>& bonds) {
  return molecule(elements, bonds, zigzag(static_cast<int>(elements.size())));
}

// Heavy-atom n-butane: C0-C1-C2-C3.
inline MolecularGraph butane() {
  return molecule({Element::C, Element::C, Element::C, Element::C}, {{0, 1}, {1, 2}, {2, 3}});
}

// Ethanol with hydrogens, as a V2000 record.
inline const char* kEthanolSdf =
    "ethanol\n"
    "  hand-written\n"
    "\n"
    "  9  8  0  0  0  0  0  0  0  0999 V2000\n"
    "   -0.8883    0.1670   -0.0273 C   0  0  0  0  0  0  0  0  0  0  0  0\n"
    "    0.4658   -0.5116   -0.0368 C   0  0  0  0  0  0  0  0  0  0  0  0\n"
    "    1.4311    0.3978    0.4550 O   0  0  0  0  0  0  0  0  0  0  0  0\n"
    "   -0.8469    1.1006    0.5742 H   0  0  0  0  0  0  0  0  0  0  0  0\n"
    "   -1.6727   -0.4683    0.4365 H   0  0  0  0  0  0  0  0  0  0  0  0\n"
    "   -1.1830    0.4195   -1.0730 H   0  0  0  0  0  0  0  0  0  0  0  0\n"
    "    0.4035   -1.4284    0.5819 H   0  0  0  0  0  0  0  0  0  0  0  0\n"
    "    0.7386   -0.7750   -1.0706 H   0  0  0  0  0  0  0  0  0  0  0  0\n"
    "    2.2929   -0.0621    0.4219 H   0  0  0  0  0  0  0  0  0  0  0  0\n"
    "  1  2  1  0\n"
    "  2  3  1  0\n"
    "  1  4  1  0\n"
    "  1  5  1  0\n"
    "  1  6  1  0\n"
    "  2  7  1  0\n"
    "  2  8  1  0\n"
    "  3  9  1  0\n"
    "M  END\n"
    "$$$$\n";

}  // namespace cgconf::testing
