#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cgconf/numeric/kabsch.hpp"

namespace cgconf {

enum class Element : std::uint8_t { H, C, N, O, F, P, S, Cl, Br, I };
inline constexpr int kElementCount = 10;

std::optional<Element> element_from_symbol(std::string_view symbol);
std::string_view element_symbol(Element e);
int atomic_number(Element e);

enum class BondOrder : std::uint8_t { Single = 1, Double = 2, Triple = 3, Aromatic = 4 };

// Element one-hot, formal charge, heavy-atom degree, aromatic flag.
inline constexpr Eigen::Index kAtomFeatureDim = kElementCount + 3;
// Bond-order one-hot; auxiliary (non-bonded) edges carry zeros.
inline constexpr Eigen::Index kEdgeFeatureDim = 4;

struct Atom {
  Element element = Element::C;
  int formal_charge = 0;
  int degree_heavy = 0;
  bool aromatic = false;
  Eigen::VectorXd features;
};

struct Bond {
  int begin = 0;
  int end = 0;
  BondOrder order = BondOrder::Single;
};

using Conformer = Points<double>;
using AtomPair = std::pair<int, int>;

struct MolecularGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  // Non-bonded pairs (i < j) within `aux_cutoff` in the reference conformer.
  std::vector<AtomPair> aux_edges;
  double aux_cutoff = 4.0;

  int atom_count() const { return static_cast<int>(atoms.size()); }
  // Bond id joining i and j, if any.
  std::optional<int> bond_between(int i, int j) const;
  // Adjacency over covalent bonds: (neighbor, bond id).
  std::vector<std::vector<std::pair<int, int>>> adjacency() const;
  Eigen::MatrixXd feature_matrix() const;  // n x kAtomFeatureDim
};

Eigen::VectorXd atom_features(const Atom& atom);

// Raised for malformed input; `record` and `line` are 1-based (0 when not
// applicable).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int record, int line);
  int record() const { return record_; }
  int line() const { return line_; }

 private:
  int record_;
  int line_;
};

struct MolRecord {
  std::string name;
  MolecularGraph graph;  // aux_edges empty until build_graph
  Conformer conformer;
};

// V2000 molfile subset: counts line, atom block, bond block, M  CHG, M  END.
std::vector<MolRecord> parse_sdf(std::string_view text);

struct XyzRecord {
  std::vector<Element> elements;
  Conformer conformer;
  std::string comment;
};
XyzRecord parse_xyz(std::string_view text);

// Validates bonds, fills heavy-atom degrees and features, and adds every
// non-bonded pair within `cutoff` of each other in `reference`.
MolecularGraph build_graph(std::vector<Atom> atoms, std::vector<Bond> bonds,
                           const Conformer& reference, double cutoff = 4.0);

// All unordered non-bonded pairs closer than or equal to `cutoff`.
std::vector<AtomPair> radius_pairs(const MolecularGraph& graph, const Conformer& coords,
                                   double cutoff);

enum class FileFormat { Sdf, Xyz };
FileFormat format_from_tag(std::string_view tag);

std::string write_conformer(const MolecularGraph& graph, const Conformer& conformer,
                            FileFormat format, std::string_view name = "");
std::string write_sdf(const std::vector<MolRecord>& records);

std::string read_file(const std::string& path);

}  // namespace cgconf
