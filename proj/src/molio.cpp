#include "cgconf/molio.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace cgconf {

namespace {

constexpr std::array<std::string_view, kElementCount> kSymbols = {"H", "C",  "N", "O",  "F",
                                                                  "P", "S", "Cl", "Br", "I"};
constexpr std::array<int, kElementCount> kAtomicNumbers = {1, 6, 7, 8, 9, 15, 16, 17, 35, 53};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string_view field(std::string_view line, std::size_t begin, std::size_t width) {
  if (begin >= line.size()) return {};
  return line.substr(begin, std::min(width, line.size() - begin));
}

std::optional<int> to_int(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<double> to_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

std::vector<std::string_view> tokens(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

// Molfile atom-block charge codes.
int charge_from_code(int code) {
  switch (code) {
    case 1: return 3;
    case 2: return 2;
    case 3: return 1;
    case 5: return -1;
    case 6: return -2;
    case 7: return -3;
    default: return 0;
  }
}

int code_from_charge(int charge) {
  switch (charge) {
    case 3: return 1;
    case 2: return 2;
    case 1: return 3;
    case -1: return 5;
    case -2: return 6;
    case -3: return 7;
    default: return 0;
  }
}

void validate_bonds(const std::vector<Bond>& bonds, int atom_count) {
  std::set<std::pair<int, int>> seen;
  for (const Bond& b : bonds) {
    if (b.begin < 0 || b.end < 0 || b.begin >= atom_count || b.end >= atom_count)
      throw std::invalid_argument("dangling bond index (" + std::to_string(b.begin) + ", " +
                                  std::to_string(b.end) + ")");
    if (b.begin == b.end)
      throw std::invalid_argument("bond joins atom " + std::to_string(b.begin) + " to itself");
    auto key = std::minmax(b.begin, b.end);
    if (!seen.insert({key.first, key.second}).second)
      throw std::invalid_argument("duplicate bond between atoms " + std::to_string(key.first) +
                                  " and " + std::to_string(key.second));
  }
}

void finalize_atoms(MolecularGraph& g) {
  for (Atom& a : g.atoms) {
    a.degree_heavy = 0;
    a.aromatic = false;
  }
  for (const Bond& b : g.bonds) {
    if (g.atoms[b.end].element != Element::H) ++g.atoms[b.begin].degree_heavy;
    if (g.atoms[b.begin].element != Element::H) ++g.atoms[b.end].degree_heavy;
    if (b.order == BondOrder::Aromatic) g.atoms[b.begin].aromatic = g.atoms[b.end].aromatic = true;
  }
  for (Atom& a : g.atoms) a.features = atom_features(a);
}

}  // namespace

std::optional<Element> element_from_symbol(std::string_view symbol) {
  symbol = trim(symbol);
  for (int i = 0; i < kElementCount; ++i)
    if (kSymbols[i] == symbol) return static_cast<Element>(i);
  return std::nullopt;
}

std::string_view element_symbol(Element e) { return kSymbols[static_cast<int>(e)]; }

int atomic_number(Element e) { return kAtomicNumbers[static_cast<int>(e)]; }

std::optional<int> MolecularGraph::bond_between(int i, int j) const {
  for (std::size_t k = 0; k < bonds.size(); ++k) {
    const Bond& b = bonds[k];
    if ((b.begin == i && b.end == j) || (b.begin == j && b.end == i)) return static_cast<int>(k);
  }
  return std::nullopt;
}

std::vector<std::vector<std::pair<int, int>>> MolecularGraph::adjacency() const {
  std::vector<std::vector<std::pair<int, int>>> adj(atoms.size());
  for (std::size_t k = 0; k < bonds.size(); ++k) {
    adj[bonds[k].begin].emplace_back(bonds[k].end, static_cast<int>(k));
    adj[bonds[k].end].emplace_back(bonds[k].begin, static_cast<int>(k));
  }
  return adj;
}

Eigen::MatrixXd MolecularGraph::feature_matrix() const {
  Eigen::MatrixXd f(atom_count(), kAtomFeatureDim);
  for (int i = 0; i < atom_count(); ++i) f.row(i) = atoms[i].features.transpose();
  return f;
}

Eigen::VectorXd atom_features(const Atom& atom) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kAtomFeatureDim);
  f(static_cast<int>(atom.element)) = 1.0;
  f(kElementCount) = atom.formal_charge;
  f(kElementCount + 1) = atom.degree_heavy;
  f(kElementCount + 2) = atom.aromatic ? 1.0 : 0.0;
  return f;
}

ParseError::ParseError(const std::string& what, int record, int line)
    : std::runtime_error("record " + std::to_string(record) + ", line " + std::to_string(line) +
                         ": " + what),
      record_(record),
      line_(line) {}

std::vector<MolRecord> parse_sdf(std::string_view text) {
  const auto lines = split_lines(text);
  std::vector<MolRecord> records;
  std::size_t pos = 0;
  while (pos < lines.size()) {
    // Skip blank separators between records.
    if (trim(lines[pos]).empty() && pos + 3 >= lines.size()) break;
    const int rec = static_cast<int>(records.size()) + 1;
    auto fail = [&](const std::string& msg, std::size_t idx) -> ParseError {
      return ParseError(msg, rec, static_cast<int>(idx) + 1);
    };
    MolRecord out;
    out.name = std::string(trim(lines[pos]));
    const std::size_t counts_idx = pos + 3;
    if (counts_idx >= lines.size()) throw fail("malformed counts line (record truncated)", pos);
    const std::string_view counts = lines[counts_idx];
    const auto n_atoms = to_int(field(counts, 0, 3));
    const auto n_bonds = to_int(field(counts, 3, 3));
    if (!n_atoms || !n_bonds || *n_atoms < 0 || *n_bonds < 0)
      throw fail("malformed counts line", counts_idx);
    if (counts.find("V3000") != std::string_view::npos)
      throw fail("V3000 records are not supported", counts_idx);

    std::size_t idx = counts_idx + 1;
    out.conformer.resize(*n_atoms, 3);
    for (int a = 0; a < *n_atoms; ++a, ++idx) {
      if (idx >= lines.size()) throw fail("atom block truncated", idx);
      const std::string_view line = lines[idx];
      const auto x = to_double(field(line, 0, 10));
      const auto y = to_double(field(line, 10, 10));
      const auto z = to_double(field(line, 20, 10));
      if (!x || !y || !z) throw fail("non-numeric atom coordinate", idx);
      const std::string_view sym = trim(field(line, 31, 3));
      const auto el = element_from_symbol(sym);
      if (!el) throw fail("unsupported element '" + std::string(sym) + "'", idx);
      Atom atom;
      atom.element = *el;
      if (auto code = to_int(field(line, 36, 3))) atom.formal_charge = charge_from_code(*code);
      out.graph.atoms.push_back(atom);
      out.conformer.row(a) << *x, *y, *z;
    }
    for (int b = 0; b < *n_bonds; ++b, ++idx) {
      if (idx >= lines.size()) throw fail("bond block truncated", idx);
      const std::string_view line = lines[idx];
      const auto i = to_int(field(line, 0, 3));
      const auto j = to_int(field(line, 3, 3));
      const auto order = to_int(field(line, 6, 3));
      if (!i || !j || !order) throw fail("malformed bond line", idx);
      if (*i < 1 || *j < 1 || *i > *n_atoms || *j > *n_atoms)
        throw fail("dangling bond index", idx);
      if (*order < 1 || *order > 4) throw fail("unsupported bond order " + std::to_string(*order), idx);
      out.graph.bonds.push_back(Bond{*i - 1, *j - 1, static_cast<BondOrder>(*order)});
    }
    try {
      validate_bonds(out.graph.bonds, *n_atoms);
    } catch (const std::invalid_argument& e) {
      throw fail(e.what(), idx - 1);
    }

    bool ended = false;
    for (; idx < lines.size(); ++idx) {
      const std::string_view line = lines[idx];
      if (line.starts_with("M  END")) {
        ended = true;
        ++idx;
        break;
      }
      if (line.starts_with("M  CHG")) {
        const auto tok = tokens(line);
        const auto count = tok.size() > 2 ? to_int(tok[2]) : std::nullopt;
        if (!count || tok.size() < 3 + 2 * static_cast<std::size_t>(*count))
          throw fail("malformed M  CHG line", idx);
        for (int k = 0; k < *count; ++k) {
          const auto atom = to_int(tok[3 + 2 * k]);
          const auto chg = to_int(tok[4 + 2 * k]);
          if (!atom || !chg || *atom < 1 || *atom > *n_atoms)
            throw fail("malformed M  CHG line", idx);
          out.graph.atoms[*atom - 1].formal_charge = *chg;
        }
      }
    }
    if (!ended) throw fail("missing M  END", idx - 1);
    // Data items, up to the record separator.
    while (idx < lines.size() && !lines[idx].starts_with("$$$$")) ++idx;
    pos = idx + 1;

    finalize_atoms(out.graph);
    records.push_back(std::move(out));
  }
  return records;
}

XyzRecord parse_xyz(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw ParseError("empty XYZ input", 1, 1);
  const auto n = to_int(lines[0]);
  if (!n || *n < 0) throw ParseError("malformed atom count", 1, 1);
  XyzRecord out;
  if (lines.size() > 1) out.comment = std::string(lines[1]);
  const std::size_t available = lines.size() > 2 ? lines.size() - 2 : 0;
  if (available != static_cast<std::size_t>(*n))
    throw ParseError("atom count mismatch: declared " + std::to_string(*n) + ", found " +
                         std::to_string(available),
                     1, 1);
  out.conformer.resize(*n, 3);
  for (int a = 0; a < *n; ++a) {
    const int line_no = a + 3;
    const auto tok = tokens(lines[a + 2]);
    if (tok.size() < 4) throw ParseError("expected 'El x y z'", 1, line_no);
    const auto el = element_from_symbol(tok[0]);
    if (!el) throw ParseError("unsupported element '" + std::string(tok[0]) + "'", 1, line_no);
    for (int c = 0; c < 3; ++c) {
      const auto v = to_double(tok[c + 1]);
      if (!v) throw ParseError("non-numeric coordinate '" + std::string(tok[c + 1]) + "'", 1, line_no);
      out.conformer(a, c) = *v;
    }
    out.elements.push_back(*el);
  }
  return out;
}

std::vector<AtomPair> radius_pairs(const MolecularGraph& graph, const Conformer& coords,
                                   double cutoff) {
  const int n = graph.atom_count();
  std::vector<std::vector<bool>> bonded(n, std::vector<bool>(n, false));
  for (const Bond& b : graph.bonds) bonded[b.begin][b.end] = bonded[b.end][b.begin] = true;
  const double c2 = cutoff * cutoff;
  std::vector<AtomPair> out;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (!bonded[i][j] && (coords.row(i) - coords.row(j)).squaredNorm() <= c2) out.emplace_back(i, j);
  return out;
}

MolecularGraph build_graph(std::vector<Atom> atoms, std::vector<Bond> bonds,
                           const Conformer& reference, double cutoff) {
  if (reference.rows() != static_cast<Eigen::Index>(atoms.size()))
    throw std::invalid_argument("reference conformer has " + std::to_string(reference.rows()) +
                                " rows for " + std::to_string(atoms.size()) + " atoms");
  if (!reference.allFinite()) throw std::invalid_argument("reference conformer is not finite");
  validate_bonds(bonds, static_cast<int>(atoms.size()));
  MolecularGraph g;
  g.atoms = std::move(atoms);
  g.bonds = std::move(bonds);
  g.aux_cutoff = cutoff;
  finalize_atoms(g);
  g.aux_edges = radius_pairs(g, reference, cutoff);
  return g;
}

FileFormat format_from_tag(std::string_view tag) {
  if (tag == "sdf" || tag == "mol") return FileFormat::Sdf;
  if (tag == "xyz") return FileFormat::Xyz;
  throw std::invalid_argument("unsupported format tag '" + std::string(tag) + "'");
}

namespace {

void append_molblock(std::string& out, const MolecularGraph& g, const Conformer& x,
                     std::string_view name) {
  char buf[128];
  out += name;
  out += "\n  cgconf          3D\n\n";
  std::snprintf(buf, sizeof(buf), "%3d%3d  0  0  0  0  0  0  0  0999 V2000\n", g.atom_count(),
                static_cast<int>(g.bonds.size()));
  out += buf;
  for (int i = 0; i < g.atom_count(); ++i) {
    std::snprintf(buf, sizeof(buf), "%10.4f%10.4f%10.4f %-3s 0%3d  0  0  0  0  0  0  0  0  0  0\n",
                  x(i, 0), x(i, 1), x(i, 2), std::string(element_symbol(g.atoms[i].element)).c_str(),
                  code_from_charge(g.atoms[i].formal_charge));
    out += buf;
  }
  for (const Bond& b : g.bonds) {
    std::snprintf(buf, sizeof(buf), "%3d%3d%3d  0\n", b.begin + 1, b.end + 1,
                  static_cast<int>(b.order));
    out += buf;
  }
  std::vector<int> charged;
  for (int i = 0; i < g.atom_count(); ++i)
    if (g.atoms[i].formal_charge != 0) charged.push_back(i);
  for (std::size_t k = 0; k < charged.size(); k += 8) {
    const std::size_t m = std::min<std::size_t>(8, charged.size() - k);
    std::snprintf(buf, sizeof(buf), "M  CHG%3d", static_cast<int>(m));
    out += buf;
    for (std::size_t q = 0; q < m; ++q) {
      std::snprintf(buf, sizeof(buf), " %3d %3d", charged[k + q] + 1,
                    g.atoms[charged[k + q]].formal_charge);
      out += buf;
    }
    out += "\n";
  }
  out += "M  END\n$$$$\n";
}

void check_shapes(const MolecularGraph& g, const Conformer& x) {
  if (g.atom_count() == 0) throw std::invalid_argument("no atoms");
  if (x.rows() != g.atom_count())
    throw std::invalid_argument("conformer has " + std::to_string(x.rows()) + " rows for " +
                                std::to_string(g.atom_count()) + " atoms");
}

}  // namespace

std::string write_conformer(const MolecularGraph& graph, const Conformer& conformer,
                            FileFormat format, std::string_view name) {
  check_shapes(graph, conformer);
  std::string out;
  if (format == FileFormat::Sdf) {
    append_molblock(out, graph, conformer, name);
    return out;
  }
  char buf[160];
  out += std::to_string(graph.atom_count()) + "\n" + std::string(name) + "\n";
  for (int i = 0; i < graph.atom_count(); ++i) {
    std::snprintf(buf, sizeof(buf), "%-2s %.8f %.8f %.8f\n",
                  std::string(element_symbol(graph.atoms[i].element)).c_str(), conformer(i, 0),
                  conformer(i, 1), conformer(i, 2));
    out += buf;
  }
  return out;
}

std::string write_sdf(const std::vector<MolRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    check_shapes(r.graph, r.conformer);
    append_molblock(out, r.graph, r.conformer, r.name);
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace cgconf
