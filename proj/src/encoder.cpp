#include "cgconf/encoder.hpp"

#include <set>
#include <stdexcept>
#include <tuple>

namespace cgconf {

using ad::Index;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

Var concat(std::initializer_list<Var> parts) {
  std::vector<Var> v(parts);
  return ad::concat_cols(v);
}

Var gather(const Var& a, const std::vector<Index>& idx) { return ad::gather_rows(a, idx); }

// (1 - eta) old + eta new
Var blend(const Var& old_value, const Var& new_value, double eta) {
  return ad::scale(old_value, 1.0 - eta) + ad::scale(new_value, eta);
}

template <typename Module>
void init_once(std::set<std::string>& seen, const Module& m, ParameterStore& store, Rng& rng) {
  if (seen.insert(m.name).second) m.init(store, rng);
}

}  // namespace

std::pair<Conformer, Eigen::RowVector3d> center(const Conformer& conformer) {
  if (conformer.rows() == 0) throw std::invalid_argument("center: empty conformer");
  const Eigen::RowVector3d c = conformer.colwise().mean();
  Conformer out = conformer.rowwise() - c;
  return {std::move(out), c};
}

EdgeSet atom_edges(const MolecularGraph& graph, const Conformer& coords, double cutoff) {
  EdgeSet e;
  std::vector<Eigen::RowVectorXd> feats;
  auto push = [&](int a, int b, const Eigen::RowVectorXd& f) {
    e.src.push_back(a);
    e.dst.push_back(b);
    e.src.push_back(b);
    e.dst.push_back(a);
    feats.push_back(f);
    feats.push_back(f);
  };
  for (const Bond& b : graph.bonds) {
    Eigen::RowVectorXd f = Eigen::RowVectorXd::Zero(kEdgeFeatureDim);
    f(static_cast<int>(b.order) - 1) = 1.0;
    push(b.begin, b.end, f);
  }
  for (auto [a, b] : radius_pairs(graph, coords, cutoff))
    push(a, b, Eigen::RowVectorXd::Zero(kEdgeFeatureDim));
  e.features.resize(static_cast<Index>(feats.size()), kEdgeFeatureDim);
  for (std::size_t k = 0; k < feats.size(); ++k) e.features.row(static_cast<Index>(k)) = feats[k];
  return e;
}

EdgeSet bead_edges(const CGMapping& mapping, const Conformer& centroids, double cutoff) {
  const BeadGraph g = build_bead_graph(mapping, centroids, cutoff);
  EdgeSet e;
  std::vector<double> bonded;
  auto push = [&](int a, int b, double flag) {
    e.src.push_back(a);
    e.dst.push_back(b);
    e.src.push_back(b);
    e.dst.push_back(a);
    bonded.push_back(flag);
    bonded.push_back(flag);
  };
  for (auto [a, b] : g.bond_edges) push(a, b, 1.0);
  for (auto [a, b] : g.aux_edges) push(a, b, 0.0);
  e.features = Eigen::Map<Eigen::VectorXd>(bonded.data(), static_cast<Index>(bonded.size()));
  return e;
}

Eigen::MatrixXd rotate_blocks(const Eigen::MatrixXd& v, const Eigen::Matrix3d& rotation) {
  if (v.cols() % 3 != 0) throw std::invalid_argument("rotate_blocks: column count not a multiple of 3");
  Eigen::MatrixXd out(v.rows(), v.cols());
  for (Index i = 0; i < v.cols() / 3; ++i)
    out.middleCols(3 * i, 3) = v.middleCols(3 * i, 3) * rotation.transpose();
  return out;
}

// --- module naming ----------------------------------------------------------

std::string Encoder::prefix(int layer, Path path) const {
  std::string p = "enc.L" + std::to_string(param_layer(layer)) + ".";
  if (!config_.share_paths) p += path == Path::GroundTruth ? "gt." : "ref.";
  return p;
}

std::string Encoder::embed_name(Path path) const {
  if (config_.share_paths) return "enc.embed";
  return path == Path::GroundTruth ? "enc.gt.embed" : "enc.ref.embed";
}

Dense Encoder::embed(Path path) const { return {embed_name(path), kAtomFeatureDim, config_.hidden}; }

Mlp Encoder::fg_edge(int layer, Path path) const {
  const Index d = config_.hidden;
  return {prefix(layer, path) + "fg.edge", 2 * d + 1 + kEdgeFeatureDim, d, d};
}
Mlp Encoder::fg_coord(int layer, Path path) const {
  return {prefix(layer, path) + "fg.coord", config_.hidden, config_.hidden, 1};
}
Mlp Encoder::fg_node(int layer, Path path) const {
  const Index d = config_.hidden;
  return {prefix(layer, path) + "fg.node", 4 * d, d, d};
}
CrossAttention Encoder::fg_attention(int layer) const {
  return {"enc.L" + std::to_string(param_layer(layer)) + ".fg.attn", config_.hidden};
}
Mlp Encoder::pool_edge(int layer, Path path) const {
  const Index d = config_.hidden;
  return {prefix(layer, path) + "pool.edge", 2 * d + 2, d, d};
}
Mlp Encoder::pool_coord(int layer, Path path) const {
  return {prefix(layer, path) + "pool.coord", config_.hidden, config_.hidden, 1};
}
Mlp Encoder::pool_node(int layer, Path path) const {
  const Index d = config_.hidden;
  return {prefix(layer, path) + "pool.node", 3 * d, d, d};
}
VnMlp Encoder::cg_vn(int layer, Path path, int which) const {
  if (which < 1 || which > 4) throw std::out_of_range("cg_vn: index must be 1..4");
  const Index f = config_.channels;
  return {prefix(layer, path) + "cg.vn" + std::to_string(which), which == 4 ? 2 * f : f, f, f};
}
Mlp Encoder::cg_mix(int layer, Path path, int which) const {
  if (which < 1 || which > 3) throw std::out_of_range("cg_mix: index must be 1..3");
  const Index d = config_.hidden, f = config_.channels;
  const std::string name = prefix(layer, path) + "cg.mix" + std::to_string(which);
  if (which == 1) return {name, d + f, d, d};
  if (which == 2) return {name, d + f, d, f};
  return {name, d, d, f};
}
RbfBasis Encoder::cg_kernel(int layer, Path path, int which) const {
  if (which < 1 || which > 3) throw std::out_of_range("cg_kernel: index must be 1..3");
  return {prefix(layer, path) + "cg.ker" + std::to_string(which), config_.rbf_basis,
          config_.rbf_max_distance, which == 1 ? config_.hidden : config_.channels};
}
Mlp Encoder::cg_node(int layer, Path path) const {
  const Index d = config_.hidden;
  return {prefix(layer, path) + "cg.node", 3 * d, d, d};
}
CrossAttention Encoder::cg_attention(int layer) const {
  return {"enc.L" + std::to_string(param_layer(layer)) + ".cg.attn", config_.hidden};
}

std::vector<Path> Encoder::paths() const {
  if (config_.share_paths) return {Path::GroundTruth};
  return {Path::GroundTruth, Path::Reference};
}

void Encoder::init(ParameterStore& store, Rng& rng) const {
  if (config_.layers < 1) throw std::invalid_argument("encoder needs at least one layer");
  std::set<std::string> seen;
  for (Path p : paths()) init_once(seen, embed(p), store, rng);
  for (int t = 0; t < config_.layers; ++t) {
    for (Path p : paths()) {
      init_once(seen, fg_edge(t, p), store, rng);
      init_once(seen, fg_coord(t, p), store, rng);
      init_once(seen, fg_node(t, p), store, rng);
      init_once(seen, pool_edge(t, p), store, rng);
      init_once(seen, pool_coord(t, p), store, rng);
      init_once(seen, pool_node(t, p), store, rng);
      for (int k = 1; k <= 4; ++k) init_once(seen, cg_vn(t, p, k), store, rng);
      for (int k = 1; k <= 3; ++k) init_once(seen, cg_mix(t, p, k), store, rng);
      for (int k = 1; k <= 3; ++k) init_once(seen, cg_kernel(t, p, k), store, rng);
      init_once(seen, cg_node(t, p), store, rng);
    }
    init_once(seen, fg_attention(t), store, rng);
    init_once(seen, cg_attention(t), store, rng);
  }
}

// --- layer-0 state ------------------------------------------------------------

FgState Encoder::initial_fg(Tape& tape, Path path, const MolecularGraph& graph,
                            const Conformer& centered) const {
  if (centered.rows() != graph.atom_count())
    throw std::invalid_argument("encoder: conformer does not match the graph");
  FgState s;
  s.f = embed(path)(tape, tape.constant(graph.feature_matrix()));
  s.h = s.f;
  s.x0 = tape.constant(centered);
  s.x = s.x0;
  return s;
}

CgState Encoder::initial_cg(Tape& tape, const FgState& fg, const CGMapping& mapping) const {
  const std::vector<Index> assign(mapping.assignment.begin(), mapping.assignment.end());
  const Index n_beads = mapping.bead_count();
  CgState s;
  s.F = ad::segment_mean(fg.f, assign, n_beads);
  s.H = s.F;
  s.X0 = ad::segment_mean(fg.x0, assign, n_beads);
  s.X = s.X0;
  s.v = tape.constant(Matrix::Zero(config_.channels, 3 * n_beads));
  return s;
}

PathGraph Encoder::path_graph(const MolecularGraph& graph, const CGMapping& mapping,
                              const Conformer& centered) const {
  PathGraph g;
  g.atoms = atom_edges(graph, centered, config_.cutoff);
  g.beads = bead_edges(mapping, bead_centroids(mapping, centered), config_.cutoff);
  g.pooling = build_pooling_graph(mapping);
  return g;
}

// --- fine-grained layer ---------------------------------------------------------

FgState Encoder::fg_update(Tape& tape, int layer, Path path, const FgState& s,
                           const EdgeSet& edges, const FgState* sender) const {
  const Index n = s.h.rows();
  const Var rel = gather(s.x, edges.dst) - gather(s.x, edges.src);
  const Var msg_in = concat({gather(s.h, edges.dst), gather(s.h, edges.src), ad::row_sq_norm(rel),
                             tape.constant(edges.features)});
  const Var msg = fg_edge(layer, path)(tape, msg_in);
  const Var agg = ad::segment_mean(msg, edges.dst, n);

  const Var weight = fg_coord(layer, path)(tape, msg);
  const Var shift = ad::segment_mean(ad::scale_rows(rel, weight), edges.dst, n);

  Var u = tape.constant(Matrix::Zero(n, config_.hidden));
  if (sender != nullptr && config_.cross_attention) u = fg_attention(layer)(tape, s.h, sender->h);

  FgState out = s;
  out.x = ad::scale(s.x0, config_.eta_x) + ad::scale(s.x, 1.0 - config_.eta_x) + shift;
  out.h = blend(s.h, fg_node(layer, path)(tape, concat({s.h, agg, u, s.f})), config_.eta_h);
  return out;
}

std::pair<FgState, FgState> Encoder::fg_layer(Tape& tape, int layer, const FgState& gt,
                                              const FgState& ref, const EdgeSet& gt_edges,
                                              const EdgeSet& ref_edges) const {
  FgState new_ref = fg_update(tape, layer, Path::Reference, ref, ref_edges, nullptr);
  FgState new_gt = fg_update(tape, layer, Path::GroundTruth, gt, gt_edges, &ref);
  return {std::move(new_gt), std::move(new_ref)};
}

// --- pooling layer --------------------------------------------------------------

CgState Encoder::pool_layer(Tape& tape, int layer, Path path, const FgState& fg, const CgState& cg,
                            const PoolingGraph& pooling) const {
  const std::vector<Index> src(pooling.source.begin(), pooling.source.end());
  const std::vector<Index> dst(pooling.target.begin(), pooling.target.end());
  const Index n_beads = pooling.bead_count;
  const Var rel = gather(cg.X, dst) - gather(fg.x, src);
  const Var ones = tape.constant(Matrix::Ones(static_cast<Index>(src.size()), 1));
  const Var msg = pool_edge(layer, path)(
      tape, concat({gather(cg.H, dst), gather(fg.h, src), ad::row_sq_norm(rel), ones}));
  const Var agg = ad::segment_mean(msg, dst, n_beads);
  const Var weight = pool_coord(layer, path)(tape, msg);
  const Var shift = ad::segment_mean(ad::scale_rows(rel, weight), dst, n_beads);

  CgState out = cg;
  out.X = ad::scale(cg.X0, config_.eta_X) + ad::scale(cg.X, 1.0 - config_.eta_X) + shift;
  out.H = blend(cg.H, pool_node(layer, path)(tape, concat({cg.H, agg, cg.F})), config_.eta_H);
  return out;
}

// --- coarse-grained point convolution --------------------------------------------

CgState Encoder::cg_update(Tape& tape, int layer, Path path, const CgState& s,
                           const EdgeSet& edges, const CgState* sender) const {
  const Index n_beads = s.H.rows();
  const Var h1 = cg_mix(layer, path, 1)(
      tape, concat({s.H, vn_channel_norms(cg_vn(layer, path, 1)(tape, s.v))}));
  const Var h2 = cg_mix(layer, path, 2)(
      tape, concat({s.H, vn_channel_norms(cg_vn(layer, path, 2)(tape, s.v))}));
  const Var gate = cg_mix(layer, path, 3)(tape, s.H);
  const Var v3 = ad::vn_scale(cg_vn(layer, path, 3)(tape, s.v), ad::transpose(gate));

  const Var rel = gather(s.X, edges.dst) - gather(s.X, edges.src);
  const Var dist = ad::sqrt_eps(ad::row_sq_norm(rel), 1e-12);
  const Var k1 = cg_kernel(layer, path, 1)(tape, dist);
  const Var k2 = cg_kernel(layer, path, 2)(tape, dist);
  const Var k3 = cg_kernel(layer, path, 3)(tape, dist);

  const Var msg_h = ad::mul(k1, gather(h1, edges.src));
  const Var agg_h = ad::segment_sum(msg_h, edges.dst, n_beads);
  const Var msg_v = ad::vn_scale(ad::vn_gather(v3, edges.src), ad::transpose(k2)) +
                    ad::vn_outer(ad::transpose(ad::mul(k3, gather(h2, edges.src))), rel);
  const Var agg_v = ad::vn_scatter_sum(msg_v, edges.dst, n_beads);

  Var u = tape.constant(Matrix::Zero(n_beads, config_.hidden));
  if (sender != nullptr && config_.cross_attention) u = cg_attention(layer)(tape, s.H, sender->H);

  CgState out = s;
  out.H = blend(s.H, cg_node(layer, path)(tape, concat({s.H, agg_h, u})), config_.eta_H);
  const std::vector<Var> stacked{s.v, agg_v};
  out.v = blend(s.v, cg_vn(layer, path, 4)(tape, ad::concat_rows(stacked)), config_.eta_v);
  return out;
}

std::pair<CgState, CgState> Encoder::cg_layer(Tape& tape, int layer, const CgState& gt,
                                              const CgState& ref, const EdgeSet& gt_edges,
                                              const EdgeSet& ref_edges) const {
  CgState new_ref = cg_update(tape, layer, Path::Reference, ref, ref_edges, nullptr);
  CgState new_gt = cg_update(tape, layer, Path::GroundTruth, gt, gt_edges, &ref);
  return {std::move(new_gt), std::move(new_ref)};
}

// --- full passes -----------------------------------------------------------------

EncoderOutput Encoder::encode(Tape& tape, const Conformer& gt, const Conformer& ref,
                              const MolecularGraph& graph, const CGMapping& mapping) const {
  if (gt.rows() != ref.rows()) throw std::invalid_argument("encode: conformer size mismatch");
  const Conformer gt_c = center(gt).first;
  const Conformer ref_c = center(ref).first;
  const PathGraph g_gt = path_graph(graph, mapping, gt_c);
  const PathGraph g_ref = path_graph(graph, mapping, ref_c);

  FgState fg_gt = initial_fg(tape, Path::GroundTruth, graph, gt_c);
  FgState fg_ref = initial_fg(tape, Path::Reference, graph, ref_c);
  CgState cg_gt = initial_cg(tape, fg_gt, mapping);
  CgState cg_ref = initial_cg(tape, fg_ref, mapping);
  for (int t = 0; t < config_.layers; ++t) {
    std::tie(fg_gt, fg_ref) = fg_layer(tape, t, fg_gt, fg_ref, g_gt.atoms, g_ref.atoms);
    cg_ref = pool_layer(tape, t, Path::Reference, fg_ref, cg_ref, g_ref.pooling);
    cg_gt = pool_layer(tape, t, Path::GroundTruth, fg_gt, cg_gt, g_gt.pooling);
    std::tie(cg_gt, cg_ref) = cg_layer(tape, t, cg_gt, cg_ref, g_gt.beads, g_ref.beads);
  }
  return {cg_gt.v, cg_ref.v};
}

Var Encoder::encode_reference(Tape& tape, const Conformer& ref, const MolecularGraph& graph,
                              const CGMapping& mapping) const {
  const Conformer ref_c = center(ref).first;
  const PathGraph g = path_graph(graph, mapping, ref_c);
  FgState fg = initial_fg(tape, Path::Reference, graph, ref_c);
  CgState cg = initial_cg(tape, fg, mapping);
  for (int t = 0; t < config_.layers; ++t) {
    fg = fg_update(tape, t, Path::Reference, fg, g.atoms, nullptr);
    cg = pool_layer(tape, t, Path::Reference, fg, cg, g.pooling);
    cg = cg_update(tape, t, Path::Reference, cg, g.beads, nullptr);
  }
  return cg.v;
}

}  // namespace cgconf
