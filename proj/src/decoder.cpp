#include "cgconf/decoder.hpp"

#include <cmath>
#include <stdexcept>
#include <tuple>

#include "cgconf/encoder.hpp"

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

Matrix rows_of(const Conformer& c, const std::vector<Index>& idx) {
  Matrix out(static_cast<Index>(idx.size()), 3);
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Index>(k)) = c.row(idx[k]);
  return out;
}

Var append_rows(const Var& base, const Var& extra) {
  if (!base.valid()) return extra;
  const std::vector<Var> parts{base, extra};
  return ad::concat_rows(parts);
}

}  // namespace

Var channel_selection(Tape& tape, const Var& z, const CGMapping& mapping,
                      const Conformer& ref_centered) {
  if (z.cols() != 3 * mapping.bead_count())
    throw std::invalid_argument("channel_selection: latent bead count does not match the mapping");
  if (ref_centered.rows() != mapping.atom_count())
    throw std::invalid_argument("channel_selection: reference does not match the mapping");
  const double scale = 1.0 / std::sqrt(3.0);
  std::vector<Var> parts;
  std::vector<Index> order;
  for (int b = 0; b < mapping.bead_count(); ++b) {
    const auto& members = mapping.members[b];
    if (members.empty()) throw std::invalid_argument("channel_selection: empty bead");
    const std::vector<Index> idx(members.begin(), members.end());
    const Var queries = tape.constant(rows_of(ref_centered, idx));  // n_b x 3
    const Var keys = ad::slice_cols(z, 3 * b, 3);                  // F x 3
    const Var weights = ad::softmax_rows(ad::scale(ad::matmul(queries, ad::transpose(keys)), scale));
    parts.push_back(ad::matmul(weights, keys));
    order.insert(order.end(), idx.begin(), idx.end());
  }
  std::vector<Index> inverse(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) inverse[order[k]] = static_cast<Index>(k);
  return ad::gather_rows(ad::concat_rows(parts), inverse);
}

void local_edges(const MolecularGraph& graph, const std::vector<Index>& atoms,
                 std::vector<Index>& src, std::vector<Index>& dst) {
  src.clear();
  dst.clear();
  std::vector<Index> local(graph.atom_count(), -1);
  for (std::size_t k = 0; k < atoms.size(); ++k) local[atoms[k]] = static_cast<Index>(k);
  auto push = [&](int a, int b) {
    if (local[a] < 0 || local[b] < 0) return;
    src.push_back(local[a]);
    dst.push_back(local[b]);
    src.push_back(local[b]);
    dst.push_back(local[a]);
  };
  for (const Bond& b : graph.bonds) push(b.begin, b.end);
  for (auto [a, b] : graph.aux_edges) push(a, b);
}

Mlp Decoder::mix(int layer) const {
  const Index d = config_.hidden;
  return {"dec.L" + std::to_string(layer) + ".mix", d + 3, d, d};
}
Mlp Decoder::edge(int layer) const {
  const Index d = config_.hidden;
  return {"dec.L" + std::to_string(layer) + ".edge", 2 * d + 3, d, d};
}
Mlp Decoder::coord(int layer) const {
  return {"dec.L" + std::to_string(layer) + ".coord", config_.hidden, config_.hidden, 1};
}
Mlp Decoder::node(int layer) const {
  const Index d = config_.hidden;
  return {"dec.L" + std::to_string(layer) + ".node", 4 * d, d, d};
}
CrossAttention Decoder::attention(int layer) const {
  return {"dec.L" + std::to_string(layer) + ".attn", config_.hidden};
}

void Decoder::init(ParameterStore& store, Rng& rng) const {
  if (config_.layers < 1) throw std::invalid_argument("decoder needs at least one layer");
  embed().init(store, rng);
  for (int t = 0; t < config_.layers; ++t) {
    mix(t).init(store, rng);
    edge(t).init(store, rng);
    coord(t).init(store, rng);
    node(t).init(store, rng);
    attention(t).init(store, rng);
  }
}

DecodeContext Decoder::context(Tape& tape, const Var& z, const CGMapping& mapping,
                               const Conformer& ref, const MolecularGraph& graph) const {
  if (ref.rows() != graph.atom_count() || ref.rows() != mapping.atom_count())
    throw std::invalid_argument("decoder: reference does not match the graph");
  DecodeContext ctx;
  ctx.graph = &graph;
  ctx.mapping = &mapping;
  ctx.ref = ref;
  std::tie(ctx.ref_centered, ctx.ref_centroid) = center(ref);
  ctx.x_cs = channel_selection(tape, z, mapping, ctx.ref_centered);
  ctx.features = embed()(tape, tape.constant(graph.feature_matrix()));
  return ctx;
}

GenerationState Decoder::start(const DecodeContext& ctx) const {
  GenerationState s;
  const CGMapping& m = *ctx.mapping;
  s.order = order_beads(m, build_bead_graph(m, bead_centroids(m, ctx.ref_centered), config_.cutoff));
  s.generated.assign(m.bead_count(), false);
  s.prev_h.resize(config_.layers);
  return s;
}

StepOutput Decoder::refine(Tape& tape, const std::vector<Index>& atoms, const GenerationState& state,
                           const DecodeContext& ctx) const {
  const Index n = static_cast<Index>(atoms.size());
  StepOutput out;
  out.atoms = atoms;

  const Var xref = tape.constant(rows_of(ctx.ref_centered, atoms));
  const Var f = gather(ctx.features, atoms);
  Var h = f;
  Var x = gather(ctx.x_cs, atoms);
  Var mu = tape.constant(Matrix::Zero(1, 3));
  if (state.has_prev()) {
    const Index m = static_cast<Index>(state.prev_atoms.size());
    mu = ad::matmul(tape.constant(Matrix::Constant(1, m, 1.0 / static_cast<double>(m))),
                    state.prev_coords);
  }
  const Var neg_mu = ad::scale(mu, -1.0);
  const Var xref_mu = ad::add_row(xref, neg_mu);
  const Var xref_mu_sq = ad::row_sq_norm(xref_mu);

  std::vector<Index> src, dst;
  local_edges(*ctx.graph, atoms, src, dst);

  Var delta = tape.constant(Matrix::Zero(n, 3));
  for (int t = 0; t < config_.layers; ++t) {
    out.layer_h.push_back(h);
    const Var x_mu = ad::add_row(x, neg_mu);
    const Var mixed =
        mix(t)(tape, concat({h, ad::row_sq_norm(x_mu), xref_mu_sq, ad::row_dot(x_mu, xref_mu)}));

    const Var x_dst = gather(x, dst);
    const Var rel = x_dst - gather(x, src);
    const Var msg = edge(t)(tape, concat({gather(mixed, dst), gather(mixed, src), ad::row_sq_norm(rel),
                                          ad::row_sq_norm(x_dst - gather(xref, src)),
                                          ad::row_sq_norm(x_dst - gather(xref, dst))}));
    const Var agg = ad::segment_mean(msg, dst, n);
    delta = ad::segment_mean(ad::scale_rows(rel, coord(t)(tape, msg)), dst, n);

    Var u = tape.constant(Matrix::Zero(n, config_.hidden));
    if (state.has_prev()) u = attention(t)(tape, mixed, state.prev_h[t]);
    h = ad::scale(h, 1.0 - config_.beta) +
        ad::scale(node(t)(tape, concat({mixed, agg, u, f})), config_.beta);
    x = xref + delta;
  }
  out.coords = x;
  out.delta = delta;
  out.h = h;
  return out;
}

StepOutput Decoder::ar_step(Tape& tape, GenerationState& state, const DecodeContext& ctx,
                            const Conformer* teacher_centered) const {
  if (state.next >= state.order.size()) throw std::logic_error("ar_step: every bead is already generated");
  const int bead = state.order[state.next];
  if (state.generated[bead]) throw std::logic_error("ar_step: bead visited twice");
  const auto& members = ctx.mapping->members[bead];
  const std::vector<Index> atoms(members.begin(), members.end());

  StepOutput out = refine(tape, atoms, state, ctx);

  const Var placed = teacher_centered != nullptr ? tape.constant(rows_of(*teacher_centered, atoms))
                                                 : out.coords;
  state.prev_coords = append_rows(state.prev_coords, placed);
  for (int t = 0; t < config_.layers; ++t)
    state.prev_h[t] = append_rows(state.prev_h[t], out.layer_h[t]);
  state.prev_atoms.insert(state.prev_atoms.end(), atoms.begin(), atoms.end());
  state.prev_centroid = state.prev_coords.value().colwise().mean();
  state.generated[bead] = true;
  ++state.next;
  return out;
}

DecodeResult Decoder::assemble(Tape& tape, const DecodeContext& ctx,
                               const std::vector<StepOutput>& steps) const {
  std::vector<Var> deltas;
  std::vector<Index> order;
  for (const StepOutput& s : steps) {
    deltas.push_back(s.delta);
    order.insert(order.end(), s.atoms.begin(), s.atoms.end());
  }
  std::vector<Index> inverse(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) inverse[order[k]] = static_cast<Index>(k);
  DecodeResult r;
  r.delta = ad::gather_rows(ad::concat_rows(deltas), inverse);
  r.coords = tape.constant(ctx.ref) + r.delta;
  return r;
}

DecodeResult Decoder::decode_ar(Tape& tape, const Var& z, const CGMapping& mapping,
                                const Conformer& ref, const MolecularGraph& graph,
                                const std::optional<Conformer>& teacher) const {
  const DecodeContext ctx = context(tape, z, mapping, ref, graph);
  std::optional<Conformer> teacher_c;
  if (teacher) {
    if (teacher->rows() != ref.rows()) throw std::invalid_argument("decode_ar: teacher size mismatch");
    teacher_c = Conformer(teacher->rowwise() - ctx.ref_centroid);
  }
  GenerationState state = start(ctx);
  std::vector<StepOutput> steps;
  while (state.next < state.order.size())
    steps.push_back(ar_step(tape, state, ctx, teacher_c ? &*teacher_c : nullptr));
  return assemble(tape, ctx, steps);
}

DecodeResult Decoder::decode_ot(Tape& tape, const Var& z, const CGMapping& mapping,
                                const Conformer& ref, const MolecularGraph& graph) const {
  const DecodeContext ctx = context(tape, z, mapping, ref, graph);
  std::vector<Index> atoms(static_cast<std::size_t>(graph.atom_count()));
  for (std::size_t k = 0; k < atoms.size(); ++k) atoms[k] = static_cast<Index>(k);
  GenerationState state = start(ctx);
  std::vector<StepOutput> steps{refine(tape, atoms, state, ctx)};
  return assemble(tape, ctx, steps);
}

}  // namespace cgconf
