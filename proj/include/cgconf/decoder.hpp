#pragma once

// Backmapping decoder.  Channel selection turns each bead's F x 3 latent into
// a first guess for its member atoms; message passing then learns the
// distortion that carries the reference conformer onto the target:
//
//   x = x_ref + delta,  delta = mean_j (x_i - x_j) phi_x(m_ij).
//
// Beads are refined one at a time in breadth-first order, each step attending
// to the atoms already placed.  All coordinates inside the decoder live in
// the reference's centered frame.

#include <optional>
#include <string>
#include <vector>

#include "cgconf/coarsen.hpp"
#include "cgconf/molio.hpp"
#include "cgconf/numeric/autodiff.hpp"
#include "cgconf/numeric/layers.hpp"

namespace cgconf {

struct DecoderConfig {
  Eigen::Index hidden = 32;  // D
  int layers = 5;
  double beta = 0.5;
  // Bead-graph cutoff used only to build the generation order.
  double cutoff = 4.0;
};

// Per-bead attention: queries are the member atoms' reference coordinates,
// keys and values are the bead's F latent 3-vectors, scale 1/sqrt(3).
// `ref_centered` is n x 3; returns n x 3 in atom order.
ad::Var channel_selection(ad::Tape& tape, const ad::Var& z, const CGMapping& mapping,
                          const Conformer& ref_centered);

struct GenerationState {
  std::vector<int> order;           // bead generation order
  std::size_t next = 0;             // position of the next bead in `order`
  std::vector<bool> generated;      // per bead
  std::vector<Eigen::Index> prev_atoms;
  ad::Var prev_coords;              // |prev| x 3, rows follow prev_atoms
  std::vector<ad::Var> prev_h;      // per layer, |prev| x D
  Eigen::RowVector3d prev_centroid = Eigen::RowVector3d::Zero();

  bool has_prev() const { return !prev_atoms.empty(); }
};

struct StepOutput {
  std::vector<Eigen::Index> atoms;  // global indices, ascending
  ad::Var coords;                   // |atoms| x 3, centered frame
  ad::Var delta;                    // |atoms| x 3
  std::vector<ad::Var> layer_h;     // per layer input features, |atoms| x D
  ad::Var h;                        // |atoms| x D after the last layer
};

struct DecodeResult {
  ad::Var coords;  // n x 3 in the reference's original frame
  ad::Var delta;   // n x 3, coords = ref + delta
};

// Inputs shared by every step of one decode.
struct DecodeContext {
  const MolecularGraph* graph = nullptr;
  const CGMapping* mapping = nullptr;
  Conformer ref;
  Conformer ref_centered;
  Eigen::RowVector3d ref_centroid = Eigen::RowVector3d::Zero();
  ad::Var x_cs;      // n x 3
  ad::Var features;  // n x D embedded atom features
};

class Decoder {
 public:
  explicit Decoder(DecoderConfig config = {}) : config_(config) {}

  const DecoderConfig& config() const { return config_; }
  void init(ParameterStore& store, Rng& rng) const;

  DecodeContext context(ad::Tape& tape, const ad::Var& z, const CGMapping& mapping,
                        const Conformer& ref, const MolecularGraph& graph) const;
  GenerationState start(const DecodeContext& ctx) const;

  // Refines the next bead in `state.order`; throws if the bead was already
  // generated.  When `teacher_centered` is given its rows replace the
  // generated coordinates as context for later beads.
  StepOutput ar_step(ad::Tape& tape, GenerationState& state, const DecodeContext& ctx,
                     const Conformer* teacher_centered = nullptr) const;
  // Refines an arbitrary atom subset against the given context.
  StepOutput refine(ad::Tape& tape, const std::vector<Eigen::Index>& atoms,
                    const GenerationState& state, const DecodeContext& ctx) const;

  // `teacher` is in the reference's original frame (already aligned to it).
  DecodeResult decode_ar(ad::Tape& tape, const ad::Var& z, const CGMapping& mapping,
                         const Conformer& ref, const MolecularGraph& graph,
                         const std::optional<Conformer>& teacher = std::nullopt) const;
  DecodeResult decode_ot(ad::Tape& tape, const ad::Var& z, const CGMapping& mapping,
                         const Conformer& ref, const MolecularGraph& graph) const;

  Dense embed() const { return {"dec.embed", kAtomFeatureDim, config_.hidden}; }
  Mlp mix(int layer) const;
  Mlp edge(int layer) const;
  Mlp coord(int layer) const;
  Mlp node(int layer) const;
  CrossAttention attention(int layer) const;

 private:
  DecodeResult assemble(ad::Tape& tape, const DecodeContext& ctx,
                        const std::vector<StepOutput>& steps) const;

  DecoderConfig config_;
};

// Edges (both directions) among `atoms`: covalent bonds plus the graph's
// auxiliary edges.  Indices are local to `atoms`.
void local_edges(const MolecularGraph& graph, const std::vector<Eigen::Index>& atoms,
                 std::vector<Eigen::Index>& src, std::vector<Eigen::Index>& dst);

}  // namespace cgconf
