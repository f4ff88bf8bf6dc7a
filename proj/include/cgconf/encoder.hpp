#pragma once

// Hierarchical graph-matching encoder.  Two paths run side by side: the
// ground-truth conformer and the approximate reference.  Each layer applies
// a fine-grained EGNN-style update over atoms, pools atoms into beads, and
// runs an equivariant point convolution over the bead graph.  Cross
// attention only ever flows from the reference path into the ground-truth
// path, so the reference latent never depends on the ground truth.

#include <string>
#include <utility>
#include <vector>

#include "cgconf/coarsen.hpp"
#include "cgconf/molio.hpp"
#include "cgconf/numeric/autodiff.hpp"
#include "cgconf/numeric/layers.hpp"

namespace cgconf {

struct EncoderConfig {
  Eigen::Index hidden = 32;    // D
  Eigen::Index channels = 32;  // F
  int layers = 5;
  double eta_x = 0.5;
  double eta_h = 0.5;
  double eta_X = 0.5;
  double eta_H = 0.5;
  double eta_v = 0.5;
  bool share_paths = true;
  bool tie_layers = false;
  bool cross_attention = true;
  Eigen::Index rbf_basis = 16;
  double rbf_max_distance = 10.0;
  double cutoff = 4.0;
};

enum class Path { GroundTruth, Reference };

// Subtracts the centroid.  Returns (centered, centroid).
std::pair<Conformer, Eigen::RowVector3d> center(const Conformer& conformer);

// Directed message edges (src -> dst) with per-edge features.
struct EdgeSet {
  std::vector<Eigen::Index> src;
  std::vector<Eigen::Index> dst;
  Eigen::MatrixXd features;
  std::size_t size() const { return src.size(); }
};

// Covalent bonds plus the radius graph of `coords`, both directions.
EdgeSet atom_edges(const MolecularGraph& graph, const Conformer& coords, double cutoff);
// Bead graph edges (severed bonds plus centroid radius graph), both directions.
EdgeSet bead_edges(const CGMapping& mapping, const Conformer& centroids, double cutoff);

struct FgState {
  ad::Var h;   // n x D
  ad::Var x;   // n x 3
  ad::Var x0;  // n x 3
  ad::Var f;   // n x D, layer-0 features
};

struct CgState {
  ad::Var H;   // N x D
  ad::Var X;   // N x 3
  ad::Var X0;  // N x 3
  ad::Var F;   // N x D, mean of member layer-0 features
  ad::Var v;   // F x 3N
};

// Everything one path needs besides its state.
struct PathGraph {
  EdgeSet atoms;
  EdgeSet beads;
  PoolingGraph pooling;
};

struct EncoderOutput {
  ad::Var z;          // F x 3N, ground-truth path
  ad::Var z_ref;      // F x 3N, reference path
};

class Encoder {
 public:
  explicit Encoder(EncoderConfig config = {}) : config_(std::move(config)) {}

  const EncoderConfig& config() const { return config_; }
  void init(ParameterStore& store, Rng& rng) const;

  // Layer-0 state for one path from centered coordinates.
  FgState initial_fg(ad::Tape& tape, Path path, const MolecularGraph& graph,
                     const Conformer& centered) const;
  CgState initial_cg(ad::Tape& tape, const FgState& fg, const CGMapping& mapping) const;
  PathGraph path_graph(const MolecularGraph& graph, const CGMapping& mapping,
                       const Conformer& centered) const;

  // Both paths; `ref_sender` feeds attention into the ground-truth path.
  std::pair<FgState, FgState> fg_layer(ad::Tape& tape, int layer, const FgState& gt,
                                       const FgState& ref, const EdgeSet& gt_edges,
                                       const EdgeSet& ref_edges) const;
  FgState fg_update(ad::Tape& tape, int layer, Path path, const FgState& state,
                    const EdgeSet& edges, const FgState* sender) const;

  CgState pool_layer(ad::Tape& tape, int layer, Path path, const FgState& fg, const CgState& cg,
                     const PoolingGraph& pooling) const;

  std::pair<CgState, CgState> cg_layer(ad::Tape& tape, int layer, const CgState& gt,
                                       const CgState& ref, const EdgeSet& gt_edges,
                                       const EdgeSet& ref_edges) const;
  CgState cg_update(ad::Tape& tape, int layer, Path path, const CgState& state,
                    const EdgeSet& edges, const CgState* sender) const;

  // Runs all layers on both paths; inputs need not be centered.
  EncoderOutput encode(ad::Tape& tape, const Conformer& gt, const Conformer& ref,
                       const MolecularGraph& graph, const CGMapping& mapping) const;
  // Reference path alone (inference).
  ad::Var encode_reference(ad::Tape& tape, const Conformer& ref, const MolecularGraph& graph,
                           const CGMapping& mapping) const;

  std::string prefix(int layer, Path path) const;
  std::string embed_name(Path path) const;

  // Per-layer modules (exposed for tests and the gradient suite).
  Dense embed(Path path) const;
  Mlp fg_edge(int layer, Path path) const;
  Mlp fg_coord(int layer, Path path) const;
  Mlp fg_node(int layer, Path path) const;
  CrossAttention fg_attention(int layer) const;
  Mlp pool_edge(int layer, Path path) const;
  Mlp pool_coord(int layer, Path path) const;
  Mlp pool_node(int layer, Path path) const;
  VnMlp cg_vn(int layer, Path path, int which) const;  // which in 1..4
  Mlp cg_mix(int layer, Path path, int which) const;    // which in 1..3
  RbfBasis cg_kernel(int layer, Path path, int which) const;  // which in 1..3
  Mlp cg_node(int layer, Path path) const;
  CrossAttention cg_attention(int layer) const;

 private:
  int param_layer(int layer) const { return config_.tie_layers ? 0 : layer; }
  std::vector<Path> paths() const;

  EncoderConfig config_;
};

// Rotates every 3-vector of an F x 3N block matrix: v -> v R^T.
Eigen::MatrixXd rotate_blocks(const Eigen::MatrixXd& v, const Eigen::Matrix3d& rotation);

}  // namespace cgconf
