#pragma once

// The full conformer model: encoder, latent heads and decoder, plus the two
// training objectives (autoregressive ELBO and one-shot optimal transport).

#include <optional>
#include <vector>

#include "json.hpp"

#include "cgconf/coarsen.hpp"
#include "cgconf/decoder.hpp"
#include "cgconf/encoder.hpp"
#include "cgconf/latent.hpp"
#include "cgconf/losses.hpp"

namespace cgconf {

enum class DecodeMode { Autoregressive, OneShot };

struct ModelConfig {
  Eigen::Index hidden = 32;
  Eigen::Index channels = 32;
  int encoder_layers = 5;
  int decoder_layers = 5;
  double eta = 0.5;
  double beta = 0.5;
  bool share_paths = true;
  bool tie_layers = false;
  bool cross_attention = true;
  double cutoff = 4.0;

  EncoderConfig encoder() const;
  LatentConfig latent() const;
  DecoderConfig decoder() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// One molecule as seen by training: graph (auxiliary edges from the
// reference), mapping, reference conformer and one or more ground truths.
struct Example {
  const MolecularGraph* graph = nullptr;
  const CGMapping* mapping = nullptr;
  const Conformer* ref = nullptr;
  std::vector<const Conformer*> truths;
};

struct ElboForward {
  ElboTerms terms;
  ad::Var coords;  // n x 3 decoded conformer
};

struct OtForward {
  ad::Var total;
  double ot = 0.0;
  double kl = 0.0;
  LossWeights weights;
  std::vector<ad::Var> generated;
  TransportPlan transport;
};

class Model {
 public:
  explicit Model(ModelConfig config = {});

  const ModelConfig& config() const { return config_; }
  const Encoder& encoder() const { return encoder_; }
  const LatentHeads& heads() const { return heads_; }
  const Decoder& decoder() const { return decoder_; }

  void init(ParameterStore& store, Rng& rng) const;

  // Prior sample decoded from the reference alone.
  DecodeResult generate(ad::Tape& tape, const MolecularGraph& graph, const CGMapping& mapping,
                        const Conformer& ref, Rng& rng, DecodeMode mode) const;
  Conformer generate(const ParameterStore& store, const MolecularGraph& graph, const CGMapping& mapping,
                     const Conformer& ref, Rng& rng, DecodeMode mode) const;

  // Teacher-forced autoregressive ELBO against truths[0].  `noise` overrides
  // the posterior noise (F x 3N) when given.
  ElboForward elbo(ad::Tape& tape, const Example& ex, const LossWeights& weights, Rng& rng,
                   const std::optional<Eigen::MatrixXd>& noise = std::nullopt) const;
  // One posterior sample per truth, decoded in one shot and matched to the
  // truths by optimal transport.  `noise` holds one matrix per truth.
  OtForward ot(ad::Tape& tape, const Example& ex, const LossWeights& weights, Rng& rng,
               const std::vector<Eigen::MatrixXd>* noise = nullptr) const;

 private:
  ModelConfig config_;
  Encoder encoder_;
  LatentHeads heads_;
  Decoder decoder_;
};

// `truth` Kabsch-aligned onto `ref`.
Conformer align_onto(const Conformer& truth, const Conformer& ref);

}  // namespace cgconf
