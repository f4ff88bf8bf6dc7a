#include "cgconf/model.hpp"

#include <stdexcept>

#include "cgconf/numeric/kabsch.hpp"

namespace cgconf {

using ad::Tape;
using ad::Var;

EncoderConfig ModelConfig::encoder() const {
  EncoderConfig e;
  e.hidden = hidden;
  e.channels = channels;
  e.layers = encoder_layers;
  e.eta_x = e.eta_h = e.eta_X = e.eta_H = e.eta_v = eta;
  e.share_paths = share_paths;
  e.tie_layers = tie_layers;
  e.cross_attention = cross_attention;
  e.cutoff = cutoff;
  return e;
}

LatentConfig ModelConfig::latent() const { return {hidden, channels}; }

DecoderConfig ModelConfig::decoder() const {
  DecoderConfig d;
  d.hidden = hidden;
  d.layers = decoder_layers;
  d.beta = beta;
  d.cutoff = cutoff;
  return d;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"hidden", hidden},           {"channels", channels},
          {"encoder_layers", encoder_layers}, {"decoder_layers", decoder_layers},
          {"eta", eta},                 {"beta", beta},
          {"share_paths", share_paths}, {"tie_layers", tie_layers},
          {"cross_attention", cross_attention}, {"cutoff", cutoff}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.hidden = j.at("hidden").get<Eigen::Index>();
  c.channels = j.at("channels").get<Eigen::Index>();
  c.encoder_layers = j.at("encoder_layers").get<int>();
  c.decoder_layers = j.at("decoder_layers").get<int>();
  c.eta = j.at("eta").get<double>();
  c.beta = j.at("beta").get<double>();
  c.share_paths = j.at("share_paths").get<bool>();
  c.tie_layers = j.at("tie_layers").get<bool>();
  c.cross_attention = j.at("cross_attention").get<bool>();
  c.cutoff = j.at("cutoff").get<double>();
  return c;
}

Model::Model(ModelConfig config)
    : config_(config), encoder_(config.encoder()), heads_(config.latent()), decoder_(config.decoder()) {}

void Model::init(ParameterStore& store, Rng& rng) const {
  encoder_.init(store, rng);
  heads_.init(store, rng);
  decoder_.init(store, rng);
}

Conformer align_onto(const Conformer& truth, const Conformer& ref) {
  return kabsch_align(truth, ref).apply(truth);
}

DecodeResult Model::generate(Tape& tape, const MolecularGraph& graph, const CGMapping& mapping,
                             const Conformer& ref, Rng& rng, DecodeMode mode) const {
  const Var z_ref = encoder_.encode_reference(tape, ref, graph, mapping);
  const GaussianLatent prior = heads_.prior_params(tape, z_ref);
  const Var z = sample(tape, prior, rng, equivariant_frame(center(ref).first));
  return mode == DecodeMode::Autoregressive ? decoder_.decode_ar(tape, z, mapping, ref, graph)
                                            : decoder_.decode_ot(tape, z, mapping, ref, graph);
}

Conformer Model::generate(const ParameterStore& store, const MolecularGraph& graph,
                          const CGMapping& mapping, const Conformer& ref, Rng& rng,
                          DecodeMode mode) const {
  Tape tape(&store);
  return generate(tape, graph, mapping, ref, rng, mode).coords.value();
}

ElboForward Model::elbo(Tape& tape, const Example& ex, const LossWeights& weights, Rng& rng,
                        const std::optional<Eigen::MatrixXd>& noise) const {
  if (ex.truths.empty()) throw std::invalid_argument("elbo: example has no ground truth");
  const Conformer& truth = *ex.truths.front();
  const Conformer& ref = *ex.ref;
  const EncoderOutput enc = encoder_.encode(tape, truth, ref, *ex.graph, *ex.mapping);
  const GaussianLatent post = heads_.posterior_params(tape, enc.z, enc.z_ref);
  const GaussianLatent prior = heads_.prior_params(tape, enc.z_ref);
  const Eigen::MatrixXd eps =
      noise ? *noise
            : latent_noise(config_.channels, ex.mapping->bead_count(), rng,
                           equivariant_frame(center(ref).first));
  const Var z = sample(tape, post, eps);
  const DecodeResult dec = decoder_.decode_ar(tape, z, *ex.mapping, ref, *ex.graph, align_onto(truth, ref));

  ElboForward out;
  out.coords = dec.coords;
  out.terms = elbo_loss(aligned_mse(tape, dec.coords, truth), kl_divergence(post, prior),
                        distance_loss(tape, dec.coords, truth, *ex.graph), weights);
  return out;
}

OtForward Model::ot(Tape& tape, const Example& ex, const LossWeights& weights, Rng& rng,
                    const std::vector<Eigen::MatrixXd>* noise) const {
  if (ex.truths.empty()) throw std::invalid_argument("ot: example has no ground truth");
  if (noise != nullptr && noise->size() != ex.truths.size())
    throw std::invalid_argument("ot: one noise matrix per truth required");
  const Conformer& ref = *ex.ref;
  const Eigen::Matrix3d frame = equivariant_frame(center(ref).first);
  OtForward out;
  std::vector<Conformer> truths;
  Var kl = tape.constant(Eigen::MatrixXd::Zero(1, 1));
  for (std::size_t l = 0; l < ex.truths.size(); ++l) {
    const Conformer& truth = *ex.truths[l];
    truths.push_back(truth);
    const EncoderOutput enc = encoder_.encode(tape, truth, ref, *ex.graph, *ex.mapping);
    const GaussianLatent post = heads_.posterior_params(tape, enc.z, enc.z_ref);
    const GaussianLatent prior = heads_.prior_params(tape, enc.z_ref);
    kl = kl + kl_divergence(post, prior);
    const Eigen::MatrixXd eps = noise != nullptr
                                    ? (*noise)[l]
                                    : latent_noise(config_.channels, ex.mapping->bead_count(), rng, frame);
    const Var z = sample(tape, post, eps);
    out.generated.push_back(decoder_.decode_ot(tape, z, *ex.mapping, ref, *ex.graph).coords);
  }
  kl = ad::scale(kl, 1.0 / static_cast<double>(ex.truths.size()));
  const OtResult matched = ot_loss(tape, out.generated, truths, *ex.graph);
  out.total = matched.loss + ad::scale(kl, weights.beta1);
  out.ot = matched.loss.scalar();
  out.kl = kl.scalar();
  out.weights = weights;
  out.transport = matched.transport;
  return out;
}

}  // namespace cgconf
