#include "cgconf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

namespace cgconf {

using ad::Tape;
using ad::Var;

// --- config -------------------------------------------------------------------

LossPreset preset_from_name(const std::string& name) {
  if (name == "elbo-ar") return LossPreset::ElboAr;
  if (name == "elbo-annealed") return LossPreset::ElboAnnealed;
  if (name == "ot") return LossPreset::Ot;
  throw ConfigError("unknown loss preset '" + name + "' (expected elbo-ar, elbo-annealed or ot)");
}

std::string preset_name(LossPreset preset) {
  switch (preset) {
    case LossPreset::ElboAr: return "elbo-ar";
    case LossPreset::ElboAnnealed: return "elbo-annealed";
    case LossPreset::Ot: return "ot";
  }
  return "?";
}

AnnealSchedule RunConfig::schedule() const {
  AnnealSchedule s;
  s.beta2_follows_ladder = preset == LossPreset::ElboAnnealed;
  return s;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || !std::isfinite(out)) throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

double positive(const std::string& key, double v) {
  if (!(v > 0.0)) throw ConfigError("config: '" + key + "' must be positive");
  return v;
}

int positive_int(const std::string& key, long long v) {
  if (v < 1 || v > 1'000'000'000) throw ConfigError("config: '" + key + "' must be a positive integer");
  return static_cast<int>(v);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  const std::string& v = value;
  if (key == "hidden") c.model.hidden = positive_int(key, parse_int(key, v));
  else if (key == "channels") c.model.channels = positive_int(key, parse_int(key, v));
  else if (key == "layers") c.model.encoder_layers = c.model.decoder_layers = positive_int(key, parse_int(key, v));
  else if (key == "encoder_layers") c.model.encoder_layers = positive_int(key, parse_int(key, v));
  else if (key == "decoder_layers") c.model.decoder_layers = positive_int(key, parse_int(key, v));
  else if (key == "eta") c.model.eta = positive(key, parse_double(key, v));
  else if (key == "beta") c.model.beta = positive(key, parse_double(key, v));
  else if (key == "share_paths") c.model.share_paths = parse_bool(key, v);
  else if (key == "tie_layers") c.model.tie_layers = parse_bool(key, v);
  else if (key == "cross_attention") c.model.cross_attention = parse_bool(key, v);
  else if (key == "cutoff") c.model.cutoff = c.corpus.cutoff = positive(key, parse_double(key, v));
  else if (key == "preset") c.preset = preset_from_name(v);
  else if (key == "learning_rate") {
    c.learning_rate = parse_double(key, v);
    if (c.learning_rate < 0.0) throw ConfigError("config: 'learning_rate' must be nonnegative");
  } else if (key == "decay") c.decay = positive(key, parse_double(key, v));
  else if (key == "epochs") c.epochs = positive_int(key, parse_int(key, v));
  else if (key == "steps_per_epoch") {
    const long long s = parse_int(key, v);
    if (s < 0) throw ConfigError("config: 'steps_per_epoch' must be nonnegative");
    c.steps_per_epoch = static_cast<int>(s);
  } else if (key == "batch_size") c.batch_size = positive_int(key, parse_int(key, v));
  else if (key == "seed") {
    const long long s = parse_int(key, v);
    if (s < 0) throw ConfigError("config: 'seed' must be nonnegative");
    c.seed = static_cast<std::uint64_t>(s);
  } else if (key == "delta") c.delta = positive(key, parse_double(key, v));
  else if (key == "corpus_size") c.corpus_size = positive_int(key, parse_int(key, v));
  else if (key == "truths") c.corpus.truths = positive_int(key, parse_int(key, v));
  else if (key == "noise_sigma") {
    c.corpus.noise_sigma = parse_double(key, v);
    if (c.corpus.noise_sigma < 0.0) throw ConfigError("config: 'noise_sigma' must be nonnegative");
  } else if (key == "torsion_sigma_deg") {
    c.corpus.torsion_sigma_deg = parse_double(key, v);
    if (c.corpus.torsion_sigma_deg < 0.0) throw ConfigError("config: 'torsion_sigma_deg' must be nonnegative");
  } else if (key == "hydrogens") c.corpus.hydrogens = parse_bool(key, v);
  else if (key == "min_heavy") c.corpus.min_heavy = positive_int(key, parse_int(key, v));
  else if (key == "max_heavy") c.corpus.max_heavy = positive_int(key, parse_int(key, v));
  else if (key == "min_rotatable") c.corpus.min_rotatable = positive_int(key, parse_int(key, v));
  else if (key == "max_rotatable") c.corpus.max_rotatable = positive_int(key, parse_int(key, v));
  else if (key == "checkpoint_dir") c.checkpoint_dir = v;
  else if (key == "log_path") c.log_path = v;
  else throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.resize(comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(number) + ": unterminated section");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(number) + ": expected 'key = value'");
    apply_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  if (base.corpus.min_heavy > base.corpus.max_heavy || base.corpus.min_rotatable > base.corpus.max_rotatable)
    throw ConfigError("config: corpus minimum exceeds maximum");
  return base;
}

std::string RunConfig::canonical() const {
  std::map<std::string, std::string> kv{
      {"hidden", std::to_string(model.hidden)},
      {"channels", std::to_string(model.channels)},
      {"encoder_layers", std::to_string(model.encoder_layers)},
      {"decoder_layers", std::to_string(model.decoder_layers)},
      {"eta", fmt(model.eta)},
      {"beta", fmt(model.beta)},
      {"share_paths", model.share_paths ? "true" : "false"},
      {"tie_layers", model.tie_layers ? "true" : "false"},
      {"cross_attention", model.cross_attention ? "true" : "false"},
      {"cutoff", fmt(model.cutoff)},
      {"preset", preset_name(preset)},
      {"learning_rate", fmt(learning_rate)},
      {"decay", fmt(decay)},
      {"epochs", std::to_string(epochs)},
      {"steps_per_epoch", std::to_string(steps_per_epoch)},
      {"batch_size", std::to_string(batch_size)},
      {"seed", std::to_string(seed)},
      {"delta", fmt(delta)},
      {"corpus_size", std::to_string(corpus_size)},
      {"truths", std::to_string(corpus.truths)},
      {"noise_sigma", fmt(corpus.noise_sigma)},
      {"torsion_sigma_deg", fmt(corpus.torsion_sigma_deg)},
      {"hydrogens", corpus.hydrogens ? "true" : "false"},
      {"min_heavy", std::to_string(corpus.min_heavy)},
      {"max_heavy", std::to_string(corpus.max_heavy)},
      {"min_rotatable", std::to_string(corpus.min_rotatable)},
      {"max_rotatable", std::to_string(corpus.max_rotatable)},
  };
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t RunConfig::hash() const {
  // FNV-1a over the canonical text; output paths are not part of it.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : canonical()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

// --- training -----------------------------------------------------------------

std::string format_step(const StepRecord& r) {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "step=%d epoch=%d lr=%.9g beta1=%.9g beta2=%.9g recon=%.9e kl=%.9e dist=%.9e total=%.9e",
                r.step, r.epoch, r.lr, r.weights.beta1, r.weights.beta2, r.recon, r.kl, r.dist, r.total);
  return buf;
}

Example example_of(const ToyMolecule& m) {
  Example ex{&m.graph, &m.mapping, &m.ref, {}};
  for (const Conformer& t : m.truths) ex.truths.push_back(&t);
  return ex;
}

StepRecord accumulate_step(const Model& model, ParameterStore& store, const ToyMolecule& molecule,
                           LossPreset preset, const LossWeights& weights, Rng& rng, double scale) {
  Tape tape(&store);
  StepRecord r;
  r.weights = weights;
  Var total;
  if (preset == LossPreset::Ot) {
    const OtForward f = model.ot(tape, example_of(molecule), weights, rng);
    total = f.total;
    r.recon = f.ot;
    r.kl = f.kl;
  } else {
    const ElboForward f = model.elbo(tape, example_of(molecule), weights, rng);
    total = f.terms.total;
    r.recon = f.terms.recon;
    r.kl = f.terms.kl;
    r.dist = f.terms.dist;
  }
  r.total = total.scalar();
  if (std::isfinite(r.total)) {
    tape.backward(ad::scale(total, scale));
    tape.accumulate_parameter_grads(store);
  }
  return r;
}

Checkpoint initial_checkpoint(const RunConfig& config) {
  Checkpoint ck;
  Rng rng(config.seed);
  Model(config.model).init(ck.params, rng);
  ck.seed = config.seed;
  ck.step = 0;
  ck.rng_state = rng.state();
  ck.metadata = {{"model", config.model.to_json()},
                 {"preset", preset_name(config.preset)},
                 {"config", config.canonical()},
                 {"config_hash", config.hash()},
                 {"epoch", 0}};
  return ck;
}

Model model_from_checkpoint(const Checkpoint& checkpoint) {
  if (!checkpoint.metadata.contains("model"))
    throw std::invalid_argument("checkpoint has no model configuration");
  return Model(ModelConfig::from_json(checkpoint.metadata.at("model")));
}

TrainResult train(const RunConfig& config, const std::vector<ToyMolecule>& corpus, std::ostream* log,
                  const Checkpoint* resume) {
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  ck = resume != nullptr ? *resume : initial_checkpoint(config);
  if (resume != nullptr && resume->metadata.value("config_hash", std::uint64_t{0}) != config.hash())
    throw std::invalid_argument("train: checkpoint was written under a different configuration");
  const Model model(config.model);
  Rng rng(config.seed);
  rng.restore(ck.rng_state);

  const int batch = config.batch_size;
  const int per_epoch = config.steps_per_epoch > 0
                            ? config.steps_per_epoch
                            : static_cast<int>((corpus.size() + batch - 1) / batch);
  const int total_steps = config.epochs * per_epoch;
  const AnnealSchedule schedule = config.schedule();

  std::ofstream file_log;
  if (!config.log_path.empty()) {
    file_log.open(config.log_path, resume != nullptr ? std::ios::app : std::ios::trunc);
    if (!file_log) throw std::runtime_error("cannot open log file: " + config.log_path);
  }
  if (!config.checkpoint_dir.empty()) std::filesystem::create_directories(config.checkpoint_dir);

  for (int step = static_cast<int>(ck.step); step < total_steps; ++step) {
    const int epoch = step / per_epoch;
    StepRecord rec;
    rec.step = step;
    rec.epoch = epoch;
    rec.lr = config.learning_rate * std::pow(config.decay, epoch);
    rec.weights = schedule.at(epoch);

    ck.params.zero_grad();
    for (int b = 0; b < batch; ++b) {
      const auto& mol = corpus[static_cast<std::size_t>((static_cast<long long>(step) * batch + b) %
                                                        static_cast<long long>(corpus.size()))];
      const StepRecord part =
          accumulate_step(model, ck.params, mol, config.preset, rec.weights, rng, 1.0 / batch);
      rec.recon += part.recon / batch;
      rec.kl += part.kl / batch;
      rec.dist += part.dist / batch;
      rec.total += part.total / batch;
    }
    const std::string line = format_step(rec);
    if (!std::isfinite(rec.total) || !std::isfinite(rec.recon) || !std::isfinite(rec.kl) ||
        !std::isfinite(rec.dist))
      throw TrainingError("non-finite loss at step " + std::to_string(step) + ": " + line, step);
    if (log != nullptr) *log << line << '\n';
    if (file_log) file_log << line << '\n';
    result.history.push_back(rec);
    ck.params.sgd_step(rec.lr);

    if ((step + 1) % per_epoch == 0) {
      ck.step = static_cast<std::uint64_t>(step + 1);
      ck.rng_state = rng.state();
      ck.metadata["epoch"] = (step + 1) / per_epoch;
      if (!config.checkpoint_dir.empty()) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%03d.ckpt", (step + 1) / per_epoch);
        const std::filesystem::path dir(config.checkpoint_dir);
        save_checkpoint(dir / name, ck);
        save_checkpoint(dir / "last.ckpt", ck);
      }
    }
  }
  ck.step = static_cast<std::uint64_t>(std::max<long long>(static_cast<long long>(ck.step), total_steps));
  ck.rng_state = rng.state();
  return result;
}

// --- gradient suite -------------------------------------------------------------

namespace {

// Splits "enc.L3.gt.cg.vn1.l1.w" into layer 3 and "cg.vn1.l1.w".
bool encoder_layer_module(const std::string& name, int& layer, std::string& rest) {
  if (name.rfind("enc.L", 0) != 0) return false;
  std::size_t pos = 5;
  std::size_t end = name.find('.', pos);
  if (end == std::string::npos) return false;
  layer = std::stoi(name.substr(pos, end - pos));
  rest = name.substr(end + 1);
  if (rest.rfind("gt.", 0) == 0) rest = rest.substr(3);
  else if (rest.rfind("ref.", 0) == 0) rest = rest.substr(4);
  return true;
}

bool starts_with_module(const std::string& rest, const std::string& module) {
  return rest.rfind(module + ".", 0) == 0;
}

}  // namespace

bool structurally_dead(const std::string& name, const ModelConfig& config, LossPreset preset) {
  int layer = 0;
  std::string rest;
  if (encoder_layer_module(name, layer, rest)) {
    if (!config.cross_attention && (starts_with_module(rest, "fg.attn") || starts_with_module(rest, "cg.attn")))
      return true;
    auto dead_at = [&](int l) {
      // Vector features start at zero, so first-layer maps of v see only zeros.
      if (l == 0)
        for (const char* m : {"cg.vn1", "cg.vn2", "cg.vn3", "cg.mix3", "cg.ker2"})
          if (starts_with_module(rest, m)) return true;
      // Only v leaves the last layer; its invariant bead-feature branch is unused.
      if (l == config.encoder_layers - 1)
        for (const char* m : {"cg.node", "cg.mix1", "cg.vn1", "cg.ker1", "cg.attn"})
          if (starts_with_module(rest, m)) return true;
      return false;
    };
    // Tied weights are live if any layer uses them.
    if (!config.tie_layers) return dead_at(layer);
    for (int l = 0; l < config.encoder_layers; ++l)
      if (!dead_at(l)) return false;
    return true;
  }
  const std::string last = "dec.L" + std::to_string(config.decoder_layers - 1) + ".";
  if (name.rfind(last + "node.", 0) == 0 || name.rfind(last + "attn.", 0) == 0) return true;
  if (preset == LossPreset::Ot && name.rfind("dec.L", 0) == 0 && name.find(".attn.") != std::string::npos)
    return true;
  return false;
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

namespace {

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
  return m;
}

// Fixed random linear functional of `v`; `rng` must be reseeded per evaluation.
Var project(Tape& tape, const Var& v, Rng& rng) {
  return ad::sum(ad::mul(tape.constant(gaussian(v.rows(), v.cols(), rng)), v));
}

// One encoder layer on random O(1) states, so attention scores and vector
// features are far from their degenerate initial values.
Var encoder_layer_probe(Tape& tape, const Encoder& encoder, int layer, const ToyMolecule& mol, Rng& rng) {
  const Eigen::Index d = encoder.config().hidden;
  const Eigen::Index f = encoder.config().channels;
  const Eigen::Index beads = mol.mapping.bead_count();
  const Conformer gt_c = center(mol.truths.front()).first;
  const Conformer ref_c = center(mol.ref).first;
  const PathGraph g_gt = encoder.path_graph(mol.graph, mol.mapping, gt_c);
  const PathGraph g_ref = encoder.path_graph(mol.graph, mol.mapping, ref_c);
  auto randomize = [&](Path path, const Conformer& centered) {
    FgState fg = encoder.initial_fg(tape, path, mol.graph, centered);
    CgState cg = encoder.initial_cg(tape, fg, mol.mapping);
    fg.h = tape.constant(gaussian(fg.h.rows(), d, rng));
    fg.f = tape.constant(gaussian(fg.f.rows(), d, rng));
    cg.H = tape.constant(gaussian(beads, d, rng));
    cg.F = tape.constant(gaussian(beads, d, rng));
    cg.v = tape.constant(gaussian(f, 3 * beads, rng));
    return std::pair{fg, cg};
  };
  auto [fg_gt, cg_gt] = randomize(Path::GroundTruth, gt_c);
  auto [fg_ref, cg_ref] = randomize(Path::Reference, ref_c);
  std::tie(fg_gt, fg_ref) = encoder.fg_layer(tape, layer, fg_gt, fg_ref, g_gt.atoms, g_ref.atoms);
  cg_ref = encoder.pool_layer(tape, layer, Path::Reference, fg_ref, cg_ref, g_ref.pooling);
  cg_gt = encoder.pool_layer(tape, layer, Path::GroundTruth, fg_gt, cg_gt, g_gt.pooling);
  std::tie(cg_gt, cg_ref) = encoder.cg_layer(tape, layer, cg_gt, cg_ref, g_gt.beads, g_ref.beads);
  Var total = tape.constant(Eigen::MatrixXd::Zero(1, 1));
  for (const Var& v : {fg_gt.h, fg_gt.x, fg_ref.h, fg_ref.x, cg_gt.H, cg_gt.X, cg_gt.v, cg_ref.H, cg_ref.X, cg_ref.v})
    total = total + project(tape, v, rng);
  return total;
}

Var latent_probe(Tape& tape, const LatentHeads& heads, Eigen::Index channels, Eigen::Index beads, Rng& rng) {
  const Var z = tape.constant(gaussian(channels, 3 * beads, rng));
  const Var z_ref = tape.constant(gaussian(channels, 3 * beads, rng));
  const GaussianLatent post = heads.posterior_params(tape, z, z_ref);
  const GaussianLatent prior = heads.prior_params(tape, z_ref);
  Var total = tape.constant(Eigen::MatrixXd::Zero(1, 1));
  for (const Var& v : {post.mu, post.log_var, prior.mu, prior.log_var}) total = total + project(tape, v, rng);
  return total;
}

Var decoder_probe(Tape& tape, const Decoder& decoder, Eigen::Index channels, const ToyMolecule& mol,
                  DecodeMode mode, Rng& rng) {
  const Var z = tape.constant(gaussian(channels, 3 * mol.mapping.bead_count(), rng));
  const DecodeResult out =
      mode == DecodeMode::Autoregressive
          ? decoder.decode_ar(tape, z, mol.mapping, mol.ref, mol.graph, align_onto(mol.truths.front(), mol.ref))
          : decoder.decode_ot(tape, z, mol.mapping, mol.ref, mol.graph);
  return project(tape, out.coords, rng);
}

// One refinement step of the first bead against random earlier context.
Var decoder_refine_probe(Tape& tape, const Decoder& decoder, Eigen::Index channels, const ToyMolecule& mol,
                         Rng& rng) {
  const Eigen::Index d = decoder.config().hidden;
  const Var z = tape.constant(gaussian(channels, 3 * mol.mapping.bead_count(), rng));
  DecodeContext ctx = decoder.context(tape, z, mol.mapping, mol.ref, mol.graph);
  ctx.features = tape.constant(gaussian(mol.graph.atom_count(), d, rng));
  GenerationState state = decoder.start(ctx);
  const auto& members = mol.mapping.members[static_cast<std::size_t>(state.order.front())];
  const std::vector<Eigen::Index> atoms(members.begin(), members.end());
  for (Eigen::Index a = 0; a < mol.graph.atom_count(); ++a)
    if (std::find(atoms.begin(), atoms.end(), a) == atoms.end()) state.prev_atoms.push_back(a);
  const auto prev = static_cast<Eigen::Index>(state.prev_atoms.size());
  state.prev_coords = tape.constant(gaussian(prev, 3, rng));
  for (Var& h : state.prev_h) h = tape.constant(gaussian(prev, d, rng));
  const StepOutput out = decoder.refine(tape, atoms, state, ctx);
  return project(tape, out.coords, rng) + project(tape, out.h, rng);
}

}  // namespace

GradCheckReport gradcheck(std::uint64_t seed, const GradCheckOptions& opt) {
  GradCheckReport report;
  CorpusOptions co;
  co.max_heavy = opt.max_atoms;
  co.min_heavy = std::min(co.min_heavy, opt.max_atoms);
  co.max_rotatable = 3;
  co.truths = 2;
  const ToyMolecule mol = make_corpus(1, seed, co).front();
  const std::vector<ToyMolecule> extra = make_corpus(opt.dead_check_examples, seed + 1);

  struct Variant {
    const char* label;
    bool share;
    bool tie;
  };
  struct Objective {
    std::string label;
    std::function<Var(Tape&)> forward;
    bool end_to_end = false;
    LossPreset preset = LossPreset::ElboAr;
  };
  const Variant variants[] = {{"shared", true, false}, {"unshared-tied", false, true}};
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::map<std::string, int> checked;
  for (const Variant& variant : variants) {
    ModelConfig mc;
    mc.hidden = opt.hidden;
    mc.channels = opt.channels;
    mc.encoder_layers = mc.decoder_layers = opt.layers;
    mc.share_paths = variant.share;
    mc.tie_layers = variant.tie;
    const Model model(mc);
    ParameterStore store;
    model.init(store, rng);
    const LossWeights weights{0.5, 0.5};
    const Example ex = example_of(mol);
    const Eigen::Index beads = mol.mapping.bead_count();
    const Eigen::MatrixXd noise = latent_noise(mc.channels, beads, rng);
    std::vector<Eigen::MatrixXd> noises;
    for (std::size_t l = 0; l < ex.truths.size(); ++l) noises.push_back(latent_noise(mc.channels, beads, rng));

    std::vector<Objective> objectives;
    objectives.push_back({"elbo-ar",
                          [&](Tape& tape) {
                            Rng unused(0);
                            return model.elbo(tape, ex, weights, unused, noise).terms.total;
                          },
                          true, LossPreset::ElboAr});
    objectives.push_back({"ot",
                          [&](Tape& tape) {
                            Rng unused(0);
                            return model.ot(tape, ex, weights, unused, &noises).total;
                          },
                          true, LossPreset::Ot});
    const std::uint64_t encoder_seed = rng.next();
    objectives.push_back({"encoder", [&, encoder_seed](Tape& tape) {
                            Rng r(encoder_seed);
                            const EncoderOutput out = model.encoder().encode(tape, mol.truths.front(), mol.ref,
                                                                             mol.graph, mol.mapping);
                            return project(tape, out.z, r) + project(tape, out.z_ref, r);
                          }});
    // Several draws per layer, so every gate sees inputs on both of its sides.
    for (int layer = 0; layer < mc.encoder_layers; ++layer)
      for (int draw = 0; draw < 3; ++draw) {
        const std::uint64_t probe_seed = rng.next();
        objectives.push_back({"encoder-layer" + std::to_string(layer) + "." + std::to_string(draw),
                              [&, layer, probe_seed](Tape& tape) {
                                Rng r(probe_seed);
                                return encoder_layer_probe(tape, model.encoder(), layer, mol, r);
                              }});
      }
    for (int draw = 0; draw < 3; ++draw) {
      const std::uint64_t latent_seed = rng.next();
      objectives.push_back({"latent-heads." + std::to_string(draw), [&, latent_seed](Tape& tape) {
                              Rng r(latent_seed);
                              return latent_probe(tape, model.heads(), mc.channels, beads, r);
                            }});
    }
    const std::uint64_t refine_seed = rng.next();
    objectives.push_back({"decoder-refine", [&, refine_seed](Tape& tape) {
                            Rng r(refine_seed);
                            return decoder_refine_probe(tape, model.decoder(), mc.channels, mol, r);
                          }});
    for (DecodeMode mode : {DecodeMode::Autoregressive, DecodeMode::OneShot}) {
      const std::uint64_t decoder_seed = rng.next();
      objectives.push_back({mode == DecodeMode::Autoregressive ? "decoder-ar" : "decoder-ot",
                            [&, mode, decoder_seed](Tape& tape) {
                              Rng r(decoder_seed);
                              return decoder_probe(tape, model.decoder(), mc.channels, mol, mode, r);
                            }});
    }

    std::vector<std::pair<LossPreset, std::size_t>> suspects;
    std::map<std::string, std::vector<bool>> live;  // per end-to-end objective
    for (const Objective& objective : objectives) {
      const std::string label = std::string(variant.label) + "/" + objective.label;
      auto loss = [&](bool with_grad) {
        Tape tape(&store);
        const Var total = objective.forward(tape);
        if (with_grad) {
          store.zero_grad();
          tape.backward(total);
          tape.accumulate_parameter_grads(store);
        }
        return total.scalar();
      };
      const double value = loss(true);
      // Central differences resolve gradients only down to about
      // eps * |loss| / step; smaller entries are not compared.
      const double floor = opt.resolution * std::max(1.0, std::abs(value));
      std::vector<Eigen::MatrixXd> grads;
      for (const Parameter& p : store.entries()) grads.push_back(p.grad);
      if (objective.end_to_end)
        for (const Parameter& p : store.entries()) live[objective.label].push_back(p.grad.cwiseAbs().maxCoeff() > 0.0);

      for (std::size_t k = 0; k < store.entries().size(); ++k) {
        Parameter& p = store.entries()[k];
        const Eigen::MatrixXd& g = grads[k];
        checked.try_emplace(p.name, 0);
        const double gmax = g.cwiseAbs().maxCoeff();
        if (objective.end_to_end && gmax == 0.0 && !structurally_dead(p.name, mc, objective.preset))
          suspects.emplace_back(objective.preset, k);
        if (gmax < floor) continue;
        // The largest entry first, then random entries within two orders of it.
        Eigen::Index best = 0;
        for (Eigen::Index i = 1; i < g.size(); ++i)
          if (std::abs(g(i)) > std::abs(g(best))) best = i;
        std::vector<Eigen::Index> strong;
        for (Eigen::Index i = 0; i < g.size(); ++i)
          if (i != best && std::abs(g(i)) >= std::max(1e-2 * gmax, floor)) strong.push_back(i);
        std::shuffle(strong.begin(), strong.end(), rng.engine());
        strong.insert(strong.begin(), best);
        int compared = 0;
        for (Eigen::Index i : strong) {
          if (compared == opt.entries_per_parameter) break;
          const double saved = p.value(i);
          auto central = [&](double h) {
            p.value(i) = saved + h;
            const double up = loss(false);
            p.value(i) = saved - h;
            const double down = loss(false);
            p.value(i) = saved;
            return (up - down) / (2.0 * h);
          };
          const double numeric = central(opt.step);
          const double refined = central(opt.step / 2);
          // A kink or strong curvature inside the step makes the difference
          // itself move with h; such an entry cannot be judged at this step.
          if (std::abs(numeric - refined) > 0.5 * opt.tolerance * std::max(std::abs(numeric), std::abs(refined))) {
            report.nonsmooth.push_back(label + ":" + p.name + "[" + std::to_string(i) + "]");
            continue;
          }
          GradCheckEntry e;
          e.parameter = p.name;
          e.objective = label;
          e.analytic = g(i);
          e.numeric = numeric;
          e.rel_error = std::abs(e.analytic - e.numeric) / std::max(std::abs(e.analytic), std::abs(e.numeric));
          e.passed = e.rel_error < opt.tolerance;
          report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
          if (!e.passed) report.passed = false;
          report.entries.push_back(e);
          ++checked[p.name];
          ++compared;
        }
      }
    }

    // Piecewise-linear gates can be inactive on one molecule, so a parameter
    // is dead only if no example gives it a gradient.
    for (const ToyMolecule& other : extra) {
      if (suspects.empty()) break;
      const Example other_ex = example_of(other);
      std::vector<std::pair<LossPreset, std::size_t>> remaining;
      for (LossPreset preset : {LossPreset::ElboAr, LossPreset::Ot}) {
        Tape tape(&store);
        const Var total = preset == LossPreset::Ot ? model.ot(tape, other_ex, weights, rng).total
                                                   : model.elbo(tape, other_ex, weights, rng).terms.total;
        store.zero_grad();
        tape.backward(total);
        tape.accumulate_parameter_grads(store);
        for (const auto& suspect : suspects)
          if (suspect.first == preset && store.entries()[suspect.second].grad.cwiseAbs().maxCoeff() == 0.0)
            remaining.push_back(suspect);
      }
      suspects = std::move(remaining);
    }
    // A vector-neuron gate whose inputs all lie on its positive side is the
    // identity and passes no gradient to its direction; that is inactive,
    // not dead, when the same module's input map is live.
    for (const auto& [preset, k] : suspects) {
      const std::string& name = store.entries()[k].name;
      const std::string label = std::string(variant.label) + "/" + preset_name(preset) + ":" + name;
      const std::string gate = ".act.u";
      bool inactive = false;
      if (name.size() > gate.size() && name.compare(name.size() - gate.size(), gate.size(), gate) == 0) {
        const std::string sibling = name.substr(0, name.size() - gate.size()) + ".l1.w";
        for (std::size_t j = 0; j < store.entries().size(); ++j)
          if (store.entries()[j].name == sibling) inactive = live[preset_name(preset)][j];
      }
      if (inactive) {
        report.inactive.push_back(label);
      } else {
        report.dead.push_back(label);
        report.passed = false;
      }
    }
  }
  for (const auto& [name, count] : checked)
    if (count == 0) {
      report.unchecked.push_back(name);
      report.passed = false;
    }
  return report;
}

// --- equivariance suite -----------------------------------------------------------

EquivCheckReport equivcheck(std::uint64_t seed, int molecules, int motions, const ModelConfig& config) {
  EquivCheckReport report;
  report.molecules = molecules;
  report.motions = motions;
  const auto corpus = make_corpus(molecules, seed);
  const Model model(config);
  ParameterStore store;
  Rng rng(seed);
  model.init(store, rng);

  for (const ToyMolecule& mol : corpus) {
    const Conformer& truth = mol.truths.front();
    Tape base_tape(&store);
    const EncoderOutput base = model.encoder().encode(base_tape, truth, mol.ref, mol.graph, mol.mapping);
    const GaussianLatent base_prior = model.heads().prior_params(base_tape, base.z_ref);
    const std::uint64_t sample_seed = rng.next();
    Rng base_rng(sample_seed);
    const Conformer generated = model.generate(store, mol.graph, mol.mapping, mol.ref, base_rng, DecodeMode::Autoregressive);
    const Conformer gen_centered = center(generated).first;

    for (int m = 0; m < motions; ++m) {
      const Eigen::Matrix3d rot = random_rotation(rng);
      const Eigen::RowVector3d shift(5.0 * rng.normal(), 5.0 * rng.normal(), 5.0 * rng.normal());
      auto move = [&](const Conformer& x) -> Conformer { return (x * rot.transpose()).rowwise() + shift; };

      Tape tape(&store);
      const EncoderOutput moved = model.encoder().encode(tape, move(truth), move(mol.ref), mol.graph, mol.mapping);
      const GaussianLatent moved_prior = model.heads().prior_params(tape, moved.z_ref);
      const double z_err = (moved.z.value() - rotate_blocks(base.z.value(), rot)).norm() / base.z.value().norm();
      const double zr_err =
          (moved.z_ref.value() - rotate_blocks(base.z_ref.value(), rot)).norm() / base.z_ref.value().norm();
      report.max_latent_error = std::max({report.max_latent_error, z_err, zr_err});
      report.max_prior_error = std::max(
          report.max_prior_error, (moved_prior.log_var.value() - base_prior.log_var.value()).cwiseAbs().maxCoeff());

      Rng moved_rng(sample_seed);
      const Conformer moved_gen =
          model.generate(store, mol.graph, mol.mapping, move(mol.ref), moved_rng, DecodeMode::Autoregressive);
      const double g_err = (moved_gen - move(generated)).norm() / gen_centered.norm();
      report.max_generate_error = std::max(report.max_generate_error, g_err);
    }
  }
  report.passed = report.max_latent_error < report.latent_tolerance &&
                  report.max_generate_error < report.generate_tolerance;
  return report;
}

std::string format_gradcheck(const GradCheckReport& r) {
  std::ostringstream out;
  int failed = 0;
  for (const auto& e : r.entries)
    if (!e.passed) {
      ++failed;
      char buf[256];
      std::snprintf(buf, sizeof buf, "FAIL %s %s analytic=%.9e numeric=%.9e rel=%.3e\n", e.objective.c_str(),
                    e.parameter.c_str(), e.analytic, e.numeric, e.rel_error);
      out << buf;
    }
  for (const auto& d : r.dead) out << "DEAD " << d << '\n';
  for (const auto& u : r.unchecked) out << "UNCHECKED " << u << '\n';
  for (const auto& i : r.inactive) out << "INACTIVE " << i << '\n';
  char buf[240];
  std::snprintf(buf, sizeof buf,
                "checked=%zu failed=%d dead=%zu unchecked=%zu inactive=%zu nonsmooth=%zu max_rel_error=%.3e "
                "result=%s\n",
                r.entries.size(), failed, r.dead.size(), r.unchecked.size(), r.inactive.size(), r.nonsmooth.size(),
                r.max_rel_error, r.passed ? "pass" : "fail");
  out << buf;
  return out.str();
}

std::string format_equivcheck(const EquivCheckReport& r) {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "molecules=%d motions=%d latent_max_rel=%.3e (tol %.0e) generate_max_rel=%.3e (tol %.0e) "
                "prior_logvar_max_abs=%.3e result=%s\n",
                r.molecules, r.motions, r.max_latent_error, r.latent_tolerance, r.max_generate_error,
                r.generate_tolerance, r.max_prior_error, r.passed ? "pass" : "fail");
  return buf;
}

}  // namespace cgconf
