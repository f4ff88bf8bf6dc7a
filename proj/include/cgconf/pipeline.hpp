#pragma once

// Run configuration, training loop and the self-check suites.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgconf/corpus.hpp"
#include "cgconf/model.hpp"
#include "cgconf/numeric/checkpoint.hpp"

namespace cgconf {

enum class LossPreset { ElboAr, ElboAnnealed, Ot };

LossPreset preset_from_name(const std::string& name);
std::string preset_name(LossPreset preset);

struct RunConfig {
  ModelConfig model;
  LossPreset preset = LossPreset::ElboAr;
  double learning_rate = 1e-3;
  double decay = 0.8;  // learning-rate multiplier per epoch
  int epochs = 5;
  int steps_per_epoch = 0;  // 0: one pass over the corpus
  int batch_size = 1;
  std::uint64_t seed = 0;
  double delta = 0.5;
  int corpus_size = 10;
  CorpusOptions corpus;
  std::string checkpoint_dir;  // empty: no checkpoints written
  std::string log_path;        // empty: log only to the stream passed to train

  AnnealSchedule schedule() const;
  // Canonical key = value text; hashing it gives the config hash.
  std::string canonical() const;
  std::uint64_t hash() const;
};

// Structured text: optional [section] headers (ignored for lookup), then
// `key = value` lines; '#' and ';' start comments.  Unknown keys and
// malformed values throw ConfigError.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
RunConfig parse_config(const std::string& text, RunConfig base = {});
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

// Thrown when a loss term turns non-finite; carries the step and breakdown.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

struct StepRecord {
  int step = 0;
  int epoch = 0;
  double lr = 0.0;
  LossWeights weights;
  double recon = 0.0;  // aligned MSE, or the OT objective for the ot preset
  double kl = 0.0;
  double dist = 0.0;
  double total = 0.0;
};

std::string format_step(const StepRecord& record);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepRecord> history;
};

// Plain SGD; the learning rate is multiplied by `decay` after each epoch and
// a checkpoint is written at every epoch boundary.  With `resume`, training
// continues from the checkpoint's step with its parameters and RNG state.
TrainResult train(const RunConfig& config, const std::vector<ToyMolecule>& corpus, std::ostream* log,
                  const Checkpoint* resume = nullptr);

// Fresh parameters for `config`, drawn from its seed.
Checkpoint initial_checkpoint(const RunConfig& config);
Model model_from_checkpoint(const Checkpoint& checkpoint);

// Example view over a toy molecule (all truths).
Example example_of(const ToyMolecule& molecule);

// Per-molecule loss used by training; gradients are added into the store.
StepRecord accumulate_step(const Model& model, ParameterStore& store, const ToyMolecule& molecule,
                           LossPreset preset, const LossWeights& weights, Rng& rng, double scale);

// --- self checks --------------------------------------------------------------

struct GradCheckEntry {
  std::string parameter;
  std::string objective;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  std::vector<std::string> dead;       // parameters with zero gradient that should have one
  std::vector<std::string> unchecked;  // parameters never resolvable by any objective
  std::vector<std::string> inactive;   // gate directions idle on every example
  std::vector<std::string> nonsmooth;  // entries replaced because the step straddles a kink
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  int entries_per_parameter = 2;
  int max_atoms = 8;
  Eigen::Index hidden = 8;
  Eigen::Index channels = 4;
  int layers = 2;
  // Entries with |gradient| below resolution * max(1, |loss|) are skipped.
  double resolution = 1e-5;
  // Further molecules that may clear a zero-gradient parameter of deadness.
  int dead_check_examples = 4;
};

// Central finite differences on a small random molecule: both training
// objectives end to end, plus random linear probes of each encoder layer,
// the latent heads and both decoder modes on random O(1) inputs.  Every
// parameter must be compared at least once and pass everywhere.
GradCheckReport gradcheck(std::uint64_t seed, const GradCheckOptions& options = {});

// Parameters that cannot influence the given objective by construction.
bool structurally_dead(const std::string& parameter, const ModelConfig& config, LossPreset preset);

struct EquivCheckReport {
  double max_latent_error = 0.0;    // |Z(Rx + t) - Z R^T| / |Z|
  double max_generate_error = 0.0;  // |G(Rx + t) - (G R^T + t)| / |G - mean G|
  double max_prior_error = 0.0;     // log-variance deviation of the prior
  int molecules = 0;
  int motions = 0;
  double latent_tolerance = 1e-8;
  double generate_tolerance = 1e-6;
  bool passed = false;
};

EquivCheckReport equivcheck(std::uint64_t seed, int molecules = 20, int motions = 10,
                            const ModelConfig& config = {});

std::string format_gradcheck(const GradCheckReport& report);
std::string format_equivcheck(const EquivCheckReport& report);

// Uniformly random proper rotation.
Eigen::Matrix3d random_rotation(Rng& rng);

}  // namespace cgconf
