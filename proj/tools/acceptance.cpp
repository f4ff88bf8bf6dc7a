// One pass/fail line per acceptance criterion; exit status 0 only if all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cgconf/coarsen.hpp"
#include "cgconf/losses.hpp"
#include "cgconf/metrics.hpp"
#include "cgconf/numeric/kabsch.hpp"
#include "cgconf/pipeline.hpp"

namespace {

using namespace cgconf;
using Clock = std::chrono::steady_clock;

// OT leg of the anchoring run; same step budget as the ELBO leg.
constexpr double kOtLearningRate = 3e-2;
constexpr double kOtDecay = 0.9;

struct Outcome {
  bool passed = true;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

Conformer random_points(int m, Rng& rng, double scale = 1.0) {
  Conformer p(m, 3);
  for (int i = 0; i < m; ++i)
    for (int a = 0; a < 3; ++a) p(i, a) = scale * rng.normal();
  return p;
}

Outcome equivariance() {
  const auto t0 = Clock::now();
  const EquivCheckReport r = equivcheck(0, 20, 10);
  const double secs = seconds_since(t0);
  return {r.passed && secs < 60.0,
          fmt("latent=%.3g generate=%.3g prior=%.3g secs=%.1f", r.max_latent_error, r.max_generate_error,
              r.max_prior_error, secs)};
}

Outcome gradients() {
  const auto t0 = Clock::now();
  const GradCheckReport r = gradcheck(0);
  const double secs = seconds_since(t0);
  return {r.passed && secs < 120.0,
          fmt("checked=%.0f max_rel_error=%.3g problems=%.0f secs=%.1f", static_cast<double>(r.entries.size()),
              r.max_rel_error, static_cast<double>(r.dead.size() + r.unchecked.size()), secs)};
}

Outcome kabsch_optimality() {
  Rng rng(3);
  int beaten = 0;
  int improper = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 200; ++trial) {
    const Conformer p = random_points(8, rng);
    const Conformer q = random_points(8, rng);
    const double analytic = kabsch_align(p, q).rmsd;
    const Conformer pc = p.rowwise() - centroid(p);
    const Conformer qc = q.rowwise() - centroid(q);
    double best = std::numeric_limits<double>::infinity();
    for (int s = 0; s < 10000; ++s) {
      const Eigen::Matrix3d rot = random_rotation(rng);
      best = std::min(best, std::sqrt((pc * rot.transpose() - qc).rowwise().squaredNorm().mean()));
    }
    worst_margin = std::min(worst_margin, best - analytic);
    if (analytic > best + 1e-12) ++beaten;

    Conformer mirrored = p;
    mirrored.col(0) *= -1.0;
    mirrored += random_points(8, rng, 0.05);
    if (std::abs(kabsch_align(p, mirrored).rotation.determinant() - 1.0) > 1e-12) ++improper;
  }
  return {beaten == 0 && improper == 0,
          fmt("beaten=%.0f improper=%.0f min_margin=%.3g", beaten, improper, worst_margin)};
}

Outcome emd_exactness() {
  Rng rng(4);
  double max_objective_error = 0.0;
  double max_marginal_error = 0.0;
  auto marginals = [&](const Eigen::MatrixXd& cost, const TransportPlan& t) {
    const double k = static_cast<double>(cost.rows());
    const double l = static_cast<double>(cost.cols());
    double err = (t.plan.rowwise().sum().array() - 1.0 / k).abs().maxCoeff();
    err = std::max(err, (t.plan.colwise().sum().array() - 1.0 / l).abs().maxCoeff());
    err = std::max(err, std::max(0.0, -t.plan.minCoeff()));
    max_marginal_error = std::max(max_marginal_error, err);
  };
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + trial % 4;
    Eigen::MatrixXd cost(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) cost(i, j) = rng.uniform(0.0, 5.0);
    const TransportPlan t = emd_solve(cost);
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double c = 0.0;
      for (int i = 0; i < k; ++i) c += cost(i, perm[i]);
      best = std::min(best, c / k);
    } while (std::next_permutation(perm.begin(), perm.end()));
    max_objective_error = std::max(max_objective_error, std::abs(t.objective - best));
    marginals(cost, t);
  }
  for (int trial = 0; trial < 100; ++trial) {
    const int k = rng.uniform_int(1, 6);
    const int l = rng.uniform_int(1, 6);
    Eigen::MatrixXd cost(k, l);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < l; ++j) cost(i, j) = rng.uniform(0.0, 5.0);
    marginals(cost, emd_solve(cost));
  }
  return {max_objective_error <= 1e-9 && max_marginal_error <= 1e-9,
          fmt("max_objective_error=%.3g max_marginal_error=%.3g", max_objective_error, max_marginal_error)};
}

Outcome metric_oracle() {
  Rng rng(5);
  bool ok = true;
  const Conformer a = random_points(6, rng);
  Conformer b = a;
  b.row(0) += Eigen::RowVector3d(4.0, 0.0, 0.0);
  b.row(5) -= Eigen::RowVector3d(0.0, 3.0, 0.0);

  const std::vector<Conformer> ens{a, b, random_points(6, rng)};
  const EnsembleReport same = ensemble_report(ens, ens, 0.5);
  ok = ok && same.cov_precision == 100.0 && same.cov_recall == 100.0 && same.amr_precision == 0.0 &&
       same.amr_recall == 0.0;

  const double rba = rmsd(b, a);
  const EnsembleReport two = ensemble_report({a, b}, {a}, 0.5);
  ok = ok && rba >= 0.5 && two.cov_precision == 50.0 && two.amr_precision == (0.0 + rba) / 2.0 &&
       two.cov_recall == 100.0 && two.amr_recall == 0.0;

  const EnsembleReport wide =
      ensemble_report({b, random_points(6, rng)}, {a}, std::numeric_limits<double>::infinity());
  ok = ok && wide.cov_precision == 100.0 && wide.cov_recall == 100.0;

  int violations = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Conformer> pool, truth;
    for (int i = 0; i < 8; ++i) pool.push_back(random_points(6, rng));
    for (int i = 0; i < 3; ++i) truth.push_back(random_points(6, rng));
    const auto reports = budget_sweep(pool, truth, {1, 2, 4, 8}, 1.2);
    for (std::size_t i = 1; i < reports.size(); ++i)
      if (reports[i].cov_recall < reports[i - 1].cov_recall || reports[i].amr_recall > reports[i - 1].amr_recall)
        ++violations;
  }
  return {ok && violations == 0,
          std::string("hand_cases=") + (ok ? "match" : "mismatch") +
              fmt(" monotonicity_violations=%.0f", violations)};
}

Conformer chain_coords(int n) {
  Conformer x(n, 3);
  for (int i = 0; i < n; ++i) x.row(i) << 1.3 * i, (i % 2) * 0.8, 0.1 * i;
  return x;
}

MolecularGraph chain(const std::vector<Element>& elements, const std::vector<Bond>& bonds) {
  std::vector<Atom> atoms(elements.size());
  for (std::size_t i = 0; i < elements.size(); ++i) atoms[i].element = elements[i];
  return build_graph(atoms, bonds, chain_coords(static_cast<int>(elements.size())));
}

Conformer chain_coords(const MolecularGraph& g) { return chain_coords(g.atom_count()); }

Outcome coarse_graining() {
  using E = Element;
  const auto single = BondOrder::Single;
  bool hand = true;
  // Ethane with hydrogens: the C-C bond is terminal for heavy atoms.
  {
    std::vector<Element> el{E::C, E::C, E::H, E::H, E::H, E::H, E::H, E::H};
    std::vector<Bond> bonds{{0, 1, single}};
    for (int h = 2; h < 5; ++h) bonds.push_back({0, h, single});
    for (int h = 5; h < 8; ++h) bonds.push_back({1, h, single});
    const MolecularGraph g = chain(el, bonds);
    hand = hand && find_rotatable_bonds(g).empty() && coarse_grain(g, chain_coords(g)).bead_count() == 1;
  }
  // Butane: only the central bond rotates.
  {
    const MolecularGraph g = chain({E::C, E::C, E::C, E::C}, {{0, 1, single}, {1, 2, single}, {2, 3, single}});
    const CGMapping m = coarse_grain(g, chain_coords(g));
    hand = hand && find_rotatable_bonds(g) == std::vector<int>{1} && m.bead_count() == 2 &&
           m.assignment[0] == m.assignment[1] && m.assignment[2] == m.assignment[3] &&
           m.assignment[1] != m.assignment[2];
  }
  // Acetamide: C-N is an amide and C-C is terminal.
  {
    const MolecularGraph g =
        chain({E::C, E::C, E::O, E::N}, {{0, 1, single}, {1, 2, BondOrder::Double}, {1, 3, single}});
    hand = hand && find_rotatable_bonds(g).empty() && coarse_grain(g, chain_coords(g)).bead_count() == 1;
  }

  int structural = 0;
  double centroid_error = 0.0;
  const std::vector<ToyMolecule> corpus = make_corpus(200, 6);
  for (const ToyMolecule& mol : corpus) {
    const CGMapping& m = mol.mapping;
    const std::vector<int> rot = find_rotatable_bonds(mol.graph);
    if (m.bead_count() != static_cast<int>(rot.size()) + 1) ++structural;
    std::vector<int> seen(mol.graph.atom_count(), 0);
    for (int b = 0; b < m.bead_count(); ++b) {
      Eigen::RowVector3d mean = Eigen::RowVector3d::Zero();
      for (int a : m.members[b]) {
        ++seen[a];
        if (m.assignment[a] != b) ++structural;
        mean += mol.ref.row(a);
      }
      if (m.members[b].empty()) ++structural;
      else mean /= static_cast<double>(m.members[b].size());
      centroid_error = std::max(centroid_error, (m.bead_centroids.row(b) - mean).norm());
    }
    for (int s : seen)
      if (s != 1) ++structural;
  }
  return {hand && structural == 0 && centroid_error <= 1e-12,
          fmt("hand_cases=%.0f structural_violations=%.0f max_centroid_error=%.3g", hand ? 1 : 0, structural,
              centroid_error)};
}

double mean_generated_rmsd(const Model& model, const ParameterStore& store,
                           const std::vector<ToyMolecule>& corpus, double& ref_rmsd) {
  Rng rng(99);
  double gen = 0.0;
  ref_rmsd = 0.0;
  const int samples = 3;
  for (const ToyMolecule& mol : corpus) {
    ref_rmsd += rmsd(mol.ref, mol.truths[0]);
    for (int s = 0; s < samples; ++s)
      gen += rmsd(model.generate(store, mol.graph, mol.mapping, mol.ref, rng, DecodeMode::Autoregressive),
                  mol.truths[0]) / samples;
  }
  ref_rmsd /= static_cast<double>(corpus.size());
  return gen / static_cast<double>(corpus.size());
}

// Corpus mean of the OT objective at fixed posterior noise.
double mean_ot(const Model& model, const ParameterStore& store, const std::vector<ToyMolecule>& corpus) {
  Rng rng(5);
  double total = 0.0;
  for (const ToyMolecule& mol : corpus) {
    ad::Tape tape(&store);
    total += model.ot(tape, example_of(mol), {0.0, 0.0}, rng).ot;
  }
  return total / static_cast<double>(corpus.size());
}

Outcome anchoring() {
  const auto t0 = Clock::now();
  RunConfig elbo;
  elbo.preset = LossPreset::ElboAr;
  elbo.learning_rate = 1e-3;
  elbo.epochs = 10;
  elbo.steps_per_epoch = 200;
  const std::vector<ToyMolecule> corpus = make_corpus(10, elbo.seed, elbo.corpus);
  const Model model(elbo.model);
  const TrainResult trained = train(elbo, corpus, nullptr);
  double ref = 0.0;
  const double gen = mean_generated_rmsd(model, trained.checkpoint.params, corpus, ref);

  RunConfig ot = elbo;
  ot.preset = LossPreset::Ot;
  ot.learning_rate = kOtLearningRate;
  ot.decay = kOtDecay;
  const double before = mean_ot(model, initial_checkpoint(ot).params, corpus);
  const double after = mean_ot(model, train(ot, corpus, nullptr).checkpoint.params, corpus);
  const double secs = seconds_since(t0);
  return {gen < ref && after < 0.5 * before && secs < 600.0,
          fmt("generated=%.4f reference=%.4f ot_ratio=%.3f secs=%.0f", gen, ref, after / before, secs)};
}

Outcome no_leak() {
  const Model model;
  ParameterStore store;
  Rng init(8);
  model.init(store, init);
  Rng rng(9);
  int mismatches = 0;
  for (const ToyMolecule& mol : make_corpus(10, 8)) {
    ad::Tape base_tape(&store);
    const EncoderOutput base = model.encoder().encode(base_tape, mol.truths[0], mol.ref, mol.graph, mol.mapping);
    const GaussianLatent base_prior = model.heads().prior_params(base_tape, base.z_ref);
    for (int r = 0; r < 3; ++r) {
      const Conformer scrambled = random_points(mol.graph.atom_count(), rng, 3.0);
      ad::Tape tape(&store);
      const EncoderOutput out = model.encoder().encode(tape, scrambled, mol.ref, mol.graph, mol.mapping);
      const GaussianLatent prior = model.heads().prior_params(tape, out.z_ref);
      if (out.z_ref.value() != base.z_ref.value() || prior.mu.value() != base_prior.mu.value() ||
          prior.log_var.value() != base_prior.log_var.value())
        ++mismatches;
      if (out.z.value() == base.z.value()) ++mismatches;  // the gt path must see the change
    }
  }
  return {mismatches == 0, fmt("mismatches=%.0f", mismatches)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const std::filesystem::path root = std::filesystem::temp_directory_path() / "cgconf_acceptance_determinism";
  std::filesystem::remove_all(root);
  std::vector<std::string> bytes;
  std::vector<std::string> logs;
  for (const char* run : {"a", "b"}) {
    RunConfig c;
    c.model.hidden = c.model.channels = 8;
    c.model.encoder_layers = c.model.decoder_layers = 2;
    c.corpus_size = 4;
    c.epochs = 2;
    c.steps_per_epoch = 6;
    c.seed = 11;
    c.checkpoint_dir = (root / run).string();
    std::ostringstream log;
    train(c, make_corpus(c.corpus_size, c.seed, c.corpus), &log);
    bytes.push_back(slurp(root / run / "epoch_001.ckpt") + slurp(root / run / "last.ckpt"));
    logs.push_back(log.str());
  }
  std::filesystem::remove_all(root);
  const bool ok = !bytes[0].empty() && bytes[0] == bytes[1] && logs[0] == logs[1];
  return {ok, fmt("checkpoint_bytes=%.0f identical=%.0f", static_cast<double>(bytes[0].size()), ok ? 1 : 0)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"equivariance", equivariance},     {"gradients", gradients},
      {"kabsch-optimality", kabsch_optimality}, {"emd-exactness", emd_exactness},
      {"metric-oracle", metric_oracle},   {"coarse-graining", coarse_graining},
      {"anchoring", anchoring},           {"no-leak", no_leak},
      {"determinism", determinism},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.passed;
    std::printf("criterion %zu %-18s %s  %s\n", i + 1, criteria[i].first.c_str(), o.passed ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
