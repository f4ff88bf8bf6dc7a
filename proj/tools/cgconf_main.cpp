#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cgconf/coarsen.hpp"
#include "cgconf/metrics.hpp"
#include "cgconf/molio.hpp"
#include "cgconf/numeric/checkpoint.hpp"
#include "cgconf/pipeline.hpp"

namespace {

using namespace cgconf;

constexpr int kUsageError = 2;

std::uint64_t default_seed() {
  const char* env = std::getenv("CGCONF_SEED");
  if (env == nullptr || *env == '\0') return 0;
  try {
    return std::stoull(env);
  } catch (const std::exception&) {
    throw std::runtime_error(std::string("CGCONF_SEED is not a nonnegative integer: ") + env);
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::vector<MolRecord> read_sdf(const std::string& path) {
  std::vector<MolRecord> records = parse_sdf(read_file(path));
  if (records.empty()) throw std::runtime_error("no molecules in " + path);
  return records;
}

int run_coarsen(const std::string& input, double cutoff) {
  for (const MolRecord& rec : read_sdf(input)) {
    const MolecularGraph graph = build_graph(rec.graph.atoms, rec.graph.bonds, rec.conformer, cutoff);
    const CGMapping mapping = coarse_grain(graph, rec.conformer);
    const BeadGraph beads = build_bead_graph(mapping, cutoff);
    std::cout << "molecule " << (rec.name.empty() ? "(unnamed)" : rec.name) << "\n";
    std::cout << "atoms = " << graph.atom_count() << "\n";
    std::cout << "rotatable_bonds = " << mapping.severed_bonds.size() << "\n";
    std::cout << "beads = " << mapping.bead_count() << "\n";
    std::cout << "severed_bonds =";
    for (int bond : mapping.severed_bonds)
      std::cout << ' ' << graph.bonds[bond].begin << '-' << graph.bonds[bond].end;
    std::cout << "\n";
    std::cout << "order =";
    for (int b : order_beads(mapping, beads)) std::cout << ' ' << b;
    std::cout << "\n";
    for (int b = 0; b < mapping.bead_count(); ++b) {
      std::cout << "bead " << b << " =";
      for (int a : mapping.members[b]) std::cout << ' ' << a;
      std::cout << "\n";
    }
  }
  return 0;
}

struct TrainArgs {
  std::string config_path;
  std::vector<std::string> settings;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string resume;
  std::string write_corpus;
};

int run_train(const TrainArgs& args) {
  RunConfig config;
  config.seed = default_seed();
  if (!args.config_path.empty()) config = parse_config(read_file(args.config_path), config);
  for (const std::string& kv : args.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed) config.seed = *args.seed;

  const std::vector<ToyMolecule> corpus = make_corpus(config.corpus_size, config.seed, config.corpus);
  if (!args.write_corpus.empty()) {
    std::filesystem::create_directories(args.write_corpus);
    std::vector<MolRecord> refs, truths;
    for (const ToyMolecule& m : corpus) {
      refs.push_back({m.name, m.graph, m.ref});
      for (const Conformer& t : m.truths) truths.push_back({m.name, m.graph, t});
    }
    const std::filesystem::path dir(args.write_corpus);
    write_text((dir / "references.sdf").string(), write_sdf(refs));
    write_text((dir / "truths.sdf").string(), write_sdf(truths));
  }

  std::optional<Checkpoint> resume;
  if (!args.resume.empty()) resume = load_checkpoint(args.resume);
  const TrainResult result = train(config, corpus, &std::cout, resume ? &*resume : nullptr);
  if (!args.out.empty()) save_checkpoint(args.out, result.checkpoint);
  return 0;
}

struct GenerateArgs {
  std::string input;
  std::string checkpoint;
  std::string output;
  int samples = 1;
  std::optional<std::uint64_t> seed;
  std::string mode = "ar";
};

int run_generate(const GenerateArgs& args) {
  const std::vector<MolRecord> inputs = read_sdf(args.input);
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  const Model model = model_from_checkpoint(ck);
  const DecodeMode mode = args.mode == "ot" ? DecodeMode::OneShot : DecodeMode::Autoregressive;
  Rng rng(args.seed ? *args.seed : default_seed());
  std::vector<MolRecord> out;
  for (const MolRecord& rec : inputs) {
    const MolecularGraph graph =
        build_graph(rec.graph.atoms, rec.graph.bonds, rec.conformer, model.config().cutoff);
    const CGMapping mapping = coarse_grain(graph, rec.conformer);
    for (int k = 0; k < args.samples; ++k)
      out.push_back({rec.name, graph, model.generate(ck.params, graph, mapping, rec.conformer, rng, mode)});
  }
  const std::string text = write_sdf(out);
  if (args.output.empty()) std::cout << text;
  else write_text(args.output, text);
  return 0;
}

struct EvalArgs {
  std::string generated;
  std::string truth;
  double delta = 0.5;
  bool heavy = false;
  std::string histogram_path;
  int bins = 20;
};

// Records are grouped by molecule name; each group is scored on its own.
int run_eval(const EvalArgs& args) {
  const std::vector<MolRecord> gen = read_sdf(args.generated);
  const std::vector<MolRecord> truth = read_sdf(args.truth);
  std::vector<std::string> names;
  std::map<std::string, std::vector<const MolRecord*>> gen_by, truth_by;
  for (const MolRecord& r : truth) {
    if (truth_by[r.name].empty()) names.push_back(r.name);
    truth_by[r.name].push_back(&r);
  }
  for (const MolRecord& r : gen) gen_by[r.name].push_back(&r);

  std::vector<double> values;
  double cov_p = 0.0, cov_r = 0.0, amr_p = 0.0, amr_r = 0.0;
  for (const std::string& name : names) {
    const auto found = gen_by.find(name);
    if (found == gen_by.end())
      throw std::runtime_error("molecule '" + name + "' has no generated conformers in " + args.generated);
    const MolecularGraph& graph = truth_by[name].front()->graph;
    auto conformers = [&](const std::vector<const MolRecord*>& recs, const std::string& path) {
      std::vector<Conformer> out;
      for (const MolRecord* r : recs) {
        if (r->graph.atom_count() != graph.atom_count())
          throw std::runtime_error("atom count differs for '" + name + "' in " + path);
        out.push_back(r->conformer);
      }
      return out;
    };
    const std::vector<int> subset = args.heavy ? heavy_atoms(graph) : std::vector<int>{};
    const EnsembleReport report =
        ensemble_report(conformers(found->second, args.generated), conformers(truth_by[name], args.truth),
                        args.delta, subset);
    if (names.size() > 1) std::cout << "[" << (name.empty() ? "(unnamed)" : name) << "]\n";
    std::cout << format_report(report);
    values.insert(values.end(), report.rmsd_matrix.data(), report.rmsd_matrix.data() + report.rmsd_matrix.size());
    cov_p += report.cov_precision;
    cov_r += report.cov_recall;
    amr_p += report.amr_precision;
    amr_r += report.amr_recall;
  }
  if (names.size() > 1) {
    const double n = static_cast<double>(names.size());
    std::printf("[mean]\nmolecules = %zu\ncov_precision = %.2f\ncov_recall = %.2f\namr_precision = %.6f\n"
                "amr_recall = %.6f\n",
                names.size(), cov_p / n, cov_r / n, amr_p / n, amr_r / n);
  }
  if (!args.histogram_path.empty()) {
    const double hi = std::max(*std::max_element(values.begin(), values.end()), args.delta);
    write_text(args.histogram_path, format_histogram(histogram(values, args.bins, 0.0, hi)));
  }
  return 0;
}

int run_gradcheck(std::optional<std::uint64_t> seed) {
  const GradCheckReport report = gradcheck(seed ? *seed : default_seed());
  std::cout << format_gradcheck(report);
  return report.passed ? 0 : 1;
}

int run_equivcheck(std::optional<std::uint64_t> seed, int molecules, int motions) {
  const EquivCheckReport report = equivcheck(seed ? *seed : default_seed(), molecules, motions);
  std::cout << format_equivcheck(report);
  return report.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coarse-grained conformer generation toolkit"};
  app.require_subcommand(1);

  double coarsen_cutoff = 4.0;
  std::string coarsen_input;
  CLI::App* coarsen = app.add_subcommand("coarsen", "Print the bead partition of each molecule");
  coarsen->add_option("input", coarsen_input, "SDF file")->required();
  coarsen->add_option("--cutoff", coarsen_cutoff, "Auxiliary edge cutoff (angstrom)")->check(CLI::PositiveNumber);

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "Train on the synthetic corpus");
  train_cmd->add_option("--config", train_args.config_path, "key = value configuration file");
  train_cmd->add_option("--set", train_args.settings, "Override one setting (key=value)");
  train_cmd->add_option("--seed", train_args.seed, "Seed (default: CGCONF_SEED or 0)");
  train_cmd->add_option("-o,--out", train_args.out, "Final checkpoint path");
  train_cmd->add_option("--resume", train_args.resume, "Continue from a checkpoint");
  train_cmd->add_option("--write-corpus", train_args.write_corpus,
                        "Directory for references.sdf and truths.sdf of the corpus");

  GenerateArgs gen_args;
  CLI::App* generate = app.add_subcommand("generate", "Sample conformers for reference structures");
  generate->add_option("input", gen_args.input, "SDF of reference conformers")->required();
  generate->add_option("-c,--checkpoint", gen_args.checkpoint, "Trained checkpoint")->required();
  generate->add_option("-o,--out", gen_args.output, "Output SDF (default: stdout)");
  generate->add_option("-k,--samples", gen_args.samples, "Samples per molecule")->check(CLI::PositiveNumber);
  generate->add_option("--seed", gen_args.seed, "Seed (default: CGCONF_SEED or 0)");
  generate->add_option("--mode", gen_args.mode, "Decoder mode")->check(CLI::IsMember({"ar", "ot"}));

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "Coverage and AMR of a generated ensemble");
  eval->add_option("generated", eval_args.generated, "Generated SDF")->required();
  eval->add_option("truth", eval_args.truth, "Ground-truth SDF")->required();
  eval->add_option("--delta", eval_args.delta, "Coverage threshold (angstrom)")->check(CLI::PositiveNumber);
  eval->add_flag("--heavy", eval_args.heavy, "RMSD over heavy atoms only");
  eval->add_option("--histogram", eval_args.histogram_path, "Write RMSD histogram data here");
  eval->add_option("--bins", eval_args.bins, "Histogram bins")->check(CLI::PositiveNumber);

  std::optional<std::uint64_t> grad_seed;
  CLI::App* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  grad->add_option("--seed", grad_seed, "Seed (default: CGCONF_SEED or 0)");

  std::optional<std::uint64_t> equiv_seed;
  int molecules = 20;
  int motions = 10;
  CLI::App* equiv = app.add_subcommand("equivcheck", "Rotation and translation suite");
  equiv->add_option("--seed", equiv_seed, "Seed (default: CGCONF_SEED or 0)");
  equiv->add_option("--molecules", molecules, "Random molecules")->check(CLI::PositiveNumber);
  equiv->add_option("--motions", motions, "Rigid motions per molecule")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsageError;
  }

  try {
    if (coarsen->parsed()) return run_coarsen(coarsen_input, coarsen_cutoff);
    if (train_cmd->parsed()) return run_train(train_args);
    if (generate->parsed()) return run_generate(gen_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (grad->parsed()) return run_gradcheck(grad_seed);
    if (equiv->parsed()) return run_equivcheck(equiv_seed, molecules, motions);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kUsageError;
}
