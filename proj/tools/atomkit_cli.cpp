// atomkit: data generation, training, evaluation, stability analysis and
// candidate curation from the command line.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "atomkit/config_io.hpp"
#include "atomkit/curation.hpp"
#include "atomkit/training.hpp"
#include "atomkit/trajectory.hpp"

namespace fs = std::filesystem;
using namespace atomkit;

namespace {

constexpr int kUsage = 2;
constexpr int kNumerical = 3;

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string content_hash(const fs::path& path) {
  const std::string bytes = read_bytes(path);
  const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(std::span<const std::uint8_t>(p, bytes.size()))));
  return buf;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path() && !fs::exists(path.parent_path()))
    throw IoError("output directory does not exist: " + path.parent_path().string());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

Json file_list(const std::vector<fs::path>& paths) {
  Json list = Json::array();
  for (const auto& p : paths) list.push_back(Json{{"path", p.generic_string()}, {"fnv1a64", content_hash(p)}});
  return list;
}

// No timestamps or timings: reruns with the same inputs give the same bytes.
void write_manifest(const fs::path& path, const std::string& command, std::uint64_t seed, Json config,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs,
                    Json results = Json::object()) {
  Json m;
  m["command"] = command;
  m["seed"] = seed;
  m["config"] = std::move(config);
  m["inputs"] = file_list(inputs);
  m["outputs"] = file_list(outputs);
  if (!results.empty()) m["results"] = std::move(results);
  write_json_file(path, m);
}

fs::path sibling(const fs::path& path, const std::string& suffix) {
  return path.parent_path() / (path.filename().string() + suffix);
}

// ---- gen-data ----------------------------------------------------------------

struct GenDataArgs {
  std::string config;
  std::optional<std::string> potential;
  std::optional<std::size_t> atoms, steps, substeps;
  std::optional<double> dt, stiffness, displacement, velocity;
  std::optional<std::uint64_t> seed;
  bool center = false;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& a) {
  ToyConfig c;
  std::vector<fs::path> inputs;
  if (!a.config.empty()) {
    c = toy_config_from_json(read_json_file(a.config), c);
    inputs.emplace_back(a.config);
  }
  if (a.potential) c.potential = parse_potential(*a.potential);
  if (a.atoms) c.n_atoms = *a.atoms;
  if (a.steps) c.steps = *a.steps;
  if (a.substeps) c.substeps = *a.substeps;
  if (a.dt) c.dt = *a.dt;
  if (a.stiffness) c.stiffness = *a.stiffness;
  if (a.displacement) c.displacement = *a.displacement;
  if (a.velocity) c.velocity = *a.velocity;
  if (a.center) c.center = true;
  if (a.seed) c.seed = *a.seed;
  if (c.steps < 2) throw ConfigError("--steps must be at least 2");
  if (c.n_atoms < 2) throw ConfigError("--atoms must be at least 2");
  if (!(c.dt > 0.0)) throw ConfigError("--dt must be positive");
  if (c.substeps == 0) throw ConfigError("--substeps must be positive");

  const Trajectory traj = generate_toy_trajectory(c);
  save_trajectory(traj, a.out);
  write_manifest(sibling(a.out, ".manifest.json"), "gen-data", c.seed, to_json(c), inputs, {a.out});
  std::printf("wrote %s: %zu atoms, %zu frames, dt %g\n", a.out.c_str(), traj.n_atoms(), traj.n_frames(), traj.dt);
  return 0;
}

// ---- train ---------------------------------------------------------------------

struct TrainArgs {
  std::string mode = "single";
  std::vector<std::string> data;
  std::string config;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::optional<std::size_t> epochs, batch_size, n_steps, train_frames, window_stride, val_stride;
  std::optional<double> horizon, lr, label_noise;
};

int cmd_train(const TrainArgs& a) {
  AtomModelConfig mc;
  TrainRunConfig rc;
  std::vector<fs::path> inputs;
  if (!a.config.empty()) {
    const Json j = read_json_file(a.config);
    if (!j.is_object()) throw ConfigError(a.config + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key() != "model" && it.key() != "train")
        throw ConfigError(a.config + ": unknown top-level key '" + it.key() + "' (model|train)");
    if (j.contains("model")) mc = model_config_from_json(j["model"], mc);
    if (j.contains("train")) rc = train_config_from_json(j["train"], rc);
    inputs.emplace_back(a.config);
  }
  if (a.epochs) rc.epochs = *a.epochs;
  if (a.batch_size) rc.batch_size = *a.batch_size;
  if (a.n_steps) rc.n_steps = *a.n_steps;
  if (a.train_frames) rc.train_frames = *a.train_frames;
  if (a.window_stride) rc.window_stride = *a.window_stride;
  if (a.val_stride) rc.val_stride = *a.val_stride;
  if (a.horizon) rc.horizon = *a.horizon;
  if (a.lr) rc.optimizer.lr = *a.lr;
  if (a.label_noise) rc.label_noise = *a.label_noise;
  rc.seed = a.seed;
  mc.validate();
  rc.validate();
  if (a.mode != "single" && a.mode != "multi") throw ConfigError("--mode must be single or multi");
  if (a.mode == "single" && a.data.size() != 1)
    throw ConfigError("--mode single takes exactly one --data file");

  std::vector<Trajectory> trajs;
  for (const auto& d : a.data) {
    trajs.push_back(load_trajectory(d));
    inputs.emplace_back(d);
  }
  if (!fs::is_directory(a.out_dir)) fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);

  AtomModel model(mc, rc.seed);
  const auto start = std::chrono::steady_clock::now();
  MetricsReport report;
  Json per_molecule = Json::array();
  if (a.mode == "multi") {
    if (trajs.size() == 1)
      std::fprintf(stderr, "warning: --mode multi with one dataset, training single-task\n");
    const MultitaskReport mr = train_multitask(trajs, model, rc);
    report = mr.overall;
    for (const auto& m : mr.molecules)
      per_molecule.push_back(Json{{"name", m.name}, {"s2s", m.s2s}, {"s2t", m.s2t},
                                  {"static_s2s", m.static_s2s}, {"static_s2t", m.static_s2t}});
  } else {
    report = train_single_task(trajs[0], model, rc);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const fs::path ckpt = dir / "model.ckpt", sidecar = dir / "model.json", metrics = dir / "metrics.csv";
  save_checkpoint(ckpt, model.named_parameters());
  write_json_file(sidecar, to_json(mc));
  {
    auto out = open_output(metrics);
    write_metrics_csv(out, report);
  }
  Json config{{"mode", a.mode}, {"model", to_json(mc)}, {"train", to_json(rc)}};
  Json results{{"s2s", report.s2s},
               {"s2t", report.s2t},
               {"static_s2s", report.static_s2s},
               {"static_s2t", report.static_s2t},
               {"best_epoch", report.best_epoch + 1},
               {"steps", report.steps},
               {"train_loss", report.train_loss},
               {"val_s2s", report.val_s2s},
               {"val_s2t", report.val_s2t},
               {"checkpoint", ckpt.generic_string()}};
  if (!per_molecule.empty()) results["molecules"] = per_molecule;
  write_manifest(dir / "manifest.json", "train", rc.seed, config, inputs, {ckpt, sidecar, metrics}, results);
  std::printf("final S2S %.6g S2T %.6g (static S2S %.6g S2T %.6g), best epoch %zu\n", report.s2s, report.s2t,
              report.static_s2s, report.static_s2t, report.best_epoch + 1);
  std::fprintf(stderr, "trained in %.1f s\n", seconds);
  return 0;
}

// ---- eval ------------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, model_config, data, sweep = "none", values, out = "eval.csv";
  double horizon = 3000.0;
  std::size_t n_steps = 8, begin = 0, end = 0, stride = 1, batch_size = 64;
};

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--values: '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ConfigError("--values is empty");
  return out;
}

int cmd_eval(const EvalArgs& a) {
  const fs::path ckpt(a.ckpt);
  const fs::path sidecar = a.model_config.empty() ? fs::path(ckpt).replace_extension(".json") : fs::path(a.model_config);
  const AtomModelConfig mc = model_config_from_json(read_json_file(sidecar));
  AtomModel model(mc, 0);
  model.load_parameters(load_checkpoint(ckpt));
  const Trajectory traj = load_trajectory(a.data);
  const std::size_t end = a.end == 0 ? traj.n_frames() : a.end;
  if (a.begin >= end || end > traj.n_frames())
    throw ConfigError("frame range [" + std::to_string(a.begin) + ", " + std::to_string(end) + ") is outside the trajectory");
  const std::size_t threads = worker_threads();

  std::vector<SweepRow> rows;
  if (a.sweep == "none") {
    const std::size_t p[1] = {a.n_steps};
    rows = sweep_steps(model, traj, p, a.horizon, a.begin, end, a.stride, a.batch_size, threads);
  } else if (a.sweep == "P") {
    std::vector<std::size_t> steps;
    for (double v : parse_list(a.values.empty() ? "4,8,16" : a.values)) {
      if (!(v >= 1.0) || v != static_cast<double>(static_cast<std::size_t>(v)))
        throw ConfigError("--values for a P sweep must be positive integers");
      steps.push_back(static_cast<std::size_t>(v));
    }
    rows = sweep_steps(model, traj, steps, a.horizon, a.begin, end, a.stride, a.batch_size, threads);
  } else if (a.sweep == "deltaT") {
    if (a.values.empty()) throw ConfigError("--sweep deltaT needs --values");
    const auto horizons = parse_list(a.values);
    rows = sweep_horizons(model, traj, horizons, a.n_steps, a.begin, end, a.stride, a.batch_size, threads);
  } else {
    throw ConfigError("--sweep must be none, deltaT or P");
  }
  {
    auto out = open_output(a.out);
    write_sweep_csv(out, rows);
  }
  for (const auto& r : rows)
    std::printf("horizon %g P %zu: S2S %.6g S2T %.6g (static S2S %.6g S2T %.6g)\n", r.horizon, r.n_steps,
                r.result.s2s, r.result.s2t, r.result.static_s2s, r.result.static_s2t);
  Json config{{"sweep", a.sweep}, {"values", a.values},   {"horizon", a.horizon}, {"n_steps", a.n_steps},
              {"begin", a.begin}, {"end", end},           {"stride", a.stride},   {"batch_size", a.batch_size},
              {"model", to_json(mc)}};
  write_manifest(sibling(a.out, ".manifest.json"), "eval", 0, config, {ckpt, sidecar, a.data}, {a.out});
  return 0;
}

// ---- analyze ---------------------------------------------------------------------

int cmd_analyze(const std::vector<std::string>& data, const std::string& out_path) {
  std::vector<std::pair<std::string, StabilityReport>> rows;
  std::vector<fs::path> inputs;
  for (const auto& d : data) {
    const Trajectory traj = load_trajectory(d);
    rows.emplace_back(traj.name, stability_metrics(traj));
    inputs.emplace_back(d);
  }
  {
    auto out = open_output(out_path);
    write_stability_csv(out, rows);
  }
  write_manifest(sibling(out_path, ".manifest.json"), "analyze", 0, Json::object(), inputs, {out_path});
  for (const auto& [name, r] : rows)
    std::printf("%s: com drift %.6g, per-step motion %.6g\n", name.c_str(), r.com_drift, r.per_step_motion);
  return 0;
}

// ---- curate ----------------------------------------------------------------------

struct CurateArgs {
  std::string seeds, pool, config, preset, out = "accepted.csv", rejections;
  std::optional<std::size_t> max_accepted;
};

std::vector<SmilesEntry> read_smiles_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read_smiles(in);
}

int cmd_curate(const CurateArgs& a) {
  SelectionConfig cfg;
  std::vector<fs::path> inputs{a.seeds, a.pool};
  if (!a.preset.empty()) cfg = selection_preset(a.preset);
  if (!a.config.empty()) {
    cfg = selection_config_from_json(read_json_file(a.config), cfg);
    inputs.emplace_back(a.config);
  }
  if (a.max_accepted) cfg.max_accepted = *a.max_accepted;
  cfg.validate();
  const auto seeds = read_smiles_file(a.seeds);
  const auto pool = read_smiles_file(a.pool);
  const SelectionResult result = select_candidates(seeds, pool, cfg);
  const fs::path rejections = a.rejections.empty() ? sibling(a.out, ".rejections.csv") : fs::path(a.rejections);
  {
    auto out = open_output(a.out);
    write_selection_csv(out, result);
    auto log = open_output(rejections);
    write_rejection_log(log, result);
  }
  write_manifest(sibling(a.out, ".manifest.json"), "curate", 0, to_json(cfg), inputs, {a.out, rejections},
                 Json{{"accepted", result.accepted.size()}, {"rejected", result.rejected.size()}});
  std::printf("accepted %zu of %zu candidates\n", result.accepted.size(), pool.size());
  return 0;
}

// ---- fingerprint -----------------------------------------------------------------

struct FingerprintArgs {
  std::vector<std::string> smiles;
  std::string input, out = "fingerprints.csv";
  std::size_t radius = 2, nbits = 2048;
  bool pairwise = false;
};

int cmd_fingerprint(const FingerprintArgs& a) {
  std::vector<SmilesEntry> entries;
  std::vector<fs::path> inputs;
  for (const auto& s : a.smiles) entries.push_back({s, ""});
  if (!a.input.empty()) {
    for (auto& e : read_smiles_file(a.input)) entries.push_back(std::move(e));
    inputs.emplace_back(a.input);
  }
  if (entries.empty()) throw ConfigError("give --smiles or --input");
  if (a.radius == 0 || a.nbits == 0) throw ConfigError("--radius and --nbits must be positive");
  std::vector<Fingerprint> fps;
  for (const auto& e : entries) fps.push_back(morgan_fingerprint(parse_smiles(e.smiles), a.radius, a.nbits));
  {
    auto out = open_output(a.out);
    if (a.pairwise) {
      out << "i,j,smiles_i,smiles_j,tanimoto\n";
      for (std::size_t i = 0; i < fps.size(); ++i)
        for (std::size_t j = i + 1; j < fps.size(); ++j) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.12f", tanimoto(fps[i], fps[j]));
          out << i << ',' << j << ',' << entries[i].smiles << ',' << entries[j].smiles << ',' << buf << '\n';
        }
    } else {
      out << "smiles,popcount,bits\n";
      for (std::size_t i = 0; i < fps.size(); ++i) {
        out << entries[i].smiles << ',' << fps[i].popcount() << ',';
        bool first = true;
        for (std::size_t b = 0; b < fps[i].size(); ++b)
          if (fps[i].test(b)) {
            out << (first ? "" : " ") << b;
            first = false;
          }
        out << '\n';
      }
    }
  }
  Json config{{"radius", a.radius}, {"nbits", a.nbits}, {"pairwise", a.pairwise}, {"smiles", a.smiles}};
  write_manifest(sibling(a.out, ".manifest.json"), "fingerprint", 0, config, inputs, {a.out});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"atomkit: trajectory operator training and molecule curation"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Integrate a toy molecule and write an ATRJ trajectory");
  g->add_option("--config", gen.config, "JSON toy config; flags override it")->check(CLI::ExistingFile);
  g->add_option("--potential", gen.potential, "harmonic or pairwise_spring");
  g->add_option("--atoms", gen.atoms, "Number of atoms");
  g->add_option("--steps", gen.steps, "Frames to write");
  g->add_option("--dt", gen.dt, "Time between frames (fs)");
  g->add_option("--substeps", gen.substeps, "Integrator steps per frame");
  g->add_option("--stiffness", gen.stiffness, "Spring constant");
  g->add_option("--displacement", gen.displacement, "Initial displacement std (Angstrom)");
  g->add_option("--velocity", gen.velocity, "Initial velocity std (Angstrom/fs)");
  g->add_option("--seed", gen.seed, "Random seed (default: config seed, else 0)");
  g->add_flag("--center", gen.center, "Centre the equilibrium sites on the origin");
  g->add_option("--out", gen.out, "Output ATRJ path")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on one or more trajectories");
  t->add_option("--mode", tr.mode, "single or multi")->check(CLI::IsMember({"single", "multi"}));
  t->add_option("--data", tr.data, "ATRJ trajectory (repeat for multitask)")->required()->check(CLI::ExistingFile);
  t->add_option("--config", tr.config, "JSON with optional 'model' and 'train' objects")->check(CLI::ExistingFile);
  t->add_option("--out-dir", tr.out_dir, "Directory for checkpoint, metrics and manifest")->required();
  t->add_option("--seed", tr.seed, "Random seed");
  t->add_option("--epochs", tr.epochs);
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--n-steps", tr.n_steps, "Query timesteps P");
  t->add_option("--horizon", tr.horizon, "Horizon Delta T");
  t->add_option("--lr", tr.lr);
  t->add_option("--label-noise", tr.label_noise);
  t->add_option("--train-frames", tr.train_frames);
  t->add_option("--window-stride", tr.window_stride);
  t->add_option("--val-stride", tr.val_stride);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint, optionally sweeping P or Delta T");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  e->add_option("--model-config", ev.model_config, "Model JSON (default: checkpoint path with .json)");
  e->add_option("--data", ev.data, "ATRJ trajectory")->required()->check(CLI::ExistingFile);
  e->add_option("--horizon", ev.horizon, "Horizon Delta T");
  e->add_option("--n-steps", ev.n_steps, "Query timesteps P");
  e->add_option("--begin", ev.begin, "First frame of the evaluated range");
  e->add_option("--end", ev.end, "End frame (exclusive, 0 = last)");
  e->add_option("--stride", ev.stride, "Window stride");
  e->add_option("--batch-size", ev.batch_size);
  e->add_option("--sweep", ev.sweep, "none, deltaT or P")->check(CLI::IsMember({"none", "deltaT", "P"}));
  e->add_option("--values", ev.values, "Comma-separated sweep values");
  e->add_option("--out", ev.out, "Output CSV");

  std::vector<std::string> an_data;
  std::string an_out = "stability.csv";
  auto* an = app.add_subcommand("analyze", "Centre-of-mass drift and per-step motion of trajectories");
  an->add_option("--data", an_data, "ATRJ trajectories")->required()->check(CLI::ExistingFile);
  an->add_option("--out", an_out, "Output CSV");

  CurateArgs cu;
  auto* c = app.add_subcommand("curate", "Screen a SMILES pool against seed molecules");
  c->add_option("--seeds", cu.seeds, "Seed SMILES file")->required()->check(CLI::ExistingFile);
  c->add_option("--pool", cu.pool, "Candidate SMILES file")->required()->check(CLI::ExistingFile);
  c->add_option("--config", cu.config, "JSON selection config")->check(CLI::ExistingFile);
  c->add_option("--preset", cu.preset, "Accepted-similarity preset: main (0.80) or strict (0.2)")
      ->check(CLI::IsMember({"main", "strict"}));
  c->add_option("--max-accepted", cu.max_accepted, "Stop after this many acceptances");
  c->add_option("--out", cu.out, "Accepted CSV");
  c->add_option("--rejections", cu.rejections, "Rejection log (default: <out>.rejections.csv)");

  FingerprintArgs fp;
  auto* f = app.add_subcommand("fingerprint", "Circular fingerprints and Tanimoto similarities");
  f->add_option("--smiles", fp.smiles, "SMILES string (repeatable)");
  f->add_option("--input", fp.input, "SMILES file")->check(CLI::ExistingFile);
  f->add_option("--radius", fp.radius);
  f->add_option("--nbits", fp.nbits);
  f->add_flag("--pairwise", fp.pairwise, "Emit pairwise Tanimoto similarities instead of bits");
  f->add_option("--out", fp.out, "Output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kUsage;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*an) return cmd_analyze(an_data, an_out);
    if (*c) return cmd_curate(cu);
    if (*f) return cmd_fingerprint(fp);
  } catch (const NumericalError& ex) {
    std::fprintf(stderr, "numerical failure: %s\n", ex.what());
    return kNumerical;
  } catch (const ConfigError& ex) {
    std::fprintf(stderr, "config error: %s\n", ex.what());
    return kUsage;
  } catch (const SmilesError& ex) {
    std::fprintf(stderr, "SMILES error: %s\n", ex.what());
    return kUsage;
  } catch (const FormatError& ex) {
    std::fprintf(stderr, "format error: %s\n", ex.what());
    return kUsage;
  } catch (const IoError& ex) {
    std::fprintf(stderr, "io error: %s\n", ex.what());
    return kUsage;
  } catch (const ContractError& ex) {
    std::fprintf(stderr, "invalid arguments: %s\n", ex.what());
    return kUsage;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return kUsage;
}
