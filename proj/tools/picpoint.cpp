// Command-line entry point: data preparation, pre-training, export and evaluation.
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "picpoint/dataset.hpp"
#include "picpoint/evalsuite.hpp"
#include "picpoint/tensor_archive.hpp"
#include "picpoint/trainer.hpp"

namespace fs = std::filesystem;
using namespace picpoint;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& seed_help, const std::string& config_help,
                const std::string& out_help) {
  cmd->add_option("--seed", c.seed, seed_help);
  cmd->add_option("--config", c.config, config_help);
  cmd->add_option("--out", c.out, out_help);
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

bool env_deterministic() { return deterministic_from_env(); }

// ---------------------------------------------------------------- prepare-data

struct PrepareArgs {
  Common common;
  std::optional<std::string> source;
  std::optional<int> objects;
  std::optional<int> views;
  std::optional<int> points;
  std::optional<double> jitter;
  bool random_orientation = false;
};

int run_prepare(const PrepareArgs& a) {
  // Defaults, then the config file, then explicit flags.
  BuildOptions o;
  std::string source = "synthetic";
  int objects = 500;
  if (!a.common.config.empty()) {
    const nlohmann::json j = read_json(a.common.config);
    for (const auto& [key, v] : j.items()) {
      if (key == "source") source = v.get<std::string>();
      else if (key == "objects") objects = v.get<int>();
      else if (key == "views") o.views = v.get<int>();
      else if (key == "points") o.n_points = v.get<int>();
      else if (key == "jitter") o.jitter_sigma = v.get<double>();
      else if (key == "random_orientation") o.random_orientation = v.get<bool>();
      else if (key == "seed") o.seed = v.get<std::uint64_t>();
      else throw std::runtime_error(a.common.config + ": unknown key '" + key + "'");
    }
  }
  if (a.source) source = *a.source;
  if (a.objects) objects = *a.objects;
  if (a.views) o.views = *a.views;
  if (a.points) o.n_points = *a.points;
  if (a.jitter) o.jitter_sigma = *a.jitter;
  if (a.random_orientation) o.random_orientation = true;
  if (a.common.seed) o.seed = *a.common.seed;
  if (objects < 1 || o.views < 1 || o.n_points < 1) throw UsageError("--objects, --views and --points must be positive");
  const fs::path out = a.common.out.empty() ? fs::path("data") : fs::path(a.common.out);
  BuildReport rep;
  if (source == "synthetic") {
    rep = build_synthetic_dataset(out, objects, o);
  } else {
    if (!fs::is_directory(source)) throw std::runtime_error("source directory not found: " + source);
    rep = build_dataset_from_directory(source, out, o);
  }
  std::cout << "wrote " << rep.objects_written << " objects to " << out.string();
  if (rep.skipped) std::cout << " (skipped " << rep.skipped << ")";
  std::cout << "\n";
  return 0;
}

// ---------------------------------------------------------------- pretrain / resume

struct TrainArgs {
  Common common;
  std::string data;
  std::optional<long> max_steps;
  std::optional<long> checkpoint_every;
  std::optional<int> epochs;
  std::string precision;
  bool deterministic = false;
  std::string checkpoint;  // resume only
};

void apply_overrides(TrainConfig& c, const TrainArgs& a) {
  if (a.common.seed) c.seed = *a.common.seed;
  if (!a.common.out.empty()) c.out = a.common.out;
  if (!a.data.empty()) c.data = a.data;
  if (a.max_steps) c.max_steps = *a.max_steps;
  if (a.checkpoint_every) c.checkpoint_every = *a.checkpoint_every;
  if (a.epochs) c.epochs = *a.epochs;
  if (!a.precision.empty()) c.precision = a.precision;
  if (a.deterministic || env_deterministic()) c.deterministic = true;
  c.validate();
}

void print_summary(const Trainer& t, const std::vector<StepMetrics>& steps) {
  std::cout << "steps " << t.steps_done() << "/" << t.total_steps();
  if (!steps.empty()) std::cout << " final " << metrics_line(steps.back());
  std::cout << "\ncheckpoint " << (fs::path(t.config().out) / "checkpoint.pcta").string() << "\n";
}

int run_pretrain(const TrainArgs& a) {
  TrainConfig c = a.common.config.empty() ? TrainConfig{} : load_config(a.common.config);
  apply_overrides(c, a);
  if (c.data.empty()) throw std::runtime_error("no dataset: set \"data\" in the config or pass --data");
  apply_determinism(c.deterministic);
  Trainer t(c);
  const auto steps = t.run();
  print_summary(t, steps);
  return 0;
}

int run_resume(const TrainArgs& a) {
  // The stored config is the reference; a config file or --seed must agree
  // with it in every training field, and only run plumbing may change.
  TrainConfig c = a.common.config.empty() ? config_from_json(TensorArchive::read(a.checkpoint).metadata.at("config"))
                                          : load_config(a.common.config);
  if (a.common.seed) c.seed = *a.common.seed;
  if (!a.common.out.empty()) c.out = a.common.out;
  if (a.max_steps) c.max_steps = *a.max_steps;
  if (a.checkpoint_every) c.checkpoint_every = *a.checkpoint_every;
  if (a.deterministic || env_deterministic()) c.deterministic = true;
  apply_determinism(c.deterministic);
  Trainer t = Trainer::resume(a.checkpoint, c);
  const auto steps = t.run();
  print_summary(t, steps);
  return 0;
}

// ---------------------------------------------------------------- export / probe

struct ExportArgs {
  Common common;
  std::string checkpoint;
};

int run_export(const ExportArgs& a) {
  const fs::path out = a.common.out.empty() ? fs::path("backbone.pcta") : fs::path(a.common.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  export_backbone(a.checkpoint, out);
  std::cout << "wrote " << out.string() << " (" << fs::file_size(out) << " bytes)\n";
  return 0;
}

struct ProbeArgs {
  Common common;
  std::string backbone;
  std::string data;
  double C = 1.0;
  double tolerance = 1e-4;
  bool random_init = false;
};

int run_probe(const ProbeArgs& a) {
  if (a.backbone.empty() == !a.random_init) throw UsageError("pass exactly one of --backbone and --random-init");
  apply_determinism(env_deterministic());
  ProbeOptions o;
  o.C = a.C;
  o.tolerance = a.tolerance;
  if (a.common.seed) o.split_seed = *a.common.seed;
  std::string data = a.data;
  TrainConfig arch;
  if (!a.common.config.empty()) {
    arch = load_config(a.common.config);
    if (data.empty()) data = arch.data;
  }
  if (data.empty()) throw UsageError("--data is required");
  const Dataset ds = Dataset::load(data);
  ProbeReport rep;
  if (a.random_init) {
    if (a.common.seed) arch.seed = *a.common.seed;
    Rng init(mix_seed(arch.seed, 0));
    const Dgcnn<float> net(arch.backbone_config(), init);
    rep = linear_probe(extract_global_features(net, ds, arch.use_normals), o);
    rep.backbone_id = "random-init:" + std::to_string(arch.seed);
  } else {
    rep = linear_probe(extract_global_features(a.backbone, ds), o);
    rep.backbone_id = fs::path(a.backbone).filename().string();
  }
  const fs::path out = a.common.out.empty() ? fs::path("probe") : fs::path(a.common.out);
  fs::create_directories(out);
  write_text(out / "probe.json", rep.to_json().dump(2) + "\n");
  write_text(out / "confusion.csv", rep.confusion_csv());
  std::cout << "overall_accuracy " << rep.overall_accuracy << " (n_test " << rep.n_test << ")\n";
  return 0;
}

// ---------------------------------------------------------------- heatmap

struct HeatmapArgs {
  Common common;
  std::string checkpoint;
  std::string object;
  int view = 0;
  int point = 0;
  std::string data;
  double alpha = 0.5;
};

int run_heatmap(const HeatmapArgs& a) {
  apply_determinism(env_deterministic());
  const CorrespondenceModel model = CorrespondenceModel::from_checkpoint(a.checkpoint);
  std::string data = a.data.empty() ? model.config().data : a.data;
  if (!a.common.config.empty() && a.data.empty()) data = load_config(a.common.config).data;
  if (data.empty()) throw UsageError("--data is required");
  const Dataset ds = Dataset::load(data);
  const std::ptrdiff_t obj = ds.find(a.object);
  if (obj < 0) throw std::runtime_error("object '" + a.object + "' not found in " + data);
  const HeatmapResult r = model.heatmap(ds, static_cast<std::size_t>(obj), a.view, a.point);
  const fs::path out = a.common.out.empty() ? fs::path("heatmap") : fs::path(a.common.out);
  fs::create_directories(out);
  const std::string stem = a.object + "_view" + std::to_string(a.view) + "_pt" + std::to_string(a.point);
  write_text(out / (stem + ".json"), r.to_json().dump(2) + "\n");
  write_png(out / (stem + ".png"), heatmap_overlay(r, ds.load_view(static_cast<std::size_t>(obj), a.view), a.alpha));
  const PixelIndex m = r.argmin_patch();
  std::cout << "target (" << r.target_patch.i << "," << r.target_patch.j << ") argmin (" << m.i << "," << m.j
            << ") -> " << (out / (stem + ".png")).string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  Common common;
  std::string grid;
};

int run_ablate(const AblateArgs& a) {
  AblationGrid g = load_ablation_grid(a.grid);
  if (!a.common.config.empty()) g.base.update(read_json(a.common.config));
  if (a.common.seed) g.probe_seed = *a.common.seed;
  if (env_deterministic()) g.base["deterministic"] = true;
  g = ablation_grid_from_json({{"base", g.base},
                               {"seeds", g.seeds},
                               {"cells", [&] {
                                  nlohmann::json cells = nlohmann::json::array();
                                  for (const auto& c : g.cells) cells.push_back({{"name", c.name}, {"overrides", c.overrides}});
                                  return cells;
                                }()},
                               {"probe_seed", g.probe_seed},
                               {"include_random_init", g.include_random_init}});
  apply_determinism(g.base.value("deterministic", false));
  const fs::path out = a.common.out.empty() ? fs::path("ablation") : fs::path(a.common.out);
  const AblationTable t = ablation_matrix(g, out, [](const AblationRow& r) {
    std::cerr << r.cell << " seed " << r.seed << " accuracy " << r.accuracy << "\n";
  });
  for (const auto& [cell, med] : t.median) std::cout << cell << " median " << med << "\n";
  std::cout << "table " << (out / "ablation.json").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- validate-data

struct ValidateArgs {
  Common common;
  std::string data;
  bool skip_images = false;
};

int run_validate(const ValidateArgs& a) {
  std::string data = a.data;
  if (data.empty() && !a.common.config.empty()) data = load_config(a.common.config).data;
  if (data.empty()) throw UsageError("--data is required");
  const ValidationReport r = validate_dataset(data, !a.skip_images);
  nlohmann::ordered_json j{{"data", data}, {"objects_checked", r.objects_checked}, {"failures", r.failures}, {"ok", r.ok()}};
  if (!a.common.out.empty()) write_text(a.common.out, j.dump(2) + "\n");
  for (const auto& f : r.failures) std::cout << "FAIL " << f << "\n";
  std::cout << r.objects_checked << " objects checked, " << r.failures.size() << " failures\n";
  if (!r.ok()) throw std::runtime_error("dataset " + data + " failed validation (" + std::to_string(r.failures.size()) + " failures)");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"picpoint: image-to-point contrastive pre-training for point cloud backbones"};
  app.name("picpoint");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");

  PrepareArgs prep;
  auto* c_prep = app.add_subcommand("prepare-data", "Build a dataset (clouds, views, cameras, manifest)");
  add_common(c_prep, prep.common, "Dataset seed [0]", "JSON file with keys mirroring these flags",
             "Output dataset directory [data]");
  c_prep->add_option("--source", prep.source, "'synthetic' or a directory of point cloud files [synthetic]");
  c_prep->add_option("--objects", prep.objects, "Synthetic object count [500]");
  c_prep->add_option("--views", prep.views, "Rendered views per object [20]");
  c_prep->add_option("--points", prep.points, "Points sampled per object [1024]");
  c_prep->add_option("--jitter", prep.jitter, "Synthetic surface jitter sigma [0.01]");
  c_prep->add_flag("--random-orientation", prep.random_orientation, "Rotate each synthetic object randomly");

  TrainArgs train;
  auto* c_train = app.add_subcommand("pretrain", "Contrastive pre-training from a config");
  add_common(c_train, train.common, "Overrides the config seed", "Training config JSON (TrainConfig keys)",
             "Run directory (overrides the config)");
  c_train->add_option("--data", train.data, "Dataset directory (overrides the config)");
  c_train->add_option("--epochs", train.epochs, "Epochs (overrides the config)");
  c_train->add_option("--max-steps", train.max_steps, "Stop after this global step");
  c_train->add_option("--checkpoint-every", train.checkpoint_every, "Steps between periodic checkpoints");
  c_train->add_option("--precision", train.precision, "fp32 or fp64")->check(CLI::IsMember({"fp32", "fp64"}));
  c_train->add_flag("--deterministic", train.deterministic, "Single-threaded reproducible execution");

  TrainArgs resume;
  auto* c_resume = app.add_subcommand("resume", "Continue training from a checkpoint");
  add_common(c_resume, resume.common, "Must equal the stored seed", "Config that must match the stored one",
             "Run directory (default: the stored one)");
  c_resume->add_option("--checkpoint", resume.checkpoint, "Checkpoint file")->required();
  c_resume->add_option("--max-steps", resume.max_steps, "Stop after this global step");
  c_resume->add_option("--checkpoint-every", resume.checkpoint_every, "Steps between periodic checkpoints");
  c_resume->add_flag("--deterministic", resume.deterministic, "Single-threaded reproducible execution");

  ExportArgs exp;
  auto* c_export = app.add_subcommand("export", "Write the 3D backbone weights without heads");
  add_common(c_export, exp.common, "Unused (accepted by every command)", "Unused (accepted by every command)",
             "Output file [backbone.pcta]");
  c_export->add_option("--checkpoint", exp.checkpoint, "Checkpoint file")->required();

  ProbeArgs probe;
  auto* c_probe = app.add_subcommand("probe", "Linear SVM probe on pooled backbone features");
  add_common(c_probe, probe.common, "Split seed [0]", "Training config: data path and random-init architecture",
             "Report directory [probe]");
  c_probe->add_option("--backbone", probe.backbone, "Exported backbone or checkpoint");
  c_probe->add_flag("--random-init", probe.random_init, "Probe an untrained backbone initialized from --seed");
  c_probe->add_option("--data", probe.data, "Dataset directory");
  c_probe->add_option("--C", probe.C, "SVM regularization weight")->capture_default_str();
  c_probe->add_option("--tolerance", probe.tolerance, "Solver tolerance")->capture_default_str();

  HeatmapArgs heat;
  auto* c_heat = app.add_subcommand("heatmap", "Patch distance heatmap for one 3D point");
  add_common(c_heat, heat.common, "Unused (accepted by every command)", "Training config supplying the data path",
             "Output directory [heatmap]");
  c_heat->add_option("--checkpoint", heat.checkpoint, "Full checkpoint (heads required)")->required();
  c_heat->add_option("--object", heat.object, "Object id")->required();
  c_heat->add_option("--view", heat.view, "View index")->capture_default_str();
  c_heat->add_option("--point", heat.point, "Anchor point index")->capture_default_str();
  c_heat->add_option("--data", heat.data, "Dataset directory (default: the checkpoint's)");
  c_heat->add_option("--alpha", heat.alpha, "Overlay opacity")->capture_default_str()->check(CLI::Range(0.0, 1.0));

  AblateArgs abl;
  auto* c_abl = app.add_subcommand("ablate", "Pre-train and probe every cell of a config grid");
  add_common(c_abl, abl.common, "Probe split seed (overrides the grid)", "JSON merged into the grid's base config",
             "Output directory [ablation]");
  c_abl->add_option("--grid", abl.grid, "Grid JSON: base, seeds, cells")->required();

  ValidateArgs val;
  auto* c_val = app.add_subcommand("validate-data", "Re-run all dataset invariant checks");
  add_common(c_val, val.common, "Unused (accepted by every command)", "Training config supplying the data path",
             "Write a JSON report to this file");
  c_val->add_option("--data", val.data, "Dataset directory");
  c_val->add_flag("--skip-images", val.skip_images, "Do not decode view images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    const CLI::App* active = &app;
    for (const auto* sub : app.get_subcommands()) active = sub;
    std::cerr << active->help();
    return 1;
  }

  try {
    if (c_prep->parsed()) return run_prepare(prep);
    if (c_train->parsed()) return run_pretrain(train);
    if (c_resume->parsed()) return run_resume(resume);
    if (c_export->parsed()) return run_export(exp);
    if (c_probe->parsed()) return run_probe(probe);
    if (c_heat->parsed()) return run_heatmap(heat);
    if (c_abl->parsed()) return run_ablate(abl);
    if (c_val->parsed()) return run_validate(val);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: " << msg << "\n";
    return 2;
  }
  return 1;
}
