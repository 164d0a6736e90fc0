#include "glab/cli.hpp"

#include "glab/config.hpp"
#include "glab/eval.hpp"
#include "glab/guide.hpp"
#include "glab/net.hpp"
#include "glab/sampler.hpp"
#include "glab/train.hpp"
#include "glab/util.hpp"
#include "glab/world_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <cstdio>
#include <iostream>
#include <map>

namespace glab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string checkpoint_name(std::int64_t iteration, const std::string& prefix = "checkpoint") {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%06lld.glabckpt", prefix.c_str(), static_cast<long long>(iteration));
  return buf;
}

std::string train_log_csv(const std::vector<train::LogRow>& rows) {
  std::string out = "iter,lr,loss_final,loss_inter,grad_norm,wallclock_s\n";
  char wall[32];
  for (const auto& r : rows) {
    std::snprintf(wall, sizeof wall, "%.3f", r.wallclock_s);
    out += std::to_string(r.iteration) + ',' + format_double(r.lr) + ',' + format_double(r.loss_final) + ',' +
           format_double(r.loss_inter) + ',' + format_double(r.grad_norm) + ',' + wall + '\n';
  }
  return out;
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

// Creates output_root/<hash prefix> and records the hashed configuration in it.
fs::path prepare_run_dir(const std::string& output_root, const json& hashed, bool force) {
  const std::string hash = config::config_hash(hashed);
  const fs::path dir = fs::path(output_root) / hash.substr(0, 16);
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw ValidationError("refusing to overwrite existing run directory " + dir.string() + " (use --force)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  json record = hashed;
  record["config_hash"] = hash;
  write_json(dir / "config.json", record);
  return dir;
}

struct Trained {
  train::TrainResult result;
  json checkpoints = json::array();
  std::map<std::int64_t, std::string> ids;  // iteration -> checkpoint id
};

Trained train_and_save(const train::TrainConfig& tc, const mixture::WorldModel& world, const fs::path& dir,
                       const std::string& prefix) {
  Trained t;
  t.result = train::run_training(tc, world);
  write_file(dir / (prefix == "checkpoint" ? "train.log.csv" : "train_" + prefix + ".log.csv"),
             train_log_csv(t.result.log));
  for (const auto& snap : t.result.snapshots) {
    const std::string file = checkpoint_name(snap.iteration, prefix);
    const std::string id = net::save_checkpoint(snap.ema, snap.iteration, dir / file);
    t.ids[snap.iteration] = id;
    t.checkpoints.push_back({{"iteration", snap.iteration}, {"file", file}, {"id", id}});
  }
  return t;
}

const net::NetParams& snapshot_at(const train::TrainResult& r, std::int64_t iteration) {
  for (const auto& s : r.snapshots) {
    if (s.iteration == iteration) return s.ema;
  }
  throw ContractError("no snapshot at iteration " + std::to_string(iteration));
}

struct PanelJob {
  std::string label;
  std::string title;
  guide::GuidanceSpec spec;
  const net::NetParams* main = nullptr;
  const net::NetParams* aux = nullptr;
  std::string checkpoint_id;
};

struct PanelResult {
  PanelJob job;
  sampler::SampleSet samples;
  eval::RunReport report;
};

std::vector<PanelResult> run_panels(const std::vector<PanelJob>& jobs, const sampler::SamplerConfig& sc,
                                    const mixture::WorldModel& world, const eval::WorldContours& contours,
                                    const std::string& hash, const fs::path& dir) {
  std::vector<PanelResult> out;
  const auto classes = sampler::round_robin_classes(sc.count);
  for (const auto& job : jobs) {
    const guide::GuidedDenoiser d({job.main, job.aux}, job.spec);
    PanelResult r{job, {}, {}};
    r.samples = sampler::heun_sample(
        [&](std::span<const Vec2> x, double s, std::span<const ClassId> c, std::span<Vec2> o) { d.denoise(x, s, c, o); },
        sc, classes);
    r.report = eval::evaluate(r.samples, world, contours);
    r.report.guidance = job.spec;
    r.report.checkpoint_id = job.checkpoint_id;
    r.report.seed = sc.seed;
    r.report.config_hash = hash;
    sampler::write_samples_csv(r.samples, dir / ("samples_" + job.label + ".csv"));
    std::cout << job.label << ": outlier_rate=" << format_double(r.report.outlier_rate)
              << " branch_coverage=" << format_double(r.report.branch_coverage)
              << " mean_loglik=" << format_double(r.report.mean_loglik) << "\n";
    out.push_back(std::move(r));
  }
  return out;
}

void write_panel_outputs(const std::vector<PanelResult>& panels, const config::EvalSection& ev,
                         const eval::WorldContours& contours, const std::string& hash, std::uint64_t seed,
                         const std::string& figure, const fs::path& dir) {
  std::string csv = eval::metrics_csv_header();
  json runs = json::array();
  std::vector<eval::Panel> views;
  for (const auto& p : panels) {
    csv += eval::metrics_csv_row(p.job.label, p.report);
    json r = eval::to_json(p.report);
    r["label"] = p.job.label;
    runs.push_back(std::move(r));
    views.push_back({p.job.title, p.samples.x, p.samples.cls});
  }
  write_file(dir / "metrics.csv", csv);
  write_json(dir / "report.json", {{"figure", figure}, {"config_hash", hash}, {"seed", seed}, {"runs", runs}});
  if (ev.figure) {
    eval::FigureSpec fs_spec;
    fs_spec.grid_resolution = ev.grid_resolution;
    fs_spec.quantile = ev.quantile;
    write_file(dir / ("figure_" + figure + ".svg"), eval::render_svg(fs_spec, contours, views));
  }
}

eval::WorldContours contours_for(const mixture::WorldModel& world, const config::EvalSection& ev) {
  mixture::GridSpec grid;
  grid.n = ev.grid_resolution;
  return eval::world_contours(world, grid, ev.quantile);
}

guide::GuidanceSpec make_spec(guide::Mode mode, double w, double w2 = 1.0) {
  guide::GuidanceSpec s;
  s.mode = mode;
  s.w = w;
  s.w2 = w2;
  return s;
}

// -- option registry ----------------------------------------------------------

class Command {
 public:
  // Registers --name on `sub` bound to `value`; several subcommands may share a name.
  template <class T>
  CLI::Option* opt(CLI::App* sub, const std::string& name, T& value, const std::string& help) {
    CLI::Option* o = sub->add_option(name, value, help);
    options_[name].push_back(o);
    return o;
  }
  CLI::Option* flag(CLI::App* sub, const std::string& name, bool& value, const std::string& help) {
    CLI::Option* o = sub->add_flag(name, value, help);
    options_[name].push_back(o);
    return o;
  }
  bool given(const std::string& name) const {
    const auto it = options_.find(name);
    if (it == options_.end()) return false;
    for (const auto* o : it->second) {
      if (o->count() > 0) return true;
    }
    return false;
  }

 private:
  std::map<std::string, std::vector<CLI::Option*>> options_;
};

struct Values {
  std::string config_path;
  std::string out;
  std::string profile;
  bool force = false;
  int threads = 0;

  std::uint64_t world_seed = 0;
  int depth = 6;
  int per_branch = 8;

  int iterations = 0;
  int batch = 0;
  int width = 64;
  std::uint64_t train_seed = 0;
  bool accel = false;
  double omega = 0.5;
  double lambda = 0.5;
  std::vector<int> snapshots;

  std::string checkpoint;
  std::string aux;
  std::string mode = "none";
  double w = 1.0;
  double w2 = 1.0;
  double sigma_low = 0.0;
  double sigma_high = 0.0;
  std::size_t count = 0;
  int steps = 32;
  std::uint64_t sample_seed = 0;
  bool trajectories = false;

  std::string samples;
  int grid = 1024;
  bool no_figure = false;

  std::string figure;
};

class Runner {
 public:
  Runner() : app_("glab: guided diffusion on a fractal 2-D toy world") { build(); }

  int run(int argc, const char* const* argv) {
    try {
      app_.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app_.exit(e);
      return code == 0 ? kExitOk : kExitValidation;
    }
    if (v_.threads > 0) omp_set_num_threads(v_.threads);
    try {
      if (world_->parsed()) return cmd_world();
      if (train_->parsed()) return cmd_train();
      if (sample_->parsed()) return cmd_sample();
      if (eval_->parsed()) return cmd_eval();
      if (sweep_->parsed()) return cmd_sweep();
      if (repro_->parsed()) return cmd_repro();
    } catch (const NumericalError& e) {
      std::cerr << "numerical error: " << e.what() << "\n";
      return kExitNumerical;
    } catch (const ValidationError& e) {
      std::cerr << "validation error: " << e.what() << "\n";
      return kExitValidation;
    } catch (const IoError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitValidation;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitFailure;
    }
    return kExitFailure;
  }

 private:
  void common(CLI::App* sub) {
    cmd_.opt(sub, "--config", v_.config_path, "JSON experiment config")->check(CLI::ExistingFile);
    cmd_.opt(sub, "--out", v_.out, "output root (run directories are named by config hash)");
    cmd_.opt(sub, "--profile", v_.profile, "ci or paper")->check(CLI::IsMember({"ci", "paper"}));
    cmd_.flag(sub, "--force", v_.force, "overwrite an existing run directory");
  }
  void world_opts(CLI::App* sub) {
    cmd_.opt(sub, "--world-seed", v_.world_seed, "world seed");
    cmd_.opt(sub, "--depth", v_.depth, "tree depth");
    cmd_.opt(sub, "--per-branch", v_.per_branch, "components per branch");
  }
  void train_opts(CLI::App* sub) {
    cmd_.opt(sub, "--iterations", v_.iterations, "training iterations");
    cmd_.opt(sub, "--batch", v_.batch, "batch size");
    cmd_.opt(sub, "--width", v_.width, "network width");
    cmd_.opt(sub, "--seed", v_.train_seed, "training seed");
    cmd_.flag(sub, "--accel", v_.accel, "train with the acceleration objective");
    cmd_.opt(sub, "--omega", v_.omega, "acceleration guidance weight");
    cmd_.opt(sub, "--lambda", v_.lambda, "intermediate loss weight");
    cmd_.opt(sub, "--snapshots", v_.snapshots, "extra checkpoint iterations")->delimiter(',');
  }
  void sample_opts(CLI::App* sub) {
    cmd_.opt(sub, "--count", v_.count, "number of samples");
    cmd_.opt(sub, "--steps", v_.steps, "Heun steps N");
    cmd_.opt(sub, "--sample-seed", v_.sample_seed, "sampler seed");
  }
  void guidance_opts(CLI::App* sub) {
    cmd_.opt(sub, "--mode", v_.mode, "none, cfg, autoguidance, ig, ig_cfg");
    cmd_.opt(sub, "--w", v_.w, "guidance weight");
    cmd_.opt(sub, "--w2", v_.w2, "CFG weight of ig_cfg");
    cmd_.opt(sub, "--sigma-low", v_.sigma_low, "guidance interval lower bound (exclusive)");
    cmd_.opt(sub, "--sigma-high", v_.sigma_high, "guidance interval upper bound (inclusive)");
  }
  void eval_opts(CLI::App* sub) {
    cmd_.opt(sub, "--grid", v_.grid, "density grid resolution");
    cmd_.flag(sub, "--no-figure", v_.no_figure, "skip the SVG figure");
  }

  void build() {
    app_.require_subcommand(1);
    app_.add_option("--threads", v_.threads, "cap on worker threads")->check(CLI::PositiveNumber);

    world_ = app_.add_subcommand("world", "build, standardize and dump the mixture world");
    common(world_);
    world_opts(world_);

    train_ = app_.add_subcommand("train", "train a model; writes checkpoints and train.log.csv");
    common(train_);
    world_opts(train_);
    train_opts(train_);

    sample_ = app_.add_subcommand("sample", "sample from a checkpoint under guidance");
    common(sample_);
    sample_opts(sample_);
    guidance_opts(sample_);
    cmd_.opt(sample_, "--checkpoint", v_.checkpoint, "checkpoint file")->required();
    cmd_.opt(sample_, "--aux", v_.aux, "autoguidance checkpoint file");
    cmd_.flag(sample_, "--trajectories", v_.trajectories, "also write trajectories.jsonl");

    eval_ = app_.add_subcommand("eval", "evaluate a samples.csv against the world");
    common(eval_);
    world_opts(eval_);
    eval_opts(eval_);
    cmd_.opt(eval_, "--samples", v_.samples, "samples.csv")->required();
    cmd_.opt(eval_, "--checkpoint", v_.checkpoint, "checkpoint the samples came from (recorded in the report)");

    sweep_ = app_.add_subcommand("sweep", "sample and evaluate every guidance setting of the config");
    common(sweep_);
    world_opts(sweep_);
    sample_opts(sweep_);
    eval_opts(sweep_);
    cmd_.opt(sweep_, "--checkpoint", v_.checkpoint, "checkpoint file")->required();
    cmd_.opt(sweep_, "--aux", v_.aux, "autoguidance checkpoint file");

    repro_ = app_.add_subcommand("repro", "reproduce a toy figure end to end");
    common(repro_);
    world_opts(repro_);
    train_opts(repro_);
    sample_opts(repro_);
    eval_opts(repro_);
    repro_->add_option("figure", v_.figure, "fig3 or fig4")->required()->check(CLI::IsMember({"fig3", "fig4"}));
  }

  config::ExperimentConfig resolve(bool repro) {
    config::ExperimentConfig cfg = v_.config_path.empty() ? config::ExperimentConfig{} : config::load(v_.config_path);
    if (!v_.profile.empty()) {
      config::apply_profile(cfg, config::profile_from_string(v_.profile));
    } else if (repro && v_.config_path.empty()) {
      config::apply_profile(cfg, config::Profile::Paper);
    }
    if (cmd_.given("--out")) cfg.output_dir = v_.out;
    if (cmd_.given("--world-seed")) cfg.world.seed = v_.world_seed;
    if (cmd_.given("--depth")) cfg.world.depth = v_.depth;
    if (cmd_.given("--per-branch")) cfg.world.per_branch = v_.per_branch;
    if (cmd_.given("--iterations")) cfg.train.iterations = v_.iterations;
    if (cmd_.given("--batch")) cfg.train.batch = v_.batch;
    if (cmd_.given("--width")) cfg.train.width = v_.width;
    if (cmd_.given("--seed")) cfg.train.seed = v_.train_seed;
    if (cmd_.given("--accel")) cfg.train.accel = v_.accel;
    if (cmd_.given("--omega")) cfg.train.omega = v_.omega;
    if (cmd_.given("--lambda")) cfg.train.lambda = v_.lambda;
    if (cmd_.given("--snapshots")) cfg.train.snapshot_iterations = v_.snapshots;
    if (cmd_.given("--count")) cfg.sample.count = v_.count;
    if (cmd_.given("--steps")) cfg.sample.steps = v_.steps;
    if (cmd_.given("--sample-seed")) cfg.sample.seed = v_.sample_seed;
    if (cmd_.given("--trajectories")) cfg.sample.record_trajectories = v_.trajectories;
    if (cmd_.given("--grid")) cfg.eval.grid_resolution = v_.grid;
    if (cmd_.given("--no-figure")) cfg.eval.figure = !v_.no_figure;
    if (cmd_.given("--mode") || cmd_.given("--w") || cmd_.given("--w2") || cmd_.given("--sigma-low") ||
        cmd_.given("--sigma-high") || cmd_.given("--aux")) {
      guide::GuidanceSpec s = cfg.guidance.empty() ? guide::GuidanceSpec{} : cfg.guidance.front();
      if (cmd_.given("--mode")) s.mode = guide::mode_from_string(v_.mode);
      if (cmd_.given("--w")) s.w = v_.w;
      if (cmd_.given("--w2")) s.w2 = v_.w2;
      if (cmd_.given("--sigma-low")) s.sigma_low = v_.sigma_low;
      if (cmd_.given("--sigma-high")) s.sigma_high = v_.sigma_high;
      if (cmd_.given("--aux")) s.aux_checkpoint = v_.aux;
      if (sample_->parsed()) {
        cfg.guidance = {s};
      } else if (cmd_.given("--aux")) {
        for (auto& g : cfg.guidance) {
          if (g.mode == guide::Mode::Autoguidance) g.aux_checkpoint = v_.aux;
        }
      }
    }
    cfg.validate();
    return cfg;
  }

  static net::Checkpoint load_checked(const std::string& path) {
    if (path.empty()) throw ValidationError("no checkpoint given");
    return net::load_checkpoint(path);
  }

  int cmd_world() {
    const auto cfg = resolve(false);
    const json hashed = {{"command", "world"}, {"world", config::to_json(cfg.world)}};
    const auto world = config::build_world(cfg.world);
    const fs::path dir = prepare_run_dir(cfg.output_dir, hashed, v_.force);
    mixture::save_world(world, dir / "world.json");
    if (cfg.eval.figure) {
      eval::FigureSpec spec;
      spec.grid_resolution = cfg.eval.grid_resolution;
      const std::vector<eval::Panel> panels{{"world", {}, {}}};
      write_file(dir / "world_preview.svg", eval::render_svg(spec, contours_for(world, cfg.eval), panels));
    }
    std::cout << "world: " << world.total_components() << " components\n" << dir.string() << "\n";
    return kExitOk;
  }

  int cmd_train() {
    const auto cfg = resolve(false);
    const json hashed = {{"command", "train"}, {"world", config::to_json(cfg.world)}, {"train", config::to_json(cfg.train)}};
    const auto world = config::build_world(cfg.world);
    const fs::path dir = prepare_run_dir(cfg.output_dir, hashed, v_.force);
    const Trained t = train_and_save(cfg.train, world, dir, "checkpoint");
    write_json(dir / "checkpoints.json", t.checkpoints);
    std::cout << "trained " << cfg.train.iterations << " iterations; " << t.checkpoints.size() << " checkpoint(s)\n"
              << dir.string() << "\n";
    return kExitOk;
  }

  int cmd_sample() {
    auto cfg = resolve(false);
    guide::GuidanceSpec spec = cfg.guidance.empty() ? guide::GuidanceSpec{} : cfg.guidance.front();
    const net::Checkpoint main = load_checked(v_.checkpoint);
    std::optional<net::Checkpoint> aux;
    json spec_json = guide::to_json(spec);
    if (spec.mode == guide::Mode::Autoguidance) {
      aux = load_checked(spec.aux_checkpoint);
      spec_json["aux_checkpoint"] = aux->id;
    }
    const json hashed = {{"command", "sample"},
                         {"checkpoint", main.id},
                         {"guidance", spec_json},
                         {"sample", config::to_json(cfg.sample)}};
    const fs::path dir = prepare_run_dir(cfg.output_dir, hashed, v_.force);
    const guide::GuidedDenoiser d({&main.params, aux ? &aux->params : nullptr}, spec);
    const auto classes = sampler::round_robin_classes(cfg.sample.count);
    const auto set = sampler::heun_sample(
        [&](std::span<const Vec2> x, double s, std::span<const ClassId> c, std::span<Vec2> o) { d.denoise(x, s, c, o); },
        cfg.sample, classes);
    const std::uint64_t expected = 2 * static_cast<std::uint64_t>(cfg.sample.steps) - 1;
    if (set.nfe != expected) {
      throw NumericalError("sampler NFE " + std::to_string(set.nfe) + " differs from 2N-1 = " + std::to_string(expected));
    }
    sampler::write_samples_csv(set, dir / "samples.csv");
    if (cfg.sample.record_trajectories) write_file(dir / "trajectories.jsonl", sampler::trajectories_jsonl(set));
    write_json(dir / "sample.json", {{"checkpoint_id", main.id},
                                     {"guidance", spec_json},
                                     {"nfe", set.nfe},
                                     {"count", set.x.size()},
                                     {"seed", cfg.sample.seed},
                                     {"config_hash", config::config_hash(hashed)}});
    std::cout << "sampled " << set.x.size() << " points, NFE per sample: " << set.nfe << "\n" << dir.string() << "\n";
    return kExitOk;
  }

  int cmd_eval() {
    const auto cfg = resolve(false);
    const std::string bytes = read_file(v_.samples);
    std::string ckpt_id;
    if (!v_.checkpoint.empty()) ckpt_id = load_checked(v_.checkpoint).id;
    const json hashed = {{"command", "eval"},
                         {"world", config::to_json(cfg.world)},
                         {"eval", config::to_json(cfg.eval)},
                         {"samples", sha256_hex(bytes)},
                         {"checkpoint", ckpt_id}};
    const auto world = config::build_world(cfg.world);
    const auto set = sampler::read_samples_csv(v_.samples);
    const fs::path dir = prepare_run_dir(cfg.output_dir, hashed, v_.force);
    const auto contours = contours_for(world, cfg.eval);
    eval::RunReport r = eval::evaluate(set, world, contours);
    r.checkpoint_id = ckpt_id;
    r.config_hash = config::config_hash(hashed);
    r.seed = cfg.world.seed;
    write_json(dir / "report.json", eval::to_json(r));
    if (cfg.eval.figure) {
      eval::FigureSpec spec;
      spec.grid_resolution = cfg.eval.grid_resolution;
      spec.quantile = cfg.eval.quantile;
      const std::vector<eval::Panel> panels{{"samples", set.x, set.cls}};
      write_file(dir / "figure_eval.svg", eval::render_svg(spec, contours, panels));
    }
    std::cout << "outlier_rate=" << format_double(r.outlier_rate) << " branch_coverage="
              << format_double(r.branch_coverage) << " mean_loglik=" << format_double(r.mean_loglik) << "\n"
              << dir.string() << "\n";
    return kExitOk;
  }

  int cmd_sweep() {
    auto cfg = resolve(false);
    if (cfg.guidance.empty()) {
      cfg.guidance = {make_spec(guide::Mode::None, 1.0), make_spec(guide::Mode::IG, 2.0),
                      make_spec(guide::Mode::CFG, 2.5), make_spec(guide::Mode::IG_CFG, 1.0, 1.5)};
    }
    const net::Checkpoint main = load_checked(v_.checkpoint);
    std::map<std::string, net::Checkpoint> aux;
    json specs = json::array();
    for (const auto& g : cfg.guidance) {
      json s = guide::to_json(g);
      if (g.mode == guide::Mode::Autoguidance) {
        if (!aux.count(g.aux_checkpoint)) aux.emplace(g.aux_checkpoint, load_checked(g.aux_checkpoint));
        s["aux_checkpoint"] = aux.at(g.aux_checkpoint).id;
      }
      specs.push_back(std::move(s));
    }
    const json hashed = {{"command", "sweep"},
                         {"checkpoint", main.id},
                         {"world", config::to_json(cfg.world)},
                         {"guidance", specs},
                         {"sample", config::to_json(cfg.sample)},
                         {"eval", config::to_json(cfg.eval)}};
    const auto world = config::build_world(cfg.world);
    const fs::path dir = prepare_run_dir(cfg.output_dir, hashed, v_.force);
    const std::string hash = config::config_hash(hashed);
    const auto contours = contours_for(world, cfg.eval);
    std::vector<PanelJob> jobs;
    for (const auto& g : cfg.guidance) {
      const net::NetParams* a = g.mode == guide::Mode::Autoguidance ? &aux.at(g.aux_checkpoint).params : nullptr;
      jobs.push_back({g.label(), g.label(), g, &main.params, a, main.id});
    }
    const auto panels = run_panels(jobs, cfg.sample, world, contours, hash, dir);
    write_panel_outputs(panels, cfg.eval, contours, hash, cfg.sample.seed, "sweep", dir);
    std::cout << dir.string() << "\n";
    return kExitOk;
  }

  int cmd_repro() {
    const auto cfg = resolve(true);
    const bool fig3 = v_.figure == "fig3";
    const json hashed = {{"command", "repro"},
                         {"figure", v_.figure},
                         {"world", config::to_json(cfg.world)},
                         {"train", config::to_json(cfg.train)},
                         {"sample", config::to_json(cfg.sample)},
                         {"eval", config::to_json(cfg.eval)}};
    const auto world = config::build_world(cfg.world);
    const fs::path dir = prepare_run_dir(cfg.output_dir, hashed, v_.force);
    const std::string hash = config::config_hash(hashed);
    const auto contours = contours_for(world, cfg.eval);
    json checkpoints;
    std::vector<PanelResult> panels;

    if (fig3) {
      train::TrainConfig tc = cfg.train;
      tc.accel = false;
      const Trained base = train_and_save(tc, world, dir, "checkpoint");
      checkpoints["baseline"] = base.checkpoints;
      const auto& model = base.result.snapshots.back();
      const std::string id = base.ids.at(model.iteration);
      panels = run_panels({{"unguided", "unguided", make_spec(guide::Mode::None, 1.0), &model.ema, nullptr, id},
                           {"cfg_w2.5", "CFG w=2.5", make_spec(guide::Mode::CFG, 2.5), &model.ema, nullptr, id},
                           {"ig_w2", "IG w=2", make_spec(guide::Mode::IG, 2.0), &model.ema, nullptr, id},
                           {"ig_cfg_w1_w1.5", "IG+CFG (1, 1.5)", make_spec(guide::Mode::IG_CFG, 1.0, 1.5), &model.ema,
                            nullptr, id}},
                          cfg.sample, world, contours, hash, dir);
    } else {
      const int long_iters = cfg.train.iterations;
      const int short_iters = std::max(1, long_iters / 4);
      train::TrainConfig base_cfg = cfg.train;
      base_cfg.accel = false;
      base_cfg.snapshot_iterations.push_back(short_iters);
      train::TrainConfig accel_cfg = cfg.train;
      accel_cfg.accel = true;
      accel_cfg.iterations = short_iters;
      accel_cfg.snapshot_iterations.clear();
      const Trained base = train_and_save(base_cfg, world, dir, "checkpoint");
      const Trained accel = train_and_save(accel_cfg, world, dir, "accel");
      checkpoints["baseline"] = base.checkpoints;
      checkpoints["accel"] = accel.checkpoints;
      const auto& short_model = snapshot_at(base.result, short_iters);
      const auto& long_model = snapshot_at(base.result, long_iters);
      const auto& accel_model = accel.result.snapshots.back().ema;
      const std::string s = std::to_string(short_iters), l = std::to_string(long_iters);
      panels = run_panels(
          {{"short_unguided", "baseline " + s + " it", make_spec(guide::Mode::None, 1.0), &short_model, nullptr,
            base.ids.at(short_iters)},
           {"long_unguided", "baseline " + l + " it", make_spec(guide::Mode::None, 1.0), &long_model, nullptr,
            base.ids.at(long_iters)},
           {"short_ig_w2", "baseline " + s + " it + IG w=2", make_spec(guide::Mode::IG, 2.0), &short_model, nullptr,
            base.ids.at(short_iters)},
           {"accel_unguided", "accel " + s + " it", make_spec(guide::Mode::None, 1.0), &accel_model, nullptr,
            accel.ids.at(short_iters)}},
          cfg.sample, world, contours, hash, dir);
    }
    write_json(dir / "checkpoints.json", checkpoints);
    write_panel_outputs(panels, cfg.eval, contours, hash, cfg.sample.seed, v_.figure, dir);
    std::cout << dir.string() << "\n";
    return kExitOk;
  }

  CLI::App app_;
  Command cmd_;
  Values v_;
  CLI::App* world_ = nullptr;
  CLI::App* train_ = nullptr;
  CLI::App* sample_ = nullptr;
  CLI::App* eval_ = nullptr;
  CLI::App* sweep_ = nullptr;
  CLI::App* repro_ = nullptr;
};

}  // namespace

int run_cli(int argc, const char* const* argv) {
  tune_allocator();
  Runner runner;
  return runner.run(argc, argv);
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"glab"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace glab::cli
