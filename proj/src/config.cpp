#include "glab/config.hpp"

#include "glab/util.hpp"

#include <cmath>
#include <set>

namespace glab::config {

using nlohmann::json;

namespace {

// Reads known keys of one section, rejecting unknown ones.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ValidationError("config: section '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError("config: bad value for '" + name_ + "." + key + "'");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ValidationError("config: unknown key '" + name_ + "." + key + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

json branch_json(const mixture::BranchParams& b) {
  return {{"root_length", b.root_length},
          {"length_ratio", b.length_ratio},
          {"length_jitter", b.length_jitter},
          {"split_angle_deg", b.split_angle_deg},
          {"angle_jitter_deg", b.angle_jitter_deg},
          {"weight_decay", b.weight_decay},
          {"longitudinal_div", b.longitudinal_div},
          {"transverse_ratio", b.transverse_ratio},
          {"min_std", b.min_std},
          {"root_origin", {b.root_origin.x(), b.root_origin.y()}},
          {"root_angle_deg", b.root_angle_deg}};
}

mixture::BranchParams branch_from(const json& j) {
  mixture::BranchParams b;
  Section s(j, "world.branch");
  s.get("root_length", b.root_length);
  s.get("length_ratio", b.length_ratio);
  s.get("length_jitter", b.length_jitter);
  s.get("split_angle_deg", b.split_angle_deg);
  s.get("angle_jitter_deg", b.angle_jitter_deg);
  s.get("weight_decay", b.weight_decay);
  s.get("longitudinal_div", b.longitudinal_div);
  s.get("transverse_ratio", b.transverse_ratio);
  s.get("min_std", b.min_std);
  std::array<double, 2> origin{b.root_origin.x(), b.root_origin.y()};
  s.get("root_origin", origin);
  b.root_origin = Vec2(origin[0], origin[1]);
  s.get("root_angle_deg", b.root_angle_deg);
  s.finish();
  return b;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (world.depth < 1) throw ValidationError("world: depth must be >= 1");
  if (world.per_branch < 1) throw ValidationError("world: per_branch must be >= 1");
  train.validate();
  sample.validate();
  for (const auto& g : guidance) g.validate();
  if (eval.grid_resolution < 256) throw ValidationError("eval: grid resolution must be >= 256");
  if (!(eval.quantile > 0.0 && eval.quantile < 1.0)) throw ValidationError("eval: quantile must be in (0, 1)");
}

Profile profile_from_string(std::string_view s) {
  if (s == "paper") return Profile::Paper;
  if (s == "ci") return Profile::CI;
  throw ValidationError("unknown profile '" + std::string(s) + "' (expected ci or paper)");
}

void apply_profile(ExperimentConfig& cfg, Profile p) {
  if (p == Profile::CI) {
    cfg.train.iterations = 1024;
    cfg.train.batch = 1024;
  } else {
    cfg.train.iterations = 4096;
    cfg.train.batch = 4096;
  }
  cfg.sample.count = 10000;
}

json to_json(const WorldSection& w) {
  return {{"seed", w.seed}, {"depth", w.depth}, {"per_branch", w.per_branch}, {"branch", branch_json(w.branch)}};
}

json to_json(const train::TrainConfig& t) {
  return {{"iterations", t.iterations},
          {"batch", t.batch},
          {"lr_ref", t.lr_ref},
          {"t_ref", t.t_ref},
          {"p_mean", t.p_mean},
          {"p_std", t.p_std},
          {"lambda", t.lambda},
          {"omega", t.omega},
          {"accel", t.accel},
          {"class_dropout", t.class_dropout},
          {"sigma_rel", t.sigma_rel},
          {"seed", t.seed},
          {"snapshot_iterations", t.snapshot_iterations},
          {"width", t.width},
          {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},
          {"adam_eps", t.adam_eps},
          {"score_matching", t.score_matching == train::ScoreMatching::Exact ? "exact" : "denoising"}};
}

json to_json(const sampler::SamplerConfig& s) {
  return {{"steps", s.steps},         {"sigma_min", s.sigma_min}, {"sigma_max", s.sigma_max},
          {"rho", s.rho},             {"count", s.count},         {"seed", s.seed},
          {"trajectories", s.record_trajectories}};
}

json to_json(const EvalSection& e) {
  return {{"grid_resolution", e.grid_resolution}, {"quantile", e.quantile}, {"figure", e.figure}};
}

json to_json(const ExperimentConfig& cfg) {
  json g = json::array();
  for (const auto& spec : cfg.guidance) g.push_back(guide::to_json(spec));
  return {{"world", to_json(cfg.world)},   {"train", to_json(cfg.train)}, {"sample", to_json(cfg.sample)},
          {"guidance", std::move(g)},      {"eval", to_json(cfg.eval)},   {"output_dir", cfg.output_dir}};
}

ExperimentConfig from_json(const json& j) {
  ExperimentConfig cfg;
  Section root(j, "config");
  if (const json* w = root.child("world")) {
    Section s(*w, "world");
    s.get("seed", cfg.world.seed);
    s.get("depth", cfg.world.depth);
    s.get("per_branch", cfg.world.per_branch);
    if (const json* b = s.child("branch")) cfg.world.branch = branch_from(*b);
    s.finish();
  }
  if (const json* t = root.child("train")) {
    auto& c = cfg.train;
    Section s(*t, "train");
    s.get("iterations", c.iterations);
    s.get("batch", c.batch);
    s.get("lr_ref", c.lr_ref);
    s.get("t_ref", c.t_ref);
    s.get("p_mean", c.p_mean);
    s.get("p_std", c.p_std);
    s.get("lambda", c.lambda);
    s.get("omega", c.omega);
    s.get("accel", c.accel);
    s.get("class_dropout", c.class_dropout);
    s.get("sigma_rel", c.sigma_rel);
    s.get("seed", c.seed);
    s.get("snapshot_iterations", c.snapshot_iterations);
    s.get("width", c.width);
    s.get("adam_beta1", c.adam_beta1);
    s.get("adam_beta2", c.adam_beta2);
    s.get("adam_eps", c.adam_eps);
    std::string sm = "exact";
    s.get("score_matching", sm);
    if (sm == "exact") {
      c.score_matching = train::ScoreMatching::Exact;
    } else if (sm == "denoising") {
      c.score_matching = train::ScoreMatching::Denoising;
    } else {
      throw ValidationError("config: train.score_matching must be 'exact' or 'denoising'");
    }
    s.finish();
  }
  if (const json* smp = root.child("sample")) {
    auto& c = cfg.sample;
    Section s(*smp, "sample");
    s.get("steps", c.steps);
    s.get("sigma_min", c.sigma_min);
    s.get("sigma_max", c.sigma_max);
    s.get("rho", c.rho);
    s.get("count", c.count);
    s.get("seed", c.seed);
    s.get("trajectories", c.record_trajectories);
    s.finish();
  }
  if (const json* g = root.child("guidance")) {
    if (!g->is_array()) throw ValidationError("config: guidance must be a list");
    for (const auto& item : *g) cfg.guidance.push_back(guide::spec_from_json(item));
  }
  if (const json* e = root.child("eval")) {
    Section s(*e, "eval");
    s.get("grid_resolution", cfg.eval.grid_resolution);
    s.get("quantile", cfg.eval.quantile);
    s.get("figure", cfg.eval.figure);
    s.finish();
  }
  root.get("output_dir", cfg.output_dir);
  root.finish();
  return cfg;
}

ExperimentConfig load(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("config: " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::string config_hash(const json& j) { return sha256_hex(j.dump()); }

mixture::WorldModel build_world(const WorldSection& w) {
  const auto world = mixture::standardize(mixture::build_fractal_mixture(w.seed, w.depth, w.per_branch, w.branch));
  mixture::validate(world);
  return world;
}

}  // namespace glab::config
