// End-to-end acceptance report: one PASS/FAIL line per criterion.
// Exits 0 when every criterion ran to a verdict, 1 on an unexpected error.
#include "glab/cli.hpp"
#include "glab/config.hpp"
#include "glab/eval.hpp"
#include "glab/guide.hpp"
#include "glab/mixture.hpp"
#include "glab/net.hpp"
#include "glab/sampler.hpp"
#include "glab/train.hpp"
#include "glab/util.hpp"

#include <unistd.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

using namespace glab;
namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

int passed = 0;

void report(int id, const std::string& name, const std::function<Verdict()>& body) {
  const auto start = std::chrono::steady_clock::now();
  const Verdict v = body();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  passed += v.pass ? 1 : 0;
  std::cout << (v.pass ? "PASS" : "FAIL") << " " << id << " " << name << ": " << v.detail << " [" << num(secs, 3)
            << " s]" << std::endl;
}

double rel(const Vec2& a, const Vec2& b, double floor) { return (a - b).norm() / std::max({a.norm(), b.norm(), floor}); }

mixture::WorldModel single_gaussian_world() {
  mixture::MixtureComponent c;
  c.weight = 1.0;
  c.cov = kSigmaData * kSigmaData * Mat2::Identity();
  std::array<mixture::ClassMixture, 2> classes;
  for (int k = 0; k < 2; ++k) {
    classes[k].id = static_cast<ClassId>(k);
    classes[k].components = {c};
    classes[k].branch_count = 1;
  }
  return mixture::WorldModel(classes, kSigmaData, 0);
}

sampler::BatchDenoiser batch_of(const guide::GuidedDenoiser& d) {
  return [&d](std::span<const Vec2> x, double s, std::span<const ClassId> c, std::span<Vec2> o) { d.denoise(x, s, c, o); };
}

guide::GuidanceSpec spec(guide::Mode m, double w, double w2 = 1.0, double lo = 0.0, double hi = kInf) {
  guide::GuidanceSpec s;
  s.mode = m;
  s.w = w;
  s.w2 = w2;
  s.sigma_low = lo;
  s.sigma_high = hi;
  return s;
}

// -- criterion 1 ---------------------------------------------------------------

Verdict score_oracle(const mixture::WorldModel& w) {
  Rng rng(101);
  std::uniform_real_distribution<double> logsig(std::log(0.01), std::log(5.0));
  const double h = 1e-5;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double sigma = std::exp(logsig(rng));
    const ClassId c = i % 2 ? ClassId::A : ClassId::B;
    const Vec2 x = mixture::sample_one(w, c, sigma, rng);
    Vec2 fd;
    for (int a = 0; a < 2; ++a) {
      Vec2 e = Vec2::Zero();
      e[a] = h;
      fd[a] = (mixture::log_density(w, c, x + e, sigma) - mixture::log_density(w, c, x - e, sigma)) / (2 * h);
    }
    worst = std::max(worst, rel(mixture::score(w, c, x, sigma).score, fd, 1.0));
  }
  return {worst < 1e-5, "max relative error " + num(worst) + " over 1000 probes"};
}

// -- criterion 2 ---------------------------------------------------------------

double gradient_error(const net::NetParams& p, const train::Batch& batch, std::uint64_t seed) {
  const auto lg = train::loss_and_gradient(p, batch, 0.5);
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, p.set().size() - 1);
  const double h = 1e-5;
  double worst = 0.0;
  for (int k = 0; k < 64; ++k) {
    const std::size_t i = pick(rng);
    auto plus = p, minus = p;
    plus.set().flat()[i] += h;
    minus.set().flat()[i] -= h;
    const double fd = (train::total_loss(plus, batch, 0.5) - train::total_loss(minus, batch, 0.5)) / (2 * h);
    worst = std::max(worst, std::abs(lg.grad[i] - fd) / std::max({std::abs(lg.grad[i]), std::abs(fd), 1e-6}));
  }
  return worst;
}

Verdict gradient_oracle(const mixture::WorldModel& w) {
  train::TrainConfig cfg;
  cfg.iterations = 100;
  cfg.batch = 256;
  const auto batch = train::draw_batch(w, cfg, 77, 256);
  const double at_init = gradient_error(train::initial_state(cfg).params, batch, 1);
  const auto trained = train::run_training(cfg, w);
  const double after = gradient_error(trained.state.params, batch, 2);
  return {at_init < 1e-4 && after < 1e-4,
          "max relative error " + num(at_init) + " at init, " + num(after) + " after 100 iterations (64 parameters)"};
}

// -- criterion 3 ---------------------------------------------------------------

Verdict init_exactness() {
  const auto w = single_gaussian_world();
  train::TrainConfig cfg;
  const auto p = train::initial_state(cfg).params;
  const auto batch = train::draw_batch(w, cfg, 5, 4096);
  const double loss = std::max(train::esm_loss(p, batch, net::Head::Final), train::esm_loss(p, batch, net::Head::Intermediate));

  const guide::GuidedDenoiser d({&p, nullptr}, {});
  sampler::SamplerConfig sc;
  sc.count = 100000;
  sc.seed = 3;
  const auto set = sampler::heun_sample(batch_of(d), sc, sampler::round_robin_classes(sc.count));
  Vec2 mean = Vec2::Zero();
  for (const auto& x : set.x) mean += x;
  mean /= static_cast<double>(set.x.size());
  Mat2 cov = Mat2::Zero();
  for (const auto& x : set.x) cov += (x - mean) * (x - mean).transpose();
  cov /= static_cast<double>(set.x.size() - 1);
  const double target = kSigmaData * kSigmaData;
  const double dev = std::max({std::abs(cov(0, 0) / target - 1.0), std::abs(cov(1, 1) / target - 1.0),
                               std::abs(cov(0, 1)) / target});
  return {loss <= 1e-12 && dev < 0.02,
          "init loss " + num(loss) + ", covariance deviation " + num(100 * dev, 3) + "% over 1e5 samples"};
}

// -- criterion 4 ---------------------------------------------------------------

Verdict sampler_order() {
  const double s2 = kSigmaData * kSigmaData;
  const Vec2 mu(0.3, -0.2);
  auto run = [&](int steps, std::uint64_t& nfe) {
    sampler::SamplerConfig c;
    c.steps = steps;
    c.count = 200;
    c.seed = 1;
    const auto set = sampler::heun_sample_serial(
        [&](const Vec2& x, double s, ClassId) { return Vec2(mu + s2 / (s2 + s * s) * (x - mu)); }, c,
        sampler::round_robin_classes(c.count));
    nfe = set.nfe;
    double err = 0.0;
    for (std::size_t j = 0; j < c.count; ++j) {
      const Vec2 x0 = sampler::initial_state(c.seed, j, set.t[0]);
      const Vec2 exact = mu + std::sqrt(s2 / (s2 + set.t[0] * set.t[0])) * (x0 - mu);
      err = std::max(err, (set.x[j] - exact).norm());
    }
    return err;
  };
  std::uint64_t n8 = 0, n16 = 0, n32 = 0;
  const double e8 = run(8, n8), e16 = run(16, n16), e32 = run(32, n32);
  const bool ok = e8 / e16 >= 3.0 && e16 / e32 >= 3.0 && n8 == 15 && n16 == 31 && n32 == 63;
  return {ok, "error ratios " + num(e8 / e16, 3) + ", " + num(e16 / e32, 3) + "; NFE " + std::to_string(n8) + "/" +
                  std::to_string(n16) + "/" + std::to_string(n32)};
}

// -- criterion 5 ---------------------------------------------------------------

Verdict guidance_identities(const net::NetParams& p) {
  sampler::SamplerConfig sc;
  sc.count = 2000;
  sc.seed = 4;
  const auto classes = sampler::round_robin_classes(sc.count);
  auto draw = [&](const guide::GuidanceSpec& s) {
    const guide::GuidedDenoiser d({&p, nullptr}, s);
    return sampler::heun_sample(batch_of(d), sc, classes).x;
  };
  const auto none = draw({});
  const bool ig_unit = draw(spec(guide::Mode::IG, 1.0)) == none;
  // Internal guidance with no interval logic at all, straight from the two heads.
  const sampler::BatchDenoiser raw = [&](std::span<const Vec2> x, double s, std::span<const ClassId> c,
                                         std::span<Vec2> o) {
    const std::vector<double> sig(x.size(), s);
    const auto h = net::evaluate_batch(p, x, sig, c, {.intermediate = true, .final = true});
    for (std::size_t j = 0; j < x.size(); ++j) {
      o[j] = guide::internal_guidance(x[j] + s * s * h.score_intermediate[j], x[j] + s * s * h.score_final[j], 2.0);
    }
  };
  const bool ungated = draw(spec(guide::Mode::IG, 2.0, 1.0, 0.0, kInf)) == sampler::heun_sample(raw, sc, classes).x;
  const bool excluded = draw(spec(guide::Mode::IG, 2.0, 1.0, sc.sigma_max, kInf)) == none &&
                        draw(spec(guide::Mode::CFG, 2.5, 1.0, sc.sigma_max, kInf)) == none;
  auto yes = [](bool b) { return b ? std::string("identical") : std::string("DIFFERENT"); };
  return {ig_unit && ungated && excluded,
          "IG w=1 vs unguided " + yes(ig_unit) + "; (0, inf) vs ungated " + yes(ungated) +
              "; interval above sigma_max vs unguided " + yes(excluded)};
}

// -- criteria 6 to 8 -------------------------------------------------------------

struct Bench {
  const mixture::WorldModel& world;
  const eval::WorldContours& contours;
  sampler::SamplerConfig sc;

  eval::RunReport run(const net::NetParams& p, const guide::GuidanceSpec& s) const {
    const guide::GuidedDenoiser d({&p, nullptr}, s);
    const auto set = sampler::heun_sample(batch_of(d), sc, sampler::round_robin_classes(sc.count));
    return eval::evaluate(set, world, contours);
  }
};

std::string metrics(const std::string& label, const eval::RunReport& r) {
  return label + " outliers " + num(r.outlier_rate) + " coverage " + num(r.branch_coverage);
}

Verdict guided_directions(const Bench& b, const net::NetParams& p) {
  const auto none = b.run(p, {});
  const auto ig = b.run(p, spec(guide::Mode::IG, 2.0));
  const auto cfg = b.run(p, spec(guide::Mode::CFG, 2.5));
  const auto both = b.run(p, spec(guide::Mode::IG_CFG, 1.0, 1.5));
  const bool a = none.outlier_rate > 0.03;
  const double ig_cut = 1.0 - ig.outlier_rate / none.outlier_rate;
  const double ig_drop = 1.0 - ig.branch_coverage / none.branch_coverage;
  const double cfg_drop = 1.0 - cfg.branch_coverage / none.branch_coverage;
  const bool bb = ig_cut >= 0.5 && ig_drop < 0.1;
  const bool c = cfg.outlier_rate < none.outlier_rate && cfg_drop > ig_drop;
  const bool d = both.outlier_rate <= std::min(ig.outlier_rate, cfg.outlier_rate) + 0.005;
  auto tag = [](bool ok) { return ok ? std::string("ok") : std::string("fail"); };
  return {a && bb && c && d,
          "(a) " + tag(a) + " (b) " + tag(bb) + " IG cuts outliers " + num(100 * ig_cut, 3) + "%, coverage -" +
              num(100 * ig_drop, 3) + "% (c) " + tag(c) + " CFG coverage -" + num(100 * cfg_drop, 3) + "% (d) " +
              tag(d) + "; " + metrics("unguided", none) + "; " + metrics("IG 2", ig) + "; " + metrics("CFG 2.5", cfg) +
              "; " + metrics("IG+CFG (1, 1.5)", both)};
}

Verdict acceleration(const Bench& b, const std::vector<net::NetParams>& base, const std::vector<net::NetParams>& accel) {
  int accel_wins = 0, ig_wins = 0;
  std::string detail;
  for (std::size_t s = 0; s < base.size(); ++s) {
    const auto plain = b.run(base[s], {});
    const auto ig = b.run(base[s], spec(guide::Mode::IG, 2.0));
    const auto fast = b.run(accel[s], {});
    accel_wins += fast.outlier_rate < plain.outlier_rate ? 1 : 0;
    ig_wins += ig.outlier_rate < plain.outlier_rate ? 1 : 0;
    detail += "; seed " + std::to_string(s) + ": baseline " + num(plain.outlier_rate) + ", accel " +
              num(fast.outlier_rate) + ", baseline + IG 2 " + num(ig.outlier_rate);
  }
  return {accel_wins >= 2 && ig_wins == 3,
          "accel beats baseline in " + std::to_string(accel_wins) + "/3, IG beats unguided in " +
              std::to_string(ig_wins) + "/3" + detail};
}

Verdict interval_direction(const Bench& b, const net::NetParams& p) {
  const auto full = b.run(p, spec(guide::Mode::IG, 2.5));
  const auto gated = b.run(p, spec(guide::Mode::IG, 2.5, 1.0, 0.3 * b.sc.sigma_max, b.sc.sigma_max));
  const bool ok = gated.outlier_rate <= full.outlier_rate + 0.005 && gated.branch_coverage >= full.branch_coverage - 0.02;
  return {ok, metrics("full interval", full) + "; " + metrics("(1.5, 5]", gated)};
}

// -- criterion 9 ---------------------------------------------------------------

int quiet_cli(const std::vector<std::string>& args) {
  std::ostringstream sink;
  auto* old = std::cout.rdbuf(sink.rdbuf());
  const int code = cli::run_cli(args);
  std::cout.rdbuf(old);
  return code;
}

// Training logs carry wall-clock seconds in their last column; blank it.
std::string masked(const fs::path& file) {
  std::string bytes = read_file(file);
  const std::string name = file.filename().string();
  if (name.rfind("train", 0) != 0 || file.extension() != ".csv") return bytes;
  std::istringstream in(bytes);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + ",*\n";
  return out;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = masked(e.path());
  }
  return files;
}

Verdict determinism() {
  const fs::path base = fs::temp_directory_path() / ("glab_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(base);
  const std::vector<std::string> small{"--depth", "3", "--iterations", "16", "--batch", "128", "--width", "16"};
  std::vector<std::map<std::string, std::string>> trees;
  for (const char* tag : {"a", "b"}) {
    const std::string root = (base / tag).string();
    const std::string ckpt_dir = root + "/ckpt";
    auto cmd = [&](std::vector<std::string> args, const std::vector<std::string>& extra = {}) {
      args.insert(args.end(), extra.begin(), extra.end());
      if (quiet_cli(args) != 0) throw std::runtime_error("command failed: " + args.front());
    };
    cmd({"world", "--out", root, "--depth", "3"});
    cmd({"train", "--out", ckpt_dir, "--snapshots", "8"}, small);
    const fs::path run = fs::directory_iterator(ckpt_dir)->path();
    const std::string ckpt = (run / "checkpoint_000016.glabckpt").string();
    const std::string aux = (run / "checkpoint_000008.glabckpt").string();
    cmd({"sample", "--out", root, "--checkpoint", ckpt, "--count", "500", "--mode", "ig", "--w", "2", "--trajectories"});
    cmd({"sample", "--out", root, "--checkpoint", ckpt, "--count", "500", "--mode", "autoguidance", "--w", "2",
         "--aux", aux});
    cmd({"sweep", "--out", root, "--checkpoint", ckpt, "--count", "300", "--depth", "3"});
    cmd({"repro", "fig4", "--out", root, "--count", "300"}, small);
    trees.push_back(snapshot(root));
  }
  // Samples are evaluated from the first root's files in both passes.
  for (const char* tag : {"a", "b"}) {
    const std::string root = (base / tag / "eval").string();
    for (const auto& e : fs::recursive_directory_iterator(base / "a")) {
      if (e.path().filename() != "samples.csv") continue;
      if (quiet_cli({"eval", "--out", root, "--samples", e.path().string(), "--depth", "3"}) != 0) {
        throw std::runtime_error("eval failed");
      }
    }
    trees[tag[0] == 'a' ? 0 : 1].merge(snapshot(root));
  }
  std::size_t differing = 0;
  for (const auto& [name, bytes] : trees[0]) {
    const auto it = trees[1].find(name);
    if (it == trees[1].end() || it->second != bytes) ++differing;
  }
  differing += trees[1].size() > trees[0].size() ? trees[1].size() - trees[0].size() : 0;
  fs::remove_all(base);
  return {differing == 0 && trees[0].size() > 20, std::to_string(trees[0].size()) + " files compared across two roots, " +
                                                      std::to_string(differing) + " differ (wall-clock column masked)"};
}

}  // namespace

int main() {
  tune_allocator();
  try {
    const auto world = config::build_world({});
    config::ExperimentConfig ci;
    config::apply_profile(ci, config::Profile::CI);

    report(1, "analytic score vs finite differences", [&] { return score_oracle(world); });
    report(2, "loss gradient vs finite differences", [&] { return gradient_oracle(world); });
    report(3, "init exactness on a data-scale Gaussian", [] { return init_exactness(); });
    report(4, "sampler convergence order and NFE", [] { return sampler_order(); });

    // CI-profile models: baselines and accelerated runs for three seeds.
    std::vector<net::NetParams> base, accel;
    const auto train_start = std::chrono::steady_clock::now();
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      train::TrainConfig tc = ci.train;
      tc.seed = seed;
      tc.accel = false;
      base.push_back(train::run_training(tc, world).snapshots.back().ema);
      tc.accel = true;
      accel.push_back(train::run_training(tc, world).snapshots.back().ema);
    }
    std::cout << "trained 6 models (" << ci.train.iterations << " iterations, batch " << ci.train.batch << ") in "
              << num(std::chrono::duration<double>(std::chrono::steady_clock::now() - train_start).count(), 4) << " s"
              << std::endl;

    report(5, "guidance identities", [&] { return guidance_identities(base[0]); });
    const auto contours = eval::world_contours(world);
    const Bench bench{world, contours, ci.sample};
    report(6, "guided sampling directions", [&] { return guided_directions(bench, base[0]); });
    report(7, "training acceleration", [&] { return acceleration(bench, base, accel); });
    report(8, "guidance interval direction", [&] { return interval_direction(bench, base[0]); });
    report(9, "command determinism", [] { return determinism(); });
  } catch (const std::exception& e) {
    std::cout << "ERROR " << e.what() << std::endl;
    return 1;
  }
  std::cout << "acceptance: " << passed << "/9 criteria pass" << std::endl;
  return 0;
}
