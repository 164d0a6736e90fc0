#include "glab/train.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <Eigen/LU>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

using namespace glab;
using glab::testing::default_world;
using glab::testing::rel_err;
using glab::testing::single_gaussian_world;
using glab::testing::trained_params;

namespace {

// Direct component sum for the class score; the brute-force oracle.
Vec2 naive_score(const mixture::WorldModel& world, ClassId c, const Vec2& x, double sigma) {
  double p = 0.0;
  Vec2 g = Vec2::Zero();
  for (const auto& comp : world.mixture(c).components) {
    const Mat2 s = comp.cov + sigma * sigma * Mat2::Identity();
    const Mat2 inv = s.inverse();
    const Vec2 d = x - comp.mean;
    const double n = comp.weight * std::exp(-0.5 * d.dot(inv * d)) / (2.0 * std::numbers::pi * std::sqrt(s.determinant()));
    p += n;
    g -= n * (inv * d);
  }
  return g / p;
}

double bisect_gamma(double sigma_rel) {
  auto f = [&](double g) { return (g + 1.0) / ((g + 2.0) * (g + 2.0) * (g + 3.0)) - sigma_rel * sigma_rel; };
  double lo = 1.0, hi = 100.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

train::Batch fixed_sigma_batch(const mixture::WorldModel& world, double sigma, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec2> x;
  std::vector<double> s(n, sigma);
  std::vector<ClassId> c;
  for (std::size_t j = 0; j < n; ++j) {
    const ClassId cls = j % 2 ? ClassId::B : ClassId::A;
    x.push_back(mixture::sample_one(world, cls, sigma, rng));
    c.push_back(cls);
  }
  return train::make_batch(world, std::move(x), std::move(s), std::move(c));
}

train::TrainConfig small_config(int iterations, int batch) {
  train::TrainConfig cfg;
  cfg.iterations = iterations;
  cfg.batch = batch;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("noise level distribution") {
    train::TrainConfig cfg;
    CHECK(train::noise_level_from_normal(0.0, cfg) == doctest::Approx(0.10026).epsilon(1e-4));
    CHECK(train::noise_level_from_normal(1.0, cfg) == doctest::Approx(0.44933).epsilon(1e-4));
    Rng rng(1);
    double m = 0.0, m2 = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
      const double l = std::log(train::sample_noise_level(rng, cfg));
      m += l;
      m2 += l * l;
    }
    m /= n;
    const double sd = std::sqrt(m2 / n - m * m);
    CHECK(std::abs(m + 2.3) < 0.005);
    CHECK(std::abs(sd - 1.5) < 0.005);
  }

  TEST_CASE("config validation") {
    train::TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    auto bad = [](auto mutate) {
      train::TrainConfig c;
      mutate(c);
      CHECK_THROWS_AS(c.validate(), ValidationError);
    };
    bad([](auto& c) { c.lambda = -0.1; });
    bad([](auto& c) { c.omega = -0.1; });
    bad([](auto& c) { c.class_dropout = 1.0; });
    bad([](auto& c) { c.batch = 0; });
    bad([](auto& c) { c.snapshot_iterations = {5000}; });
    bad([](auto& c) { c.snapshot_iterations = {0}; });
  }

  TEST_CASE("initial network is exact on a data-scale Gaussian") {
    const auto w = single_gaussian_world();
    const auto p = net::NetParams::initialize(3);
    train::TrainConfig cfg;
    const auto batch = train::draw_batch(w, cfg, 11, 1024);
    CHECK(std::count(batch.cls.begin(), batch.cls.end(), ClassId::Null) > 0);
    CHECK(train::esm_loss(p, batch, net::Head::Final) < 1e-12);
    CHECK(train::esm_loss(p, batch, net::Head::Intermediate) < 1e-12);
    CHECK(train::total_loss(p, batch, 0.5) < 1e-12);
  }

  TEST_CASE("loss agrees with a brute-force recomputation") {
    const auto& w = default_world();
    const auto p = net::NetParams::initialize(9);
    const double sigma = 0.1;
    const auto batch = fixed_sigma_batch(w, sigma, 4096, 7);
    double sum = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const Vec2 model = -batch.x[j] / (sigma * sigma + kSigmaData * kSigmaData);
      const Vec2 target = naive_score(w, batch.cls[j], batch.x[j], sigma);
      sum += sigma * sigma * (model - target).squaredNorm();
    }
    const double oracle = sum / static_cast<double>(batch.size());
    CHECK(rel_err(train::esm_loss(p, batch, net::Head::Final), oracle) < 1e-10);
    CHECK(rel_err(train::esm_loss(p, batch, net::Head::Intermediate), oracle) < 1e-10);
  }

  TEST_CASE("total loss weights the heads") {
    const auto& w = default_world();
    train::TrainConfig cfg;
    const auto batch = train::draw_batch(w, cfg, 3, 700);
    const auto& trained = trained_params();
    CHECK(train::total_loss(trained, batch, 0.0) == train::esm_loss(trained, batch, net::Head::Final));
    const double lf = train::esm_loss(trained, batch, net::Head::Final);
    const double li = train::esm_loss(trained, batch, net::Head::Intermediate);
    CHECK(lf != li);
    CHECK(train::total_loss(trained, batch, 0.5) == doctest::Approx(lf + 0.5 * li).epsilon(1e-14));

    // Equal head losses at initialization.
    const auto init = net::NetParams::initialize(2);
    const double l0 = train::esm_loss(init, batch, net::Head::Final);
    CHECK(train::esm_loss(init, batch, net::Head::Intermediate) == l0);
    CHECK(train::total_loss(init, batch, 0.5) == doctest::Approx(1.5 * l0).epsilon(1e-15));
  }

  TEST_CASE("acceleration objective reduces to the baseline") {
    const auto& w = default_world();
    train::TrainConfig cfg;
    const auto batch = train::draw_batch(w, cfg, 4, 600);
    const auto& p = trained_params();
    const auto ema = net::NetParams::initialize(17);

    CHECK(train::accel_loss(p, trained_params(), batch, 0.5, 0.0) == train::total_loss(p, batch, 0.5));
    const auto base = train::loss_and_gradient(p, batch, 0.5);
    const auto zero = train::loss_and_gradient(p, batch, 0.5, &trained_params(), 0.0);
    CHECK(base.grad == zero.grad);
    CHECK(base.loss == zero.loss);

    // Heads of an initial EMA agree, so the guidance term is exactly zero.
    CHECK(train::accel_loss(p, ema, batch, 0.5, 0.5) == train::total_loss(p, batch, 0.5));
    // A trained EMA shifts the final-head target only.
    const auto shifted = train::loss_and_gradient(p, batch, 0.5, &trained_params(), 0.5);
    CHECK(shifted.loss_inter == base.loss_inter);
    CHECK(shifted.loss_final != base.loss_final);
  }

  TEST_CASE("loss gradient matches finite differences") {
    const auto& w = default_world();
    train::TrainConfig cfg;
    const auto batch = train::draw_batch(w, cfg, 8, 300);
    for (const bool accel : {false, true}) {
      const auto& p = trained_params();
      const net::NetParams* ema = accel ? &p : nullptr;
      const auto lg = train::loss_and_gradient(p, batch, 0.5, ema, 0.5);
      Rng rng(accel ? 2 : 1);
      std::uniform_int_distribution<std::size_t> pick(0, p.set().size() - 1);
      const double h = 1e-5;
      for (int k = 0; k < 24; ++k) {
        const std::size_t i = pick(rng);
        auto plus = p, minus = p;
        plus.set().flat()[i] += h;
        minus.set().flat()[i] -= h;
        // The EMA guidance target is a constant with respect to the parameters.
        const double fd = ((accel ? train::accel_loss(plus, p, batch, 0.5, 0.5) : train::total_loss(plus, batch, 0.5)) -
                           (accel ? train::accel_loss(minus, p, batch, 0.5, 0.5) : train::total_loss(minus, batch, 0.5))) /
                          (2 * h);
        CAPTURE(i);
        CHECK(std::abs(lg.grad[i] - fd) <= 1e-4 * std::max(std::abs(fd), 1e-6));
      }
    }
  }

  TEST_CASE("intermediate-only parameters get no gradient without the auxiliary loss") {
    const auto& w = default_world();
    train::TrainConfig cfg;
    const auto batch = train::draw_batch(w, cfg, 9, 300);
    const auto& p = trained_params();
    const auto lg = train::loss_and_gradient(p, batch, 0.0);
    for (const auto& b : p.set().blocks()) {
      const bool inter_only = b.name == "head.intermediate.weight" || b.name == "gain.intermediate";
      double mag = 0.0;
      for (std::size_t i = b.offset; i < b.offset + static_cast<std::size_t>(b.rows * b.cols); ++i) {
        mag = std::max(mag, std::abs(lg.grad[i]));
      }
      CAPTURE(b.name);
      if (inter_only) {
        CHECK(mag == 0.0);
      } else {
        CHECK(mag > 0.0);
      }
    }
  }

  TEST_CASE("non-finite losses name the sample") {
    const auto& w = default_world();
    train::TrainConfig cfg;
    const auto batch = train::draw_batch(w, cfg, 10, 50);
    auto p = trained_params();
    p.set().block(p.gain_block(net::Head::Final))(0, 0) = std::numeric_limits<double>::quiet_NaN();
    try {
      train::esm_loss(p, batch, net::Head::Final);
      FAIL("expected a numerical error");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("sample 0") != std::string::npos);
    }
  }

  TEST_CASE("divergent training aborts with the iteration") {
    auto cfg = small_config(4, 16);
    cfg.lr_ref = 1e305;
    try {
      train::run_training(cfg, default_world());
      FAIL("expected a numerical error");
    } catch (const NumericalError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("iteration") != std::string::npos);
      CHECK(msg.find("batch seed") != std::string::npos);
    }
  }

  TEST_CASE("learning rate schedule") {
    train::TrainConfig cfg;
    CHECK(train::learning_rate(0, cfg) == 0.01);
    CHECK(train::learning_rate(512, cfg) == 0.01);
    CHECK(train::learning_rate(2048, cfg) == doctest::Approx(0.005).epsilon(1e-15));
  }

  TEST_CASE("EMA exponent and decay") {
    const double gamma = train::solve_ema_gamma(0.010);
    CHECK(std::abs(gamma - bisect_gamma(0.010)) < 1e-6);
    CHECK(std::abs(train::solve_ema_gamma(0.05) - bisect_gamma(0.05)) < 1e-6);
    CHECK_THROWS_AS(train::solve_ema_gamma(0.5), ValidationError);
    CHECK(train::ema_beta(1, gamma) == 0.0);

    const auto target = net::NetParams::initialize(1, 8);
    auto ema = net::NetParams::initialize(2, 8);
    train::ema_update(ema, target, 1, gamma);
    CHECK(ema == target);

    // Frozen parameters: every coordinate approaches the target monotonically, up to rounding.
    ema = net::NetParams::initialize(2, 8);
    std::vector<double> gap(ema.set().size());
    for (std::size_t i = 0; i < gap.size(); ++i) gap[i] = std::abs(ema.set().flat()[i] - target.set().flat()[i]);
    bool monotone = true;
    for (std::int64_t t = 2; t < 200; ++t) {
      train::ema_update(ema, target, t, gamma);
      for (std::size_t i = 0; i < gap.size(); ++i) {
        const double g = std::abs(ema.set().flat()[i] - target.set().flat()[i]);
        const double ulps = 4 * std::numeric_limits<double>::epsilon() * std::abs(target.set().flat()[i]);
        monotone = monotone && g <= gap[i] + ulps;
        gap[i] = g;
      }
    }
    CHECK(monotone);
  }

  TEST_CASE("first Adam step moves by the learning rate") {
    train::Adam adam(3, 0.9, 0.99, 1e-8);
    std::vector<double> p{1.0, 2.0, 3.0};
    const std::vector<double> g{0.5, -2.0, 0.0};
    adam.step(p, g, 0.01);
    CHECK(p[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-9));
    CHECK(p[1] == doctest::Approx(2.0 + 0.01).epsilon(1e-9));
    CHECK(p[2] == 3.0);
    CHECK(adam.steps() == 1);
  }

  TEST_CASE("zero iterations return the initial model") {
    const auto cfg = small_config(0, 8);
    const auto r = train::run_training(cfg, default_world());
    REQUIRE(r.snapshots.size() == 1);
    CHECK(r.snapshots[0].iteration == 0);
    CHECK(r.snapshots[0].ema == train::initial_state(cfg).params);
    CHECK(r.log.empty());
  }

  TEST_CASE("training is deterministic and keeps rows normalized") {
    auto cfg = small_config(6, 128);
    cfg.snapshot_iterations = {2, 4};
    const auto a = train::run_training(cfg, default_world());
    const auto b = train::run_training(cfg, default_world());
    REQUIRE(a.snapshots.size() == 3);
    CHECK(a.snapshots[0].iteration == 2);
    CHECK(a.snapshots[1].iteration == 4);
    CHECK(a.snapshots[2].iteration == 6);
    for (std::size_t i = 0; i < a.snapshots.size(); ++i) CHECK(a.snapshots[i].ema == b.snapshots[i].ema);
    CHECK(a.state.params == b.state.params);
    REQUIRE(a.log.size() == 6);
    for (std::size_t i = 0; i < a.log.size(); ++i) {
      CHECK(a.log[i].loss_final == b.log[i].loss_final);
      CHECK(a.log[i].iteration == static_cast<std::int64_t>(i + 1));
    }
    const auto& set = a.state.params.set();
    for (const auto& blk : set.blocks()) {
      if (!blk.row_normalized) continue;
      const auto m = set.block(set.find(blk.name));
      for (Eigen::Index r = 0; r < m.rows(); ++r) CHECK(std::abs(m.row(r).norm() - 1.0) < 1e-12);
    }
    cfg.seed = 6;
    CHECK_FALSE(train::run_training(cfg, default_world()).state.params == a.state.params);
  }

  TEST_CASE("class dropout rate") {
    const auto& w = default_world();
    train::TrainConfig cfg;
    std::size_t nulls = 0, total = 0;
    for (std::uint64_t s = 0; s < 40; ++s) {
      const auto b = train::draw_batch(w, cfg, derive_seed(99, s), 2048);
      nulls += static_cast<std::size_t>(std::count(b.cls.begin(), b.cls.end(), ClassId::Null));
      total += b.size();
    }
    CHECK(std::abs(static_cast<double>(nulls) / static_cast<double>(total) - 0.1) < 0.005);

    const auto r = train::run_training(small_config(8, 512), w);
    CHECK(r.total_samples == 8 * 512);
    CHECK(std::abs(static_cast<double>(r.null_samples) / static_cast<double>(r.total_samples) - 0.1) < 0.02);
  }

  TEST_CASE("null-class targets use the pooled score") {
    const auto& w = default_world();
    const std::vector<Vec2> x{Vec2(0.2, -0.4)};
    const auto b = train::make_batch(w, x, {0.3}, {ClassId::Null});
    // Equal class priors: grad log((pA + pB) / 2).
    const double pa = mixture::density(w, ClassId::A, x[0], 0.3);
    const double pb = mixture::density(w, ClassId::B, x[0], 0.3);
    const Vec2 expect = (pa * mixture::score(w, ClassId::A, x[0], 0.3).score +
                         pb * mixture::score(w, ClassId::B, x[0], 0.3).score) /
                        (pa + pb);
    CHECK(rel_err(b.target[0], expect) < 1e-12);
  }

  TEST_CASE("denoising targets") {
    const auto& w = default_world();
    train::TrainConfig cfg;
    cfg.score_matching = train::ScoreMatching::Denoising;
    const auto b = train::draw_batch(w, cfg, 12, 64);
    train::TrainConfig exact;
    const auto e = train::draw_batch(w, exact, 12, 64);
    CHECK(b.x == e.x);
    CHECK(b.target != e.target);
    for (const auto& t : b.target) CHECK(std::isfinite(t.norm()));
  }
}
