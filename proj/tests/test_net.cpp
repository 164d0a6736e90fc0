#include "glab/net.hpp"
#include "glab/train.hpp"
#include "glab/util.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <Eigen/QR>

#include <cmath>
#include <random>

using namespace glab;
using glab::testing::default_world;
using glab::testing::rel_err;
using glab::testing::trained_params;

namespace {

net::NetParams with_gains(net::NetParams p, double gi, double gf) {
  p.set().block(p.gain_block(net::Head::Intermediate))(0, 0) = gi;
  p.set().block(p.gain_block(net::Head::Final))(0, 0) = gf;
  return p;
}

struct Probe {
  std::vector<Vec2> x;
  std::vector<double> sigma;
  std::vector<ClassId> cls;
};

Probe random_probe(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Probe p;
  for (std::size_t i = 0; i < n; ++i) {
    p.x.emplace_back(normal(rng), normal(rng));
    p.sigma.push_back(std::exp(-2.3 + 1.5 * normal(rng)));
    p.cls.push_back(static_cast<ClassId>(i % 3));
  }
  return p;
}

double sample_std(const std::vector<double>& v) {
  double m = 0.0, m2 = 0.0;
  for (double x : v) {
    m += x;
    m2 += x * x;
  }
  m /= static_cast<double>(v.size());
  return std::sqrt(m2 / static_cast<double>(v.size()) - m * m);
}

}  // namespace

TEST_SUITE("net") {
  TEST_CASE("input preconditioning") {
    CHECK(net::precondition_input(Vec2(1.0, 0.0), 0.0) == Vec2(2.0, 0.0));
    const Vec2 p = net::precondition_input(Vec2(1.0, 1.0), std::sqrt(0.75));
    CHECK(rel_err(p, Vec2(1.0, 1.0)) < 1e-15);
  }

  TEST_CASE("preconditioned inputs have unit scale") {
    const auto& w = default_world();
    train::TrainConfig cfg;
    Rng rng(12);
    std::vector<double> coords;
    for (int i = 0; i < 10000; ++i) {
      const double sigma = train::sample_noise_level(rng, cfg);
      const ClassId c = i % 2 ? ClassId::A : ClassId::B;
      const Vec2 x = net::precondition_input(mixture::sample_one(w, c, sigma, rng), sigma);
      coords.push_back(x.x());
      coords.push_back(x.y());
    }
    const double sd = sample_std(coords);
    CHECK(sd >= 0.8);
    CHECK(sd <= 1.2);
  }

  TEST_CASE("initialization") {
    const auto p = net::NetParams::initialize(1);
    CHECK(p.width() == 64);
    CHECK(p.gain(net::Head::Intermediate) == 0.0);
    CHECK(p.gain(net::Head::Final) == 0.0);
    for (const auto& b : p.set().blocks()) {
      if (!b.row_normalized) continue;
      const auto m = p.set().block(p.set().find(b.name));
      for (Eigen::Index r = 0; r < m.rows(); ++r) CHECK(std::abs(m.row(r).norm() - 1.0) < 1e-12);
    }
    CHECK(p == net::NetParams::initialize(1));
    CHECK_FALSE(p == net::NetParams::initialize(2));
  }

  TEST_CASE("features do not depend on the gains") {
    const auto p = net::NetParams::initialize(4);
    const auto q = with_gains(p, 0.8, -2.0);
    const net::NetInput in{Vec2(0.3, -0.2), 0.4, ClassId::B};
    for (const auto head : {net::Head::Intermediate, net::Head::Final}) {
      CHECK(net::features(p, in, head) == net::features(q, in, head));
    }
  }

  TEST_CASE("zero pre-activation gives zero features") {
    // x = 0 and sigma = 1 leave only the constant channel; cancel it with the class embedding.
    auto p = net::NetParams::initialize(5);
    p.set().normalize_rows();
    const auto w = p.set().block(p.input_block());
    auto e = p.set().block(p.embedding_block());
    for (Eigen::Index r = 0; r < w.rows(); ++r) e(r, index_of(ClassId::A)) = -w(r, 3) / w.row(r).norm();
    for (const auto head : {net::Head::Intermediate, net::Head::Final}) {
      const auto f = net::features(p, {Vec2::Zero(), 1.0, ClassId::A}, head);
      double worst = 0.0;
      for (double v : f) worst = std::max(worst, std::abs(v));
      CHECK(worst < 1e-14);
    }
  }

  TEST_CASE("classes differ after a training step") {
    train::TrainConfig cfg;
    cfg.iterations = 1;
    cfg.batch = 64;
    const auto r = train::run_training(cfg, default_world());
    const auto& p = r.snapshots.back().ema;
    const Vec2 x(0.2, 0.1);
    CHECK(net::features(p, {x, 0.3, ClassId::A}, net::Head::Final) !=
          net::features(p, {x, 0.3, ClassId::B}, net::Head::Final));
  }

  TEST_CASE("energy at initialization") {
    const auto p = net::NetParams::initialize(6);
    CHECK(net::energy(p, {Vec2(1.0, 1.0), std::sqrt(0.75), ClassId::A}, net::Head::Final) ==
          doctest::Approx(-1.0).epsilon(1e-14));
    const auto q = with_gains(p, 0.5, 1.5);
    Rng rng(1);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
      const net::NetInput in{Vec2(normal(rng), normal(rng)), std::exp(normal(rng)), static_cast<ClassId>(i % 3)};
      const Vec2 xs = net::precondition_input(in.x, in.sigma);
      for (const auto head : {net::Head::Intermediate, net::Head::Final}) {
        CHECK(net::energy(q, in, head) <= -0.5 * xs.squaredNorm());
      }
    }
  }

  TEST_CASE("zero noise level is a domain error") {
    const auto p = net::NetParams::initialize(6);
    CHECK_THROWS_AS(net::energy(p, {Vec2::Zero(), 0.0, ClassId::A}, net::Head::Final), ValidationError);
    const std::vector<Vec2> x{Vec2::Zero()};
    const std::vector<double> s{0.0};
    const std::vector<ClassId> c{ClassId::A};
    CHECK_THROWS_AS(net::evaluate_batch(p, x, s, c, {}), ValidationError);
  }

  TEST_CASE("score and denoiser at initialization") {
    const auto p = net::NetParams::initialize(7);
    const Vec2 s = net::model_score(p, {Vec2(1.0, 1.0), 0.5, ClassId::A}, net::Head::Final);
    CHECK(rel_err(s, Vec2(-2.0, -2.0)) < 1e-15);
    const Vec2 d = net::denoise(p, {Vec2(2.0, 0.0), 0.5, ClassId::B}, net::Head::Intermediate);
    CHECK(rel_err(d, Vec2(1.0, 0.0)) < 1e-15);
  }

  TEST_CASE("score matches finite differences of the energy") {
    const auto p = with_gains(net::NetParams::initialize(8), 0.7, 1.3);
    const auto probe = random_probe(200, 9);
    const double h = 1e-6;
    for (std::size_t i = 0; i < probe.x.size(); ++i) {
      for (const auto head : {net::Head::Intermediate, net::Head::Final}) {
        const net::NetInput in{probe.x[i], probe.sigma[i], probe.cls[i]};
        const Vec2 s = net::model_score(p, in, head);
        Vec2 fd;
        for (int a = 0; a < 2; ++a) {
          net::NetInput ip = in, im = in;
          ip.x[a] += h;
          im.x[a] -= h;
          fd[a] = (net::energy(p, ip, head) - net::energy(p, im, head)) / (2 * h);
        }
        CHECK(rel_err(s, fd, 1.0) < 1e-7);
      }
    }
  }

  TEST_CASE("denoiser correction vanishes quadratically at small noise") {
    const auto& p = trained_params();
    for (const double sigma : {0.008, 0.004, 0.002}) {
      const net::NetInput in{Vec2(0.1, 0.2), sigma, ClassId::A};
      const Vec2 s = net::model_score(p, in, net::Head::Final);
      const Vec2 d = net::denoise(p, in, net::Head::Final);
      CHECK((d - in.x).norm() <= sigma * sigma * s.norm() * (1.0 + 1e-12));
    }
  }

  TEST_CASE("trained score is nearly linear at high noise") {
    const auto& p = trained_params();
    // Least-squares fit s = A x + b over a grid; report R^2 per component.
    const int n = 31;
    Eigen::MatrixXd X(n * n, 3), Y(n * n, 2);
    int row = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const Vec2 x(-3.0 + 6.0 * i / (n - 1), -3.0 + 6.0 * j / (n - 1));
        const Vec2 s = net::model_score(p, {x, 5.0, ClassId::A}, net::Head::Final);
        X.row(row) << x.x(), x.y(), 1.0;
        Y.row(row) << s.x(), s.y();
        ++row;
      }
    }
    const Eigen::MatrixXd coef = X.colPivHouseholderQr().solve(Y);
    const Eigen::MatrixXd resid = Y - X * coef;
    for (int c = 0; c < 2; ++c) {
      const double ss_res = resid.col(c).squaredNorm();
      const double ss_tot = (Y.col(c).array() - Y.col(c).mean()).matrix().squaredNorm();
      CHECK(1.0 - ss_res / ss_tot > 0.99);
    }
  }

  TEST_CASE("trained denoiser moves points toward the data") {
    const auto& w = default_world();
    const auto& p = trained_params();
    Rng rng(31);
    double before = 0.0, after = 0.0;
    const int n = 2000;
    for (int i = 0; i < n; ++i) {
      const ClassId c = i % 2 ? ClassId::A : ClassId::B;
      const Vec2 x = mixture::sample_one(w, c, 0.5, rng);
      const Vec2 d = net::denoise(p, {x, 0.5, c}, net::Head::Final);
      auto nearest = [&](const Vec2& y) {
        double best = 1e300;
        for (const auto& comp : w.mixture(c).components) best = std::min(best, (y - comp.mean).norm());
        return best;
      };
      before += nearest(x);
      after += nearest(d);
    }
    CHECK(after < before);
  }

  TEST_CASE("trained energy normalizes on a wide grid") {
    // exp(G) normalized on a +-6 std grid, then checked against a finer grid of the same extent.
    const auto& p = trained_params();
    const double sigma = 0.5;
    const double half = 6.0 * std::sqrt(sigma * sigma + kSigmaData * kSigmaData);
    auto mass = [&](int n, double normalizer) {
      const double h = 2.0 * half / (n - 1);
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        const double wx = (i == 0 || i == n - 1) ? 0.5 : 1.0;
        for (int j = 0; j < n; ++j) {
          const double wy = (j == 0 || j == n - 1) ? 0.5 : 1.0;
          const Vec2 x(-half + h * i, -half + h * j);
          acc += wx * wy * h * h * std::exp(net::energy(p, {x, sigma, ClassId::A}, net::Head::Final));
        }
      }
      return acc / normalizer;
    };
    const double z = mass(101, 1.0);
    CHECK(std::abs(mass(201, z) - 1.0) < 5e-3);
  }

  TEST_CASE("intermediate head is isolated from later layers") {
    const auto base = with_gains(net::NetParams::initialize(10), 0.4, 0.9);
    const net::NetInput in{Vec2(0.5, -0.7), 0.2, ClassId::B};
    const double e0 = net::energy(base, in, net::Head::Intermediate);
    const auto f0 = net::features(base, in, net::Head::Intermediate);

    auto perturbed = base;
    perturbed.set().block(perturbed.head_block(net::Head::Final)).array() += 0.3;
    perturbed.set().block(perturbed.gain_block(net::Head::Final))(0, 0) = 5.0;
    CHECK(net::energy(perturbed, in, net::Head::Intermediate) == e0);
    CHECK(net::energy(perturbed, in, net::Head::Final) != net::energy(base, in, net::Head::Final));

    auto deep = base;
    for (int layer = 2; layer <= 4; ++layer) deep.set().block(deep.hidden_block(layer)).array() *= -1.7;
    CHECK(net::features(deep, in, net::Head::Intermediate) == f0);
  }

  TEST_CASE("heads agree at initialization") {
    const auto p = net::NetParams::initialize(11);
    const auto probe = random_probe(100, 2);
    for (std::size_t i = 0; i < probe.x.size(); ++i) {
      const net::NetInput in{probe.x[i], probe.sigma[i], probe.cls[i]};
      CHECK(net::denoise(p, in, net::Head::Intermediate) == net::denoise(p, in, net::Head::Final));
    }
  }

  TEST_CASE("hidden layers preserve magnitude at initialization") {
    const auto p = net::NetParams::initialize(12);
    Rng rng(3);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int samples = 2000;
    Eigen::MatrixXd h(p.width(), samples);
    for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = normal(rng);
    for (int layer = 1; layer <= 4; ++layer) {
      Eigen::MatrixXd w = p.set().block(p.hidden_block(layer));
      for (Eigen::Index r = 0; r < w.rows(); ++r) w.row(r) /= w.row(r).norm();
      Eigen::MatrixXd out = (w * h).unaryExpr([](double z) { return diffkit::silu(z) / net::kMpSiluDivisor; });
      const std::vector<double> v(out.data(), out.data() + out.size());
      const double sd = sample_std(v);
      CAPTURE(layer);
      CHECK(sd >= 0.7);
      CHECK(sd <= 1.4);
      // Feed a fresh unit-variance input to each layer.
      for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = normal(rng);
    }
  }

  TEST_CASE("batched path matches the reference path") {
    const auto& p = trained_params();
    const auto probe = random_probe(700, 4);
    const auto out = net::evaluate_batch(p, probe.x, probe.sigma, probe.cls, {.intermediate = true, .final = true});
    for (std::size_t i = 0; i < probe.x.size(); ++i) {
      const net::NetInput in{probe.x[i], probe.sigma[i], probe.cls[i]};
      CHECK(rel_err(out.energy_final[i], net::energy(p, in, net::Head::Final)) < 1e-12);
      CHECK(rel_err(out.energy_intermediate[i], net::energy(p, in, net::Head::Intermediate)) < 1e-12);
      CHECK(rel_err(out.score_final[i], net::model_score(p, in, net::Head::Final)) < 1e-12);
      CHECK(rel_err(out.score_intermediate[i], net::model_score(p, in, net::Head::Intermediate)) < 1e-12);
    }
  }

  TEST_CASE("trunk passes are counted per sample") {
    const auto p = net::NetParams::initialize(13);
    const auto probe = random_probe(300, 5);
    const auto before = net::trunk_pass_count();
    net::evaluate_batch(p, probe.x, probe.sigma, probe.cls, {.intermediate = true, .final = true});
    CHECK(net::trunk_pass_count() - before == 300);
  }

  TEST_CASE("checkpoint round trip") {
    glab::testing::TempDir dir("ckpt");
    const auto& p = trained_params();
    const auto id = net::save_checkpoint(p, 300, dir / "a.glabckpt");
    const auto back = net::load_checkpoint(dir / "a.glabckpt");
    CHECK(back.params == p);
    CHECK(back.iteration == 300);
    CHECK(back.id == id);
    CHECK(id == short_hash(net::checkpoint_bytes(p, 300)));

    std::string bytes = net::checkpoint_bytes(p, 300);
    CHECK_THROWS_AS(net::checkpoint_from_bytes("NOT-A-CKPT\n" + bytes), ValidationError);
    const std::string narrow = net::checkpoint_bytes(net::NetParams::initialize(1, 8), 0);
    std::string mismatch = narrow;
    const auto pos = mismatch.find("\nn 8\n");
    REQUIRE(pos != std::string::npos);
    mismatch.replace(pos, 5, "\nn 9\n");
    CHECK_THROWS_AS(net::checkpoint_from_bytes(mismatch), ValidationError);
    CHECK_THROWS_AS(net::checkpoint_from_bytes(bytes.substr(0, bytes.size() / 2)), ValidationError);

    try {
      net::load_checkpoint(dir / "missing.glabckpt");
      FAIL("expected an error");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("missing.glabckpt") != std::string::npos);
    }
  }
}
