// Parallel kernels against their serial references.
#include "glab/config.hpp"
#include "glab/guide.hpp"
#include "glab/mixture.hpp"
#include "glab/net.hpp"
#include "glab/sampler.hpp"
#include "glab/train.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace glab;

const mixture::WorldModel& world() {
  static const auto w = config::build_world({});
  return w;
}

struct Probe {
  std::vector<Vec2> x;
  std::vector<double> sigma;
  std::vector<ClassId> cls;
};

Probe probe(std::size_t n) {
  Rng rng = make_rng(11, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Probe p;
  for (std::size_t j = 0; j < n; ++j) {
    const double a = normal(rng);
    p.x.emplace_back(a, normal(rng));
    p.sigma.push_back(std::exp(-2.3 + 1.5 * normal(rng)));
    p.cls.push_back(unit(rng) < 0.5 ? ClassId::A : ClassId::B);
  }
  return p;
}

void BM_ScoreBatch(benchmark::State& state) {
  const auto p = probe(4096);
  std::vector<Vec2> out(p.x.size());
  for (auto _ : state) {
    mixture::score_batch(world(), p.cls, p.x, p.sigma, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(p.x.size()));
}

void BM_ScoreBatchSerial(benchmark::State& state) {
  const auto p = probe(4096);
  std::vector<Vec2> out(p.x.size());
  for (auto _ : state) {
    mixture::score_batch_serial(world(), p.cls, p.x, p.sigma, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(p.x.size()));
}

void BM_DensityGrid(benchmark::State& state) {
  mixture::GridSpec grid;
  grid.n = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(mixture::density_grid(world(), ClassId::A, 0.0, grid).values.data());
}

void BM_DensityGridReference(benchmark::State& state) {
  mixture::GridSpec grid;
  grid.n = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(mixture::density_grid_reference(world(), ClassId::A, 0.0, grid).values.data());
  }
}

void BM_NetBatch(benchmark::State& state) {
  const auto p = probe(4096);
  const auto params = net::NetParams::initialize(3);
  for (auto _ : state) {
    auto out = net::evaluate_batch(params, p.x, p.sigma, p.cls, {.intermediate = true, .final = true});
    benchmark::DoNotOptimize(out.score_final.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(p.x.size()));
}

void BM_NetPointReference(benchmark::State& state) {
  const auto p = probe(256);
  const auto params = net::NetParams::initialize(3);
  for (auto _ : state) {
    for (std::size_t j = 0; j < p.x.size(); ++j) {
      benchmark::DoNotOptimize(net::model_score(params, {p.x[j], p.sigma[j], p.cls[j]}, net::Head::Final));
    }
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(p.x.size()));
}

void BM_LossGradient(benchmark::State& state) {
  train::TrainConfig cfg;
  const auto params = net::NetParams::initialize(3);
  const auto batch = train::draw_batch(world(), cfg, 5, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(train::loss_and_gradient(params, batch, 0.5).grad.data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_HeunBatch(benchmark::State& state) {
  const auto params = net::NetParams::initialize(3);
  const guide::GuidedDenoiser d({&params, nullptr}, {});
  sampler::SamplerConfig cfg;
  cfg.count = 512;
  const auto classes = sampler::round_robin_classes(cfg.count);
  for (auto _ : state) {
    auto set = sampler::heun_sample(
        [&](std::span<const Vec2> x, double s, std::span<const ClassId> c, std::span<Vec2> o) { d.denoise(x, s, c, o); },
        cfg, classes);
    benchmark::DoNotOptimize(set.x.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(cfg.count));
}

void BM_HeunSerial(benchmark::State& state) {
  const auto params = net::NetParams::initialize(3);
  const guide::GuidedDenoiser d({&params, nullptr}, {});
  sampler::SamplerConfig cfg;
  cfg.count = 32;
  const auto classes = sampler::round_robin_classes(cfg.count);
  for (auto _ : state) {
    auto set = sampler::heun_sample_serial([&](const Vec2& x, double s, ClassId c) { return d.denoise_one(x, s, c); },
                                           cfg, classes);
    benchmark::DoNotOptimize(set.x.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(cfg.count));
}

}  // namespace

BENCHMARK(BM_ScoreBatch)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScoreBatchSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DensityGrid)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DensityGridReference)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NetBatch)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NetPointReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LossGradient)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_HeunBatch)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_HeunSerial)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
