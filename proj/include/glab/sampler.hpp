// Deterministic EDM Heun sampler (no churn).
#pragma once

#include "glab/common.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace glab::sampler {

struct SamplerConfig {
  int steps = 32;  // N
  double sigma_min = 0.002;
  double sigma_max = 5.0;
  double rho = 7.0;
  std::size_t count = 10000;
  std::uint64_t seed = 0;
  bool record_trajectories = false;

  void validate() const;
};

// t_0..t_N; t_{N-1} = sigma_min, t_N = 0.
std::vector<double> discretize(const SamplerConfig& cfg);

// Fills out[j] = D(x[j], sigma, cls[j]) for one shared sigma.
using BatchDenoiser =
    std::function<void(std::span<const Vec2> x, double sigma, std::span<const ClassId> cls, std::span<Vec2> out)>;
using PointDenoiser = std::function<Vec2(const Vec2& x, double sigma, ClassId cls)>;

struct SampleSet {
  std::vector<Vec2> x;
  std::vector<ClassId> cls;
  std::vector<double> t;                  // noise levels t_0..t_N
  std::uint64_t nfe = 0;                  // denoiser evaluations per sample
  std::vector<std::vector<Vec2>> states;  // states[i][j]: sample j at t_i, when recorded
};

// A, B, A, B, ...
std::vector<ClassId> round_robin_classes(std::size_t count);

// Initial state of sample `index`: N(0, t_0^2 I) from the stream derived from (seed, index).
Vec2 initial_state(std::uint64_t seed, std::size_t index, double t0);

// Whole-batch Heun integration; the denoiser sees every live sample once per stage.
// Throws NumericalError (with the offending sample's trajectory) on non-finite states.
SampleSet heun_sample(const BatchDenoiser& denoiser, const SamplerConfig& cfg, std::span<const ClassId> classes);

// One sample at a time through a point denoiser; the reference for heun_sample.
SampleSet heun_sample_serial(const PointDenoiser& denoiser, const SamplerConfig& cfg,
                             std::span<const ClassId> classes);

// index,class,x,y with 17 significant digits.
std::string samples_csv(const SampleSet& set);
void write_samples_csv(const SampleSet& set, const std::filesystem::path& path);
SampleSet read_samples_csv(const std::filesystem::path& path);

// One JSON object per sample: {"index", "class", "t": [...], "x": [[x, y], ...]}.
std::string trajectories_jsonl(const SampleSet& set);

}  // namespace glab::sampler
