// Ground-truth two-class fractal Gaussian mixture.
//
// Each class is a binary tree of line segments ("branches"); every branch is
// covered by a fixed number of anisotropic Gaussians laid along it. Heat
// diffusion to noise level sigma adds sigma^2 I to every covariance, so
// densities and scores stay analytic at any sigma.
#pragma once

#include "glab/common.hpp"

#include <array>
#include <span>
#include <vector>

namespace glab::mixture {

struct MixtureComponent {
  double weight = 0.0;
  Vec2 mean = Vec2::Zero();
  Mat2 cov = Mat2::Identity();
  int branch = 0;
};

struct ClassMixture {
  ClassId id = ClassId::A;
  std::vector<MixtureComponent> components;
  int branch_count = 0;
};

// Tree geometry. Lengths are in pre-standardization units (root length 1).
struct BranchParams {
  double root_length = 1.0;
  double length_ratio = 0.65;
  double length_jitter = 0.1;   // child length *= 1 + U(-jitter, jitter)
  double split_angle_deg = 30.0;
  double angle_jitter_deg = 8.0;
  double weight_decay = 0.5;
  double longitudinal_div = 16.0;  // longitudinal std = length / div
  double transverse_ratio = 6.0;   // transverse std = longitudinal / ratio
  double min_std = 0.01;           // floor on both principal stds
  Vec2 root_origin{0.35, -1.2};
  double root_angle_deg = 90.0;
};

inline constexpr int kMaxDepth = 12;

// Structure-of-arrays view of one mixture, the hot-loop layout.
struct PackedMixture {
  std::vector<double> log_weight, mx, my, sxx, sxy, syy;
  std::vector<int> branch;
  std::vector<double> cumulative_weight;  // for component selection
  std::size_t size() const { return mx.size(); }
};

class WorldModel {
 public:
  WorldModel() = default;
  WorldModel(std::array<ClassMixture, 2> classes, double sigma_data, std::uint64_t seed);

  const ClassMixture& mixture(ClassId c) const;
  const std::array<ClassMixture, 2>& classes() const { return classes_; }
  double sigma_data() const { return sigma_data_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t total_components() const;

  // Null selects the class-marginalized mixture (equal class priors).
  const PackedMixture& packed(ClassId c) const { return packed_[index_of(c)]; }

  // Pooled (class-marginalized) first and second moments.
  Vec2 pooled_mean() const;
  Vec2 pooled_std() const;

 private:
  std::array<ClassMixture, 2> classes_;
  std::array<PackedMixture, 3> packed_;
  double sigma_data_ = kSigmaData;
  std::uint64_t seed_ = 0;
};

WorldModel build_fractal_mixture(std::uint64_t seed, int depth = 6, int per_branch = 8,
                                 const BranchParams& params = {});

// One shared affine map (per-axis scale) so the pooled mean is 0 and per-axis std is sigma_data.
// Already-standardized worlds (within 1e-12) are returned unchanged.
WorldModel standardize(const WorldModel& world);

// Throws ValidationError naming the first violated invariant.
void validate(const WorldModel& world);

double log_density(const WorldModel& world, ClassId c, const Vec2& x, double sigma);
double density(const WorldModel& world, ClassId c, const Vec2& x, double sigma);

struct ScoreResult {
  Vec2 score = Vec2::Zero();
  bool saturated = false;  // linear-space density underflows at x
};

ScoreResult score(const WorldModel& world, ClassId c, const Vec2& x, double sigma);

std::vector<Vec2> sample(const WorldModel& world, ClassId c, double sigma, Rng& rng, std::size_t count);
Vec2 sample_one(const WorldModel& world, ClassId c, double sigma, Rng& rng);

// Index of the component with the largest responsibility at x.
int max_responsibility_component(const WorldModel& world, ClassId c, const Vec2& x, double sigma);

// Square grid of n x n nodes spanning [lo, hi] on both axes.
struct GridSpec {
  double lo = -3.0;
  double hi = 3.0;
  int n = 1024;
  double step() const { return (hi - lo) / (n - 1); }
  double coord(int i) const { return lo + step() * i; }
};

// Row-major n*n grid of density values; index = iy * n + ix.
struct DensityGrid {
  GridSpec spec;
  std::vector<double> values;
  double at(int ix, int iy) const { return values[static_cast<std::size_t>(iy) * spec.n + ix]; }
  // Trapezoid-rule integral of the values.
  double integral() const;
};

// Largest tau with quadrature mass of {density > tau} >= quantile (mass normalized by the grid total).
double mass_threshold(const WorldModel& world, ClassId c, double quantile, const GridSpec& grid);
double mass_threshold(const DensityGrid& grid, double quantile);

// -- batch kernels (mixture_kernels.cpp) -------------------------------------

// OpenMP over points. Results are bitwise identical to the serial versions.
void score_batch(const WorldModel& world, std::span<const ClassId> classes, std::span<const Vec2> xs,
                 std::span<const double> sigmas, std::span<Vec2> out);
void score_batch_serial(const WorldModel& world, std::span<const ClassId> classes, std::span<const Vec2> xs,
                        std::span<const double> sigmas, std::span<Vec2> out);

void log_density_batch(const WorldModel& world, ClassId c, std::span<const Vec2> xs, double sigma,
                       std::span<double> out);

// Splats each component onto the grid within an 8-sigma box (OpenMP over grid rows).
DensityGrid density_grid(const WorldModel& world, ClassId c, double sigma, const GridSpec& grid);
// Pointwise log-sum-exp evaluation at every node; the reference for density_grid.
DensityGrid density_grid_reference(const WorldModel& world, ClassId c, double sigma, const GridSpec& grid);

}  // namespace glab::mixture
