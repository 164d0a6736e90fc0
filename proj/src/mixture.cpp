#include "glab/mixture.hpp"

#include "mixture_detail.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace glab::mixture {
namespace {

PackedMixture pack(std::span<const MixtureComponent> comps, double weight_scale) {
  PackedMixture p;
  const std::size_t n = comps.size();
  p.log_weight.reserve(n);
  p.mx.reserve(n);
  p.my.reserve(n);
  p.sxx.reserve(n);
  p.sxy.reserve(n);
  p.syy.reserve(n);
  p.branch.reserve(n);
  p.cumulative_weight.reserve(n);
  double acc = 0.0;
  for (const auto& c : comps) {
    p.log_weight.push_back(std::log(c.weight * weight_scale));
    p.mx.push_back(c.mean.x());
    p.my.push_back(c.mean.y());
    p.sxx.push_back(c.cov(0, 0));
    p.sxy.push_back(c.cov(0, 1));
    p.syy.push_back(c.cov(1, 1));
    p.branch.push_back(c.branch);
    acc += c.weight * weight_scale;
    p.cumulative_weight.push_back(acc);
  }
  return p;
}

struct TreeBuilder {
  const BranchParams& params;
  int max_depth;
  int per_branch;
  Rng& rng;
  std::vector<MixtureComponent> out;
  int next_branch = 0;

  void grow(int depth, const Vec2& start, double angle_deg, double length, double weight) {
    const double rad = angle_deg * std::numbers::pi / 180.0;
    const Vec2 dir(std::cos(rad), std::sin(rad));
    const Vec2 normal(-dir.y(), dir.x());
    const double long_std = std::max(length / params.longitudinal_div, params.min_std);
    const double trans_std = std::max(length / params.longitudinal_div / params.transverse_ratio, params.min_std);
    Mat2 cov = long_std * long_std * dir * dir.transpose() + trans_std * trans_std * normal * normal.transpose();
    cov(1, 0) = cov(0, 1);
    const int id = next_branch++;
    for (int k = 0; k < per_branch; ++k) {
      const double t = (k + 0.5) / per_branch;
      out.push_back({weight / per_branch, start + dir * (length * t), cov, id});
    }
    if (depth == max_depth) return;
    const Vec2 end = start + dir * length;
    std::uniform_real_distribution<double> angle_noise(-params.angle_jitter_deg, params.angle_jitter_deg);
    std::uniform_real_distribution<double> length_noise(-params.length_jitter, params.length_jitter);
    for (const double sign : {1.0, -1.0}) {
      const double child_angle = angle_deg + sign * (params.split_angle_deg + angle_noise(rng));
      const double child_length = length * params.length_ratio * (1.0 + length_noise(rng));
      grow(depth + 1, end, child_angle, child_length, weight * params.weight_decay);
    }
  }
};

ClassMixture build_tree(ClassId id, Rng rng, int depth, int per_branch, const BranchParams& params) {
  TreeBuilder builder{params, depth, per_branch, rng, {}, 0};
  builder.grow(0, params.root_origin, params.root_angle_deg, params.root_length, 1.0);
  double total = 0.0;
  for (const auto& c : builder.out) total += c.weight;
  for (auto& c : builder.out) c.weight /= total;
  return ClassMixture{id, std::move(builder.out), builder.next_branch};
}

struct Moments {
  Vec2 mean;
  Vec2 var;
};

Moments pooled_moments(const std::array<ClassMixture, 2>& classes) {
  Vec2 first = Vec2::Zero();
  Vec2 second = Vec2::Zero();
  for (const auto& cls : classes) {
    double w_total = 0.0;
    for (const auto& c : cls.components) w_total += c.weight;
    for (const auto& c : cls.components) {
      const double w = 0.5 * c.weight / w_total;
      first += w * c.mean;
      second.x() += w * (c.cov(0, 0) + c.mean.x() * c.mean.x());
      second.y() += w * (c.cov(1, 1) + c.mean.y() * c.mean.y());
    }
  }
  return {first, second - first.cwiseProduct(first)};
}

}  // namespace

WorldModel::WorldModel(std::array<ClassMixture, 2> classes, double sigma_data, std::uint64_t seed)
    : classes_(std::move(classes)), sigma_data_(sigma_data), seed_(seed) {
  for (int k = 0; k < 2; ++k) {
    if (classes_[k].components.empty()) throw ValidationError("class mixture has no components");
    packed_[k] = pack(classes_[k].components, 1.0);
  }
  std::vector<MixtureComponent> pooled;
  pooled.reserve(total_components());
  for (const auto& cls : classes_) pooled.insert(pooled.end(), cls.components.begin(), cls.components.end());
  packed_[index_of(ClassId::Null)] = pack(pooled, 0.5);
}

const ClassMixture& WorldModel::mixture(ClassId c) const {
  if (c == ClassId::Null) throw ContractError("the Null class has no mixture of its own");
  return classes_[index_of(c)];
}

std::size_t WorldModel::total_components() const {
  return classes_[0].components.size() + classes_[1].components.size();
}

Vec2 WorldModel::pooled_mean() const { return pooled_moments(classes_).mean; }

Vec2 WorldModel::pooled_std() const { return pooled_moments(classes_).var.cwiseSqrt(); }

WorldModel build_fractal_mixture(std::uint64_t seed, int depth, int per_branch, const BranchParams& params) {
  if (depth < 1) throw ValidationError("depth must be >= 1");
  if (per_branch < 1) throw ValidationError("per_branch must be >= 1");
  if (depth > kMaxDepth) {
    throw ValidationError("capacity: depth " + std::to_string(depth) + " exceeds the maximum of " +
                          std::to_string(kMaxDepth));
  }
  if (!(params.length_ratio > 0.0) || !(params.weight_decay > 0.0) || !(params.min_std >= 0.0) ||
      !(params.longitudinal_div > 0.0) || !(params.transverse_ratio > 0.0) || !(params.root_length > 0.0)) {
    throw ValidationError("branch parameters must be positive");
  }
  ClassMixture a = build_tree(ClassId::A, make_rng(seed, 0), depth, per_branch, params);
  ClassMixture b = build_tree(ClassId::B, make_rng(seed, 1), depth, per_branch, params);
  // Class B: rotate 180 degrees about the origin. Covariances are invariant under -I.
  for (auto& c : b.components) c.mean = -c.mean;
  return standardize(WorldModel({std::move(a), std::move(b)}, kSigmaData, seed));
}

WorldModel standardize(const WorldModel& world) {
  const Moments mom = pooled_moments(world.classes());
  if (!(mom.var.x() > 0.0) || !(mom.var.y() > 0.0) || !mom.var.allFinite()) {
    throw ValidationError("degenerate pooled variance; cannot standardize");
  }
  const Vec2 std_dev = mom.var.cwiseSqrt();
  const double sd = world.sigma_data();
  if (mom.mean.cwiseAbs().maxCoeff() <= 1e-12 && (std_dev.array() - sd).abs().maxCoeff() <= 1e-12) {
    return world;
  }
  const Vec2 scale(sd / std_dev.x(), sd / std_dev.y());
  const Mat2 S = scale.asDiagonal();
  std::array<ClassMixture, 2> classes = world.classes();
  for (auto& cls : classes) {
    for (auto& c : cls.components) {
      c.mean = S * (c.mean - mom.mean);
      c.cov = S * c.cov * S;
      c.cov(1, 0) = c.cov(0, 1);
    }
  }
  return WorldModel(std::move(classes), sd, world.seed());
}

void validate(const WorldModel& world) {
  for (const auto& cls : world.classes()) {
    const std::string name(to_string(cls.id));
    if (cls.components.empty()) throw ValidationError("class " + name + ": no components");
    double sum = 0.0;
    for (const auto& c : cls.components) {
      if (!(c.weight > 0.0)) throw ValidationError("class " + name + ": component weight must be > 0");
      const double tr = c.cov.trace();
      const double det = c.cov.determinant();
      if (!(tr > 0.0 && det > 0.0) || c.cov(0, 1) != c.cov(1, 0)) {
        throw ValidationError("class " + name + ": component covariance is not symmetric positive definite");
      }
      sum += c.weight;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw ValidationError("class " + name + ": weights do not sum to 1");
  }
  const Vec2 mean = world.pooled_mean();
  const Vec2 sd = world.pooled_std();
  if (mean.cwiseAbs().maxCoeff() > 1e-9) throw ValidationError("pooled mean is not 0");
  if ((sd.array() - world.sigma_data()).abs().maxCoeff() > 1e-9) {
    throw ValidationError("pooled std is not sigma_data on every axis");
  }
}

double log_density(const WorldModel& world, ClassId c, const Vec2& x, double sigma) {
  return detail::evaluate_point<false>(world.packed(c), x, sigma, detail::scratch()).log_density;
}

double density(const WorldModel& world, ClassId c, const Vec2& x, double sigma) {
  return std::exp(log_density(world, c, x, sigma));
}

ScoreResult score(const WorldModel& world, ClassId c, const Vec2& x, double sigma) {
  const auto ev = detail::evaluate_point<true>(world.packed(c), x, sigma, detail::scratch());
  return {ev.score, ev.saturated};
}

int max_responsibility_component(const WorldModel& world, ClassId c, const Vec2& x, double sigma) {
  return detail::evaluate_point<false>(world.packed(c), x, sigma, detail::scratch()).argmax;
}

Vec2 sample_one(const WorldModel& world, ClassId c, double sigma, Rng& rng) {
  const PackedMixture& m = world.packed(c);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng) * m.cumulative_weight.back();
  auto it = std::upper_bound(m.cumulative_weight.begin(), m.cumulative_weight.end(), u);
  const std::size_t i = std::min<std::size_t>(it - m.cumulative_weight.begin(), m.size() - 1);
  const double s2 = sigma * sigma;
  const double a = m.sxx[i] + s2, b = m.sxy[i], d = m.syy[i] + s2;
  const double l11 = std::sqrt(a);
  const double l21 = b / l11;
  const double l22sq = d - l21 * l21;
  if (!(a > 0.0) || !(l22sq > 0.0)) {
    throw ValidationError("invariant violation: component covariance is not positive definite (Cholesky failed)");
  }
  const double l22 = std::sqrt(l22sq);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double z1 = normal(rng);
  const double z2 = normal(rng);
  return Vec2(m.mx[i] + l11 * z1, m.my[i] + l21 * z1 + l22 * z2);
}

std::vector<Vec2> sample(const WorldModel& world, ClassId c, double sigma, Rng& rng, std::size_t count) {
  if (count < 1) throw ValidationError("sample count must be >= 1");
  std::vector<Vec2> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(sample_one(world, c, sigma, rng));
  return out;
}

double DensityGrid::integral() const {
  const int n = spec.n;
  const double h = spec.step();
  double total = 0.0;
  for (int iy = 0; iy < n; ++iy) {
    const double wy = (iy == 0 || iy == n - 1) ? 0.5 : 1.0;
    double row = 0.0;
    for (int ix = 0; ix < n; ++ix) {
      const double wx = (ix == 0 || ix == n - 1) ? 0.5 : 1.0;
      row += wx * at(ix, iy);
    }
    total += wy * row;
  }
  return total * h * h;
}

double mass_threshold(const DensityGrid& grid, double quantile) {
  if (!(quantile > 0.0 && quantile <= 1.0)) throw ValidationError("quantile must be in (0, 1]");
  const double total = grid.integral();
  if (std::abs(total - 1.0) > 1e-2) {
    std::ostringstream msg;
    msg << "grid resolution: quadrature mass " << total << " deviates from 1 by more than 1e-2";
    throw ValidationError(msg.str());
  }
  if (quantile >= 1.0) return 0.0;
  const int n = grid.spec.n;
  const double h2 = grid.spec.step() * grid.spec.step();
  std::vector<std::pair<double, double>> cells;  // (density, trapezoid mass)
  cells.reserve(grid.values.size());
  for (int iy = 0; iy < n; ++iy) {
    const double wy = (iy == 0 || iy == n - 1) ? 0.5 : 1.0;
    for (int ix = 0; ix < n; ++ix) {
      const double wx = (ix == 0 || ix == n - 1) ? 0.5 : 1.0;
      const double v = grid.at(ix, iy);
      cells.emplace_back(v, wx * wy * h2 * v);
    }
  }
  std::sort(cells.begin(), cells.end(), [](const auto& l, const auto& r) { return l.first > r.first; });
  const double target = quantile * total;
  double acc = 0.0;
  for (const auto& [v, mass] : cells) {
    acc += mass;
    if (acc >= target) return v;
  }
  return 0.0;
}

double mass_threshold(const WorldModel& world, ClassId c, double quantile, const GridSpec& grid) {
  const double width = grid.hi - grid.lo;
  const double pooled = world.pooled_std().maxCoeff();
  if (!(width >= 6.0 * pooled)) throw ValidationError("grid must cover at least 6 pooled standard deviations per axis");
  return mass_threshold(density_grid(world, c, 0.0, grid), quantile);
}

}  // namespace glab::mixture
