// Data-parallel mixture kernels and their serial references.
#include "glab/mixture.hpp"

#include "mixture_detail.hpp"

#include <algorithm>
#include <cmath>

namespace glab::mixture {
namespace {

void check_batch(std::size_t classes, std::size_t xs, std::size_t sigmas, std::size_t out) {
  if (classes != xs || sigmas != xs || out != xs) throw ContractError("score_batch: span sizes differ");
}

}  // namespace

void score_batch(const WorldModel& world, std::span<const ClassId> classes, std::span<const Vec2> xs,
                 std::span<const double> sigmas, std::span<Vec2> out) {
  check_batch(classes.size(), xs.size(), sigmas.size(), out.size());
  const auto n = static_cast<std::ptrdiff_t>(xs.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[i] = detail::evaluate_point<true>(world.packed(classes[i]), xs[i], sigmas[i], detail::scratch()).score;
  }
}

void score_batch_serial(const WorldModel& world, std::span<const ClassId> classes, std::span<const Vec2> xs,
                        std::span<const double> sigmas, std::span<Vec2> out) {
  check_batch(classes.size(), xs.size(), sigmas.size(), out.size());
  std::vector<double> terms;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[i] = detail::evaluate_point<true>(world.packed(classes[i]), xs[i], sigmas[i], terms).score;
  }
}

void log_density_batch(const WorldModel& world, ClassId c, std::span<const Vec2> xs, double sigma,
                       std::span<double> out) {
  if (xs.size() != out.size()) throw ContractError("log_density_batch: span sizes differ");
  const auto n = static_cast<std::ptrdiff_t>(xs.size());
  const PackedMixture& m = world.packed(c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[i] = detail::evaluate_point<false>(m, xs[i], sigma, detail::scratch()).log_density;
  }
}

DensityGrid density_grid(const WorldModel& world, ClassId c, double sigma, const GridSpec& grid) {
  if (grid.n < 2 || !(grid.hi > grid.lo)) throw ValidationError("invalid grid");
  const PackedMixture& m = world.packed(c);
  const std::size_t k = m.size();
  const double s2 = sigma * sigma;
  const double h = grid.step();

  struct Splat {
    double ia, ib, ic;  // inverse covariance entries
    double norm;
    double mx, my;
    int x0, x1, y0, y1;  // inclusive node ranges
  };
  std::vector<Splat> splats(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double a = m.sxx[i] + s2, b = m.sxy[i], cc = m.syy[i] + s2;
    const double det = a * cc - b * b;
    Splat& s = splats[i];
    s.ia = cc / det;
    s.ib = -b / det;
    s.ic = a / det;
    s.norm = std::exp(m.log_weight[i] - detail::kLog2Pi - 0.5 * std::log(det));
    s.mx = m.mx[i];
    s.my = m.my[i];
    const double rx = 8.0 * std::sqrt(a);
    const double ry = 8.0 * std::sqrt(cc);
    s.x0 = std::max(0, static_cast<int>(std::floor((s.mx - rx - grid.lo) / h)));
    s.x1 = std::min(grid.n - 1, static_cast<int>(std::ceil((s.mx + rx - grid.lo) / h)));
    s.y0 = std::max(0, static_cast<int>(std::floor((s.my - ry - grid.lo) / h)));
    s.y1 = std::min(grid.n - 1, static_cast<int>(std::ceil((s.my + ry - grid.lo) / h)));
  }

  DensityGrid out{grid, std::vector<double>(static_cast<std::size_t>(grid.n) * grid.n, 0.0)};
  // Each row is owned by one thread and components are added in index order,
  // so the result does not depend on the thread count.
#pragma omp parallel for schedule(dynamic, 8)
  for (int iy = 0; iy < grid.n; ++iy) {
    const double y = grid.coord(iy);
    double* row = out.values.data() + static_cast<std::size_t>(iy) * grid.n;
    for (const Splat& s : splats) {
      if (iy < s.y0 || iy > s.y1) continue;
      const double dy = y - s.my;
      for (int ix = s.x0; ix <= s.x1; ++ix) {
        const double dx = grid.coord(ix) - s.mx;
        const double q = s.ia * dx * dx + 2.0 * s.ib * dx * dy + s.ic * dy * dy;
        row[ix] += s.norm * std::exp(-0.5 * q);
      }
    }
  }
  return out;
}

DensityGrid density_grid_reference(const WorldModel& world, ClassId c, double sigma, const GridSpec& grid) {
  if (grid.n < 2 || !(grid.hi > grid.lo)) throw ValidationError("invalid grid");
  DensityGrid out{grid, std::vector<double>(static_cast<std::size_t>(grid.n) * grid.n, 0.0)};
  for (int iy = 0; iy < grid.n; ++iy) {
    for (int ix = 0; ix < grid.n; ++ix) {
      out.values[static_cast<std::size_t>(iy) * grid.n + ix] =
          density(world, c, Vec2(grid.coord(ix), grid.coord(iy)), sigma);
    }
  }
  return out;
}

}  // namespace glab::mixture
