// Per-point mixture evaluation shared by the scalar API and the batch kernels.
#pragma once

#include "glab/mixture.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace glab::mixture::detail {

inline constexpr double kLog2Pi = 1.8378770664093454836;

struct PointEval {
  double log_density = 0.0;
  Vec2 score = Vec2::Zero();
  double max_term = 0.0;
  int argmax = -1;
  bool saturated = false;
};

// Log-sum-exp with max shift over all components. `terms` is scratch space.
template <bool kWithScore>
PointEval evaluate_point(const PackedMixture& m, const Vec2& x, double sigma, std::vector<double>& terms) {
  const std::size_t n = m.size();
  terms.resize(n);
  const double s2 = sigma * sigma;
  double max_term = -std::numeric_limits<double>::infinity();
  int argmax = -1;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = m.sxx[i] + s2;
    const double b = m.sxy[i];
    const double c = m.syy[i] + s2;
    const double det = a * c - b * b;
    const double dx = x.x() - m.mx[i];
    const double dy = x.y() - m.my[i];
    const double quad = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
    const double t = m.log_weight[i] - kLog2Pi - 0.5 * std::log(det) - 0.5 * quad;
    terms[i] = t;
    if (t > max_term) {
      max_term = t;
      argmax = static_cast<int>(i);
    }
  }

  PointEval out;
  out.max_term = max_term;
  out.argmax = argmax;
  out.saturated = !(max_term >= std::log(std::numeric_limits<double>::min()));

  if (!std::isfinite(max_term)) {
    // Every term underflowed even in log space; fall back to the nearest component.
    double best = std::numeric_limits<double>::infinity();
    int nearest = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = m.sxx[i] + s2, b = m.sxy[i], c = m.syy[i] + s2;
      const double det = a * c - b * b;
      const double dx = x.x() - m.mx[i], dy = x.y() - m.my[i];
      const double quad = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
      if (quad < best) {
        best = quad;
        nearest = static_cast<int>(i);
      }
    }
    out.argmax = nearest;
    out.log_density = -std::numeric_limits<double>::infinity();
    if constexpr (kWithScore) {
      const double a = m.sxx[nearest] + s2, b = m.sxy[nearest], c = m.syy[nearest] + s2;
      const double det = a * c - b * b;
      const double dx = m.mx[nearest] - x.x(), dy = m.my[nearest] - x.y();
      out.score = Vec2((c * dx - b * dy) / det, (a * dy - b * dx) / det);
    }
    return out;
  }

  double total = 0.0;
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::exp(terms[i] - max_term);
    total += r;
    if constexpr (kWithScore) {
      const double a = m.sxx[i] + s2, b = m.sxy[i], c = m.syy[i] + s2;
      const double det = a * c - b * b;
      const double dx = m.mx[i] - x.x(), dy = m.my[i] - x.y();
      sx += r * (c * dx - b * dy) / det;
      sy += r * (a * dy - b * dx) / det;
    }
  }
  out.log_density = max_term + std::log(total);
  if constexpr (kWithScore) out.score = Vec2(sx / total, sy / total);
  return out;
}

inline std::vector<double>& scratch() {
  thread_local std::vector<double> buf;
  return buf;
}

}  // namespace glab::mixture::detail
