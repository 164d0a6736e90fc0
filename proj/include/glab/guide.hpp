// Guidance combinators in denoised-sample space.
#pragma once

#include "glab/common.hpp"
#include "glab/net.hpp"

#include <json.hpp>

#include <limits>
#include <span>
#include <string>

namespace glab::guide {

enum class Mode { None, CFG, Autoguidance, IG, IG_CFG };

std::string_view to_string(Mode m);
Mode mode_from_string(std::string_view s);

struct GuidanceSpec {
  Mode mode = Mode::None;
  double w = 1.0;
  double w2 = 1.0;  // CFG weight of IG_CFG
  double sigma_low = 0.0;
  double sigma_high = std::numeric_limits<double>::infinity();
  std::string aux_checkpoint;  // Autoguidance only

  void validate() const;
  // Short human-readable tag, e.g. "ig_w2" or "ig_cfg_w1_w1.5".
  std::string label() const;
};

nlohmann::json to_json(const GuidanceSpec& spec);  // infinite sigma_high is written as null
GuidanceSpec spec_from_json(const nlohmann::json& j);

// A + w (B - A); B exactly when w == 1.
inline Vec2 extrapolate(const Vec2& a, const Vec2& b, double w) {
  if (w == 1.0) return b;
  return a + w * (b - a);
}

inline Vec2 internal_guidance(const Vec2& d_inter, const Vec2& d_final, double w) {
  return extrapolate(d_inter, d_final, w);
}
inline Vec2 cfg(const Vec2& d_uncond, const Vec2& d_cond, double w) { return extrapolate(d_uncond, d_cond, w); }
inline Vec2 autoguidance(const Vec2& d_bad, const Vec2& d_good, double w) { return extrapolate(d_bad, d_good, w); }

// w for sigma in (sigma_low, sigma_high], 1 otherwise.
inline double interval_weight(double sigma, double w, double sigma_low, double sigma_high) {
  return (sigma > sigma_low && sigma <= sigma_high) ? w : 1.0;
}

struct DenoiserBundle {
  const net::NetParams* main = nullptr;
  const net::NetParams* aux = nullptr;  // Autoguidance "bad" model
};

// Pure function of (x, sigma, c). Trunk passes per sample and call:
// None 1, IG 1, CFG 2, Autoguidance 2, IG_CFG 2.
class GuidedDenoiser {
 public:
  GuidedDenoiser(DenoiserBundle bundle, GuidanceSpec spec);

  // Batched path; one sigma for the whole batch.
  void denoise(std::span<const Vec2> x, double sigma, std::span<const ClassId> cls, std::span<Vec2> out) const;
  // Single-point path through the forward-mode reference network.
  Vec2 denoise_one(const Vec2& x, double sigma, ClassId cls) const;

  const GuidanceSpec& spec() const { return spec_; }
  int trunk_passes_per_call() const;

 private:
  DenoiserBundle bundle_;
  GuidanceSpec spec_;
};

}  // namespace glab::guide
