#include "glab/guide.hpp"

#include "glab/util.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace glab::guide {

using net::Head;
using net::HeadSelection;

namespace {

struct HeadOutputs {
  std::vector<Vec2> inter, final;
};

HeadOutputs denoised(const net::NetParams& params, std::span<const Vec2> x, double sigma, std::span<const ClassId> cls,
                     HeadSelection heads) {
  const std::vector<double> sigmas(x.size(), sigma);
  const auto out = net::evaluate_batch(params, x, sigmas, cls, heads);
  const double s2 = sigma * sigma;
  HeadOutputs h;
  auto to_d = [&](const std::vector<Vec2>& score, std::vector<Vec2>& d) {
    d.resize(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) d[j] = x[j] + s2 * score[j];
  };
  if (heads.intermediate) to_d(out.score_intermediate, h.inter);
  if (heads.final) to_d(out.score_final, h.final);
  return h;
}

}  // namespace

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::None: return "none";
    case Mode::CFG: return "cfg";
    case Mode::Autoguidance: return "autoguidance";
    case Mode::IG: return "ig";
    case Mode::IG_CFG: return "ig_cfg";
  }
  return "none";
}

Mode mode_from_string(std::string_view s) {
  for (Mode m : {Mode::None, Mode::CFG, Mode::Autoguidance, Mode::IG, Mode::IG_CFG}) {
    if (s == to_string(m)) return m;
  }
  throw ValidationError("unknown guidance mode '" + std::string(s) + "'");
}

void GuidanceSpec::validate() const {
  if (!std::isfinite(w) || !(w >= 0.0)) throw ValidationError("guidance: w must be finite and >= 0");
  if (!std::isfinite(w2)) throw ValidationError("guidance: w2 must be finite");
  if (!(sigma_low >= 0.0) || !(sigma_low < sigma_high)) throw ValidationError("guidance: need 0 <= sigma_low < sigma_high");
  if (mode == Mode::Autoguidance && aux_checkpoint.empty()) {
    throw ValidationError("guidance: autoguidance requires aux_checkpoint");
  }
}

std::string GuidanceSpec::label() const {
  std::string s(to_string(mode));
  if (mode == Mode::None) return s;
  s += "_w" + format_double(w);
  if (mode == Mode::IG_CFG) s += "_w" + format_double(w2);
  if (sigma_low != 0.0 || std::isfinite(sigma_high)) {
    s += "_i" + format_double(sigma_low) + "-" + (std::isfinite(sigma_high) ? format_double(sigma_high) : "inf");
  }
  return s;
}

nlohmann::json to_json(const GuidanceSpec& spec) {
  nlohmann::json j;
  j["mode"] = to_string(spec.mode);
  j["w"] = spec.w;
  j["w2"] = spec.w2;
  j["sigma_low"] = spec.sigma_low;
  j["sigma_high"] = std::isfinite(spec.sigma_high) ? nlohmann::json(spec.sigma_high) : nlohmann::json(nullptr);
  j["aux_checkpoint"] = spec.aux_checkpoint;
  return j;
}

GuidanceSpec spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("guidance: expected an object");
  GuidanceSpec s;
  try {
    if (j.contains("mode")) s.mode = mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("w")) s.w = j.at("w").get<double>();
    if (j.contains("w2")) s.w2 = j.at("w2").get<double>();
    if (j.contains("sigma_low")) s.sigma_low = j.at("sigma_low").get<double>();
    if (j.contains("sigma_high") && !j.at("sigma_high").is_null()) s.sigma_high = j.at("sigma_high").get<double>();
    if (j.contains("aux_checkpoint") && !j.at("aux_checkpoint").is_null()) {
      s.aux_checkpoint = j.at("aux_checkpoint").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("guidance: ") + e.what());
  }
  for (const auto& [key, value] : j.items()) {
    static const char* known[] = {"mode", "w", "w2", "sigma_low", "sigma_high", "aux_checkpoint"};
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw ValidationError("guidance: unknown field '" + key + "'");
    }
  }
  return s;
}

GuidedDenoiser::GuidedDenoiser(DenoiserBundle bundle, GuidanceSpec spec) : bundle_(bundle), spec_(std::move(spec)) {
  spec_.validate();
  if (bundle_.main == nullptr) throw ContractError("GuidedDenoiser: main model missing");
  if (spec_.mode == Mode::Autoguidance && bundle_.aux == nullptr) {
    throw ValidationError("guidance: autoguidance requires an aux model");
  }
}

int GuidedDenoiser::trunk_passes_per_call() const {
  switch (spec_.mode) {
    case Mode::None:
    case Mode::IG: return 1;
    default: return 2;
  }
}

void GuidedDenoiser::denoise(std::span<const Vec2> x, double sigma, std::span<const ClassId> cls,
                             std::span<Vec2> out) const {
  if (cls.size() != x.size() || out.size() != x.size()) throw ContractError("GuidedDenoiser::denoise: sizes differ");
  if (x.empty()) return;
  const double w = interval_weight(sigma, spec_.w, spec_.sigma_low, spec_.sigma_high);
  const auto& main = *bundle_.main;
  const std::size_t n = x.size();
  switch (spec_.mode) {
    case Mode::None: {
      const auto h = denoised(main, x, sigma, cls, {.intermediate = false, .final = true});
      std::copy(h.final.begin(), h.final.end(), out.begin());
      return;
    }
    case Mode::IG: {
      const auto h = denoised(main, x, sigma, cls, {.intermediate = true, .final = true});
      for (std::size_t j = 0; j < n; ++j) out[j] = internal_guidance(h.inter[j], h.final[j], w);
      return;
    }
    case Mode::CFG: {
      const std::vector<ClassId> null(n, ClassId::Null);
      const auto u = denoised(main, x, sigma, null, {.intermediate = false, .final = true});
      const auto c = denoised(main, x, sigma, cls, {.intermediate = false, .final = true});
      for (std::size_t j = 0; j < n; ++j) out[j] = cfg(u.final[j], c.final[j], w);
      return;
    }
    case Mode::Autoguidance: {
      const auto bad = denoised(*bundle_.aux, x, sigma, cls, {.intermediate = false, .final = true});
      const auto good = denoised(main, x, sigma, cls, {.intermediate = false, .final = true});
      for (std::size_t j = 0; j < n; ++j) out[j] = autoguidance(bad.final[j], good.final[j], w);
      return;
    }
    case Mode::IG_CFG: {
      const double w2 = interval_weight(sigma, spec_.w2, spec_.sigma_low, spec_.sigma_high);
      const std::vector<ClassId> null(n, ClassId::Null);
      const auto u = denoised(main, x, sigma, null, {.intermediate = true, .final = true});
      const auto c = denoised(main, x, sigma, cls, {.intermediate = true, .final = true});
      for (std::size_t j = 0; j < n; ++j) {
        out[j] = cfg(internal_guidance(u.inter[j], u.final[j], w), internal_guidance(c.inter[j], c.final[j], w), w2);
      }
      return;
    }
  }
}

Vec2 GuidedDenoiser::denoise_one(const Vec2& x, double sigma, ClassId cls) const {
  const double w = interval_weight(sigma, spec_.w, spec_.sigma_low, spec_.sigma_high);
  const auto& main = *bundle_.main;
  auto d = [&](const net::NetParams& p, ClassId c, Head h) { return net::denoise(p, {x, sigma, c}, h); };
  switch (spec_.mode) {
    case Mode::None: return d(main, cls, Head::Final);
    case Mode::IG: return internal_guidance(d(main, cls, Head::Intermediate), d(main, cls, Head::Final), w);
    case Mode::CFG: return cfg(d(main, ClassId::Null, Head::Final), d(main, cls, Head::Final), w);
    case Mode::Autoguidance: return autoguidance(d(*bundle_.aux, cls, Head::Final), d(main, cls, Head::Final), w);
    case Mode::IG_CFG: {
      const double w2 = interval_weight(sigma, spec_.w2, spec_.sigma_low, spec_.sigma_high);
      const Vec2 u = internal_guidance(d(main, ClassId::Null, Head::Intermediate), d(main, ClassId::Null, Head::Final), w);
      const Vec2 c = internal_guidance(d(main, cls, Head::Intermediate), d(main, cls, Head::Final), w);
      return cfg(u, c, w2);
    }
  }
  return x;
}

}  // namespace glab::guide
