#include "glab/sampler.hpp"

#include "glab/util.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <sstream>

namespace glab::sampler {

namespace {

constexpr std::uint64_t kNoiseStream = 0x73616d70;

bool finite(const Vec2& v) { return std::isfinite(v.x()) && std::isfinite(v.y()); }

[[noreturn]] void non_finite(const SampleSet& set, std::size_t index, int step, const std::vector<double>& ts,
                             const std::vector<Vec2>& history) {
  std::ostringstream msg;
  msg << "non-finite sampler state for sample " << index << " (class " << to_string(set.cls[index]) << ") at step "
      << step << "; trajectory:";
  for (std::size_t i = 0; i < history.size(); ++i) {
    msg << " t=" << format_double(ts[i]) << ":(" << format_double(history[i].x()) << ","
        << format_double(history[i].y()) << ")";
  }
  throw NumericalError(msg.str());
}

// x_next = D + (t_next / t_cur)(x - D); exact zero at t_next = 0.
Vec2 euler(const Vec2& x, const Vec2& d, double t_cur, double t_next) { return d + (t_next / t_cur) * (x - d); }

Vec2 heun(const Vec2& x, const Vec2& d, const Vec2& x_pred, const Vec2& d_pred, double t_cur, double t_next) {
  const Vec2 slope = (x - d) / t_cur;
  const Vec2 slope_pred = (x_pred - d_pred) / t_next;
  return x + (t_next - t_cur) * (0.5 * (slope + slope_pred));
}

SampleSet prepare(const SamplerConfig& cfg, std::span<const ClassId> classes) {
  cfg.validate();
  if (classes.size() != cfg.count) throw ContractError("heun_sample: class list size differs from count");
  SampleSet set;
  set.t = discretize(cfg);
  set.cls.assign(classes.begin(), classes.end());
  set.x.resize(cfg.count);
  for (std::size_t j = 0; j < cfg.count; ++j) set.x[j] = initial_state(cfg.seed, j, set.t[0]);
  if (cfg.record_trajectories) set.states.push_back(set.x);
  return set;
}

}  // namespace

void SamplerConfig::validate() const {
  if (steps < 2) throw ValidationError("sampler: steps must be >= 2");
  if (!(sigma_min > 0.0 && sigma_min < sigma_max) || !std::isfinite(sigma_max)) {
    throw ValidationError("sampler: need 0 < sigma_min < sigma_max");
  }
  if (!(rho > 0.0)) throw ValidationError("sampler: rho must be > 0");
  if (count < 1) throw ValidationError("sampler: count must be >= 1");
}

std::vector<double> discretize(const SamplerConfig& cfg) {
  cfg.validate();
  const double a = std::pow(cfg.sigma_max, 1.0 / cfg.rho);
  const double b = std::pow(cfg.sigma_min, 1.0 / cfg.rho);
  std::vector<double> t(static_cast<std::size_t>(cfg.steps) + 1);
  for (int i = 0; i < cfg.steps; ++i) {
    t[i] = std::pow(a + (static_cast<double>(i) / (cfg.steps - 1)) * (b - a), cfg.rho);
  }
  t[0] = cfg.sigma_max;
  t[cfg.steps - 1] = cfg.sigma_min;
  t[cfg.steps] = 0.0;
  return t;
}

std::vector<ClassId> round_robin_classes(std::size_t count) {
  std::vector<ClassId> out(count);
  for (std::size_t j = 0; j < count; ++j) out[j] = j % 2 == 0 ? ClassId::A : ClassId::B;
  return out;
}

Vec2 initial_state(std::uint64_t seed, std::size_t index, double t0) {
  Rng rng = make_rng(derive_seed(seed, kNoiseStream), index);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double x = normal(rng);
  return t0 * Vec2(x, normal(rng));
}

SampleSet heun_sample(const BatchDenoiser& denoiser, const SamplerConfig& cfg, std::span<const ClassId> classes) {
  SampleSet set = prepare(cfg, classes);
  const std::size_t n = set.x.size();
  std::vector<Vec2> d(n), x_pred(n), d_pred(n);
  for (int i = 0; i < cfg.steps; ++i) {
    const double t_cur = set.t[i];
    const double t_next = set.t[i + 1];
    denoiser(set.x, t_cur, set.cls, d);
    ++set.nfe;
    for (std::size_t j = 0; j < n; ++j) x_pred[j] = euler(set.x[j], d[j], t_cur, t_next);
    if (t_next > 0.0) {
      denoiser(x_pred, t_next, set.cls, d_pred);
      ++set.nfe;
      for (std::size_t j = 0; j < n; ++j) set.x[j] = heun(set.x[j], d[j], x_pred[j], d_pred[j], t_cur, t_next);
    } else {
      set.x.swap(x_pred);
    }
    if (cfg.record_trajectories) set.states.push_back(set.x);
    for (std::size_t j = 0; j < n; ++j) {
      if (finite(set.x[j])) continue;
      // Full history when recorded, else endpoints only.
      std::vector<Vec2> trace;
      std::vector<double> ts;
      if (cfg.record_trajectories) {
        for (const auto& s : set.states) trace.push_back(s[j]);
        ts.assign(set.t.begin(), set.t.begin() + static_cast<std::ptrdiff_t>(trace.size()));
      } else {
        trace = {initial_state(cfg.seed, j, set.t[0]), set.x[j]};
        ts = {set.t[0], t_next};
      }
      non_finite(set, j, i + 1, ts, trace);
    }
  }
  return set;
}

SampleSet heun_sample_serial(const PointDenoiser& denoiser, const SamplerConfig& cfg,
                             std::span<const ClassId> classes) {
  SampleSet set = prepare(cfg, classes);
  const std::size_t n = set.x.size();
  if (cfg.record_trajectories) set.states.resize(set.t.size(), std::vector<Vec2>(n));
  for (std::size_t j = 0; j < n; ++j) {
    Vec2 x = set.x[j];
    std::vector<Vec2> trace{x};
    std::uint64_t nfe = 0;
    for (int i = 0; i < cfg.steps; ++i) {
      const double t_cur = set.t[i];
      const double t_next = set.t[i + 1];
      const Vec2 d = denoiser(x, t_cur, set.cls[j]);
      ++nfe;
      const Vec2 xp = euler(x, d, t_cur, t_next);
      if (t_next > 0.0) {
        const Vec2 dp = denoiser(xp, t_next, set.cls[j]);
        ++nfe;
        x = heun(x, d, xp, dp, t_cur, t_next);
      } else {
        x = xp;
      }
      trace.push_back(x);
      if (!finite(x)) non_finite(set, j, i + 1, set.t, trace);
      if (cfg.record_trajectories) set.states[i + 1][j] = x;
    }
    set.x[j] = x;
    set.nfe = nfe;
  }
  return set;
}

std::string samples_csv(const SampleSet& set) {
  std::string out = "index,class,x,y\n";
  char buf[96];
  for (std::size_t j = 0; j < set.x.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.17g,%.17g\n", j, std::string(to_string(set.cls[j])).c_str(),
                  set.x[j].x(), set.x[j].y());
    out += buf;
  }
  return out;
}

void write_samples_csv(const SampleSet& set, const std::filesystem::path& path) { write_file(path, samples_csv(set)); }

SampleSet read_samples_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "index,class,x,y") throw ValidationError("samples.csv: bad header in " + path.string());
  SampleSet set;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string idx, cls, xs, ys;
    if (!std::getline(row, idx, ',') || !std::getline(row, cls, ',') || !std::getline(row, xs, ',') ||
        !std::getline(row, ys)) {
      throw ValidationError("samples.csv: malformed row '" + line + "'");
    }
    set.cls.push_back(class_from_string(cls));
    set.x.emplace_back(std::stod(xs), std::stod(ys));
  }
  return set;
}

std::string trajectories_jsonl(const SampleSet& set) {
  if (set.states.empty()) return {};
  std::string out;
  for (std::size_t j = 0; j < set.x.size(); ++j) {
    nlohmann::json row;
    row["index"] = j;
    row["class"] = to_string(set.cls[j]);
    row["t"] = set.t;
    nlohmann::json xs = nlohmann::json::array();
    for (const auto& step : set.states) xs.push_back({step[j].x(), step[j].y()});
    row["x"] = std::move(xs);
    out += row.dump();
    out += '\n';
  }
  return out;
}

}  // namespace glab::sampler
