#include "glab/eval.hpp"

#include "glab/util.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace glab::eval {

namespace {

// Samples of one class, in input order.
std::vector<Vec2> select(const sampler::SampleSet& s, ClassId c) {
  std::vector<Vec2> out;
  for (std::size_t j = 0; j < s.x.size(); ++j) {
    if (s.cls[j] == c) out.push_back(s.x[j]);
  }
  return out;
}

std::vector<double> log_densities(std::span<const Vec2> samples, const mixture::WorldModel& world, ClassId c) {
  std::vector<double> out(samples.size());
  if (!samples.empty()) mixture::log_density_batch(world, c, samples, 0.0, out);
  return out;
}

}  // namespace

WorldContours world_contours(const mixture::WorldModel& world, const mixture::GridSpec& grid, double quantile) {
  WorldContours wc;
  for (ClassId c : {ClassId::A, ClassId::B}) {
    const int k = index_of(c);
    wc.grids[k] = mixture::density_grid(world, c, 0.0, grid);
    wc.tau[k] = mixture::mass_threshold(wc.grids[k], quantile);
  }
  return wc;
}

double outlier_rate(std::span<const Vec2> samples, const mixture::WorldModel& world, ClassId c, double tau) {
  if (samples.empty()) return 0.0;
  const auto logp = log_densities(samples, world, c);
  std::size_t outside = 0;
  for (double lp : logp) outside += std::exp(lp) < tau ? 1 : 0;
  return static_cast<double>(outside) / static_cast<double>(samples.size());
}

double branch_coverage(std::span<const Vec2> samples, const mixture::WorldModel& world, ClassId c) {
  const auto& mix = world.mixture(c);
  if (samples.empty() || mix.branch_count == 0) return 0.0;
  std::vector<char> hit(static_cast<std::size_t>(mix.branch_count), 0);
  for (const Vec2& x : samples) {
    const int k = mixture::max_responsibility_component(world, c, x, 0.0);
    hit[static_cast<std::size_t>(mix.components[k].branch)] = 1;
  }
  const auto distinct = std::count(hit.begin(), hit.end(), 1);
  return static_cast<double>(distinct) / static_cast<double>(mix.branch_count);
}

double mean_loglik(std::span<const Vec2> samples, const mixture::WorldModel& world, ClassId c) {
  if (samples.empty()) return 0.0;
  const auto logp = log_densities(samples, world, c);
  double sum = 0.0;
  for (double lp : logp) sum += lp;
  return sum / static_cast<double>(samples.size());
}

RunReport evaluate(const sampler::SampleSet& samples, const mixture::WorldModel& world, const WorldContours& contours) {
  RunReport r;
  r.sample_count = samples.x.size();
  r.nfe = samples.nfe;
  double outliers = 0.0, loglik = 0.0, coverage = 0.0;
  for (ClassId c : {ClassId::A, ClassId::B}) {
    const auto xs = select(samples, c);
    ClassMetrics& m = r.per_class[index_of(c)];
    m.count = xs.size();
    m.outlier_rate = outlier_rate(xs, world, c, contours.tau_of(c));
    m.branch_coverage = branch_coverage(xs, world, c);
    m.mean_loglik = mean_loglik(xs, world, c);
    outliers += m.outlier_rate * static_cast<double>(m.count);
    loglik += m.mean_loglik * static_cast<double>(m.count);
    coverage += m.branch_coverage;
  }
  if (r.sample_count > 0) {
    r.outlier_rate = outliers / static_cast<double>(r.sample_count);
    r.mean_loglik = loglik / static_cast<double>(r.sample_count);
  }
  r.branch_coverage = coverage / kNumClasses;
  if (!std::isfinite(r.mean_loglik)) throw NumericalError("mean log-likelihood is not finite");
  return r;
}

nlohmann::json to_json(const RunReport& r) {
  nlohmann::json j;
  j["outlier_rate"] = r.outlier_rate;
  j["branch_coverage"] = r.branch_coverage;
  j["mean_loglik"] = r.mean_loglik;
  j["sample_count"] = r.sample_count;
  j["nfe"] = r.nfe;
  j["guidance"] = guide::to_json(r.guidance);
  j["checkpoint_id"] = r.checkpoint_id;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  nlohmann::json per = nlohmann::json::object();
  for (ClassId c : {ClassId::A, ClassId::B}) {
    const auto& m = r.per_class[index_of(c)];
    per[std::string(to_string(c))] = {{"outlier_rate", m.outlier_rate},
                                      {"branch_coverage", m.branch_coverage},
                                      {"mean_loglik", m.mean_loglik},
                                      {"count", m.count}};
  }
  j["per_class"] = std::move(per);
  return j;
}

std::string metrics_csv_header() { return "label,mode,w,w2,sigma_low,sigma_high,outlier_rate,branch_coverage,mean_loglik,sample_count,nfe\n"; }

std::string metrics_csv_row(const std::string& label, const RunReport& r) {
  const auto& g = r.guidance;
  std::string row = label;
  for (const std::string& field :
       {std::string(guide::to_string(g.mode)), format_double(g.w), format_double(g.w2), format_double(g.sigma_low),
        std::isfinite(g.sigma_high) ? format_double(g.sigma_high) : std::string("inf"), format_double(r.outlier_rate),
        format_double(r.branch_coverage), format_double(r.mean_loglik), std::to_string(r.sample_count),
        std::to_string(r.nfe)}) {
    row += ',';
    row += field;
  }
  return row + '\n';
}

}  // namespace glab::eval
