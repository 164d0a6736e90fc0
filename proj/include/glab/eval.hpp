// Sample-quality metrics against the analytic world, contours and SVG figures.
#pragma once

#include "glab/guide.hpp"
#include "glab/mixture.hpp"
#include "glab/sampler.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace glab::eval {

inline constexpr double kContourQuantile = 0.99;

// Per-class sigma=0 density grids and their mass thresholds.
struct WorldContours {
  std::array<mixture::DensityGrid, 2> grids;
  std::array<double, 2> tau{};
  double tau_of(ClassId c) const { return tau.at(index_of(c)); }
};

WorldContours world_contours(const mixture::WorldModel& world, const mixture::GridSpec& grid = {},
                             double quantile = kContourQuantile);

// Fraction of samples with density(x, sigma=0) < tau. Empty input gives 0.
double outlier_rate(std::span<const Vec2> samples, const mixture::WorldModel& world, ClassId c, double tau);
// Distinct branches among the samples' max-responsibility components, over the class's branch count.
double branch_coverage(std::span<const Vec2> samples, const mixture::WorldModel& world, ClassId c);
// Mean log density at sigma=0. Empty input gives 0.
double mean_loglik(std::span<const Vec2> samples, const mixture::WorldModel& world, ClassId c);

struct ClassMetrics {
  double outlier_rate = 0.0;
  double branch_coverage = 0.0;
  double mean_loglik = 0.0;
  std::size_t count = 0;
};

struct RunReport {
  double outlier_rate = 0.0;     // over all samples, each against its own class threshold
  double branch_coverage = 0.0;  // mean over classes
  double mean_loglik = 0.0;      // over all samples
  std::size_t sample_count = 0;
  std::array<ClassMetrics, 2> per_class{};
  guide::GuidanceSpec guidance;
  std::uint64_t nfe = 0;
  std::string checkpoint_id;
  std::uint64_t seed = 0;
  std::string config_hash;
};

RunReport evaluate(const sampler::SampleSet& samples, const mixture::WorldModel& world, const WorldContours& contours);

nlohmann::json to_json(const RunReport& r);
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& label, const RunReport& r);

// -- contours and figures (render.cpp) ---------------------------------------

struct Polyline {
  std::vector<Vec2> points;
  bool closed = false;
};

// Iso-lines of `grid` at `level`; segments are stitched into polylines.
std::vector<Polyline> marching_squares(const mixture::DensityGrid& grid, double level);

struct Panel {
  std::string title;
  std::span<const Vec2> samples;
  std::span<const ClassId> classes;
};

struct FigureSpec {
  int grid_resolution = 1024;  // >= 256
  double quantile = kContourQuantile;
  double panel_size = 360.0;  // px
  std::filesystem::path output;
  void validate() const;
};

// Deterministic SVG: one panel per sample set, class contours plus scatter.
std::string render_svg(const FigureSpec& spec, const WorldContours& contours, std::span<const Panel> panels);
void render_figure(const FigureSpec& spec, const mixture::WorldModel& world, std::span<const Panel> panels);

}  // namespace glab::eval
