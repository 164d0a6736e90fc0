#include "glab/eval.hpp"
#include "glab/util.hpp"

#include <array>
#include <cstdio>
#include <unordered_map>

namespace glab::eval {

namespace {

// Edges of cell (ix, iy): 0 bottom, 1 right, 2 top, 3 left.
// Per case, up to two segments as edge pairs; -1 terminates.
constexpr std::array<std::array<int, 4>, 16> kCases = {{
    {-1, -1, -1, -1},  // 0
    {3, 0, -1, -1},    // 1
    {0, 1, -1, -1},    // 2
    {3, 1, -1, -1},    // 3
    {1, 2, -1, -1},    // 4
    {-1, -1, -1, -1},  // 5, saddle
    {0, 2, -1, -1},    // 6
    {3, 2, -1, -1},    // 7
    {2, 3, -1, -1},    // 8
    {0, 2, -1, -1},    // 9
    {-1, -1, -1, -1},  // 10, saddle
    {1, 2, -1, -1},    // 11
    {3, 1, -1, -1},    // 12
    {0, 1, -1, -1},    // 13
    {3, 0, -1, -1},    // 14
    {-1, -1, -1, -1},  // 15
}};

struct Segment {
  std::int64_t a, b;  // edge keys
};

class Tracer {
 public:
  Tracer(const mixture::DensityGrid& grid, double level) : g_(grid), level_(level), n_(grid.spec.n) {}

  std::vector<Polyline> run() {
    collect();
    return stitch();
  }

 private:
  // Horizontal edge (ix, iy)-(ix+1, iy): 2 k; vertical (ix, iy)-(ix, iy+1): 2 k + 1; k = iy n + ix.
  std::int64_t edge_key(int ix, int iy, int edge) const {
    switch (edge) {
      case 0: return 2 * (static_cast<std::int64_t>(iy) * n_ + ix);
      case 1: return 2 * (static_cast<std::int64_t>(iy) * n_ + ix + 1) + 1;
      case 2: return 2 * (static_cast<std::int64_t>(iy + 1) * n_ + ix);
      default: return 2 * (static_cast<std::int64_t>(iy) * n_ + ix) + 1;
    }
  }

  Vec2 edge_point(std::int64_t key) const {
    const std::int64_t k = key / 2;
    const int ix = static_cast<int>(k % n_);
    const int iy = static_cast<int>(k / n_);
    const bool vertical = key % 2 == 1;
    const int jx = vertical ? ix : ix + 1;
    const int jy = vertical ? iy + 1 : iy;
    const double va = g_.at(ix, iy), vb = g_.at(jx, jy);
    const double t = (level_ - va) / (vb - va);
    const double h = g_.spec.step();
    return {g_.spec.coord(ix) + (vertical ? 0.0 : t * h), g_.spec.coord(iy) + (vertical ? t * h : 0.0)};
  }

  void add(int ix, int iy, int e0, int e1) {
    const std::size_t id = segments_.size();
    const std::int64_t a = edge_key(ix, iy, e0), b = edge_key(ix, iy, e1);
    segments_.push_back({a, b});
    links_[a].push_back(id);
    links_[b].push_back(id);
  }

  void collect() {
    for (int iy = 0; iy + 1 < n_; ++iy) {
      for (int ix = 0; ix + 1 < n_; ++ix) {
        const double v0 = g_.at(ix, iy), v1 = g_.at(ix + 1, iy), v2 = g_.at(ix + 1, iy + 1), v3 = g_.at(ix, iy + 1);
        const int c = (v0 > level_ ? 1 : 0) | (v1 > level_ ? 2 : 0) | (v2 > level_ ? 4 : 0) | (v3 > level_ ? 8 : 0);
        if (c == 5 || c == 10) {
          const bool center_high = 0.25 * (v0 + v1 + v2 + v3) > level_;
          if ((c == 5) == center_high) {
            add(ix, iy, 0, 1);
            add(ix, iy, 2, 3);
          } else {
            add(ix, iy, 3, 0);
            add(ix, iy, 1, 2);
          }
          continue;
        }
        const auto& s = kCases[c];
        if (s[0] >= 0) add(ix, iy, s[0], s[1]);
      }
    }
  }

  // Next unused segment sharing `edge`, or npos.
  std::size_t next(std::int64_t edge) const {
    const auto it = links_.find(edge);
    if (it == links_.end()) return npos;
    for (std::size_t id : it->second) {
      if (!used_[id]) return id;
    }
    return npos;
  }

  std::vector<std::int64_t> walk(std::int64_t from) {
    std::vector<std::int64_t> keys;
    std::int64_t edge = from;
    for (std::size_t id = next(edge); id != npos; id = next(edge)) {
      used_[id] = 1;
      edge = segments_[id].a == edge ? segments_[id].b : segments_[id].a;
      keys.push_back(edge);
    }
    return keys;
  }

  std::vector<Polyline> stitch() {
    used_.assign(segments_.size(), 0);
    std::vector<Polyline> out;
    for (std::size_t s = 0; s < segments_.size(); ++s) {
      if (used_[s]) continue;
      used_[s] = 1;
      const auto forward = walk(segments_[s].b);
      const auto backward = walk(segments_[s].a);
      std::vector<std::int64_t> keys(backward.rbegin(), backward.rend());
      keys.push_back(segments_[s].a);
      keys.push_back(segments_[s].b);
      keys.insert(keys.end(), forward.begin(), forward.end());
      Polyline p;
      p.closed = keys.size() > 2 && keys.front() == keys.back();
      if (p.closed) keys.pop_back();
      p.points.reserve(keys.size());
      for (auto k : keys) p.points.push_back(edge_point(k));
      out.push_back(std::move(p));
    }
    return out;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  const mixture::DensityGrid& g_;
  double level_;
  int n_;
  std::vector<Segment> segments_;
  std::unordered_map<std::int64_t, std::vector<std::size_t>> links_;
  std::vector<char> used_;
};

constexpr const char* kStroke[2] = {"#1f5fa8", "#b8322a"};
constexpr const char* kFill[2] = {"#4f8fd8", "#e0625a"};

std::string fmt(const char* pattern, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, a);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::vector<Polyline> marching_squares(const mixture::DensityGrid& grid, double level) {
  if (grid.spec.n < 2 || grid.values.size() != static_cast<std::size_t>(grid.spec.n) * grid.spec.n) {
    throw ContractError("marching_squares: malformed grid");
  }
  return Tracer(grid, level).run();
}

void FigureSpec::validate() const {
  if (grid_resolution < 256) throw ValidationError("figure: grid resolution must be >= 256");
  if (!(quantile > 0.0 && quantile < 1.0)) throw ValidationError("figure: contour quantile must be in (0, 1)");
  if (!(panel_size > 0.0)) throw ValidationError("figure: panel size must be > 0");
}

std::string render_svg(const FigureSpec& spec, const WorldContours& contours, std::span<const Panel> panels) {
  spec.validate();
  const double size = spec.panel_size;
  const double title_h = 24.0;
  const double pad = 8.0;
  const double width = std::max<std::size_t>(panels.size(), 1) * (size + pad) + pad;
  const double height = size + title_h + 2 * pad;
  const auto& gs = contours.grids[0].spec;
  const double scale = size / (gs.hi - gs.lo);
  auto px = [&](const Vec2& p) {
    return fmt("%.2f", (p.x() - gs.lo) * scale) + "," + fmt("%.2f", (gs.hi - p.y()) * scale);
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" xmlns:xlink=\"http://www.w3.org/1999/xlink\" width=\"" +
         fmt("%.0f", width) + "\" height=\"" + fmt("%.0f", height) + "\" viewBox=\"0 0 " + fmt("%.0f", width) + " " +
         fmt("%.0f", height) + "\">\n";
  svg += "<defs>\n<g id=\"contours\" fill=\"none\" stroke-width=\"1.2\">\n";
  for (int k = 0; k < 2; ++k) {
    for (const auto& line : marching_squares(contours.grids[k], contours.tau[k])) {
      svg += std::string(line.closed ? "<polygon" : "<polyline") + " stroke=\"" + kStroke[k] + "\" points=\"";
      for (std::size_t i = 0; i < line.points.size(); ++i) {
        if (i) svg += ' ';
        svg += px(line.points[i]);
      }
      svg += "\"/>\n";
    }
  }
  svg += "</g>\n</defs>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Panel& panel = panels[p];
    if (panel.classes.size() != panel.samples.size()) throw ContractError("render_svg: panel sizes differ");
    const double ox = pad + static_cast<double>(p) * (size + pad);
    svg += "<g transform=\"translate(" + fmt("%.2f", ox) + "," + fmt("%.2f", pad) + ")\">\n";
    svg += "<text x=\"" + fmt("%.2f", size / 2) + "\" y=\"16\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"14\">" + escape(panel.title) + "</text>\n";
    svg += "<g transform=\"translate(0," + fmt("%.2f", title_h) + ")\">\n";
    svg += "<rect width=\"" + fmt("%.2f", size) + "\" height=\"" + fmt("%.2f", size) +
           "\" fill=\"none\" stroke=\"#999\"/>\n";
    for (int k = 0; k < 2; ++k) {
      svg += std::string("<g fill=\"") + kFill[k] + "\" fill-opacity=\"0.45\">\n";
      for (std::size_t j = 0; j < panel.samples.size(); ++j) {
        if (index_of(panel.classes[j]) != k) continue;
        const Vec2& x = panel.samples[j];
        if (x.x() < gs.lo || x.x() > gs.hi || x.y() < gs.lo || x.y() > gs.hi) continue;
        svg += "<circle cx=\"" + fmt("%.2f", (x.x() - gs.lo) * scale) + "\" cy=\"" +
               fmt("%.2f", (gs.hi - x.y()) * scale) + "\" r=\"0.9\"/>\n";
      }
      svg += "</g>\n";
    }
    svg += "<use xlink:href=\"#contours\"/>\n</g>\n</g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

void render_figure(const FigureSpec& spec, const mixture::WorldModel& world, std::span<const Panel> panels) {
  spec.validate();
  mixture::GridSpec grid;
  grid.n = spec.grid_resolution;
  const WorldContours contours = world_contours(world, grid, spec.quantile);
  write_file(spec.output, render_svg(spec, contours, panels));
}

}  // namespace glab::eval
