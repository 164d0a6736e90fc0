#include "glab/net.hpp"

#include "glab/util.hpp"

#include <algorithm>
#include <cmath>

namespace glab::net {

using diffkit::DualScalar;
using diffkit::GradTape;
using diffkit::Matrix;
using diffkit::NodeId;

namespace {

std::atomic<std::uint64_t> g_trunk_passes{0};

const double kInvSqrt2 = 1.0 / std::sqrt(2.0);
const double kMpSiluGain = 1.0 / kMpSiluDivisor;

void require_positive_sigma(double sigma) {
  if (!(sigma > 0.0)) throw ValidationError("domain error: sigma must be > 0 for the energy model");
}

// Row-normalized copy of a weight block, matching GradTape::affine.
Matrix normalized(const diffkit::ParamSet& set, int block) {
  Matrix w = set.block(block);
  for (Eigen::Index r = 0; r < w.rows(); ++r) w.row(r) /= w.row(r).norm();
  return w;
}

std::vector<DualScalar> dense(const Matrix& w, const std::vector<DualScalar>& in) {
  std::vector<DualScalar> out(static_cast<std::size_t>(w.rows()));
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    DualScalar acc;
    for (Eigen::Index c = 0; c < w.cols(); ++c) acc += w(r, c) * in[c];
    out[r] = acc;
  }
  return out;
}

void mp_silu(std::vector<DualScalar>& v) {
  for (auto& e : v) e = kMpSiluGain * diffkit::silu(e);
}

// Head features as DualScalars over the two input coordinates.
std::vector<DualScalar> features_dual(const NetParams& params, const std::array<DualScalar, 2>& x, double sigma,
                                      ClassId cls, Head head) {
  require_positive_sigma(sigma);
  const auto& set = params.set();
  const double inv = 1.0 / std::sqrt(sigma * sigma + params.sigma_data() * params.sigma_data());
  const std::vector<DualScalar> u{inv * x[0], inv * x[1], DualScalar::constant(0.25 * std::log(sigma)),
                                  DualScalar::constant(1.0)};
  std::vector<DualScalar> h = dense(normalized(set, params.input_block()), u);
  const auto table = set.block(params.embedding_block());
  for (std::size_t r = 0; r < h.size(); ++r) h[r] = kInvSqrt2 * (h[r] + table(static_cast<Eigen::Index>(r), index_of(cls)));
  mp_silu(h);
  const int last = head == Head::Intermediate ? kHeadLayer : kHiddenLayers;
  for (int layer = 1; layer <= last; ++layer) {
    h = dense(normalized(set, params.hidden_block(layer)), h);
    mp_silu(h);
  }
  return dense(normalized(set, params.head_block(head)), h);
}

DualScalar energy_dual(const NetParams& params, const std::array<DualScalar, 2>& x, double sigma, ClassId cls,
                       Head head) {
  const std::vector<DualScalar> f = features_dual(params, x, sigma, cls, head);
  const double inv = 1.0 / std::sqrt(sigma * sigma + params.sigma_data() * params.sigma_data());
  const DualScalar quad = -0.5 * (square(inv * x[0]) + square(inv * x[1]));
  DualScalar sum;
  for (const auto& e : f) sum += square(e);
  return quad + (-params.gain(head) / (sigma * params.features())) * sum;
}

}  // namespace

NetParams::NetParams(int width, double sigma_data) : width_(width), sigma_data_(sigma_data) {
  if (width < 1) throw ValidationError("network width must be >= 1");
  input_ = set_.add_block("input.weight", width, kInputDim, true);
  embedding_ = set_.add_block("class.embedding", width, kEmbeddingRows, false);
  for (int k = 0; k < kHiddenLayers; ++k) {
    hidden_[k] = set_.add_block("hidden" + std::to_string(k + 1) + ".weight", width, width, true);
  }
  head_[0] = set_.add_block("head.intermediate.weight", width, width, true);
  head_[1] = set_.add_block("head.final.weight", width, width, true);
  gain_[0] = set_.add_block("gain.intermediate", 1, 1, false);
  gain_[1] = set_.add_block("gain.final", 1, 1, false);
}

NetParams NetParams::zeros(int width, double sigma_data) { return NetParams(width, sigma_data); }

NetParams NetParams::initialize(std::uint64_t seed, int width, double sigma_data) {
  NetParams p(width, sigma_data);
  Rng rng = make_rng(seed, 0x6e6574);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t b = 0; b < p.set_.blocks().size(); ++b) {
    const int id = static_cast<int>(b);
    if (id == p.gain_[0] || id == p.gain_[1]) continue;
    auto w = p.set_.block(id);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = normal(rng);
    }
  }
  p.set_.normalize_rows();
  return p;
}

bool NetParams::operator==(const NetParams& other) const {
  if (width_ != other.width_ || sigma_data_ != other.sigma_data_ || !set_.same_layout(other.set_)) return false;
  const auto a = set_.flat();
  const auto b = other.set_.flat();
  return std::equal(a.begin(), a.end(), b.begin());
}

Vec2 precondition_input(const Vec2& x, double sigma, double sigma_data) {
  return x / std::sqrt(sigma * sigma + sigma_data * sigma_data);
}

std::vector<double> features(const NetParams& params, const NetInput& input, Head head) {
  const std::array<DualScalar, 2> x{DualScalar::constant(input.x.x()), DualScalar::constant(input.x.y())};
  const auto f = features_dual(params, x, input.sigma, input.cls, head);
  std::vector<double> out;
  out.reserve(f.size());
  for (const auto& e : f) out.push_back(e.value);
  return out;
}

double energy(const NetParams& params, const NetInput& input, Head head) {
  const std::array<DualScalar, 2> x{DualScalar::constant(input.x.x()), DualScalar::constant(input.x.y())};
  return energy_dual(params, x, input.sigma, input.cls, head).value;
}

Vec2 model_score(const NetParams& params, const NetInput& input, Head head) {
  return diffkit::input_gradient(
             [&](const std::array<DualScalar, 2>& x) { return energy_dual(params, x, input.sigma, input.cls, head); },
             input.x)
      .grad;
}

Vec2 denoise(const NetParams& params, const NetInput& input, Head head) {
  return input.x + input.sigma * input.sigma * model_score(params, input, head);
}

EnergyNodes build_energy(GradTape& tape, const NetParams& params, std::span<const Vec2> xs,
                         std::span<const double> sigmas, std::span<const ClassId> classes, HeadSelection heads) {
  const auto batch = static_cast<Eigen::Index>(xs.size());
  if (sigmas.size() != xs.size() || classes.size() != xs.size()) throw ContractError("build_energy: span sizes differ");
  if (batch == 0) throw ContractError("build_energy: empty batch");
  const double sd2 = params.sigma_data() * params.sigma_data();
  const double n = params.features();

  Matrix u(kInputDim, batch), tx = Matrix::Zero(kInputDim, batch), ty = Matrix::Zero(kInputDim, batch);
  Matrix quad(1, batch), quad_dx(1, batch), quad_dy(1, batch);
  diffkit::RowVector out_scale(batch);
  std::vector<int> cls(static_cast<std::size_t>(batch));
  for (Eigen::Index j = 0; j < batch; ++j) {
    const double sigma = sigmas[j];
    require_positive_sigma(sigma);
    const double inv = 1.0 / std::sqrt(sigma * sigma + sd2);
    const Vec2 xs_j = xs[j] * inv;
    u.col(j) << xs_j.x(), xs_j.y(), 0.25 * std::log(sigma), 1.0;
    tx(0, j) = inv;
    ty(1, j) = inv;
    quad(0, j) = -0.5 * (xs_j.x() * xs_j.x() + xs_j.y() * xs_j.y());
    quad_dx(0, j) = -xs_j.x() * inv;
    quad_dy(0, j) = -xs_j.y() * inv;
    out_scale(j) = -1.0 / (sigma * n);
    cls[j] = index_of(classes[j]);
  }

  const NodeId in = tape.input(std::move(u), tx, ty);
  NodeId h = tape.affine(params.input_block(), in, params.embedding_block(), std::move(cls));
  h = tape.silu(tape.scale(h, kInvSqrt2), kMpSiluGain);
  const NodeId q = tape.input(std::move(quad), quad_dx, quad_dy);

  auto head_energy = [&](Head head, NodeId trunk) {
    const NodeId f = tape.affine(params.head_block(head), trunk);
    NodeId e = tape.scale_columns(tape.sum_rows(tape.square(f)), out_scale);
    e = tape.scale_by_param(e, params.gain_block(head));
    return tape.add(q, e);
  };

  EnergyNodes out;
  const int last = heads.final ? kHiddenLayers : kHeadLayer;
  for (int layer = 1; layer <= last; ++layer) {
    h = tape.silu(tape.affine(params.hidden_block(layer), h), kMpSiluGain);
    if (layer == kHeadLayer && heads.intermediate) out.intermediate = head_energy(Head::Intermediate, h);
  }
  if (heads.final) out.final = head_energy(Head::Final, h);
  g_trunk_passes.fetch_add(static_cast<std::uint64_t>(batch), std::memory_order_relaxed);
  return out;
}

BatchOutput evaluate_batch(const NetParams& params, std::span<const Vec2> xs, std::span<const double> sigmas,
                           std::span<const ClassId> classes, HeadSelection heads) {
  if (sigmas.size() != xs.size() || classes.size() != xs.size()) throw ContractError("evaluate_batch: span sizes differ");
  const std::size_t total = xs.size();
  BatchOutput out;
  if (heads.intermediate) {
    out.energy_intermediate.resize(total);
    out.score_intermediate.resize(total);
  }
  if (heads.final) {
    out.energy_final.resize(total);
    out.score_final.resize(total);
  }
  const auto chunks = static_cast<std::ptrdiff_t>((total + kChunk - 1) / kChunk);
  LoopErrors errors;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t c = 0; c < chunks; ++c) {
    errors.run(c, [&] {
      const std::size_t begin = static_cast<std::size_t>(c) * kChunk;
      const std::size_t len = std::min(kChunk, total - begin);
      GradTape tape(params.set());
      const EnergyNodes nodes =
          build_energy(tape, params, xs.subspan(begin, len), sigmas.subspan(begin, len), classes.subspan(begin, len), heads);
      auto extract = [&](NodeId id, std::vector<double>& e, std::vector<Vec2>& s) {
        const auto v = tape.value(id);
        const auto gx = tape.tangent_value(id, 0);
        const auto gy = tape.tangent_value(id, 1);
        for (std::size_t j = 0; j < len; ++j) {
          e[begin + j] = v(0, j);
          s[begin + j] = Vec2(gx(0, j), gy(0, j));
        }
      };
      if (heads.intermediate) extract(nodes.intermediate, out.energy_intermediate, out.score_intermediate);
      if (heads.final) extract(nodes.final, out.energy_final, out.score_final);
    });
  }
  errors.rethrow();
  return out;
}

std::uint64_t trunk_pass_count() { return g_trunk_passes.load(std::memory_order_relaxed); }

}  // namespace glab::net
