#include "glab/train.hpp"

#include "glab/util.hpp"

#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace glab::train {

using diffkit::GradTape;
using diffkit::Matrix;
using diffkit::NodeId;

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kBatchStream = 2;

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

struct ShardResult {
  double loss_final = 0.0;
  double loss_inter = 0.0;
  std::vector<double> grad;
};

// sigma_j * (score - target) on both axes, squared and summed to 1x1, divided by `total`.
NodeId head_loss(GradTape& tape, NodeId energy, const Matrix& target_x, const Matrix& target_y,
                 const diffkit::RowVector& sigma, double total) {
  NodeId sum;
  for (int axis = 0; axis < 2; ++axis) {
    const NodeId r = tape.add(tape.tangent(energy, axis), tape.constant(axis == 0 ? -target_x : -target_y));
    const NodeId sq = tape.square(tape.scale_columns(r, sigma));
    sum = axis == 0 ? sq : tape.add(sum, sq);
  }
  return tape.scale(tape.sum_cols(sum), 1.0 / total);
}

ShardResult shard_loss(const net::NetParams& params, const Batch& batch, std::size_t begin, std::size_t len,
                       double lambda, const std::vector<Vec2>* final_target, bool need_grad) {
  GradTape tape(params.set());
  const auto xs = std::span<const Vec2>(batch.x).subspan(begin, len);
  const auto sig = std::span<const double>(batch.sigma).subspan(begin, len);
  const auto cls = std::span<const ClassId>(batch.cls).subspan(begin, len);
  const auto nodes = net::build_energy(tape, params, xs, sig, cls, {.intermediate = true, .final = true});

  const auto cols = static_cast<Eigen::Index>(len);
  Matrix tx(1, cols), ty(1, cols), fx(1, cols), fy(1, cols);
  diffkit::RowVector sigma(cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    const Vec2& t = batch.target[begin + j];
    const Vec2& f = final_target ? (*final_target)[begin + j] : t;
    tx(0, j) = t.x();
    ty(0, j) = t.y();
    fx(0, j) = f.x();
    fy(0, j) = f.y();
    sigma(j) = sig[j];
  }
  const double total = static_cast<double>(batch.size());
  const NodeId li = head_loss(tape, nodes.intermediate, tx, ty, sigma, total);
  const NodeId lf = head_loss(tape, nodes.final, fx, fy, sigma, total);
  const NodeId loss = tape.add(lf, li, 1.0, lambda);

  ShardResult r;
  r.loss_final = tape.value(lf)(0, 0);
  r.loss_inter = tape.value(li)(0, 0);
  if (need_grad) r.grad = tape.param_gradient(loss);
  return r;
}

LossGrad sharded(const net::NetParams& params, const Batch& batch, double lambda, const net::NetParams* ema,
                 double omega, bool need_grad) {
  if (batch.size() == 0) throw ValidationError("loss over an empty batch");
  std::vector<Vec2> final_target;
  if (ema != nullptr) {
    const auto guide = net::evaluate_batch(*ema, batch.x, batch.sigma, batch.cls, {.intermediate = true, .final = true});
    final_target.resize(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j) {
      final_target[j] = batch.target[j] + omega * (guide.score_final[j] - guide.score_intermediate[j]);
    }
  }
  const std::size_t shards = (batch.size() + net::kChunk - 1) / net::kChunk;
  std::vector<ShardResult> parts(shards);
  LoopErrors errors;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(shards); ++s) {
    errors.run(s, [&] {
      const std::size_t begin = static_cast<std::size_t>(s) * net::kChunk;
      const std::size_t len = std::min(net::kChunk, batch.size() - begin);
      parts[s] = shard_loss(params, batch, begin, len, lambda, ema ? &final_target : nullptr, need_grad);
    });
  }
  errors.rethrow();

  LossGrad out;
  if (need_grad) out.grad.assign(params.set().size(), 0.0);
  for (const auto& p : parts) {
    out.loss_final += p.loss_final;
    out.loss_inter += p.loss_inter;
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += p.grad[i];
  }
  out.loss = out.loss_final + lambda * out.loss_inter;
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("train config: " + what); };
  if (iterations < 0) fail("iterations must be >= 0");
  if (batch < 1) fail("batch must be >= 1");
  if (!(lr_ref > 0.0) || !(t_ref > 0.0)) fail("lr_ref and t_ref must be > 0");
  if (!(p_std > 0.0) || !std::isfinite(p_mean)) fail("invalid noise level distribution");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be finite and >= 0");
  if (!(omega >= 0.0) || !std::isfinite(omega)) fail("omega must be finite and >= 0");
  if (!(class_dropout >= 0.0 && class_dropout < 1.0)) fail("class_dropout must be in [0, 1)");
  if (!(sigma_rel > 0.0)) fail("sigma_rel must be > 0");
  if (width < 1) fail("width must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0)) {
    fail("invalid Adam hyperparameters");
  }
  for (int s : snapshot_iterations) {
    if (s < 1 || s > iterations) fail("snapshot iteration " + std::to_string(s) + " outside [1, iterations]");
  }
}

double noise_level_from_normal(double z, const TrainConfig& cfg) { return std::exp(cfg.p_mean + cfg.p_std * z); }

double sample_noise_level(Rng& rng, const TrainConfig& cfg) {
  std::normal_distribution<double> normal(0.0, 1.0);
  return noise_level_from_normal(normal(rng), cfg);
}

Batch draw_batch(const mixture::WorldModel& world, const TrainConfig& cfg, std::uint64_t batch_seed, int size) {
  if (size < 1) throw ValidationError("batch size must be >= 1");
  Rng rng(batch_seed);
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution dropout(cfg.class_dropout);
  std::normal_distribution<double> normal(0.0, 1.0);

  Batch b;
  const auto n = static_cast<std::size_t>(size);
  b.x.resize(n);
  b.sigma.resize(n);
  b.cls.resize(n);
  b.target.resize(n);
  std::vector<Vec2> eps(n);
  for (std::size_t j = 0; j < n; ++j) {
    const ClassId c = coin(rng) ? ClassId::B : ClassId::A;
    const double sigma = sample_noise_level(rng, cfg);
    const Vec2 x0 = mixture::sample_one(world, c, 0.0, rng);
    const double ex = normal(rng);
    eps[j] = Vec2(ex, normal(rng));
    b.x[j] = x0 + sigma * eps[j];
    b.sigma[j] = sigma;
    b.cls[j] = dropout(rng) ? ClassId::Null : c;
  }
  if (cfg.score_matching == ScoreMatching::Exact) {
    mixture::score_batch(world, b.cls, b.x, b.sigma, b.target);
  } else {
    for (std::size_t j = 0; j < n; ++j) b.target[j] = -eps[j] / b.sigma[j];
  }
  return b;
}

Batch make_batch(const mixture::WorldModel& world, std::vector<Vec2> x, std::vector<double> sigma,
                 std::vector<ClassId> cls) {
  if (x.size() != sigma.size() || x.size() != cls.size()) throw ContractError("make_batch: sizes differ");
  Batch b{std::move(x), std::move(sigma), std::move(cls), {}};
  b.target.resize(b.x.size());
  mixture::score_batch(world, b.cls, b.x, b.sigma, b.target);
  return b;
}

double esm_loss(const net::NetParams& params, const Batch& batch, net::Head head) {
  const auto r = sharded(params, batch, 0.0, nullptr, 0.0, false);
  const double loss = head == net::Head::Intermediate ? r.loss_inter : r.loss_final;
  if (std::isfinite(loss)) return loss;
  // Locate the offending sample for the report.
  const bool inter = head == net::Head::Intermediate;
  const auto out = net::evaluate_batch(params, batch.x, batch.sigma, batch.cls, {.intermediate = inter, .final = !inter});
  const auto& s = inter ? out.score_intermediate : out.score_final;
  std::size_t j = 0;
  while (j + 1 < batch.size() &&
         std::isfinite(batch.sigma[j] * batch.sigma[j] * (s[j] - batch.target[j]).squaredNorm())) {
    ++j;
  }
  std::ostringstream msg;
  msg << "non-finite loss term at sample " << j << ": x=(" << batch.x[j].x() << ", " << batch.x[j].y()
      << "), sigma=" << batch.sigma[j] << ", class=" << to_string(batch.cls[j]);
  throw NumericalError(msg.str());
}

double total_loss(const net::NetParams& params, const Batch& batch, double lambda) {
  return sharded(params, batch, lambda, nullptr, 0.0, false).loss;
}

double accel_loss(const net::NetParams& params, const net::NetParams& ema, const Batch& batch, double lambda,
                  double omega) {
  return sharded(params, batch, lambda, &ema, omega, false).loss;
}

LossGrad loss_and_gradient(const net::NetParams& params, const Batch& batch, double lambda, const net::NetParams* ema,
                           double omega) {
  return sharded(params, batch, lambda, ema, omega, true);
}

double learning_rate(std::int64_t t, const TrainConfig& cfg) {
  return cfg.lr_ref / std::sqrt(std::max(static_cast<double>(t) / cfg.t_ref, 1.0));
}

double solve_ema_gamma(double sigma_rel) {
  const double target = sigma_rel * sigma_rel;
  auto f = [target](double g) { return (g + 1.0) / ((g + 2.0) * (g + 2.0) * (g + 3.0)) - target; };
  const double lo = 1.0, hi = 100.0;
  if (!(f(lo) > 0.0 && f(hi) < 0.0)) {
    throw ValidationError("sigma_rel " + std::to_string(sigma_rel) + " has no EMA exponent in [1, 100]");
  }
  std::uintmax_t max_iter = 200;
  const auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, boost::math::tools::eps_tolerance<double>(52), max_iter);
  return 0.5 * (a + b);
}

double ema_beta(std::int64_t t, double gamma) {
  if (t < 1) throw ContractError("ema_beta: t must be >= 1");
  return std::pow(1.0 - 1.0 / static_cast<double>(t), gamma + 1.0);
}

void ema_update(net::NetParams& ema, const net::NetParams& params, std::int64_t t, double gamma) {
  const double beta = ema_beta(t, gamma);
  auto e = ema.set().flat();
  const auto p = params.set().flat();
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = beta * e[i] + (1.0 - beta) * p[i];
}

Adam::Adam(std::size_t size, double beta1, double beta2, double eps)
    : m_(size, 0.0), v_(size, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::span<double> params, std::span<const double> grad, double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw ContractError("Adam::step: size mismatch");
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

TrainState initial_state(const TrainConfig& cfg) {
  TrainState s;
  s.params = net::NetParams::initialize(derive_seed(cfg.seed, kInitStream), cfg.width);
  s.ema = s.params;
  s.adam = Adam(s.params.set().size(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  s.gamma = solve_ema_gamma(cfg.sigma_rel);
  return s;
}

TrainResult run_training(const TrainConfig& cfg, const mixture::WorldModel& world,
                         const std::function<void(const LogRow&)>& on_log) {
  cfg.validate();
  TrainResult result;
  result.state = initial_state(cfg);
  TrainState& st = result.state;
  std::vector<int> snaps = cfg.snapshot_iterations;
  std::sort(snaps.begin(), snaps.end());
  snaps.erase(std::unique(snaps.begin(), snaps.end()), snaps.end());

  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t batch_root = derive_seed(cfg.seed, kBatchStream);
  for (std::int64_t it = 0; it < cfg.iterations; ++it) {
    const std::int64_t t = it + 1;
    const std::uint64_t batch_seed = derive_seed(batch_root, static_cast<std::uint64_t>(it));
    const Batch batch = draw_batch(world, cfg, batch_seed, cfg.batch);
    result.null_samples += static_cast<std::size_t>(std::count(batch.cls.begin(), batch.cls.end(), ClassId::Null));
    result.total_samples += batch.size();

    const LossGrad lg = loss_and_gradient(st.params, batch, cfg.lambda, cfg.accel ? &st.ema : nullptr, cfg.omega);
    if (!std::isfinite(lg.loss) || !all_finite(lg.grad)) {
      std::ostringstream msg;
      msg << "non-finite " << (std::isfinite(lg.loss) ? "gradient" : "loss") << " at iteration " << t
          << " (batch seed " << batch_seed << ")";
      throw NumericalError(msg.str());
    }
    double norm2 = 0.0;
    for (double g : lg.grad) norm2 += g * g;

    const double lr = learning_rate(t, cfg);
    st.adam.step(st.params.set().flat(), lg.grad, lr);
    st.params.set().normalize_rows();
    ema_update(st.ema, st.params, t, st.gamma);
    st.iteration = t;

    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const LogRow row{t, lr, lg.loss_final, lg.loss_inter, std::sqrt(norm2), elapsed};
    result.log.push_back(row);
    if (on_log) on_log(row);
    if (std::binary_search(snaps.begin(), snaps.end(), static_cast<int>(t)) && t != cfg.iterations) {
      result.snapshots.push_back({t, st.ema});
    }
  }
  result.snapshots.push_back({st.iteration, st.ema});
  return result;
}

}  // namespace glab::train
