// Exact score matching with an auxiliary intermediate-head loss, the
// guidance-inspired acceleration objective, Adam, power-function EMA.
#pragma once

#include "glab/mixture.hpp"
#include "glab/net.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace glab::train {

enum class ScoreMatching { Exact, Denoising };

struct TrainConfig {
  int iterations = 4096;
  int batch = 4096;
  double lr_ref = 0.01;
  double t_ref = 512.0;
  double p_mean = -2.3;
  double p_std = 1.5;
  double lambda = 0.5;        // intermediate loss weight
  double omega = 0.5;         // acceleration guidance weight
  bool accel = false;
  double class_dropout = 0.1;
  double sigma_rel = 0.010;
  std::uint64_t seed = 0;
  std::vector<int> snapshot_iterations;
  int width = 64;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-8;
  ScoreMatching score_matching = ScoreMatching::Exact;

  void validate() const;
};

// log(sigma) ~ N(p_mean, p_std).
double noise_level_from_normal(double z, const TrainConfig& cfg);
double sample_noise_level(Rng& rng, const TrainConfig& cfg);

struct Batch {
  std::vector<Vec2> x;
  std::vector<double> sigma;
  std::vector<ClassId> cls;   // after class dropout
  std::vector<Vec2> target;   // score target for (x, sigma, cls)
  std::size_t size() const { return x.size(); }
};

// Class uniform over {A, B}, sigma from the training distribution, x ~ p(x | c; sigma),
// then c -> Null with probability class_dropout. Null targets use the pooled score.
Batch draw_batch(const mixture::WorldModel& world, const TrainConfig& cfg, std::uint64_t batch_seed, int size);

// Batch with given points; targets are exact scores.
Batch make_batch(const mixture::WorldModel& world, std::vector<Vec2> x, std::vector<double> sigma,
                 std::vector<ClassId> cls);

// mean over batch of sigma^2 |model score - target|^2
double esm_loss(const net::NetParams& params, const Batch& batch, net::Head head);
double total_loss(const net::NetParams& params, const Batch& batch, double lambda);
double accel_loss(const net::NetParams& params, const net::NetParams& ema, const Batch& batch, double lambda,
                  double omega);

struct LossGrad {
  double loss = 0.0;
  double loss_final = 0.0;
  double loss_inter = 0.0;
  std::vector<double> grad;
};

// Loss and its exact parameter gradient, sharded in fixed 256-sample tapes and
// reduced in ascending shard order. With `ema` set, the final-head target gains
// omega * sg(ema final score - ema intermediate score).
LossGrad loss_and_gradient(const net::NetParams& params, const Batch& batch, double lambda,
                           const net::NetParams* ema = nullptr, double omega = 0.0);

double learning_rate(std::int64_t t, const TrainConfig& cfg);

// gamma with (g+1) / ((g+2)^2 (g+3)) = sigma_rel^2, bracketed on [1, 100].
double solve_ema_gamma(double sigma_rel);
double ema_beta(std::int64_t t, double gamma);
// ema = beta_t ema + (1 - beta_t) params, t >= 1.
void ema_update(net::NetParams& ema, const net::NetParams& params, std::int64_t t, double gamma);

class Adam {
 public:
  Adam() = default;
  Adam(std::size_t size, double beta1, double beta2, double eps);
  void step(std::span<double> params, std::span<const double> grad, double lr);
  std::int64_t steps() const { return steps_; }

 private:
  std::vector<double> m_, v_;
  double beta1_ = 0.9, beta2_ = 0.99, eps_ = 1e-8;
  std::int64_t steps_ = 0;
};

struct TrainState {
  net::NetParams params;
  net::NetParams ema;
  std::int64_t iteration = 0;
  Adam adam;
  double gamma = 0.0;
};

struct LogRow {
  std::int64_t iteration = 0;
  double lr = 0.0;
  double loss_final = 0.0;
  double loss_inter = 0.0;
  double grad_norm = 0.0;
  double wallclock_s = 0.0;
};

struct Snapshot {
  std::int64_t iteration = 0;
  net::NetParams ema;
};

struct TrainResult {
  std::vector<Snapshot> snapshots;  // requested iterations, then the final state
  std::vector<LogRow> log;
  TrainState state;
  std::size_t null_samples = 0;
  std::size_t total_samples = 0;
};

TrainState initial_state(const TrainConfig& cfg);

// Throws NumericalError on a non-finite loss or gradient.
TrainResult run_training(const TrainConfig& cfg, const mixture::WorldModel& world,
                         const std::function<void(const LogRow&)>& on_log = {});

}  // namespace glab::train
