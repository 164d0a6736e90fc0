// Magnitude-preserving MLP energy model with two heads.
//
//   u   = [x*_x, x*_y, log(sigma)/4, 1],  x* = x / sqrt(sigma^2 + sigma_data^2)
//   h0  = mp_silu((W_in u + e_c) / sqrt(2))
//   h_k = mp_silu(W_k h_{k-1}),  k = 1..4
//   F   = W_head h_1 (intermediate) or W_head h_4 (final)
//   G   = -|x*|^2 / 2 - g_head / (sigma n) * sum_i F_i^2
//
// Every weight row is unit-norm; mp_silu(z) = silu(z) / 0.596. The score is
// the exact input gradient of G and the denoiser is D = x + sigma^2 grad G.
#pragma once

#include "glab/common.hpp"
#include "glab/diffkit.hpp"

#include <array>
#include <atomic>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace glab::net {

enum class Head { Intermediate = 0, Final = 1 };

inline constexpr int kInputDim = 4;
inline constexpr int kHiddenLayers = 4;
inline constexpr int kHeadLayer = 1;
inline constexpr double kMpSiluDivisor = 0.596;
inline constexpr int kEmbeddingRows = 3;  // A, B, Null

class NetParams {
 public:
  NetParams() = default;

  // Unit-norm random rows, N(0,1) class embeddings, zero gains.
  static NetParams initialize(std::uint64_t seed, int width = 64, double sigma_data = kSigmaData);
  // Same layout, every value zero.
  static NetParams zeros(int width = 64, double sigma_data = kSigmaData);

  int width() const { return width_; }
  int features() const { return width_; }
  double sigma_data() const { return sigma_data_; }

  const diffkit::ParamSet& set() const { return set_; }
  diffkit::ParamSet& set() { return set_; }

  int input_block() const { return input_; }
  int embedding_block() const { return embedding_; }
  int hidden_block(int layer) const { return hidden_.at(layer - 1); }  // layer in 1..4
  int head_block(Head h) const { return head_[static_cast<int>(h)]; }
  int gain_block(Head h) const { return gain_[static_cast<int>(h)]; }
  double gain(Head h) const { return set_.scalar(gain_block(h)); }

  bool operator==(const NetParams& other) const;

 private:
  explicit NetParams(int width, double sigma_data);

  diffkit::ParamSet set_;
  int width_ = 0;
  double sigma_data_ = kSigmaData;
  int input_ = -1;
  int embedding_ = -1;
  std::array<int, kHiddenLayers> hidden_{};
  std::array<int, 2> head_{};
  std::array<int, 2> gain_{};
};

struct NetInput {
  Vec2 x = Vec2::Zero();
  double sigma = 1.0;
  ClassId cls = ClassId::A;
};

Vec2 precondition_input(const Vec2& x, double sigma, double sigma_data = kSigmaData);

// -- single-point reference path (DualScalar forward mode) ---------------------

std::vector<double> features(const NetParams& params, const NetInput& input, Head head);
double energy(const NetParams& params, const NetInput& input, Head head);
Vec2 model_score(const NetParams& params, const NetInput& input, Head head);
Vec2 denoise(const NetParams& params, const NetInput& input, Head head);

// -- batched path (GradTape) ---------------------------------------------------

struct HeadSelection {
  bool intermediate = false;
  bool final = true;
};

struct EnergyNodes {
  diffkit::NodeId intermediate;
  diffkit::NodeId final;
};

// Records one trunk pass for the batch and the energies of the selected heads.
// The returned nodes carry d/dx and d/dy lanes, i.e. the model scores.
EnergyNodes build_energy(diffkit::GradTape& tape, const NetParams& params, std::span<const Vec2> xs,
                         std::span<const double> sigmas, std::span<const ClassId> classes, HeadSelection heads);

struct BatchOutput {
  std::vector<double> energy_intermediate, energy_final;
  std::vector<Vec2> score_intermediate, score_final;
};

// Evaluates in fixed 256-sample chunks (OpenMP across chunks), so results do
// not depend on the thread count.
BatchOutput evaluate_batch(const NetParams& params, std::span<const Vec2> xs, std::span<const double> sigmas,
                           std::span<const ClassId> classes, HeadSelection heads);

inline constexpr std::size_t kChunk = 256;

// Per-sample trunk passes recorded by build_energy in this process.
std::uint64_t trunk_pass_count();

// -- checkpoints (*.glabckpt) --------------------------------------------------

inline constexpr const char* kCheckpointMagic = "GLAB-CKPT/1";

struct Checkpoint {
  NetParams params;
  std::int64_t iteration = 0;
  std::string id;  // short hash of the file bytes
};

std::string checkpoint_bytes(const NetParams& params, std::int64_t iteration);
Checkpoint checkpoint_from_bytes(const std::string& bytes);
std::string save_checkpoint(const NetParams& params, std::int64_t iteration, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace glab::net
