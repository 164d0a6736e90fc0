// Experiment configuration (JSON), profiles and hashing.
#pragma once

#include "glab/guide.hpp"
#include "glab/mixture.hpp"
#include "glab/sampler.hpp"
#include "glab/train.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace glab::config {

struct WorldSection {
  std::uint64_t seed = 0;
  int depth = 6;
  int per_branch = 8;
  mixture::BranchParams branch;
};

struct EvalSection {
  int grid_resolution = 1024;
  double quantile = 0.99;
  bool figure = true;
};

struct ExperimentConfig {
  WorldSection world;
  train::TrainConfig train;
  sampler::SamplerConfig sample;
  std::vector<guide::GuidanceSpec> guidance;
  EvalSection eval;
  std::string output_dir = "runs";

  void validate() const;
};

enum class Profile { Paper, CI };
Profile profile_from_string(std::string_view s);
// CI: 1024 iterations, batch 1024, 10^4 samples. Paper: the defaults.
void apply_profile(ExperimentConfig& cfg, Profile p);

nlohmann::json to_json(const ExperimentConfig& cfg);
// Strict: unknown keys are rejected. Missing keys keep their defaults.
ExperimentConfig from_json(const nlohmann::json& j);
ExperimentConfig load(const std::filesystem::path& path);

nlohmann::json to_json(const WorldSection& w);
nlohmann::json to_json(const train::TrainConfig& t);
nlohmann::json to_json(const sampler::SamplerConfig& s);
nlohmann::json to_json(const EvalSection& e);

// Hex SHA-256 of the compact dump.
std::string config_hash(const nlohmann::json& j);

// Built, standardized and validated.
mixture::WorldModel build_world(const WorldSection& w);

}  // namespace glab::config
