// world.json: {format:"GLAB-WORLD/1", seed, sigma_data, classes:[{class_id, components:[{phi, mu, sigma, branch}]}]}
#pragma once

#include "glab/mixture.hpp"

#include <filesystem>
#include <string>

namespace glab::mixture {

inline constexpr const char* kWorldFormat = "GLAB-WORLD/1";

std::string world_to_json(const WorldModel& world);
WorldModel world_from_json(const std::string& text);

void save_world(const WorldModel& world, const std::filesystem::path& path);
WorldModel load_world(const std::filesystem::path& path);

}  // namespace glab::mixture
