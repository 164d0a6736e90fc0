#include "glab/world_io.hpp"

#include "glab/util.hpp"

#include <json.hpp>

namespace glab::mixture {

using nlohmann::json;

// nlohmann serializes doubles with max_digits10, so every value round-trips exactly.
std::string world_to_json(const WorldModel& world) {
  json j;
  j["format"] = kWorldFormat;
  j["seed"] = world.seed();
  j["sigma_data"] = world.sigma_data();
  json classes = json::array();
  for (const auto& cls : world.classes()) {
    json comps = json::array();
    for (const auto& c : cls.components) {
      comps.push_back({{"phi", c.weight},
                       {"mu", {c.mean.x(), c.mean.y()}},
                       {"sigma", {{c.cov(0, 0), c.cov(0, 1)}, {c.cov(1, 0), c.cov(1, 1)}}},
                       {"branch", c.branch}});
    }
    classes.push_back({{"class_id", to_string(cls.id)}, {"branch_count", cls.branch_count}, {"components", comps}});
  }
  j["classes"] = classes;
  return j.dump(1) + "\n";
}

WorldModel world_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("world.json: ") + e.what());
  }
  if (j.value("format", "") != kWorldFormat) throw ValidationError("world.json: unknown format tag");
  const auto& classes = j.at("classes");
  if (classes.size() != 2) throw ValidationError("world.json: expected exactly 2 classes");
  std::array<ClassMixture, 2> out;
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& cj = classes[k];
    ClassMixture& cls = out[k];
    cls.id = class_from_string(cj.at("class_id").get<std::string>());
    if (index_of(cls.id) != static_cast<int>(k)) throw ValidationError("world.json: classes out of order");
    cls.branch_count = cj.value("branch_count", 0);
    for (const auto& comp : cj.at("components")) {
      MixtureComponent c;
      c.weight = comp.at("phi").get<double>();
      c.mean = Vec2(comp.at("mu")[0].get<double>(), comp.at("mu")[1].get<double>());
      const auto& s = comp.at("sigma");
      c.cov << s[0][0].get<double>(), s[0][1].get<double>(), s[1][0].get<double>(), s[1][1].get<double>();
      c.branch = comp.value("branch", 0);
      cls.components.push_back(c);
    }
  }
  return WorldModel(std::move(out), j.at("sigma_data").get<double>(), j.at("seed").get<std::uint64_t>());
}

void save_world(const WorldModel& world, const std::filesystem::path& path) { write_file(path, world_to_json(world)); }

WorldModel load_world(const std::filesystem::path& path) { return world_from_json(read_file(path)); }

}  // namespace glab::mixture
