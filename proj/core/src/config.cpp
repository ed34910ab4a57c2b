#include "bridge/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bridge {
namespace {

using nlohmann::json;

Point2 point_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw std::runtime_error("config: expected [x, y] point");
  return {j[0].get<double>(), j[1].get<double>()};
}

LoadFactors factors_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw std::runtime_error("config: expected [dead, live] factors");
  return {j[0].get<double>(), j[1].get<double>()};
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void ProjectConfig::validate() const {
  site.validate();
  loads.validate();
  space.validate();
}

std::string ProjectConfig::hash() const { return to_hex(fnv1a64(config_to_json(*this).dump())); }

ProjectConfig config_from_json(const json& j) {
  ProjectConfig cfg;
  try {
    const json& s = j.at("site");
    cfg.site.sp = point_from(s.at("sp"));
    cfg.site.ep = point_from(s.at("ep"));
    cfg.site.deck_elevation = s.at("deck_elevation").get<double>();
    read_opt(s, "ground_elevation", cfg.site.ground_elevation);
    const json& corridor = s.at("street_corridor");
    if (!corridor.is_array() || corridor.size() != 2) {
      throw std::runtime_error("config: street_corridor must be [from, to]");
    }
    cfg.site.street_corridor = {corridor[0].get<double>(), corridor[1].get<double>()};
    cfg.site.required_clearance = s.at("required_clearance").get<double>();
    read_opt(s, "width_b", cfg.site.width_b);
    if (s.contains("trees")) {
      for (const json& t : s.at("trees")) {
        cfg.site.trees.push_back({t.at("x").get<double>(), t.at("y").get<double>(),
                                  t.at("r").get<double>()});
      }
    }

    if (j.contains("loads")) {
      const json& l = j.at("loads");
      read_opt(l, "concrete_unit_weight", cfg.loads.concrete_unit_weight);
      read_opt(l, "live_load_area", cfg.loads.live_load_area);
      if (l.contains("uls_factors")) cfg.loads.uls_factors = factors_from(l.at("uls_factors"));
      if (l.contains("sls_factors")) cfg.loads.sls_factors = factors_from(l.at("sls_factors"));
      read_opt(l, "deflection_limit_ratio", cfg.loads.deflection_limit_ratio);
      read_opt(l, "sigma_allow", cfg.loads.sigma_allow);
      read_opt(l, "E_modulus", cfg.loads.e_modulus);
      read_opt(l, "unit_cost", cfg.loads.unit_cost);
    }

    if (j.contains("design_space")) {
      const json& d = j.at("design_space");
      if (d.contains("min")) cfg.space.min = d.at("min").get<std::array<double, kDesignDims>>();
      if (d.contains("max")) cfg.space.max = d.at("max").get<std::array<double, kDesignDims>>();
      read_opt(d, "sample_count", cfg.space.sample_count);
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("config: ") + e.what());
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("config: ") + e.what());
  }
  return cfg;
}

json config_to_json(const ProjectConfig& cfg) {
  json trees = json::array();
  for (const Tree& t : cfg.site.trees) trees.push_back({{"x", t.x}, {"y", t.y}, {"r", t.radius}});
  const SiteConfig& s = cfg.site;
  const LoadModel& l = cfg.loads;
  return {
      {"site",
       {{"sp", {s.sp.x, s.sp.y}},
        {"ep", {s.ep.x, s.ep.y}},
        {"deck_elevation", s.deck_elevation},
        {"ground_elevation", s.ground_elevation},
        {"street_corridor", s.street_corridor},
        {"required_clearance", s.required_clearance},
        {"width_b", s.width_b},
        {"trees", trees}}},
      {"loads",
       {{"concrete_unit_weight", l.concrete_unit_weight},
        {"live_load_area", l.live_load_area},
        {"uls_factors", {l.uls_factors.dead, l.uls_factors.live}},
        {"sls_factors", {l.sls_factors.dead, l.sls_factors.live}},
        {"deflection_limit_ratio", l.deflection_limit_ratio},
        {"sigma_allow", l.sigma_allow},
        {"E_modulus", l.e_modulus},
        {"unit_cost", l.unit_cost}}},
      {"design_space",
       {{"min", cfg.space.min}, {"max", cfg.space.max}, {"sample_count", cfg.space.sample_count}}},
  };
}

ProjectConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("config: " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace bridge
