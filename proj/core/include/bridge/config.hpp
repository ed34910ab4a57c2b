#pragma once

// Site, load and design-space configuration read from a JSON file.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "bridge/geometry.hpp"
#include "bridge/simulator.hpp"

namespace bridge {

struct ProjectConfig {
  SiteConfig site;
  LoadModel loads;
  DesignSpace space;

  void validate() const;
  /// Stable content hash of the resolved configuration (hex FNV-1a 64).
  std::string hash() const;
};

/// Missing "loads" or "design_space" sections fall back to the library
/// defaults; the "site" section is required. Throws std::runtime_error on I/O
/// or schema errors.
ProjectConfig load_config(const std::filesystem::path& path);
ProjectConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ProjectConfig& cfg);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string to_hex(std::uint64_t v);

}  // namespace bridge
