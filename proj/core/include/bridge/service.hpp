#pragma once

// JSON request handlers shared by the CLI and the HTTP server.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "bridge/analysis.hpp"
#include "bridge/config.hpp"
#include "bridge/cvae.hpp"
#include "bridge/sampling.hpp"

namespace bridge {

struct AppConfig {
  std::filesystem::path config_path;
  std::filesystem::path dataset_path;
  std::filesystem::path checkpoint_path;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_n = 1000;

  /// Throws std::invalid_argument when a referenced path is missing or a
  /// limit is not positive. The config path is required; empty dataset and
  /// checkpoint paths are allowed.
  void validate() const;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// Thrown by JSON parsers for malformed or out-of-range input; maps to 400.
class BadRequest : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

DesignFeatures design_from_json(const nlohmann::json& j);
/// Missing fields fall back to `defaults`.
PerformanceMetrics metrics_from_json(const nlohmann::json& j, const PerformanceMetrics& defaults);

/// Plan and elevation polylines for rendering one design.
nlohmann::json geometry_json(const DesignFeatures& x, const SiteConfig& site);

class Service {
 public:
  Service(ProjectConfig config, std::optional<CvaeCheckpoint> checkpoint,
          std::optional<Dataset> dataset, std::size_t max_n = 1000);
  static Service from_app_config(const AppConfig& app);

  ApiResponse predict(const nlohmann::json& body) const;
  ApiResponse generate(const nlohmann::json& body) const;
  ApiResponse sensitivity(const nlohmann::json& body) const;
  ApiResponse latent() const;
  ApiResponse meta() const;
  /// Query keys: source = dataset | batch, n, seed.
  ApiResponse pareto(const std::map<std::string, std::string>& query) const;

  /// Parses `body` and dispatches on method and path; unknown routes give 404.
  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body,
                     const std::map<std::string, std::string>& query = {}) const;

  const std::string& checkpoint_hash() const { return hash_; }
  bool has_checkpoint() const { return checkpoint_.has_value(); }
  PerformanceMetrics median_request() const;

 private:
  ApiResponse respond(int status, nlohmann::json body) const;
  ApiResponse error(int status, const std::string& message) const;
  std::optional<ApiResponse> require_checkpoint() const;
  std::size_t parse_count(const nlohmann::json& body, std::size_t fallback) const;

  ProjectConfig config_;
  std::optional<CvaeCheckpoint> checkpoint_;
  std::optional<Dataset> dataset_;
  std::size_t max_n_;
  std::string hash_;
};

}  // namespace bridge
