#pragma once

// Sensitivities, latent maps, surrogate accuracy and Pareto extraction on top
// of a trained checkpoint.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bridge/cvae.hpp"

namespace bridge {

/// Jacobian of the encoder's performance head at one design.
struct SensitivityReport {
  DesignFeatures x;
  /// d y_hat / d x_enc, 6 x 12, standardized units; flag rows are logits.
  Matrix jacobian;
  /// Per target and design variable (kDesignNames order). The n_p entry is the
  /// difference between the gradients of adjacent one-hot columns.
  std::array<std::array<double, kDesignDims>, kMetricDims> standardized{};
  /// Chain-ruled by sigma_y / sigma_x. Flag rows stay in logits and the n_p
  /// column is per added pier.
  std::array<std::array<double, kDesignDims>, kMetricDims> physical{};
};

SensitivityReport sensitivity(const DesignFeatures& x, const CvaeCheckpoint& ckpt);

struct SwarmReport {
  PerformanceMetrics request;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t target = 3;
  std::vector<DesignFeatures> designs;
  /// [variable][design]
  std::array<std::vector<double>, kDesignDims> standardized;
  std::array<std::vector<double>, kDesignDims> physical;
  /// Predicted cost per design, for colouring.
  std::vector<double> cost;
  std::array<double, kDesignDims> positive_fraction{};
  std::vector<std::string> warnings;
};

/// Generates n designs for the request and collects d(target)/dx for each.
SwarmReport sensitivity_swarm(const PerformanceMetrics& request, std::size_t n, std::uint64_t seed,
                              const CvaeCheckpoint& ckpt, std::size_t target = 3);

struct LatentPoint {
  std::size_t id = 0;
  std::vector<double> mu;
  std::vector<double> logvar;
  PerformanceMetrics y;
};

struct LatentMap {
  std::vector<LatentPoint> points;
  /// |corr(mu_k, y_j)|, [latent dim][continuous target].
  std::vector<std::array<double, kContinuousMetrics>> abs_correlation;
  double mean_abs_correlation = 0.0;
  std::vector<double> mu_mean;
  std::vector<double> mu_std;
};

/// Encoder means over the test split.
LatentMap latent_map(const Dataset& data, const CvaeCheckpoint& ckpt);
LatentMap latent_map(std::span<const SampleRecord> rows, const CvaeCheckpoint& ckpt);

struct RegressionStats {
  double r2 = 0.0;
  double rmse = 0.0;
};

/// R^2 = 1 - SS_res / SS_tot against the mean of `truth`.
RegressionStats regression_stats(std::span<const double> truth, std::span<const double> pred);
double pearson(std::span<const double> a, std::span<const double> b);

struct TargetReport {
  std::string name;
  RegressionStats stats;
  std::vector<double> truth;
  std::vector<double> predicted;
};

struct FlagReport {
  std::string name;
  double accuracy = 0.0;
};

struct SurrogateReport {
  std::array<TargetReport, kContinuousMetrics> targets;
  std::array<FlagReport, kFlagCount> flags;
  std::vector<std::size_t> ids;
};

SurrogateReport surrogate_report(const Dataset& data, const CvaeCheckpoint& ckpt);
SurrogateReport surrogate_report(std::span<const SampleRecord> rows,
                                 std::span<const PerformanceMetrics> predicted);

enum class Direction { minimize, maximize };

struct ParetoResult {
  std::vector<std::size_t> indices;
  std::array<Direction, 2> directions{Direction::minimize, Direction::minimize};
};

/// Non-dominated indices in ascending order. Duplicated points are all kept.
ParetoResult pareto_front(std::span<const std::array<double, 2>> points,
                          std::array<Direction, 2> directions = {Direction::minimize,
                                                                 Direction::minimize});

nlohmann::json to_json(const SensitivityReport& r);
nlohmann::json to_json(const SwarmReport& r);
nlohmann::json to_json(const LatentMap& m);
nlohmann::json to_json(const SurrogateReport& r);
nlohmann::json to_json(const ParetoResult& r);
nlohmann::json to_json(const DesignFeatures& x);
nlohmann::json to_json(const PerformanceMetrics& y);

std::string sensitivity_csv(const SensitivityReport& r);
std::string swarm_csv(const SwarmReport& r);
std::string latent_csv(const LatentMap& m);
std::string surrogate_csv(const SurrogateReport& r);

}  // namespace bridge
