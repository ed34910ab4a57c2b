#pragma once

// Central Latin hypercube sampling and the labelled dataset build.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bridge/config.hpp"
#include "bridge/geometry.hpp"
#include "bridge/simulator.hpp"

namespace bridge {

/// n x d matrix; every column is a seeded permutation of the stratum
/// midpoints (k + 0.5) / n.
Eigen::MatrixXd central_lhs(std::size_t n, std::size_t d, std::uint64_t seed);

/// Maps a unit-cube row onto the design space. The integer pier count uses
/// uniform binning of its unit coordinate.
DesignFeatures scale_to_bounds(const Eigen::Ref<const Eigen::RowVectorXd>& u,
                               const DesignSpace& space);

enum class SampleStatus { ok, sim_failure };

struct SampleRecord {
  std::size_t id = 0;
  DesignFeatures x;
  PerformanceMetrics y;
  SampleStatus status = SampleStatus::ok;
};

struct DatasetHeader {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  DesignSpace space;
  std::string config_hash;
  /// Optional creation stamp. Left empty by default so seeded builds are
  /// byte-reproducible.
  std::string created;
};

struct Dataset {
  DatasetHeader header;
  std::vector<SampleRecord> records;

  std::vector<SampleRecord> ok_records() const;
  std::size_t failure_count() const;
  /// Throws std::runtime_error when ids are not 0..n-1 or an ok row is non-finite.
  void validate() const;
  /// Hash of the serialized CSV content.
  std::string content_hash() const;
};

struct GenerateOptions {
  std::size_t workers = 1;
  std::string created;
};

Dataset generate_dataset(std::size_t n, std::uint64_t seed, const ProjectConfig& config,
                         const GenerateOptions& opts = {});

std::string dataset_to_csv(const Dataset& ds);
Dataset dataset_from_csv(const std::string& text);

/// Writes via a temporary sibling file; nothing is left behind on failure.
void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace bridge
