#pragma once

// Conditional VAE with a dual-head encoder (performance prediction and
// latent posterior) and a decoder conditioned on ground-truth performance.
// The encoder doubles as forward surrogate, the decoder as inverse generator.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bridge/geometry.hpp"
#include "bridge/grad/layers.hpp"
#include "bridge/grad/tape.hpp"
#include "bridge/sampling.hpp"
#include "bridge/simulator.hpp"

namespace bridge {

using grad::Matrix;

/// Encoded design row: h_girder, t_girder, h_p, i, w standardized, then a
/// 7-way one-hot of n_p = 2..8.
inline constexpr Eigen::Index kContinuousDesign = 5;
inline constexpr Eigen::Index kDesignWidth = kContinuousDesign + kPierClasses;
/// Encoded performance row: 4 standardized metrics, then the two flags as 0/1
/// (targets) or logits (predictions).
inline constexpr Eigen::Index kPerfWidth = static_cast<Eigen::Index>(kMetricDims);
inline constexpr Eigen::Index kFlagCount = kPerfWidth - static_cast<Eigen::Index>(kContinuousMetrics);
/// Positions of the continuous entries inside DesignFeatures::as_array().
inline constexpr std::array<std::size_t, kContinuousDesign> kContinuousDesignIndex{0, 1, 3, 4, 5};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Standardizer {
  std::array<double, kContinuousDesign> design_mean{};
  std::array<double, kContinuousDesign> design_std{};
  std::array<double, kContinuousMetrics> metric_mean{};
  std::array<double, kContinuousMetrics> metric_std{};

  /// Fits means and population standard deviations. Throws when a feature
  /// is constant.
  static Standardizer fit(std::span<const SampleRecord> rows);

  Matrix encode_designs(std::span<const DesignFeatures> xs) const;
  Matrix encode_metrics(std::span<const PerformanceMetrics> ys) const;
  /// Inverse of encode_designs; n_p is the arg-max over the one-hot block.
  DesignFeatures decode_design(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
  /// Continuous entries de-standardized; flags read as logits (> 0 is true).
  PerformanceMetrics decode_metrics(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
};

/// Per continuous metric: min, max and median over the training split.
struct MetricRanges {
  std::array<double, kContinuousMetrics> min{};
  std::array<double, kContinuousMetrics> max{};
  std::array<double, kContinuousMetrics> median{};
  std::array<double, kFlagCount> flag_rate{};
};

struct CvaeConfig {
  std::vector<Eigen::Index> widths{128, 256, 512, 256, 128};
  Eigen::Index latent_dim = 2;
  std::array<double, 4> lambdas{1.0, 10.0, 0.1, 0.01};
  double learning_rate = 1e-3;
  double plateau_factor = 0.1;
  std::size_t plateau_patience = 6;
  std::size_t early_stop_patience = 12;
  double min_improvement = 1e-4;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 500;
  std::array<double, 3> split{0.70, 0.10, 0.20};
  std::uint64_t seed = 0;

  void validate() const;
  /// Desk-scale profile: widths [32, 64, 128, 64, 32], everything else default.
  static CvaeConfig desk();
};

class CvaeNetwork {
 public:
  struct Encoded {
    grad::Var y_hat;
    grad::Var mu;
    grad::Var logvar;
  };
  struct NamedTensor {
    std::string name;
    Matrix* tensor;
    bool trainable;
  };

  CvaeNetwork() = default;
  CvaeNetwork(const std::vector<Eigen::Index>& widths, Eigen::Index latent_dim,
              std::uint64_t seed);

  Encoded encode(grad::Tape& tape, grad::Var x, grad::Mode mode);
  Encoded encode(grad::Tape& tape, grad::Var x) const;
  grad::Var decode(grad::Tape& tape, grad::Var y, grad::Var z, grad::Mode mode);
  grad::Var decode(grad::Tape& tape, grad::Var y, grad::Var z) const;

  std::vector<Matrix*> parameters();
  /// Every tensor including batch-norm running statistics, in a stable order.
  std::vector<NamedTensor> tensors();
  Eigen::Index latent_dim() const { return latent_dim_; }
  const std::vector<Eigen::Index>& widths() const { return widths_; }

 private:
  template <typename Self>
  static Encoded encode_impl(Self& self, grad::Tape& tape, grad::Var x, grad::Mode mode);
  template <typename Self>
  static grad::Var decode_impl(Self& self, grad::Tape& tape, grad::Var y, grad::Var z,
                               grad::Mode mode);

  std::vector<Eigen::Index> widths_;
  Eigen::Index latent_dim_ = 0;
  std::vector<grad::MlpBlock> encoder_;
  grad::Dense perf_head_;
  grad::Dense latent_head_;
  std::vector<grad::MlpBlock> decoder_;
  grad::Dense design_head_;
};

/// z = mu + exp(logvar / 2) * eps
grad::Var reparameterize(grad::Var mu, grad::Var logvar, grad::Var eps);

/// (1 / (d_y d_z)) * sum_ij Cov_ij^2 with Cov = mean_b (y - mean(y))^T z.
/// z is deliberately not centred.
grad::Var loss_cov(grad::Var y, grad::Var z);

/// Mean over the batch of the diagonal-Gaussian KL to N(0, I).
grad::Var loss_kl(grad::Var mu, grad::Var logvar);

struct LossTerms {
  grad::Var total;
  grad::Var des;
  grad::Var perf;
  grad::Var kl;
  grad::Var cov;
};

LossTerms loss_total(grad::Var x, grad::Var x_hat, grad::Var y, grad::Var y_hat, grad::Var mu,
                     grad::Var logvar, grad::Var z, const std::array<double, 4>& lambdas);

struct LossBreakdown {
  double total = 0.0;
  double des = 0.0;
  double perf = 0.0;
  double kl = 0.0;
  double cov = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  LossBreakdown train;
  LossBreakdown validation;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

/// Sample ids per split.
struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

DataSplit split_dataset(std::span<const SampleRecord> ok_rows, const std::array<double, 3>& fractions,
                        std::uint64_t seed);

inline constexpr int kCheckpointVersion = 1;

struct CvaeCheckpoint {
  int format_version = kCheckpointVersion;
  CvaeConfig config;
  Standardizer standardizer;
  MetricRanges ranges;
  DesignSpace space;
  CvaeNetwork network;
  TrainingHistory history;
  DataSplit split;
  std::string dataset_hash;
  double validation_loss = 0.0;
};

/// Called after every epoch; return false to stop early.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Deterministic given config.seed. Simulator failures are excluded.
CvaeCheckpoint train(const Dataset& data, const CvaeConfig& config,
                     const EpochCallback& on_epoch = {});

/// Loss in eval mode with reparameterization noise from a fixed seed.
LossBreakdown evaluate_loss(const CvaeCheckpoint& ckpt, std::span<const SampleRecord> rows,
                            std::uint64_t noise_seed);
/// Recomputes the stored validation loss from the dataset and the split ids.
double validation_loss(const CvaeCheckpoint& ckpt, const Dataset& data);
std::vector<SampleRecord> select_rows(const Dataset& data, std::span<const std::size_t> ids);

/// Self-describing container: magic line, header length line, JSON header,
/// newline, then little-endian float64 tensor blobs.
void save_checkpoint(const CvaeCheckpoint& ckpt, const std::filesystem::path& path);
CvaeCheckpoint load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const CvaeCheckpoint& ckpt);
CvaeCheckpoint deserialize_checkpoint(const std::string& bytes);
/// FNV-1a over the serialized bytes.
std::string checkpoint_hash(const CvaeCheckpoint& ckpt);

struct Prediction {
  PerformanceMetrics metrics;
  std::array<double, kFlagCount> flag_probability{};
  /// Raw encoder output (standardized metrics, flag logits).
  std::array<double, kMetricDims> standardized{};
};

Prediction predict(const DesignFeatures& x, const CvaeCheckpoint& ckpt);
std::vector<Prediction> predict_batch(std::span<const DesignFeatures> xs,
                                      const CvaeCheckpoint& ckpt);

struct GeneratedDesign {
  DesignFeatures x;
  bool clipped = false;
  /// |requested - predicted| per target, standardized units for the
  /// continuous metrics and probability units for the flags.
  std::array<double, kMetricDims> reliability{};
  Prediction predicted;
  std::vector<double> z;
};

struct GenerationResult {
  std::vector<GeneratedDesign> designs;
  bool extrapolation = false;
  std::vector<std::string> warnings;
};

GenerationResult generate(const PerformanceMetrics& request, std::size_t n, std::uint64_t seed,
                          const CvaeCheckpoint& ckpt);

nlohmann::json to_json(const CvaeConfig& cfg);
CvaeConfig cvae_config_from_json(const nlohmann::json& j);

}  // namespace bridge
