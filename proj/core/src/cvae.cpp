#include "bridge/cvae.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace bridge {
namespace {

using grad::Mode;
using grad::Tape;
using grad::Var;
using nlohmann::json;

constexpr const char* kMagic = "BRIDGE-CVAE-CHECKPOINT";
constexpr std::uint64_t kShuffleSalt = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kNoiseSalt = 0xd1b54a32d192ed03ULL;
constexpr std::uint64_t kValidationSalt = 0x632be59bd9b4e019ULL;

std::uint64_t validation_noise_seed(std::uint64_t seed) { return seed ^ kValidationSalt; }

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  }
  return m;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

MetricRanges compute_ranges(std::span<const SampleRecord> rows) {
  MetricRanges r;
  for (std::size_t j = 0; j < kContinuousMetrics; ++j) {
    std::vector<double> col;
    col.reserve(rows.size());
    for (const auto& rec : rows) col.push_back(rec.y.as_array()[j]);
    r.min[j] = *std::min_element(col.begin(), col.end());
    r.max[j] = *std::max_element(col.begin(), col.end());
    r.median[j] = median_of(std::move(col));
  }
  for (std::size_t f = 0; f < static_cast<std::size_t>(kFlagCount); ++f) {
    double hits = 0.0;
    for (const auto& rec : rows) hits += rec.y.as_array()[kContinuousMetrics + f];
    r.flag_rate[f] = hits / static_cast<double>(rows.size());
  }
  return r;
}

LossBreakdown read_terms(const LossTerms& t) {
  return {t.total.scalar(), t.des.scalar(), t.perf.scalar(), t.kl.scalar(), t.cov.scalar()};
}

// Forward pass and loss for one batch of encoded rows.
template <typename Net>
LossTerms batch_loss(Net& net, Tape& tape, const Matrix& x, const Matrix& y, const Matrix& noise,
                     const std::array<double, 4>& lambdas, Mode mode) {
  Var xv = tape.constant(x);
  Var yv = tape.constant(y);
  CvaeNetwork::Encoded enc;
  Var x_hat;
  Var z;
  if constexpr (std::is_const_v<Net>) {
    enc = net.encode(tape, xv);
    z = reparameterize(enc.mu, enc.logvar, tape.constant(noise));
    x_hat = net.decode(tape, yv, z);
  } else {
    enc = net.encode(tape, xv, mode);
    z = reparameterize(enc.mu, enc.logvar, tape.constant(noise));
    // Ground-truth y conditions the decoder; the predicted head never feeds it.
    x_hat = net.decode(tape, yv, z, mode);
  }
  return loss_total(xv, x_hat, yv, enc.y_hat, enc.mu, enc.logvar, z, lambdas);
}

Matrix gather_rows(const Matrix& src, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), src.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = src.row(static_cast<Eigen::Index>(idx[r]));
  }
  return out;
}

std::vector<DesignFeatures> designs_of(std::span<const SampleRecord> rows) {
  std::vector<DesignFeatures> xs;
  xs.reserve(rows.size());
  for (const auto& r : rows) xs.push_back(r.x);
  return xs;
}

std::vector<PerformanceMetrics> metrics_of(std::span<const SampleRecord> rows) {
  std::vector<PerformanceMetrics> ys;
  ys.reserve(rows.size());
  for (const auto& r : rows) ys.push_back(r.y);
  return ys;
}

LossBreakdown evaluate_rows(const CvaeNetwork& net, const Standardizer& st,
                            std::span<const SampleRecord> rows, const std::array<double, 4>& lambdas,
                            std::uint64_t noise_seed) {
  const Matrix x = st.encode_designs(designs_of(rows));
  const Matrix y = st.encode_metrics(metrics_of(rows));
  std::mt19937_64 rng(noise_seed);
  const Matrix noise = standard_normal(x.rows(), net.latent_dim(), rng);
  Tape tape;
  return read_terms(batch_loss(net, tape, x, y, noise, lambdas, Mode::eval));
}

void check_finite(const LossBreakdown& b, std::size_t epoch) {
  const std::pair<const char*, double> parts[] = {
      {"L_des", b.des}, {"L_perf", b.perf}, {"L_KL", b.kl}, {"L_cov", b.cov}, {"total", b.total}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) {
      throw TrainingError("non-finite loss component " + std::string(name) + " at epoch " +
                          std::to_string(epoch));
    }
  }
}

json breakdown_json(const LossBreakdown& b) {
  return {{"total", b.total}, {"des", b.des}, {"perf", b.perf}, {"kl", b.kl}, {"cov", b.cov}};
}

LossBreakdown breakdown_from(const json& j) {
  return {j.at("total").get<double>(), j.at("des").get<double>(), j.at("perf").get<double>(),
          j.at("kl").get<double>(), j.at("cov").get<double>()};
}

void put_f64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) {
    out.push_back(static_cast<char>(bits & 0xffU));
    bits >>= 8;
  }
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 7; b >= 0; --b) bits = (bits << 8) | p[b];
  return std::bit_cast<double>(bits);
}

}  // namespace

// ---------------------------------------------------------------------------
// Standardizer

Standardizer Standardizer::fit(std::span<const SampleRecord> rows) {
  if (rows.size() < 2) throw std::invalid_argument("standardizer needs at least 2 rows");
  Standardizer s;
  const double n = static_cast<double>(rows.size());
  auto moments = [n](auto&& getter, std::size_t count, auto& mean, auto& sd,
                     std::span<const SampleRecord> rs) {
    for (std::size_t j = 0; j < count; ++j) {
      double m = 0.0;
      for (const auto& r : rs) m += getter(r, j);
      m /= n;
      double v = 0.0;
      for (const auto& r : rs) v += (getter(r, j) - m) * (getter(r, j) - m);
      v /= n;
      if (!(v > 0.0)) throw std::invalid_argument("standardizer: constant feature");
      mean[j] = m;
      sd[j] = std::sqrt(v);
    }
  };
  moments([](const SampleRecord& r, std::size_t j) { return r.x.as_array()[kContinuousDesignIndex[j]]; },
          kContinuousDesign, s.design_mean, s.design_std, rows);
  moments([](const SampleRecord& r, std::size_t j) { return r.y.as_array()[j]; }, kContinuousMetrics,
          s.metric_mean, s.metric_std, rows);
  return s;
}

Matrix Standardizer::encode_designs(std::span<const DesignFeatures> xs) const {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(xs.size()), kDesignWidth);
  for (std::size_t r = 0; r < xs.size(); ++r) {
    const auto v = xs[r].as_array();
    const auto row = static_cast<Eigen::Index>(r);
    for (std::size_t j = 0; j < kContinuousDesign; ++j) {
      m(row, static_cast<Eigen::Index>(j)) =
          (v[kContinuousDesignIndex[j]] - design_mean[j]) / design_std[j];
    }
    const int cls = std::clamp(xs[r].n_p, kMinPiers, kMaxPiers) - kMinPiers;
    m(row, kContinuousDesign + cls) = 1.0;
  }
  return m;
}

Matrix Standardizer::encode_metrics(std::span<const PerformanceMetrics> ys) const {
  Matrix m(static_cast<Eigen::Index>(ys.size()), kPerfWidth);
  for (std::size_t r = 0; r < ys.size(); ++r) {
    const auto v = ys[r].as_array();
    const auto row = static_cast<Eigen::Index>(r);
    for (std::size_t j = 0; j < kContinuousMetrics; ++j) {
      m(row, static_cast<Eigen::Index>(j)) = (v[j] - metric_mean[j]) / metric_std[j];
    }
    for (std::size_t j = kContinuousMetrics; j < kMetricDims; ++j) {
      m(row, static_cast<Eigen::Index>(j)) = v[j];
    }
  }
  return m;
}

DesignFeatures Standardizer::decode_design(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  if (row.size() != kDesignWidth) throw std::invalid_argument("decode_design: expected 12 columns");
  std::array<double, kDesignDims> v{};
  for (std::size_t j = 0; j < kContinuousDesign; ++j) {
    v[kContinuousDesignIndex[j]] = row(static_cast<Eigen::Index>(j)) * design_std[j] + design_mean[j];
  }
  Eigen::Index cls = 0;
  row.segment(kContinuousDesign, kPierClasses).maxCoeff(&cls);
  v[2] = static_cast<double>(kMinPiers + cls);
  return DesignFeatures::from_array(v);
}

PerformanceMetrics Standardizer::decode_metrics(
    const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  if (row.size() != kPerfWidth) throw std::invalid_argument("decode_metrics: expected 6 columns");
  std::array<double, kMetricDims> v{};
  for (std::size_t j = 0; j < kContinuousMetrics; ++j) {
    v[j] = row(static_cast<Eigen::Index>(j)) * metric_std[j] + metric_mean[j];
  }
  for (std::size_t j = kContinuousMetrics; j < kMetricDims; ++j) {
    v[j] = row(static_cast<Eigen::Index>(j)) > 0.0 ? 1.0 : 0.0;
  }
  return PerformanceMetrics::from_array(v);
}

// ---------------------------------------------------------------------------
// Config

void CvaeConfig::validate() const {
  if (widths.empty()) throw std::invalid_argument("cvae config: widths must be non-empty");
  for (auto w : widths) {
    if (w <= 0) throw std::invalid_argument("cvae config: widths must be positive");
  }
  if (latent_dim <= 0) throw std::invalid_argument("cvae config: latent_dim must be positive");
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw std::invalid_argument("cvae config: loss weights must be >= 0");
  }
  const double total = split[0] + split[1] + split[2];
  if (std::abs(total - 1.0) > 1e-9 || split[0] <= 0.0 || split[1] <= 0.0 || split[2] < 0.0) {
    throw std::invalid_argument("cvae config: split fractions must be positive and sum to 1");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("cvae config: learning rate must be > 0");
  if (batch_size < 2) throw std::invalid_argument("cvae config: batch size must be >= 2");
  if (max_epochs == 0) throw std::invalid_argument("cvae config: max_epochs must be > 0");
}

CvaeConfig CvaeConfig::desk() {
  CvaeConfig c;
  c.widths = {32, 64, 128, 64, 32};
  return c;
}

json to_json(const CvaeConfig& c) {
  return {{"widths", c.widths},
          {"latent_dim", c.latent_dim},
          {"lambdas", c.lambdas},
          {"learning_rate", c.learning_rate},
          {"plateau_factor", c.plateau_factor},
          {"plateau_patience", c.plateau_patience},
          {"early_stop_patience", c.early_stop_patience},
          {"min_improvement", c.min_improvement},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"split", c.split},
          {"seed", c.seed}};
}

CvaeConfig cvae_config_from_json(const json& j) {
  CvaeConfig c;
  c.widths = j.at("widths").get<std::vector<Eigen::Index>>();
  c.latent_dim = j.at("latent_dim").get<Eigen::Index>();
  c.lambdas = j.at("lambdas").get<std::array<double, 4>>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.plateau_factor = j.at("plateau_factor").get<double>();
  c.plateau_patience = j.at("plateau_patience").get<std::size_t>();
  c.early_stop_patience = j.at("early_stop_patience").get<std::size_t>();
  c.min_improvement = j.at("min_improvement").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.split = j.at("split").get<std::array<double, 3>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

// ---------------------------------------------------------------------------
// Network

CvaeNetwork::CvaeNetwork(const std::vector<Eigen::Index>& widths, Eigen::Index latent_dim,
                         std::uint64_t seed)
    : widths_(widths), latent_dim_(latent_dim) {
  if (widths.empty() || latent_dim <= 0) throw std::invalid_argument("invalid CVAE architecture");
  std::mt19937_64 rng(seed);
  Eigen::Index in = kDesignWidth;
  for (auto w : widths) {
    encoder_.emplace_back(in, w, rng);
    in = w;
  }
  perf_head_ = grad::Dense(in, kPerfWidth, rng);
  latent_head_ = grad::Dense(in, 2 * latent_dim, rng);
  in = kPerfWidth + latent_dim;
  for (auto w : widths) {
    decoder_.emplace_back(in, w, rng);
    in = w;
  }
  design_head_ = grad::Dense(in, kDesignWidth, rng);
}

template <typename Self>
CvaeNetwork::Encoded CvaeNetwork::encode_impl(Self& self, Tape& tape, Var x, Mode mode) {
  if (x.cols() != kDesignWidth) throw std::invalid_argument("encode: expected 12 input columns");
  Var h = x;
  for (auto& block : self.encoder_) {
    if constexpr (std::is_const_v<Self>) {
      h = block.forward(tape, h);
    } else {
      h = block.forward(tape, h, mode);
    }
  }
  Encoded out;
  out.y_hat = self.perf_head_.forward(tape, h);
  Var latent = self.latent_head_.forward(tape, h);
  out.mu = slice_cols(latent, 0, self.latent_dim_);
  out.logvar = slice_cols(latent, self.latent_dim_, self.latent_dim_);
  return out;
}

template <typename Self>
Var CvaeNetwork::decode_impl(Self& self, Tape& tape, Var y, Var z, Mode mode) {
  if (y.cols() != kPerfWidth || z.cols() != self.latent_dim_) {
    throw std::invalid_argument("decode: expected y with 6 columns and z with latent_dim columns");
  }
  Var h = grad::concat_cols({y, z});
  for (auto& block : self.decoder_) {
    if constexpr (std::is_const_v<Self>) {
      h = block.forward(tape, h);
    } else {
      h = block.forward(tape, h, mode);
    }
  }
  return self.design_head_.forward(tape, h);
}

CvaeNetwork::Encoded CvaeNetwork::encode(Tape& tape, Var x, Mode mode) {
  return encode_impl(*this, tape, x, mode);
}

CvaeNetwork::Encoded CvaeNetwork::encode(Tape& tape, Var x) const {
  return encode_impl(*this, tape, x, Mode::eval);
}

Var CvaeNetwork::decode(Tape& tape, Var y, Var z, Mode mode) {
  return decode_impl(*this, tape, y, z, mode);
}

Var CvaeNetwork::decode(Tape& tape, Var y, Var z) const {
  return decode_impl(*this, tape, y, z, Mode::eval);
}

std::vector<CvaeNetwork::NamedTensor> CvaeNetwork::tensors() {
  std::vector<NamedTensor> out;
  auto add_blocks = [&out](const std::string& prefix, std::vector<grad::MlpBlock>& blocks) {
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      const std::string p = prefix + "." + std::to_string(k);
      out.push_back({p + ".dense.weight", &blocks[k].dense.weight, true});
      out.push_back({p + ".dense.bias", &blocks[k].dense.bias, true});
      out.push_back({p + ".norm.gamma", &blocks[k].norm.gamma, true});
      out.push_back({p + ".norm.beta", &blocks[k].norm.beta, true});
      out.push_back({p + ".norm.running_mean", &blocks[k].norm.running_mean, false});
      out.push_back({p + ".norm.running_var", &blocks[k].norm.running_var, false});
    }
  };
  add_blocks("encoder", encoder_);
  out.push_back({"perf_head.weight", &perf_head_.weight, true});
  out.push_back({"perf_head.bias", &perf_head_.bias, true});
  out.push_back({"latent_head.weight", &latent_head_.weight, true});
  out.push_back({"latent_head.bias", &latent_head_.bias, true});
  add_blocks("decoder", decoder_);
  out.push_back({"design_head.weight", &design_head_.weight, true});
  out.push_back({"design_head.bias", &design_head_.bias, true});
  return out;
}

std::vector<Matrix*> CvaeNetwork::parameters() {
  std::vector<Matrix*> out;
  for (auto& t : tensors()) {
    if (t.trainable) out.push_back(t.tensor);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

Var reparameterize(Var mu, Var logvar, Var eps) {
  return add(mu, mul(exp(scale(logvar, 0.5)), eps));
}

Var loss_cov(Var y, Var z) {
  if (y.rows() < 2 || y.rows() != z.rows()) {
    throw std::invalid_argument("loss_cov needs matching batches of at least 2 rows");
  }
  const double batch = static_cast<double>(y.rows());
  Var centered = add_bias(y, scale(mean_rows(y), -1.0));
  Var cov = scale(matmul(transpose(centered), z), 1.0 / batch);
  return reduce_mean(square(cov));
}

Var loss_kl(Var mu, Var logvar) {
  const double batch = static_cast<double>(mu.rows());
  Var inner = sub(sub(add_scalar(logvar, 1.0), square(mu)), exp(logvar));
  return scale(sum(inner), -0.5 / batch);
}

LossTerms loss_total(Var x, Var x_hat, Var y, Var y_hat, Var mu, Var logvar, Var z,
                     const std::array<double, 4>& lambdas) {
  LossTerms t;
  t.des = add(mse(slice_cols(x_hat, 0, kContinuousDesign), slice_cols(x, 0, kContinuousDesign)),
              softmax_ce(slice_cols(x_hat, kContinuousDesign, kPierClasses),
                         slice_cols(x, kContinuousDesign, kPierClasses)));
  const auto nc = static_cast<Eigen::Index>(kContinuousMetrics);
  t.perf = add(mse(slice_cols(y_hat, 0, nc), slice_cols(y, 0, nc)),
               binary_ce_with_logits(slice_cols(y_hat, nc, kFlagCount), slice_cols(y, nc, kFlagCount)));
  t.kl = loss_kl(mu, logvar);
  t.cov = loss_cov(y, z);
  t.total = add(add(scale(t.des, lambdas[0]), scale(t.perf, lambdas[1])),
                add(scale(t.kl, lambdas[2]), scale(t.cov, lambdas[3])));
  return t;
}

// ---------------------------------------------------------------------------
// Training

std::vector<SampleRecord> select_rows(const Dataset& data, std::span<const std::size_t> ids) {
  std::vector<SampleRecord> out;
  out.reserve(ids.size());
  for (std::size_t id : ids) {
    if (id >= data.records.size() || data.records[id].id != id) {
      throw std::runtime_error("split references sample id " + std::to_string(id) +
                               " missing from the dataset");
    }
    out.push_back(data.records[id]);
  }
  return out;
}

DataSplit split_dataset(std::span<const SampleRecord> ok_rows, const std::array<double, 3>& fractions,
                        std::uint64_t seed) {
  std::vector<std::size_t> ids;
  ids.reserve(ok_rows.size());
  for (const auto& r : ok_rows) ids.push_back(r.id);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const double n = static_cast<double>(ids.size());
  const auto n_train = static_cast<std::size_t>(std::floor(fractions[0] * n + 0.5));
  const auto n_val = std::min(ids.size() - n_train,
                              static_cast<std::size_t>(std::floor(fractions[1] * n + 0.5)));
  DataSplit s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                      ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  return s;
}

CvaeCheckpoint train(const Dataset& data, const CvaeConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const auto ok = data.ok_records();
  if (ok.size() < 100) throw TrainingError("training needs at least 100 ok rows");

  CvaeCheckpoint ckpt;
  ckpt.config = config;
  ckpt.space = data.header.space;
  ckpt.dataset_hash = data.content_hash();
  ckpt.split = split_dataset(ok, config.split, config.seed);
  const auto train_rows = select_rows(data, ckpt.split.train);
  const auto val_rows = select_rows(data, ckpt.split.validation);
  if (val_rows.size() < 2) throw TrainingError("validation split needs at least 2 rows");
  ckpt.standardizer = Standardizer::fit(train_rows);
  ckpt.ranges = compute_ranges(train_rows);
  ckpt.network = CvaeNetwork(config.widths, config.latent_dim, config.seed);

  CvaeNetwork& net = ckpt.network;
  const Standardizer& st = ckpt.standardizer;
  const Matrix x_train = st.encode_designs(designs_of(train_rows));
  const Matrix y_train = st.encode_metrics(metrics_of(train_rows));
  const std::uint64_t val_seed = validation_noise_seed(config.seed);

  std::mt19937_64 shuffle_rng(config.seed ^ kShuffleSalt);
  std::mt19937_64 noise_rng(config.seed ^ kNoiseSalt);
  grad::AdamState adam;
  const std::vector<Matrix*> params = net.parameters();
  std::vector<Matrix> grads(params.size());
  double lr = config.learning_rate;

  auto snapshot = [&net] {
    std::vector<Matrix> values;
    for (auto& t : net.tensors()) values.push_back(*t.tensor);
    return values;
  };

  EpochRecord initial;
  initial.epoch = 0;
  initial.learning_rate = lr;
  initial.train = evaluate_rows(net, st, train_rows, config.lambdas, val_seed);
  initial.validation = evaluate_rows(net, st, val_rows, config.lambdas, val_seed);
  check_finite(initial.validation, 0);
  ckpt.history.epochs.push_back(initial);

  double best = initial.validation.total;
  std::vector<Matrix> best_values = snapshot();
  std::size_t since_best = 0;
  std::size_t since_decay = 0;

  std::vector<std::size_t> order(train_rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    LossBreakdown acc;
    double seen = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      // Batch statistics are undefined for a single row.
      if (count < 2) break;
      const std::span<const std::size_t> idx(order.data() + start, count);
      const Matrix xb = gather_rows(x_train, idx);
      const Matrix yb = gather_rows(y_train, idx);
      const Matrix noise = standard_normal(static_cast<Eigen::Index>(count), config.latent_dim, noise_rng);

      Tape tape;
      LossTerms terms;
      try {
        terms = batch_loss(net, tape, xb, yb, noise, config.lambdas, Mode::train);
      } catch (const grad::NumericalError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + ": " + e.what());
      }
      const LossBreakdown b = read_terms(terms);
      check_finite(b, epoch);
      tape.backward(terms.total);
      for (std::size_t k = 0; k < params.size(); ++k) grads[k] = tape.parameter_grad(*params[k]);
      grad::adam_step(params, grads, adam, lr);

      const double w = static_cast<double>(count);
      acc.total += w * b.total;
      acc.des += w * b.des;
      acc.perf += w * b.perf;
      acc.kl += w * b.kl;
      acc.cov += w * b.cov;
      seen += w;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = lr;
    rec.train = {acc.total / seen, acc.des / seen, acc.perf / seen, acc.kl / seen, acc.cov / seen};
    try {
      rec.validation = evaluate_rows(net, st, val_rows, config.lambdas, val_seed);
    } catch (const grad::NumericalError& e) {
      throw TrainingError("validation at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    check_finite(rec.validation, epoch);
    ckpt.history.epochs.push_back(rec);

    if (rec.validation.total < best - config.min_improvement) {
      best = rec.validation.total;
      best_values = snapshot();
      ckpt.history.best_epoch = epoch;
      since_best = 0;
      since_decay = 0;
    } else {
      ++since_best;
      ++since_decay;
    }
    if (since_decay >= config.plateau_patience) {
      lr *= config.plateau_factor;
      since_decay = 0;
    }
    if (since_best >= config.early_stop_patience) {
      ckpt.history.early_stopped = true;
      break;
    }
    if (on_epoch && !on_epoch(rec)) break;
  }

  auto tensors = net.tensors();
  for (std::size_t k = 0; k < tensors.size(); ++k) *tensors[k].tensor = best_values[k];
  ckpt.validation_loss = evaluate_rows(net, st, val_rows, config.lambdas, val_seed).total;
  return ckpt;
}

LossBreakdown evaluate_loss(const CvaeCheckpoint& ckpt, std::span<const SampleRecord> rows,
                            std::uint64_t noise_seed) {
  return evaluate_rows(ckpt.network, ckpt.standardizer, rows, ckpt.config.lambdas, noise_seed);
}

double validation_loss(const CvaeCheckpoint& ckpt, const Dataset& data) {
  const auto rows = select_rows(data, ckpt.split.validation);
  return evaluate_loss(ckpt, rows, validation_noise_seed(ckpt.config.seed)).total;
}

// ---------------------------------------------------------------------------
// Checkpoint container

std::string serialize_checkpoint(const CvaeCheckpoint& ckpt) {
  auto& net = const_cast<CvaeNetwork&>(ckpt.network);
  json tensors = json::array();
  std::string blob;
  std::size_t offset = 0;
  for (const auto& t : net.tensors()) {
    tensors.push_back({{"name", t.name},
                       {"rows", t.tensor->rows()},
                       {"cols", t.tensor->cols()},
                       {"offset", offset}});
    for (Eigen::Index k = 0; k < t.tensor->size(); ++k) put_f64(blob, t.tensor->data()[k]);
    offset += static_cast<std::size_t>(t.tensor->size());
  }

  json epochs = json::array();
  for (const auto& e : ckpt.history.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"learning_rate", e.learning_rate},
                      {"train", breakdown_json(e.train)},
                      {"validation", breakdown_json(e.validation)}});
  }
  const Standardizer& s = ckpt.standardizer;
  const json header = {
      {"format", kMagic},
      {"version", ckpt.format_version},
      {"config", to_json(ckpt.config)},
      {"architecture", {{"widths", net.widths()}, {"latent_dim", net.latent_dim()}}},
      {"standardizer",
       {{"design_columns", {"h_girder", "t_girder", "h_p", "i", "w"}},
        {"design_mean", s.design_mean},
        {"design_std", s.design_std},
        {"metric_columns", {"uls_util", "sls_util", "f1", "cost"}},
        {"metric_mean", s.metric_mean},
        {"metric_std", s.metric_std},
        {"n_p_classes", {2, 3, 4, 5, 6, 7, 8}}}},
      {"ranges",
       {{"min", ckpt.ranges.min},
        {"max", ckpt.ranges.max},
        {"median", ckpt.ranges.median},
        {"flag_rate", ckpt.ranges.flag_rate}}},
      {"design_space", {{"min", ckpt.space.min}, {"max", ckpt.space.max},
                        {"sample_count", ckpt.space.sample_count}}},
      {"history", {{"best_epoch", ckpt.history.best_epoch},
                   {"early_stopped", ckpt.history.early_stopped},
                   {"epochs", epochs}}},
      {"split", {{"train", ckpt.split.train},
                 {"validation", ckpt.split.validation},
                 {"test", ckpt.split.test}}},
      {"dataset_hash", ckpt.dataset_hash},
      {"validation_loss", ckpt.validation_loss},
      {"tensor_encoding", "float64-le"},
      {"tensors", tensors},
  };
  const std::string text = header.dump();
  std::string out = std::string(kMagic) + " " + std::to_string(ckpt.format_version) + "\n";
  out += std::to_string(text.size()) + "\n";
  out += text;
  out += "\n";
  out += blob;
  return out;
}

CvaeCheckpoint deserialize_checkpoint(const std::string& bytes) {
  const std::size_t l1 = bytes.find('\n');
  if (l1 == std::string::npos || bytes.compare(0, std::strlen(kMagic), kMagic) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const std::size_t l2 = bytes.find('\n', l1 + 1);
  if (l2 == std::string::npos) throw std::runtime_error("checkpoint: truncated header");
  const std::size_t header_len = std::stoull(bytes.substr(l1 + 1, l2 - l1 - 1));
  if (l2 + 1 + header_len + 1 > bytes.size()) throw std::runtime_error("checkpoint: truncated header");
  json h;
  try {
    h = json::parse(bytes.substr(l2 + 1, header_len));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: header: ") + e.what());
  }
  const std::size_t blob_start = l2 + 1 + header_len + 1;

  CvaeCheckpoint c;
  try {
    c.format_version = h.at("version").get<int>();
    if (c.format_version != kCheckpointVersion) {
      throw std::runtime_error("checkpoint: unsupported version " + std::to_string(c.format_version));
    }
    c.config = cvae_config_from_json(h.at("config"));
    const json& s = h.at("standardizer");
    c.standardizer.design_mean = s.at("design_mean").get<std::array<double, kContinuousDesign>>();
    c.standardizer.design_std = s.at("design_std").get<std::array<double, kContinuousDesign>>();
    c.standardizer.metric_mean = s.at("metric_mean").get<std::array<double, kContinuousMetrics>>();
    c.standardizer.metric_std = s.at("metric_std").get<std::array<double, kContinuousMetrics>>();
    const json& r = h.at("ranges");
    c.ranges.min = r.at("min").get<std::array<double, kContinuousMetrics>>();
    c.ranges.max = r.at("max").get<std::array<double, kContinuousMetrics>>();
    c.ranges.median = r.at("median").get<std::array<double, kContinuousMetrics>>();
    c.ranges.flag_rate = r.at("flag_rate").get<std::array<double, kFlagCount>>();
    const json& d = h.at("design_space");
    c.space.min = d.at("min").get<std::array<double, kDesignDims>>();
    c.space.max = d.at("max").get<std::array<double, kDesignDims>>();
    c.space.sample_count = d.at("sample_count").get<std::size_t>();
    const json& hist = h.at("history");
    c.history.best_epoch = hist.at("best_epoch").get<std::size_t>();
    c.history.early_stopped = hist.at("early_stopped").get<bool>();
    for (const json& e : hist.at("epochs")) {
      c.history.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("learning_rate").get<double>(),
                                  breakdown_from(e.at("train")), breakdown_from(e.at("validation"))});
    }
    const json& sp = h.at("split");
    c.split.train = sp.at("train").get<std::vector<std::size_t>>();
    c.split.validation = sp.at("validation").get<std::vector<std::size_t>>();
    c.split.test = sp.at("test").get<std::vector<std::size_t>>();
    c.dataset_hash = h.at("dataset_hash").get<std::string>();
    c.validation_loss = h.at("validation_loss").get<double>();

    const json& arch = h.at("architecture");
    c.network = CvaeNetwork(arch.at("widths").get<std::vector<Eigen::Index>>(),
                            arch.at("latent_dim").get<Eigen::Index>(), 0);
    auto tensors = c.network.tensors();
    const json& listed = h.at("tensors");
    if (listed.size() != tensors.size()) throw std::runtime_error("checkpoint: tensor count mismatch");
    const auto* blob = reinterpret_cast<const unsigned char*>(bytes.data() + blob_start);
    const std::size_t blob_doubles = (bytes.size() - blob_start) / 8;
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      const json& t = listed[k];
      Matrix& m = *tensors[k].tensor;
      if (t.at("name").get<std::string>() != tensors[k].name ||
          t.at("rows").get<Eigen::Index>() != m.rows() || t.at("cols").get<Eigen::Index>() != m.cols()) {
        throw std::runtime_error("checkpoint: tensor layout mismatch at " + tensors[k].name);
      }
      const auto off = t.at("offset").get<std::size_t>();
      if (off + static_cast<std::size_t>(m.size()) > blob_doubles) {
        throw std::runtime_error("checkpoint: truncated tensor data");
      }
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = get_f64(blob + 8 * (off + static_cast<std::size_t>(i)));
      }
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  }
  return c;
}

void save_checkpoint(const CvaeCheckpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

CvaeCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

std::string checkpoint_hash(const CvaeCheckpoint& ckpt) {
  return to_hex(fnv1a64(serialize_checkpoint(ckpt)));
}

// ---------------------------------------------------------------------------
// Inference

std::vector<Prediction> predict_batch(std::span<const DesignFeatures> xs, const CvaeCheckpoint& ckpt) {
  std::vector<Prediction> out;
  if (xs.empty()) return out;
  Tape tape;
  const auto enc = ckpt.network.encode(tape, tape.constant(ckpt.standardizer.encode_designs(xs)));
  const Matrix& y = enc.y_hat.value();
  out.reserve(xs.size());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    Prediction p;
    p.metrics = ckpt.standardizer.decode_metrics(y.row(r));
    for (Eigen::Index j = 0; j < kPerfWidth; ++j) p.standardized[static_cast<std::size_t>(j)] = y(r, j);
    for (Eigen::Index f = 0; f < kFlagCount; ++f) {
      const double logit = y(r, static_cast<Eigen::Index>(kContinuousMetrics) + f);
      p.flag_probability[static_cast<std::size_t>(f)] = 1.0 / (1.0 + std::exp(-logit));
    }
    out.push_back(p);
  }
  return out;
}

Prediction predict(const DesignFeatures& x, const CvaeCheckpoint& ckpt) {
  return predict_batch(std::span<const DesignFeatures>(&x, 1), ckpt).front();
}

GenerationResult generate(const PerformanceMetrics& request, std::size_t n, std::uint64_t seed,
                          const CvaeCheckpoint& ckpt) {
  GenerationResult result;
  if (n == 0) return result;
  const auto req = request.as_array();
  for (std::size_t j = 0; j < kContinuousMetrics; ++j) {
    if (!std::isfinite(req[j])) throw std::invalid_argument("generate: non-finite request");
    if (req[j] < ckpt.ranges.min[j] || req[j] > ckpt.ranges.max[j]) {
      result.extrapolation = true;
      result.warnings.push_back(std::string(kMetricNames[j]) +
                                " request lies outside the training range");
    }
  }

  const Standardizer& st = ckpt.standardizer;
  const Matrix y_row = st.encode_metrics(std::span<const PerformanceMetrics>(&request, 1));
  const auto rows = static_cast<Eigen::Index>(n);
  const Matrix y = y_row.replicate(rows, 1);
  std::mt19937_64 rng(seed);
  const Matrix z = standard_normal(rows, ckpt.network.latent_dim(), rng);

  Tape tape;
  const Matrix x_hat = ckpt.network.decode(tape, tape.constant(y), tape.constant(z)).value();

  std::vector<DesignFeatures> xs;
  result.designs.resize(n);
  for (Eigen::Index r = 0; r < rows; ++r) {
    GeneratedDesign& d = result.designs[static_cast<std::size_t>(r)];
    d.x = st.decode_design(x_hat.row(r));
    d.clipped = ckpt.space.clip(d.x);
    d.z.assign(z.row(r).data(), z.row(r).data() + z.cols());
    xs.push_back(d.x);
  }
  const auto preds = predict_batch(xs, ckpt);
  for (std::size_t k = 0; k < n; ++k) {
    GeneratedDesign& d = result.designs[k];
    d.predicted = preds[k];
    for (std::size_t j = 0; j < kContinuousMetrics; ++j) {
      d.reliability[j] = std::abs(y_row(0, static_cast<Eigen::Index>(j)) - preds[k].standardized[j]);
    }
    for (std::size_t f = 0; f < static_cast<std::size_t>(kFlagCount); ++f) {
      d.reliability[kContinuousMetrics + f] =
          std::abs(req[kContinuousMetrics + f] - preds[k].flag_probability[f]);
    }
  }
  return result;
}

}  // namespace bridge
