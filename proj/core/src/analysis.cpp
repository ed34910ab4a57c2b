#include "bridge/analysis.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bridge/sampling.hpp"

namespace bridge {
namespace {

using nlohmann::json;

constexpr std::size_t kPierVariable = 2;

// Encoded column for a continuous design variable, or -1 for n_p.
Eigen::Index encoded_column(std::size_t variable) {
  for (Eigen::Index c = 0; c < kContinuousDesign; ++c) {
    if (kContinuousDesignIndex[static_cast<std::size_t>(c)] == variable) return c;
  }
  return -1;
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

json array_json(const std::array<std::array<double, kDesignDims>, kMetricDims>& m) {
  json out = json::object();
  for (std::size_t i = 0; i < kMetricDims; ++i) {
    json row = json::object();
    for (std::size_t j = 0; j < kDesignDims; ++j) row[std::string(kDesignNames[j])] = m[i][j];
    out[std::string(kMetricNames[i])] = row;
  }
  return out;
}

}  // namespace

SensitivityReport sensitivity(const DesignFeatures& x, const CvaeCheckpoint& ckpt) {
  SensitivityReport r;
  r.x = x;
  r.jacobian.resize(kPerfWidth, kDesignWidth);

  grad::Tape tape;
  const grad::Var input =
      tape.variable(ckpt.standardizer.encode_designs(std::span<const DesignFeatures>(&x, 1)));
  const grad::Var y_hat = ckpt.network.encode(tape, input).y_hat;
  for (Eigen::Index i = 0; i < kPerfWidth; ++i) {
    Matrix seed = Matrix::Zero(1, kPerfWidth);
    seed(0, i) = 1.0;
    tape.backward(y_hat, seed);
    const Matrix& g = input.grad();
    if (g.size() == 0) {
      r.jacobian.row(i).setZero();
    } else {
      r.jacobian.row(i) = g.row(0);
    }
  }

  const Standardizer& st = ckpt.standardizer;
  const int cls = std::clamp(x.n_p, kMinPiers, kMaxPiers) - kMinPiers;
  const Eigen::Index hot = kContinuousDesign + cls;
  for (std::size_t i = 0; i < kMetricDims; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const double sigma_y = i < kContinuousMetrics ? st.metric_std[i] : 1.0;
    for (std::size_t v = 0; v < kDesignDims; ++v) {
      double d = 0.0;
      double sigma_x = 1.0;
      if (v == kPierVariable) {
        // One step up in pier count, or one step down from the top class.
        d = cls + 1 < kPierClasses ? r.jacobian(row, hot + 1) - r.jacobian(row, hot)
                                   : r.jacobian(row, hot) - r.jacobian(row, hot - 1);
      } else {
        const Eigen::Index c = encoded_column(v);
        d = r.jacobian(row, c);
        sigma_x = st.design_std[static_cast<std::size_t>(c)];
      }
      r.standardized[i][v] = d;
      r.physical[i][v] = d * sigma_y / sigma_x;
    }
  }
  return r;
}

SwarmReport sensitivity_swarm(const PerformanceMetrics& request, std::size_t n, std::uint64_t seed,
                              const CvaeCheckpoint& ckpt, std::size_t target) {
  if (target >= kMetricDims) throw std::invalid_argument("sensitivity_swarm: bad target index");
  SwarmReport s;
  s.request = request;
  s.seed = seed;
  s.n = n;
  s.target = target;
  const GenerationResult gen = generate(request, n, seed, ckpt);
  s.warnings = gen.warnings;
  for (const GeneratedDesign& d : gen.designs) {
    const DesignFeatures& x = d.x;
    const SensitivityReport r = sensitivity(x, ckpt);
    s.designs.push_back(x);
    for (std::size_t v = 0; v < kDesignDims; ++v) {
      s.standardized[v].push_back(r.standardized[target][v]);
      s.physical[v].push_back(r.physical[target][v]);
    }
    s.cost.push_back(predict(x, ckpt).metrics.cost);
  }
  for (std::size_t v = 0; v < kDesignDims; ++v) {
    const auto& col = s.standardized[v];
    const auto pos = std::count_if(col.begin(), col.end(), [](double g) { return g > 0.0; });
    s.positive_fraction[v] = n ? static_cast<double>(pos) / static_cast<double>(n) : 0.0;
  }
  return s;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: size mismatch");
  const double ma = mean_of(a);
  const double mb = mean_of(b);
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

LatentMap latent_map(std::span<const SampleRecord> rows, const CvaeCheckpoint& ckpt) {
  LatentMap m;
  if (rows.empty()) return m;
  std::vector<DesignFeatures> xs;
  for (const auto& r : rows) xs.push_back(r.x);
  grad::Tape tape;
  const auto enc = ckpt.network.encode(tape, tape.constant(ckpt.standardizer.encode_designs(xs)));
  const Matrix& mu = enc.mu.value();
  const Matrix& lv = enc.logvar.value();
  const Eigen::Index dz = mu.cols();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    m.points.push_back({rows[k].id, std::vector<double>(mu.row(r).data(), mu.row(r).data() + dz),
                        std::vector<double>(lv.row(r).data(), lv.row(r).data() + dz), rows[k].y});
  }
  double total = 0.0;
  for (Eigen::Index d = 0; d < dz; ++d) {
    std::vector<double> col(mu.col(d).begin(), mu.col(d).end());
    const double mean = mean_of(col);
    double var = 0.0;
    for (double v : col) var += (v - mean) * (v - mean);
    m.mu_mean.push_back(mean);
    m.mu_std.push_back(std::sqrt(var / static_cast<double>(col.size())));
    std::array<double, kContinuousMetrics> corr{};
    for (std::size_t j = 0; j < kContinuousMetrics; ++j) {
      std::vector<double> y;
      for (const auto& r : rows) y.push_back(r.y.as_array()[j]);
      corr[j] = col.size() > 1 ? std::abs(pearson(col, y)) : 0.0;
      total += corr[j];
    }
    m.abs_correlation.push_back(corr);
  }
  m.mean_abs_correlation = total / static_cast<double>(dz * static_cast<Eigen::Index>(kContinuousMetrics));
  return m;
}

LatentMap latent_map(const Dataset& data, const CvaeCheckpoint& ckpt) {
  const auto rows = select_rows(data, ckpt.split.test);
  return latent_map(rows, ckpt);
}

RegressionStats regression_stats(std::span<const double> truth, std::span<const double> pred) {
  if (truth.size() != pred.size() || truth.empty()) {
    throw std::invalid_argument("regression_stats: size mismatch");
  }
  const double m = mean_of(truth);
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    ss_res += (truth[k] - pred[k]) * (truth[k] - pred[k]);
    ss_tot += (truth[k] - m) * (truth[k] - m);
  }
  RegressionStats s;
  s.rmse = std::sqrt(ss_res / static_cast<double>(truth.size()));
  s.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  return s;
}

SurrogateReport surrogate_report(std::span<const SampleRecord> rows,
                                 std::span<const PerformanceMetrics> predicted) {
  if (rows.size() != predicted.size() || rows.empty()) {
    throw std::invalid_argument("surrogate_report: size mismatch");
  }
  SurrogateReport rep;
  for (const auto& r : rows) rep.ids.push_back(r.id);
  for (std::size_t j = 0; j < kContinuousMetrics; ++j) {
    TargetReport& t = rep.targets[j];
    t.name = std::string(kMetricNames[j]);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      t.truth.push_back(rows[k].y.as_array()[j]);
      t.predicted.push_back(predicted[k].as_array()[j]);
    }
    t.stats = regression_stats(t.truth, t.predicted);
  }
  for (std::size_t f = 0; f < static_cast<std::size_t>(kFlagCount); ++f) {
    const std::size_t j = kContinuousMetrics + f;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      hits += (rows[k].y.as_array()[j] > 0.5) == (predicted[k].as_array()[j] > 0.5);
    }
    rep.flags[f] = {std::string(kMetricNames[j]),
                    static_cast<double>(hits) / static_cast<double>(rows.size())};
  }
  return rep;
}

SurrogateReport surrogate_report(const Dataset& data, const CvaeCheckpoint& ckpt) {
  const auto rows = select_rows(data, ckpt.split.test);
  std::vector<DesignFeatures> xs;
  for (const auto& r : rows) xs.push_back(r.x);
  std::vector<PerformanceMetrics> ys;
  for (const auto& p : predict_batch(xs, ckpt)) ys.push_back(p.metrics);
  return surrogate_report(rows, ys);
}

ParetoResult pareto_front(std::span<const std::array<double, 2>> points,
                          std::array<Direction, 2> directions) {
  ParetoResult res;
  res.directions = directions;
  const std::size_t n = points.size();
  std::vector<std::array<double, 2>> p(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t d = 0; d < 2; ++d) {
      const double v = points[k][d];
      if (std::isnan(v)) throw std::invalid_argument("pareto_front: NaN objective");
      p[k][d] = directions[d] == Direction::minimize ? v : -v;
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&p](std::size_t a, std::size_t b) { return p[a] < p[b]; });

  // Sweep groups of equal first objective. Inside a group only the minimum
  // second objective survives, and only if it beats every earlier group.
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < n;) {
    std::size_t end = g;
    while (end < n && p[order[end]][0] == p[order[g]][0]) ++end;
    const double group_min = p[order[g]][1];
    if (group_min < best) {
      for (std::size_t k = g; k < end && p[order[k]][1] == group_min; ++k) {
        res.indices.push_back(order[k]);
      }
      best = group_min;
    }
    g = end;
  }
  std::sort(res.indices.begin(), res.indices.end());
  return res;
}

// ---------------------------------------------------------------------------
// Serialization

json to_json(const DesignFeatures& x) {
  json j = json::object();
  const auto v = x.as_array();
  for (std::size_t k = 0; k < kDesignDims; ++k) {
    if (k == kPierVariable) {
      j[std::string(kDesignNames[k])] = x.n_p;
    } else {
      j[std::string(kDesignNames[k])] = v[k];
    }
  }
  return j;
}

json to_json(const PerformanceMetrics& y) {
  return {{"uls_util", y.uls_util},         {"sls_util", y.sls_util}, {"f1", y.f1},
          {"cost", y.cost},                 {"clearance_ok", y.clearance_ok},
          {"trees_ok", y.trees_ok}};
}

json to_json(const SensitivityReport& r) {
  json jac = json::array();
  for (Eigen::Index i = 0; i < r.jacobian.rows(); ++i) {
    jac.push_back(std::vector<double>(r.jacobian.row(i).begin(), r.jacobian.row(i).end()));
  }
  std::vector<std::string> targets(kMetricNames.begin(), kMetricNames.end());
  std::vector<std::string> features(kDesignNames.begin(), kDesignNames.end());
  std::vector<std::string> columns{"h_girder", "t_girder", "h_p", "i", "w"};
  for (int k = kMinPiers; k <= kMaxPiers; ++k) columns.push_back("n_p=" + std::to_string(k));
  return {{"x", to_json(r.x)},
          {"targets", targets},
          {"features", features},
          {"discrete_features", {"n_p"}},
          {"standardized", array_json(r.standardized)},
          {"physical", array_json(r.physical)},
          {"jacobian", jac},
          {"jacobian_columns", columns}};
}

json to_json(const SwarmReport& s) {
  json vars = json::object();
  for (std::size_t v = 0; v < kDesignDims; ++v) {
    vars[std::string(kDesignNames[v])] = {{"standardized", s.standardized[v]},
                                          {"physical", s.physical[v]},
                                          {"positive_fraction", s.positive_fraction[v]},
                                          {"discrete", v == kPierVariable}};
  }
  json designs = json::array();
  for (const auto& d : s.designs) designs.push_back(to_json(d));
  return {{"request", to_json(s.request)}, {"seed", s.seed},
          {"n", s.n},                      {"target", std::string(kMetricNames[s.target])},
          {"variables", vars},             {"cost", s.cost},
          {"designs", designs},            {"warnings", s.warnings}};
}

json to_json(const LatentMap& m) {
  json pts = json::array();
  for (const auto& p : m.points) {
    pts.push_back({{"id", p.id}, {"z", p.mu}, {"logvar", p.logvar}, {"y", to_json(p.y)}});
  }
  json corr = json::array();
  for (const auto& c : m.abs_correlation) {
    json row = json::object();
    for (std::size_t j = 0; j < kContinuousMetrics; ++j) row[std::string(kMetricNames[j])] = c[j];
    corr.push_back(row);
  }
  return {{"latent_dim", m.mu_mean.size()},
          {"points", pts},
          {"abs_correlation", corr},
          {"mean_abs_correlation", m.mean_abs_correlation},
          {"z_mean", m.mu_mean},
          {"z_std", m.mu_std}};
}

json to_json(const SurrogateReport& r) {
  json targets = json::object();
  for (const auto& t : r.targets) {
    targets[t.name] = {{"r2", t.stats.r2}, {"rmse", t.stats.rmse}, {"truth", t.truth},
                       {"predicted", t.predicted}};
  }
  json flags = json::object();
  for (const auto& f : r.flags) flags[f.name] = {{"accuracy", f.accuracy}};
  return {{"ids", r.ids}, {"targets", targets}, {"flags", flags}};
}

json to_json(const ParetoResult& r) {
  auto name = [](Direction d) { return d == Direction::minimize ? "min" : "max"; };
  return {{"indices", r.indices}, {"directions", {name(r.directions[0]), name(r.directions[1])}}};
}

std::string sensitivity_csv(const SensitivityReport& r) {
  std::string out = "target,variable,standardized,physical\n";
  for (std::size_t i = 0; i < kMetricDims; ++i) {
    for (std::size_t v = 0; v < kDesignDims; ++v) {
      out += std::string(kMetricNames[i]) + ',' + std::string(kDesignNames[v]) + ',' +
             format_double(r.standardized[i][v]) + ',' + format_double(r.physical[i][v]) + '\n';
    }
  }
  return out;
}

std::string swarm_csv(const SwarmReport& s) {
  std::string out = "design,variable,standardized,physical,cost\n";
  for (std::size_t k = 0; k < s.designs.size(); ++k) {
    for (std::size_t v = 0; v < kDesignDims; ++v) {
      out += std::to_string(k) + ',' + std::string(kDesignNames[v]) + ',' +
             format_double(s.standardized[v][k]) + ',' + format_double(s.physical[v][k]) + ',' +
             format_double(s.cost[k]) + '\n';
    }
  }
  return out;
}

std::string latent_csv(const LatentMap& m) {
  const std::size_t dz = m.mu_mean.size();
  std::string out = "id";
  for (std::size_t d = 0; d < dz; ++d) out += ",z" + std::to_string(d);
  for (auto name : kMetricNames) out += ',' + std::string(name);
  out += '\n';
  for (const auto& p : m.points) {
    out += std::to_string(p.id);
    for (double v : p.mu) out += ',' + format_double(v);
    for (double v : p.y.as_array()) out += ',' + format_double(v);
    out += '\n';
  }
  return out;
}

std::string surrogate_csv(const SurrogateReport& r) {
  std::string out = "id,target,truth,predicted\n";
  for (const auto& t : r.targets) {
    for (std::size_t k = 0; k < t.truth.size(); ++k) {
      out += std::to_string(r.ids[k]) + ',' + t.name + ',' + format_double(t.truth[k]) + ',' +
             format_double(t.predicted[k]) + '\n';
    }
  }
  return out;
}

}  // namespace bridge
