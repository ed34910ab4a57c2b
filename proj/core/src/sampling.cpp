#include "bridge/sampling.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <system_error>
#include <thread>

namespace bridge {
namespace {

constexpr const char* kColumnHeader =
    "id,h_girder,t_girder,n_p,h_p,i,w,uls_util,sls_util,f1,cost,clearance_ok,trees_ok,status";

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("dataset: cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("dataset: cannot parse integer '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string join_bounds(const std::array<double, kDesignDims>& v) {
  std::string out;
  for (std::size_t j = 0; j < v.size(); ++j) {
    if (j) out += ',';
    out += format_double(v[j]);
  }
  return out;
}

std::array<double, kDesignDims> parse_bounds(std::string_view s) {
  const auto parts = split(s, ',');
  if (parts.size() != kDesignDims) throw std::runtime_error("dataset: malformed bounds line");
  std::array<double, kDesignDims> out{};
  for (std::size_t j = 0; j < kDesignDims; ++j) out[j] = parse_double(parts[j]);
  return out;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

Eigen::MatrixXd central_lhs(std::size_t n, std::size_t d, std::uint64_t seed) {
  if (n == 0 || d == 0) throw std::invalid_argument("central_lhs: n and d must be >= 1");
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd u(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 0; j < d; ++j) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t k = 0; k < n; ++k) {
      u(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
          (static_cast<double>(perm[k]) + 0.5) / static_cast<double>(n);
    }
  }
  return u;
}

DesignFeatures scale_to_bounds(const Eigen::Ref<const Eigen::RowVectorXd>& u,
                               const DesignSpace& space) {
  if (u.size() != static_cast<Eigen::Index>(kDesignDims)) {
    throw std::invalid_argument("scale_to_bounds: expected a 6-dimensional row");
  }
  std::array<double, kDesignDims> v{};
  for (std::size_t j = 0; j < kDesignDims; ++j) {
    v[j] = space.min[j] + u(static_cast<Eigen::Index>(j)) * (space.max[j] - space.min[j]);
  }
  const double lo = space.min[2];
  const double hi = space.max[2];
  v[2] = std::clamp(std::floor(lo + u(2) * (hi - lo + 1.0)), lo, hi);
  return DesignFeatures::from_array(v);
}

std::vector<SampleRecord> Dataset::ok_records() const {
  std::vector<SampleRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (r.status == SampleStatus::ok) out.push_back(r);
  }
  return out;
}

std::size_t Dataset::failure_count() const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) {
    return r.status != SampleStatus::ok;
  }));
}

void Dataset::validate() const {
  for (std::size_t k = 0; k < records.size(); ++k) {
    if (records[k].id != k) throw std::runtime_error("dataset: sample ids must be contiguous from 0");
    if (records[k].status == SampleStatus::ok) {
      for (double v : records[k].y.as_array()) {
        if (!std::isfinite(v)) throw std::runtime_error("dataset: ok record with non-finite metrics");
      }
    }
  }
  if (header.n != records.size()) throw std::runtime_error("dataset: header row count mismatch");
}

std::string Dataset::content_hash() const { return to_hex(fnv1a64(dataset_to_csv(*this))); }

Dataset generate_dataset(std::size_t n, std::uint64_t seed, const ProjectConfig& config,
                         const GenerateOptions& opts) {
  config.validate();
  const Eigen::MatrixXd u = central_lhs(n, kDesignDims, seed);

  Dataset ds;
  ds.header.seed = seed;
  ds.header.n = n;
  ds.header.space = config.space;
  ds.header.config_hash = config.hash();
  ds.header.created = opts.created;
  ds.records.resize(n);

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k = next.fetch_add(1); k < n; k = next.fetch_add(1)) {
      SampleRecord& rec = ds.records[k];
      rec.id = k;
      rec.x = scale_to_bounds(u.row(static_cast<Eigen::Index>(k)), config.space);
      const EvaluationOutcome out = try_evaluate(rec.x, config.site, config.loads);
      if (out.metrics) {
        rec.y = *out.metrics;
        rec.status = SampleStatus::ok;
      } else {
        rec.y = PerformanceMetrics::from_array(
            {std::nan(""), std::nan(""), std::nan(""), std::nan(""), 0.0, 0.0});
        rec.status = SampleStatus::sim_failure;
      }
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.workers, n));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  return ds;
}

std::string dataset_to_csv(const Dataset& ds) {
  std::string out;
  out.reserve(128 * (ds.records.size() + 8));
  out += "# bridge-dse dataset v1\n";
  out += "# seed=" + std::to_string(ds.header.seed) + "\n";
  out += "# n=" + std::to_string(ds.header.n) + "\n";
  out += "# bounds_min=" + join_bounds(ds.header.space.min) + "\n";
  out += "# bounds_max=" + join_bounds(ds.header.space.max) + "\n";
  out += "# config_hash=" + ds.header.config_hash + "\n";
  if (!ds.header.created.empty()) out += "# created=" + ds.header.created + "\n";
  out += kColumnHeader;
  out += '\n';
  for (const SampleRecord& r : ds.records) {
    out += std::to_string(r.id);
    for (double v : r.x.as_array()) {
      out += ',';
      out += format_double(v);
    }
    const auto y = r.y.as_array();
    for (std::size_t j = 0; j < kMetricDims; ++j) {
      out += ',';
      if (r.status == SampleStatus::ok) {
        out += j < kContinuousMetrics ? format_double(y[j]) : (y[j] > 0.5 ? "1" : "0");
      } else {
        out += j < kContinuousMetrics ? "nan" : "0";
      }
    }
    out += r.status == SampleStatus::ok ? ",ok\n" : ",sim_failure\n";
  }
  return out;
}

Dataset dataset_from_csv(const std::string& text) {
  Dataset ds;
  std::istringstream in(text);
  std::string line;
  bool have_columns = false;
  bool have_n = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::string_view body(line);
      body.remove_prefix(1);
      while (!body.empty() && body.front() == ' ') body.remove_prefix(1);
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) continue;
      const std::string_view key = body.substr(0, eq);
      const std::string_view value = body.substr(eq + 1);
      if (key == "seed") ds.header.seed = parse_u64(value);
      else if (key == "n") { ds.header.n = parse_u64(value); have_n = true; }
      else if (key == "bounds_min") ds.header.space.min = parse_bounds(value);
      else if (key == "bounds_max") ds.header.space.max = parse_bounds(value);
      else if (key == "config_hash") ds.header.config_hash = std::string(value);
      else if (key == "created") ds.header.created = std::string(value);
      continue;
    }
    if (!have_columns) {
      if (line != kColumnHeader) throw std::runtime_error("dataset: unexpected column header");
      have_columns = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 14) throw std::runtime_error("dataset: expected 14 fields per row");
    SampleRecord r;
    r.id = parse_u64(f[0]);
    std::array<double, kDesignDims> x{};
    for (std::size_t j = 0; j < kDesignDims; ++j) x[j] = parse_double(f[1 + j]);
    r.x = DesignFeatures::from_array(x);
    std::array<double, kMetricDims> y{};
    for (std::size_t j = 0; j < kMetricDims; ++j) y[j] = parse_double(f[7 + j]);
    r.y = PerformanceMetrics::from_array(y);
    if (f[13] == "ok") r.status = SampleStatus::ok;
    else if (f[13] == "sim_failure") r.status = SampleStatus::sim_failure;
    else throw std::runtime_error("dataset: unknown status '" + std::string(f[13]) + "'");
    ds.records.push_back(r);
  }
  if (!have_columns) throw std::runtime_error("dataset: missing column header");
  if (!have_n) ds.header.n = ds.records.size();
  ds.validate();
  return ds;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  const std::string text = dataset_to_csv(ds);
  std::filesystem::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("dataset: cannot open " + tmp.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error("dataset: write failed for " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw std::runtime_error("dataset: cannot move output into place at " + path.string());
  }
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return dataset_from_csv(buf.str());
}

}  // namespace bridge
