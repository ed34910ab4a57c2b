#include "bridge/service.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

namespace bridge {
namespace {

using nlohmann::json;

constexpr std::size_t kPlanStride = 16;

json point_json(const Point2& p) { return json::array({p.x, p.y}); }

json polyline_json(const std::vector<Point2>& pts) {
  json out = json::array();
  for (std::size_t k = 0; k < pts.size(); k += kPlanStride) out.push_back(point_json(pts[k]));
  if (!pts.empty() && (pts.size() - 1) % kPlanStride != 0) out.push_back(point_json(pts.back()));
  return out;
}

double number_field(const json& j, const char* key) {
  if (!j.contains(key)) throw BadRequest(std::string("missing field '") + key + "'");
  const json& v = j.at(key);
  if (!v.is_number()) throw BadRequest(std::string("field '") + key + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw BadRequest(std::string("field '") + key + "' must be finite");
  return d;
}

bool flag_field(const json& v, const char* key) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number()) return v.get<double>() > 0.5;
  throw BadRequest(std::string("field '") + key + "' must be a boolean");
}

std::uint64_t parse_seed(const json& body) {
  if (!body.contains("seed")) return 0;
  const json& v = body.at("seed");
  if (!v.is_number_unsigned()) throw BadRequest("'seed' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

std::uint64_t query_u64(const std::map<std::string, std::string>& q, const std::string& key,
                        std::uint64_t fallback) {
  const auto it = q.find(key);
  if (it == q.end()) return fallback;
  std::uint64_t v = 0;
  const auto& s = it->second;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw BadRequest("query parameter '" + key + "' must be a non-negative integer");
  }
  return v;
}

json bounds_json(const DesignSpace& space) {
  json lo = json::object();
  json hi = json::object();
  for (std::size_t j = 0; j < kDesignDims; ++j) {
    lo[std::string(kDesignNames[j])] = space.min[j];
    hi[std::string(kDesignNames[j])] = space.max[j];
  }
  return {{"min", lo}, {"max", hi}};
}

json prediction_json(const Prediction& p) {
  return {{"y_pred", to_json(p.metrics)},
          {"flag_probability",
           {{"clearance_ok", p.flag_probability[0]}, {"trees_ok", p.flag_probability[1]}}}};
}

json reliability_json(const std::array<double, kMetricDims>& r) {
  json out = json::object();
  for (std::size_t j = 0; j < kMetricDims; ++j) out[std::string(kMetricNames[j])] = r[j];
  return out;
}

}  // namespace

void AppConfig::validate() const {
  if (max_n == 0) throw std::invalid_argument("max_n must be > 0");
  if (port < 0 || port > 65535) throw std::invalid_argument("port must be in 0..65535");
  if (config_path.empty()) throw std::invalid_argument("a site config path is required");
  if (!std::filesystem::exists(config_path)) {
    throw std::invalid_argument("config not found: " + config_path.string());
  }
  if (!dataset_path.empty() && !std::filesystem::exists(dataset_path)) {
    throw std::invalid_argument("dataset not found: " + dataset_path.string());
  }
  if (!checkpoint_path.empty() && !std::filesystem::exists(checkpoint_path)) {
    throw std::invalid_argument("checkpoint not found: " + checkpoint_path.string());
  }
}

DesignFeatures design_from_json(const json& j) {
  if (!j.is_object()) throw BadRequest("design must be a JSON object");
  std::array<double, kDesignDims> v{};
  for (std::size_t k = 0; k < kDesignDims; ++k) v[k] = number_field(j, std::string(kDesignNames[k]).c_str());
  if (v[2] != std::floor(v[2])) throw BadRequest("n_p must be an integer");
  return DesignFeatures::from_array(v);
}

PerformanceMetrics metrics_from_json(const json& j, const PerformanceMetrics& defaults) {
  if (!j.is_object()) throw BadRequest("y_request must be a JSON object");
  auto v = defaults.as_array();
  for (std::size_t k = 0; k < kMetricDims; ++k) {
    const std::string key(kMetricNames[k]);
    if (!j.contains(key)) continue;
    if (k < kContinuousMetrics) {
      v[k] = number_field(j, key.c_str());
    } else {
      v[k] = flag_field(j.at(key), key.c_str()) ? 1.0 : 0.0;
    }
  }
  return PerformanceMetrics::from_array(v);
}

json geometry_json(const DesignFeatures& x, const SiteConfig& site) {
  const BridgeGeometry g = build_geometry(x, site);
  const auto edges = deck_edges(g.centerline, site.width_b);
  json piers_plan = json::array();
  json piers_elev = json::array();
  const double soffit = site.deck_elevation - x.h_girder;
  for (double s : g.pier_stations) {
    piers_plan.push_back(point_json(g.point_at(s)));
    piers_elev.push_back({{"station", s}, {"bottom", site.ground_elevation}, {"top", soffit}});
  }
  json trees = json::array();
  for (const Tree& t : site.trees) trees.push_back({{"x", t.x}, {"y", t.y}, {"radius", t.radius}});
  return {
      {"plan",
       {{"centerline", polyline_json(g.centerline)},
        {"left_edge", polyline_json(edges[0])},
        {"right_edge", polyline_json(edges[1])},
        {"piers", piers_plan},
        {"pier_side", g.pier_side},
        {"trees", trees}}},
      {"elevation",
       {{"length", g.arc_length},
        {"deck", json::array({json::array({0.0, site.deck_elevation}),
                              json::array({g.arc_length, site.deck_elevation})})},
        {"soffit", json::array({json::array({0.0, soffit}), json::array({g.arc_length, soffit})})},
        {"ground", json::array({json::array({0.0, site.ground_elevation}),
                                json::array({g.arc_length, site.ground_elevation})})},
        {"piers", piers_elev}}},
  };
}

Service::Service(ProjectConfig config, std::optional<CvaeCheckpoint> checkpoint,
                 std::optional<Dataset> dataset, std::size_t max_n)
    : config_(std::move(config)),
      checkpoint_(std::move(checkpoint)),
      dataset_(std::move(dataset)),
      max_n_(max_n) {
  if (max_n_ == 0) throw std::invalid_argument("max_n must be > 0");
  if (checkpoint_) hash_ = bridge::checkpoint_hash(*checkpoint_);
}

Service Service::from_app_config(const AppConfig& app) {
  app.validate();
  ProjectConfig cfg = load_config(app.config_path);
  std::optional<CvaeCheckpoint> ckpt;
  if (!app.checkpoint_path.empty()) ckpt = load_checkpoint(app.checkpoint_path);
  std::optional<Dataset> data;
  if (!app.dataset_path.empty()) data = read_dataset(app.dataset_path);
  return Service(std::move(cfg), std::move(ckpt), std::move(data), app.max_n);
}

ApiResponse Service::respond(int status, json body) const {
  body["checkpoint_hash"] = checkpoint_ ? json(hash_) : json(nullptr);
  return {status, std::move(body)};
}

ApiResponse Service::error(int status, const std::string& message) const {
  return respond(status, {{"error", message}});
}

std::optional<ApiResponse> Service::require_checkpoint() const {
  if (!checkpoint_) return error(503, "no checkpoint loaded");
  return std::nullopt;
}

std::size_t Service::parse_count(const json& body, std::size_t fallback) const {
  if (!body.contains("n")) return fallback;
  const json& v = body.at("n");
  if (!v.is_number_unsigned()) throw BadRequest("'n' must be a positive integer");
  const auto n = v.get<std::uint64_t>();
  if (n == 0 || n > max_n_) {
    throw BadRequest("'n' must lie in 1.." + std::to_string(max_n_));
  }
  return static_cast<std::size_t>(n);
}

PerformanceMetrics Service::median_request() const {
  PerformanceMetrics y;
  if (!checkpoint_) return y;
  const MetricRanges& r = checkpoint_->ranges;
  return PerformanceMetrics::from_array({r.median[0], r.median[1], r.median[2], r.median[3],
                                         r.flag_rate[0] > 0.5 ? 1.0 : 0.0,
                                         r.flag_rate[1] > 0.5 ? 1.0 : 0.0});
}

ApiResponse Service::predict(const json& body) const {
  if (auto e = require_checkpoint()) return *e;
  if (!body.is_object() || !body.contains("x")) throw BadRequest("body must contain 'x'");
  const DesignFeatures x = design_from_json(body.at("x"));
  if (!checkpoint_->space.contains(x)) throw BadRequest("design lies outside the design space");
  json out = prediction_json(bridge::predict(x, *checkpoint_));
  out["x"] = to_json(x);
  return respond(200, std::move(out));
}

ApiResponse Service::generate(const json& body) const {
  if (auto e = require_checkpoint()) return *e;
  if (!body.is_object()) throw BadRequest("body must be a JSON object");
  const PerformanceMetrics req =
      body.contains("y_request") ? metrics_from_json(body.at("y_request"), median_request())
                                 : median_request();
  const std::size_t n = parse_count(body, 10);
  const std::uint64_t seed = parse_seed(body);
  const GenerationResult gen = bridge::generate(req, n, seed, *checkpoint_);

  json designs = json::array();
  for (const GeneratedDesign& d : gen.designs) {
    json item = {{"x", to_json(d.x)},
                 {"clipped", d.clipped},
                 {"reliability", reliability_json(d.reliability)},
                 {"z", d.z}};
    item.update(prediction_json(d.predicted));
    try {
      item["geometry"] = geometry_json(d.x, config_.site);
    } catch (const std::exception& ex) {
      item["geometry"] = nullptr;
      item["geometry_error"] = ex.what();
    }
    designs.push_back(std::move(item));
  }
  json out = {{"y_request", to_json(req)},
              {"n", n},
              {"seed", seed},
              {"designs", designs},
              {"extrapolation", gen.extrapolation},
              {"warnings", gen.warnings}};
  return respond(gen.extrapolation ? 422 : 200, std::move(out));
}

ApiResponse Service::sensitivity(const json& body) const {
  if (auto e = require_checkpoint()) return *e;
  if (!body.is_object()) throw BadRequest("body must be a JSON object");
  if (body.contains("x")) {
    const DesignFeatures x = design_from_json(body.at("x"));
    if (!checkpoint_->space.contains(x)) throw BadRequest("design lies outside the design space");
    return respond(200, to_json(bridge::sensitivity(x, *checkpoint_)));
  }
  const PerformanceMetrics req =
      body.contains("y_request") ? metrics_from_json(body.at("y_request"), median_request())
                                 : median_request();
  const SwarmReport swarm =
      sensitivity_swarm(req, parse_count(body, 100), parse_seed(body), *checkpoint_);
  return respond(swarm.warnings.empty() ? 200 : 422, to_json(swarm));
}

ApiResponse Service::latent() const {
  if (auto e = require_checkpoint()) return *e;
  if (!dataset_) return error(503, "no dataset loaded");
  return respond(200, to_json(latent_map(*dataset_, *checkpoint_)));
}

ApiResponse Service::meta() const {
  if (auto e = require_checkpoint()) return *e;
  const CvaeCheckpoint& c = *checkpoint_;
  json ranges = json::object();
  for (std::size_t j = 0; j < kContinuousMetrics; ++j) {
    ranges[std::string(kMetricNames[j])] = {
        {"min", c.ranges.min[j]}, {"max", c.ranges.max[j]}, {"median", c.ranges.median[j]}};
  }
  for (std::size_t f = 0; f < static_cast<std::size_t>(kFlagCount); ++f) {
    ranges[std::string(kMetricNames[kContinuousMetrics + f])] = {{"rate", c.ranges.flag_rate[f]}};
  }
  json out = {
      {"bounds", bounds_json(c.space)},
      {"design_names", std::vector<std::string>(kDesignNames.begin(), kDesignNames.end())},
      {"metric_names", std::vector<std::string>(kMetricNames.begin(), kMetricNames.end())},
      {"y_ranges", ranges},
      {"default_request", to_json(median_request())},
      {"max_n", max_n_},
      {"dataset_loaded", dataset_.has_value()},
      {"checkpoint",
       {{"hash", hash_},
        {"format_version", c.format_version},
        {"dataset_hash", c.dataset_hash},
        {"validation_loss", c.validation_loss},
        {"best_epoch", c.history.best_epoch},
        {"epochs", c.history.epochs.size()},
        {"config", to_json(c.config)}}},
  };
  return respond(200, std::move(out));
}

ApiResponse Service::pareto(const std::map<std::string, std::string>& query) const {
  if (auto e = require_checkpoint()) return *e;
  const auto src = query.find("source");
  const std::string source = src == query.end() ? "dataset" : src->second;

  std::vector<DesignFeatures> xs;
  std::vector<PerformanceMetrics> ys;
  std::vector<std::size_t> ids;
  if (source == "dataset") {
    if (!dataset_) return error(503, "no dataset loaded");
    for (const auto& r : dataset_->ok_records()) {
      xs.push_back(r.x);
      ys.push_back(r.y);
      ids.push_back(r.id);
    }
  } else if (source == "batch") {
    const std::uint64_t n = query_u64(query, "n", 100);
    if (n == 0 || n > max_n_) throw BadRequest("'n' must lie in 1.." + std::to_string(max_n_));
    const auto gen = bridge::generate(median_request(), static_cast<std::size_t>(n),
                                      query_u64(query, "seed", 0), *checkpoint_);
    for (std::size_t k = 0; k < gen.designs.size(); ++k) {
      xs.push_back(gen.designs[k].x);
      ys.push_back(gen.designs[k].predicted.metrics);
      ids.push_back(k);
    }
  } else {
    throw BadRequest("source must be 'dataset' or 'batch'");
  }

  std::vector<std::array<double, 2>> objectives;
  for (const auto& y : ys) objectives.push_back({y.cost, y.uls_util});
  const ParetoResult front = pareto_front(objectives);
  json points = json::array();
  for (std::size_t k = 0; k < xs.size(); ++k) {
    points.push_back({{"id", ids[k]}, {"x", to_json(xs[k])}, {"y", to_json(ys[k])}});
  }
  json out = to_json(front);
  out["source"] = source;
  out["objectives"] = {"cost", "uls_util"};
  out["points"] = points;
  return respond(200, std::move(out));
}

ApiResponse Service::handle(const std::string& method, const std::string& path,
                            const std::string& body,
                            const std::map<std::string, std::string>& query) const {
  try {
    if (method == "GET") {
      if (path == "/api/latent") return latent();
      if (path == "/api/meta") return meta();
      if (path == "/api/pareto") return pareto(query);
    } else if (method == "POST") {
      json parsed;
      try {
        parsed = json::parse(body);
      } catch (const json::exception&) {
        return error(400, "request body is not valid JSON");
      }
      if (path == "/api/predict") return predict(parsed);
      if (path == "/api/generate") return generate(parsed);
      if (path == "/api/sensitivity") return sensitivity(parsed);
    }
    return error(404, "no route for " + method + " " + path);
  } catch (const BadRequest& e) {
    return error(400, e.what());
  } catch (const std::invalid_argument& e) {
    return error(400, e.what());
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

}  // namespace bridge
