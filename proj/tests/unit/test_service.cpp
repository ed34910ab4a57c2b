#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <thread>

#include "bridge/http.hpp"
#include "bridge/service.hpp"
#include "fixtures.hpp"

#include <httplib.h>

namespace bridge {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

const Service& service() {
  static const Service s(testing::default_config(), testing::small_checkpoint(),
                         testing::small_dataset(), 50);
  return s;
}

json nominal_x() { return to_json(testing::nominal_design()); }

TEST(Parsing, DesignFromJson) {
  const DesignFeatures x = design_from_json(nominal_x());
  EXPECT_EQ(x, testing::nominal_design());
  json missing = nominal_x();
  missing.erase("w");
  EXPECT_THROW(design_from_json(missing), BadRequest);
  json frac = nominal_x();
  frac["n_p"] = 3.5;
  EXPECT_THROW(design_from_json(frac), BadRequest);
  json text = nominal_x();
  text["h_girder"] = "tall";
  EXPECT_THROW(design_from_json(text), BadRequest);
}

TEST(Parsing, MetricsFallBackToDefaults) {
  const PerformanceMetrics defaults{0.5, 0.2, 8.0, 1e5, true, false};
  const PerformanceMetrics m = metrics_from_json({{"cost", 5e4}, {"trees_ok", true}}, defaults);
  EXPECT_DOUBLE_EQ(m.cost, 5e4);
  EXPECT_DOUBLE_EQ(m.f1, 8.0);
  EXPECT_TRUE(m.trees_ok);
  EXPECT_TRUE(m.clearance_ok);
}

TEST(AppConfig, Validation) {
  AppConfig a;
  EXPECT_THROW(a.validate(), std::invalid_argument);
  a.config_path = BRIDGE_DEFAULT_CONFIG;
  EXPECT_NO_THROW(a.validate());
  a.port = 70000;
  EXPECT_THROW(a.validate(), std::invalid_argument);
  a.port = 0;
  a.checkpoint_path = "/nonexistent.ckpt";
  EXPECT_THROW(a.validate(), std::invalid_argument);
}

TEST(Geometry, PlanAndElevation) {
  const json g = geometry_json(testing::nominal_design(), testing::default_config().site);
  EXPECT_EQ(g["plan"]["piers"].size(), 4u);
  EXPECT_EQ(g["elevation"]["piers"].size(), 4u);
  EXPECT_GE(g["plan"]["centerline"].size(), 2u);
  EXPECT_EQ(g["plan"]["centerline"][0].size(), 2u);
  EXPECT_GT(g["elevation"]["length"].get<double>(), 0.0);
}

TEST(Service, NoCheckpointGives503) {
  const Service bare(testing::default_config(), std::nullopt, std::nullopt);
  EXPECT_FALSE(bare.has_checkpoint());
  for (const auto& [method, path] : std::vector<std::pair<std::string, std::string>>{
           {"GET", "/api/meta"}, {"GET", "/api/latent"}, {"GET", "/api/pareto"},
           {"POST", "/api/predict"}, {"POST", "/api/generate"}, {"POST", "/api/sensitivity"}}) {
    const ApiResponse r = bare.handle(method, path, "{}");
    EXPECT_EQ(r.status, 503) << path;
    EXPECT_TRUE(r.body.contains("checkpoint_hash"));
    EXPECT_TRUE(r.body["checkpoint_hash"].is_null());
  }
}

TEST(Service, NoDatasetGives503ForDatasetViews) {
  const Service s(testing::default_config(), testing::small_checkpoint(), std::nullopt);
  EXPECT_EQ(s.handle("GET", "/api/latent", "").status, 503);
  EXPECT_EQ(s.handle("GET", "/api/pareto", "").status, 503);
  EXPECT_EQ(s.handle("GET", "/api/pareto", "", {{"source", "batch"}, {"n", "5"}}).status, 200);
}

TEST(Service, BadRequestsGive400) {
  const Service& s = service();
  EXPECT_EQ(s.handle("POST", "/api/predict", "{not json").status, 400);
  EXPECT_EQ(s.handle("POST", "/api/predict", "{}").status, 400);
  json out = nominal_x();
  out["h_girder"] = 9.0;
  EXPECT_EQ(s.handle("POST", "/api/predict", json{{"x", out}}.dump()).status, 400);
  EXPECT_EQ(s.handle("POST", "/api/generate", json{{"n", 51}}.dump()).status, 400);
  EXPECT_EQ(s.handle("POST", "/api/generate", json{{"n", 0}}.dump()).status, 400);
  EXPECT_EQ(s.handle("POST", "/api/generate", json{{"seed", -1}}.dump()).status, 400);
  EXPECT_EQ(s.handle("GET", "/api/pareto", "", {{"source", "x"}}).status, 400);
  EXPECT_EQ(s.handle("GET", "/api/pareto", "", {{"source", "batch"}, {"n", "abc"}}).status, 400);
  const ApiResponse r = s.handle("GET", "/api/nothing", "");
  EXPECT_EQ(r.status, 404);
  EXPECT_TRUE(r.body.contains("error"));
}

TEST(Service, ExtrapolationGives422) {
  const ApiResponse r =
      service().handle("POST", "/api/generate", json{{"y_request", {{"cost", 1e9}}}, {"n", 2}}.dump());
  EXPECT_EQ(r.status, 422);
  EXPECT_TRUE(r.body["extrapolation"].get<bool>());
  EXPECT_EQ(r.body["designs"].size(), 2u);
  EXPECT_FALSE(r.body["warnings"].empty());
}

TEST(Service, EveryResponseCarriesTheHash) {
  const Service& s = service();
  const std::string hash = checkpoint_hash(testing::small_checkpoint());
  EXPECT_EQ(s.checkpoint_hash(), hash);
  const std::vector<ApiResponse> rs{
      s.handle("GET", "/api/meta", ""),
      s.handle("GET", "/api/latent", ""),
      s.handle("GET", "/api/pareto", ""),
      s.handle("POST", "/api/predict", json{{"x", nominal_x()}}.dump()),
      s.handle("POST", "/api/generate", json{{"n", 3}}.dump()),
      s.handle("POST", "/api/sensitivity", json{{"x", nominal_x()}}.dump()),
      s.handle("POST", "/api/sensitivity", json{{"n", 5}}.dump()),
      s.handle("POST", "/api/predict", "{}"),
  };
  for (const auto& r : rs) EXPECT_EQ(r.body.at("checkpoint_hash"), hash);
  for (std::size_t k = 0; k + 1 < rs.size(); ++k) EXPECT_EQ(rs[k].status, 200) << k;
}

TEST(Service, MetaPublishesTheDesignSpace) {
  const json m = service().handle("GET", "/api/meta", "").body;
  EXPECT_DOUBLE_EQ(m["bounds"]["min"]["h_girder"].get<double>(), 0.25);
  EXPECT_DOUBLE_EQ(m["bounds"]["max"]["h_girder"].get<double>(), 2.5);
  EXPECT_DOUBLE_EQ(m["bounds"]["min"]["t_girder"].get<double>(), 0.1);
  EXPECT_DOUBLE_EQ(m["bounds"]["max"]["t_girder"].get<double>(), 0.23);
  EXPECT_DOUBLE_EQ(m["bounds"]["min"]["n_p"].get<double>(), 2);
  EXPECT_DOUBLE_EQ(m["bounds"]["max"]["n_p"].get<double>(), 8);
  EXPECT_DOUBLE_EQ(m["bounds"]["min"]["h_p"].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(m["bounds"]["max"]["h_p"].get<double>(), 1.5);
  EXPECT_DOUBLE_EQ(m["bounds"]["min"]["i"].get<double>(), 0.0);
  EXPECT_DOUBLE_EQ(m["bounds"]["max"]["i"].get<double>(), 4.0);
  EXPECT_DOUBLE_EQ(m["bounds"]["min"]["w"].get<double>(), 0.01);
  EXPECT_DOUBLE_EQ(m["bounds"]["max"]["w"].get<double>(), 7.0);
  EXPECT_EQ(m["max_n"], 50);
  EXPECT_TRUE(m["dataset_loaded"].get<bool>());
}

TEST(Service, GenerateAndParetoPayloads) {
  const Service& s = service();
  const json g = s.handle("POST", "/api/generate", json{{"n", 4}, {"seed", 7}}.dump()).body;
  ASSERT_EQ(g["designs"].size(), 4u);
  for (const auto& d : g["designs"]) {
    for (const char* key : {"x", "clipped", "reliability", "z", "y_pred", "flag_probability", "geometry"}) {
      EXPECT_TRUE(d.contains(key)) << key;
    }
  }
  EXPECT_EQ(s.handle("POST", "/api/generate", json{{"n", 4}, {"seed", 7}}.dump()).body, g);

  const json p = s.handle("GET", "/api/pareto", "").body;
  EXPECT_EQ(p["points"].size(), testing::small_dataset().ok_records().size());
  EXPECT_FALSE(p["indices"].empty());
}

TEST(Http, MatchesTheInProcessHandler) {
  HttpServer server(service());
  const int port = server.bind("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  std::thread worker([&] { server.listen(); });
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(60, 0);

  const std::string body = json{{"x", nominal_x()}}.dump();
  auto post = cli.Post("/api/predict", body, "application/json");
  ASSERT_TRUE(post);
  EXPECT_EQ(post->status, 200);
  EXPECT_EQ(json::parse(post->body), service().handle("POST", "/api/predict", body).body);

  auto meta = cli.Get("/api/meta");
  ASSERT_TRUE(meta);
  EXPECT_EQ(json::parse(meta->body), service().handle("GET", "/api/meta", "").body);

  auto pareto = cli.Get("/api/pareto?source=batch&n=5&seed=2");
  ASSERT_TRUE(pareto);
  EXPECT_EQ(json::parse(pareto->body),
            service().handle("GET", "/api/pareto", "", {{"source", "batch"}, {"n", "5"}, {"seed", "2"}}).body);

  auto bad = cli.Post("/api/predict", "{oops", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  auto missing = cli.Get("/api/unknown");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);

  server.stop();
  worker.join();
}

std::string run(const std::string& cmd, int* status) {
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return out;
  char buf[4096];
  std::size_t got = 0;
  while ((got = fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, got);
  *status = pclose(pipe);
  return out;
}

TEST(Cli, PrintsTheApiResponse) {
  const fs::path dir = fs::temp_directory_path() / "bridge_cli_test";
  fs::create_directories(dir);
  const fs::path ckpt = dir / "model.ckpt";
  save_checkpoint(testing::small_checkpoint(), ckpt);

  int status = -1;
  const std::string out = run(std::string(BRIDGE_CLI) + " predict --ckpt " + ckpt.string() +
                                  " --design 1.2,0.15,4,1.0,2.0,1.5 2>/dev/null",
                              &status);
  EXPECT_EQ(status, 0);
  const Service loaded(testing::default_config(), load_checkpoint(ckpt), std::nullopt);
  EXPECT_EQ(json::parse(out), loaded.handle("POST", "/api/predict", json{{"x", nominal_x()}}.dump()).body);

  run(std::string(BRIDGE_CLI) + " predict --ckpt " + ckpt.string() +
          " --design 1.2,0.15,4,1.0,2.0,100 >/dev/null 2>&1",
      &status);
  EXPECT_EQ(WEXITSTATUS(status), 2);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace bridge
