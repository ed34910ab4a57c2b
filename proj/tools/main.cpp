// bridge-dse: dataset generation, training, reports and the JSON service.

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "bridge/analysis.hpp"
#include "bridge/config.hpp"
#include "bridge/cvae.hpp"
#include "bridge/http.hpp"
#include "bridge/sampling.hpp"
#include "bridge/service.hpp"

#ifndef BRIDGE_DEFAULT_CONFIG
#define BRIDGE_DEFAULT_CONFIG "configs/default_site.json"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_list(const std::string& text, std::size_t expected, const char* what) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(std::string(what) + ": cannot parse '" + item + "'");
    }
  }
  if (expected && out.size() != expected) {
    throw UsageError(std::string(what) + ": expected " + std::to_string(expected) + " values");
  }
  return out;
}

json design_body(const std::string& text) {
  const auto v = parse_list(text, bridge::kDesignDims, "--design");
  json x = json::object();
  for (std::size_t k = 0; k < bridge::kDesignDims; ++k) {
    x[std::string(bridge::kDesignNames[k])] = v[k];
  }
  return x;
}

json request_body(const std::string& text) {
  const auto v = parse_list(text, bridge::kMetricDims, "--request");
  json y = json::object();
  for (std::size_t k = 0; k < bridge::kMetricDims; ++k) {
    if (k < bridge::kContinuousMetrics) {
      y[std::string(bridge::kMetricNames[k])] = v[k];
    } else {
      y[std::string(bridge::kMetricNames[k])] = v[k] > 0.5;
    }
  }
  return y;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string history_csv(const bridge::TrainingHistory& h) {
  std::string out =
      "epoch,learning_rate,train_total,train_des,train_perf,train_kl,train_cov,"
      "val_total,val_des,val_perf,val_kl,val_cov\n";
  for (const auto& e : h.epochs) {
    out += std::to_string(e.epoch) + ',' + bridge::format_double(e.learning_rate);
    for (const auto* b : {&e.train, &e.validation}) {
      for (double v : {b->total, b->des, b->perf, b->kl, b->cov}) out += ',' + bridge::format_double(v);
    }
    out += '\n';
  }
  return out;
}

// Prints the service response and maps its status onto an exit code.
int emit(const bridge::ApiResponse& r, const std::string& out_path) {
  const std::string text = r.body.dump(2) + "\n";
  if (r.status >= 400 && r.status != 422) {
    std::cerr << "error: " << r.body.value("error", "request failed") << "\n";
    return r.status == 400 ? 2 : 1;
  }
  if (r.status == 422) {
    for (const auto& w : r.body.value("warnings", json::array())) {
      std::cerr << "warning: " << w.get<std::string>() << "\n";
    }
  }
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_text(out_path, text);
  }
  return 0;
}

bridge::Service make_service(const std::string& config, const std::string& ckpt,
                             const std::string& data = {}) {
  bridge::AppConfig app;
  app.config_path = config;
  app.checkpoint_path = ckpt;
  app.dataset_path = data;
  return bridge::Service::from_app_config(app);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parametric bridge design-space exploration with a conditional VAE"};
  app.require_subcommand(1);
  int code = 0;

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "Sample the design space and simulate every design");
  std::size_t gen_n = 4000;
  std::uint64_t gen_seed = 0;
  std::string gen_config = BRIDGE_DEFAULT_CONFIG;
  std::string gen_out;
  std::size_t gen_workers = 1;
  bool gen_stamp = false;
  gen->add_option("--n", gen_n, "Number of designs")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Sampling seed");
  gen->add_option("--config", gen_config, "Site and load configuration (JSON)");
  gen->add_option("--out", gen_out, "Output CSV")->required();
  gen->add_option("--workers", gen_workers, "Simulation threads")->check(CLI::PositiveNumber);
  gen->add_flag("--stamp", gen_stamp, "Record the creation time in the header");
  gen->callback([&] {
    const bridge::ProjectConfig cfg = bridge::load_config(gen_config);
    bridge::GenerateOptions opts;
    opts.workers = gen_workers;
    if (gen_stamp) {
      const std::time_t now = std::time(nullptr);
      char buf[32];
      std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
      opts.created = buf;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const bridge::Dataset ds = bridge::generate_dataset(gen_n, gen_seed, cfg, opts);
    bridge::write_dataset(ds, gen_out);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("wrote %zu designs (%zu simulator failures) to %s in %.2f s (%.0f designs/s), hash %s\n",
                ds.records.size(), ds.failure_count(), gen_out.c_str(), secs,
                static_cast<double>(ds.records.size()) / std::max(secs, 1e-9), ds.content_hash().c_str());
  });

  // train
  auto* tr = app.add_subcommand("train", "Train the conditional VAE on a dataset");
  std::string tr_data;
  std::string tr_out;
  std::string tr_history;
  std::string tr_widths = "128,256,512,256,128";
  std::string tr_lambdas = "1,10,0.1,0.01";
  bridge::CvaeConfig tr_cfg;
  bool tr_quiet = false;
  tr->add_option("--data", tr_data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--history", tr_history, "History CSV (default: <out>.history.csv)");
  tr->add_option("--widths", tr_widths, "Hidden widths, comma separated");
  tr->add_option("--latent-dim", tr_cfg.latent_dim, "Latent dimension")->check(CLI::PositiveNumber);
  tr->add_option("--lambdas", tr_lambdas, "Loss weights des,perf,kl,cov");
  tr->add_option("--seed", tr_cfg.seed, "Training seed");
  tr->add_option("--lr", tr_cfg.learning_rate, "Initial learning rate");
  tr->add_option("--batch-size", tr_cfg.batch_size, "Mini-batch size");
  tr->add_option("--max-epochs", tr_cfg.max_epochs, "Epoch limit");
  tr->add_flag("--quiet", tr_quiet, "Suppress per-epoch progress");
  tr->callback([&] {
    bridge::CvaeConfig cfg = tr_cfg;
    cfg.widths.clear();
    for (double w : parse_list(tr_widths, 0, "--widths")) {
      if (w < 1 || w != static_cast<double>(static_cast<Eigen::Index>(w))) {
        throw UsageError("--widths must be positive integers");
      }
      cfg.widths.push_back(static_cast<Eigen::Index>(w));
    }
    const auto l = parse_list(tr_lambdas, 4, "--lambdas");
    std::copy(l.begin(), l.end(), cfg.lambdas.begin());
    const bridge::Dataset ds = bridge::read_dataset(tr_data);
    const auto t0 = std::chrono::steady_clock::now();
    const auto ckpt = bridge::train(ds, cfg, [&](const bridge::EpochRecord& e) {
      if (!tr_quiet) {
        std::fprintf(stderr, "epoch %4zu  lr %.1e  train %.5f  val %.5f\n", e.epoch, e.learning_rate,
                     e.train.total, e.validation.total);
      }
      return true;
    });
    bridge::save_checkpoint(ckpt, tr_out);
    const std::string hist = tr_history.empty() ? tr_out + ".history.csv" : tr_history;
    write_text(hist, history_csv(ckpt.history));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("trained %zu epochs (best %zu, validation loss %.6f) in %.1f s; checkpoint %s hash %s\n",
                ckpt.history.epochs.size() - 1, ckpt.history.best_epoch, ckpt.validation_loss, secs,
                tr_out.c_str(), bridge::checkpoint_hash(ckpt).c_str());
  });

  // report
  auto* rep = app.add_subcommand("report", "Surrogate accuracy and latent map on the test split");
  std::string rep_data;
  std::string rep_ckpt;
  std::string rep_dir;
  rep->add_option("--data", rep_data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  rep->add_option("--ckpt", rep_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  rep->add_option("--out-dir", rep_dir, "Output directory")->required();
  rep->callback([&] {
    const bridge::Dataset ds = bridge::read_dataset(rep_data);
    const auto ckpt = bridge::load_checkpoint(rep_ckpt);
    fs::create_directories(rep_dir);
    const auto sur = bridge::surrogate_report(ds, ckpt);
    const auto lat = bridge::latent_map(ds, ckpt);
    const fs::path dir(rep_dir);
    write_text(dir / "surrogate.csv", bridge::surrogate_csv(sur));
    write_text(dir / "surrogate.json", bridge::to_json(sur).dump() + "\n");
    write_text(dir / "latent.csv", bridge::latent_csv(lat));
    write_text(dir / "latent.json", bridge::to_json(lat).dump() + "\n");
    for (const auto& t : sur.targets) {
      std::printf("%-10s R2 %.4f  RMSE %.6g\n", t.name.c_str(), t.stats.r2, t.stats.rmse);
    }
    for (const auto& f : sur.flags) std::printf("%-12s accuracy %.4f\n", f.name.c_str(), f.accuracy);
    std::printf("latent mean |corr(z, y)| %.4f\n", lat.mean_abs_correlation);
  });

  // sensitivity
  auto* sen = app.add_subcommand("sensitivity", "Encoder Jacobian for one design or a generated batch");
  std::string sen_ckpt;
  std::string sen_config = BRIDGE_DEFAULT_CONFIG;
  std::string sen_design;
  std::string sen_request;
  std::size_t sen_n = 100;
  std::uint64_t sen_seed = 0;
  std::string sen_out;
  std::string sen_csv;
  sen->add_option("--ckpt", sen_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  sen->add_option("--config", sen_config, "Site and load configuration (JSON)");
  auto* sd = sen->add_option("--design", sen_design, "h_girder,t_girder,n_p,h_p,i,w");
  auto* sr = sen->add_option("--request", sen_request,
                             "uls_util,sls_util,f1,cost,clearance_ok,trees_ok");
  sd->excludes(sr);
  sen->add_option("--n", sen_n, "Batch size for --request");
  sen->add_option("--seed", sen_seed, "Generation seed for --request");
  sen->add_option("--out", sen_out, "JSON output (default: stdout)");
  sen->add_option("--csv", sen_csv, "Also write a CSV table");
  sen->callback([&] {
    const bridge::Service svc = make_service(sen_config, sen_ckpt);
    json body;
    if (!sen_design.empty()) {
      body = {{"x", design_body(sen_design)}};
    } else {
      body = {{"n", sen_n}, {"seed", sen_seed}};
      if (!sen_request.empty()) body["y_request"] = request_body(sen_request);
    }
    const auto r = svc.sensitivity(body);
    code = emit(r, sen_out);
    if (code == 0 && !sen_csv.empty()) {
      const auto ckpt = bridge::load_checkpoint(sen_ckpt);
      if (!sen_design.empty()) {
        write_text(sen_csv, bridge::sensitivity_csv(
                                bridge::sensitivity(bridge::design_from_json(body["x"]), ckpt)));
      } else {
        const auto req = bridge::metrics_from_json(body.value("y_request", json::object()),
                                                   svc.median_request());
        write_text(sen_csv, bridge::swarm_csv(bridge::sensitivity_swarm(req, sen_n, sen_seed, ckpt)));
      }
    }
  });

  // predict
  auto* pr = app.add_subcommand("predict", "Forward surrogate prediction for one design");
  std::string pr_ckpt;
  std::string pr_config = BRIDGE_DEFAULT_CONFIG;
  std::string pr_design;
  pr->add_option("--ckpt", pr_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  pr->add_option("--config", pr_config, "Site and load configuration (JSON)");
  pr->add_option("--design", pr_design, "h_girder,t_girder,n_p,h_p,i,w")->required();
  pr->callback([&] {
    const bridge::Service svc = make_service(pr_config, pr_ckpt);
    code = emit(svc.predict({{"x", design_body(pr_design)}}), {});
  });

  // generate
  auto* ge = app.add_subcommand("generate", "Inverse design: sample designs for a performance request");
  std::string ge_ckpt;
  std::string ge_config = BRIDGE_DEFAULT_CONFIG;
  std::string ge_request;
  std::size_t ge_n = 10;
  std::uint64_t ge_seed = 0;
  std::string ge_out;
  ge->add_option("--ckpt", ge_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ge->add_option("--config", ge_config, "Site and load configuration (JSON)");
  ge->add_option("--request", ge_request, "uls_util,sls_util,f1,cost,clearance_ok,trees_ok");
  ge->add_option("--n", ge_n, "Number of designs");
  ge->add_option("--seed", ge_seed, "Generation seed");
  ge->add_option("--out", ge_out, "JSON output (default: stdout)");
  ge->callback([&] {
    const bridge::Service svc = make_service(ge_config, ge_ckpt);
    json body = {{"n", ge_n}, {"seed", ge_seed}};
    if (!ge_request.empty()) body["y_request"] = request_body(ge_request);
    code = emit(svc.generate(body), ge_out);
  });

  // serve
  auto* sv = app.add_subcommand("serve", "Serve the JSON API over HTTP");
  bridge::AppConfig sv_app;
  std::string sv_config = BRIDGE_DEFAULT_CONFIG;
  std::string sv_ckpt;
  std::string sv_data;
  sv->add_option("--config", sv_config, "Site and load configuration (JSON)");
  sv->add_option("--ckpt", sv_ckpt, "Checkpoint (omit to answer 503)");
  sv->add_option("--data", sv_data, "Dataset CSV for /api/latent and /api/pareto");
  sv->add_option("--host", sv_app.host, "Bind address");
  sv->add_option("--port", sv_app.port, "Port (0 picks a free one)");
  sv->add_option("--max-n", sv_app.max_n, "Largest n accepted per request")->check(CLI::PositiveNumber);
  sv->callback([&] {
    sv_app.config_path = sv_config;
    sv_app.checkpoint_path = sv_ckpt;
    sv_app.dataset_path = sv_data;
    const bridge::Service svc = bridge::Service::from_app_config(sv_app);
    bridge::HttpServer server(svc);
    const int port = server.bind(sv_app.host, sv_app.port);
    std::printf("listening on http://%s:%d\n", sv_app.host.c_str(), port);
    std::fflush(stdout);
    server.listen();
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const bridge::BadRequest& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return code;
}
