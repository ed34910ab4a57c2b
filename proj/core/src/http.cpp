#include "bridge/http.hpp"

#include <httplib.h>

#include <stdexcept>

namespace bridge {

struct HttpServer::Impl {
  const Service& service;
  httplib::Server server;

  explicit Impl(const Service& s) : service(s) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      std::map<std::string, std::string> query;
      for (const auto& [k, v] : req.params) query.emplace(k, v);
      const ApiResponse out = service.handle(req.method, req.path, req.body, query);
      res.status = out.status;
      res.set_content(out.body.dump(), "application/json");
    };
    for (const char* path : {"/api/meta", "/api/latent", "/api/pareto"}) server.Get(path, handler);
    for (const char* path : {"/api/predict", "/api/generate", "/api/sensitivity"}) {
      server.Post(path, handler);
    }
    // Unknown routes still get the JSON error envelope.
    server.Get(R"(/api/.*)", handler);
    server.Post(R"(/api/.*)", handler);
  }
};

HttpServer::HttpServer(const Service& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw std::runtime_error("cannot bind to " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw std::runtime_error("cannot bind to " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace bridge
