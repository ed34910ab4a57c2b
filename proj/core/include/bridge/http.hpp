#pragma once

// HTTP/1.1 front end for Service.

#include <memory>
#include <string>

#include "bridge/service.hpp"

namespace bridge {

class HttpServer {
 public:
  explicit HttpServer(const Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds to `port`, or to a free port when `port` is 0. Returns the bound
  /// port; throws std::runtime_error on failure.
  int bind(const std::string& host, int port);
  /// Blocks until stop() is called.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace bridge
