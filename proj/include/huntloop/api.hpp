#pragma once

// JSON HTTP API over a HuntLoop. Routing lives in Api so it can be driven
// without sockets; Server binds it to cpp-httplib.

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "huntloop/orchestrator.hpp"

namespace httplib {
class Server;
}

namespace huntloop::api {

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> params;
  std::string body;
};

struct Response {
  int status = 200;
  Json body;
};

// Error code -> HTTP status: unknown-* 404, state conflicts 409, malformed
// input 400, anything else 500.
int http_status(const std::string& code);

// {"error": code, "message": text}
Json error_json(const std::string& code, const std::string& message);

class Api {
 public:
  Api(cnc::HuntLoop& loop, attackdb::GraphPtr graph, cnc::Config scenario_base);

  Response handle(const Request& request);

  // While the live clock runs, scenario runs are refused.
  void set_live(bool live) { live_ = live; }
  bool live() const { return live_; }

 private:
  Json route(const Request& request, int& status);
  Json run_scenario(const Json& body);

  cnc::HuntLoop& loop_;
  attackdb::GraphPtr graph_;
  cnc::Config scenario_base_;
  std::atomic<bool> live_{false};

  std::mutex reports_mu_;
  std::map<std::string, Json> reports_;
  std::int64_t next_run_ = 1;
};

class Server {
 public:
  explicit Server(Api& api);
  ~Server();

  // Returns the bound port (an ephemeral one when `port` is 0). Throws
  // Error("bind-failed").
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();

  // Advances the loop one tick every `period` on a background thread.
  void start_clock(cnc::HuntLoop& loop, std::chrono::milliseconds period);

 private:
  Api& api_;
  std::unique_ptr<httplib::Server> http_;
  std::thread clock_;
  std::atomic<bool> running_{false};
};

}  // namespace huntloop::api
