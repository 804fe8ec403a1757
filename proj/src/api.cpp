#include "huntloop/api.hpp"

#include <httplib.h>

#include <cstdio>
#include <sstream>
#include <vector>

#include "huntloop/error.hpp"
#include "huntloop/json_io.hpp"
#include "huntloop/scenario.hpp"

namespace huntloop::api {

namespace {

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::stringstream in(path);
  std::string part;
  while (std::getline(in, part, '/'))
    if (!part.empty()) out.push_back(part);
  return out;
}

Json parse_body(const std::string& body) {
  if (body.empty()) return Json::object();
  try {
    return Json::parse(body);
  } catch (const Json::exception& e) {
    throw Error("malformed-request", std::string("body is not JSON: ") + e.what());
  }
}

Json list(const std::vector<hypothesis::Hypothesis>& hs) {
  Json out = Json::array();
  for (const auto& h : hs) out.push_back(h.to_json());
  return out;
}

int to_int(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error("malformed-request", std::string(what) + " must be an integer");
  }
}

[[noreturn]] void not_found(const Request& r) {
  throw Error("unknown-route", r.method + " " + r.path);
}

}  // namespace

int http_status(const std::string& code) {
  if (code.rfind("unknown-", 0) == 0) return 404;
  if (code == "terminal-hypothesis" || code == "illegal-transition" || code == "hypothesis-busy" ||
      code == "container-running" || code == "container-orphaned" || code == "scenario-conflict")
    return 409;
  if (code.rfind("invalid-", 0) == 0 || code.rfind("malformed-", 0) == 0 || code == "budget-too-small" ||
      code == "tick-regression")
    return 400;
  return 500;
}

Json error_json(const std::string& code, const std::string& message) {
  return Json{{"error", code}, {"message", message}};
}

Api::Api(cnc::HuntLoop& loop, attackdb::GraphPtr graph, cnc::Config scenario_base)
    : loop_(loop), graph_(std::move(graph)), scenario_base_(std::move(scenario_base)) {}

Response Api::handle(const Request& request) {
  Response res;
  try {
    res.body = route(request, res.status);
  } catch (const Error& e) {
    res.status = http_status(e.code());
    res.body = error_json(e.code(), e.what());
  } catch (const Json::exception& e) {
    res.status = 400;
    res.body = error_json("malformed-request", e.what());
  } catch (const std::exception& e) {
    res.status = 500;
    res.body = error_json("internal", e.what());
  }
  return res;
}

Json Api::route(const Request& r, int& status) {
  const auto p = split_path(r.path);
  const bool get = r.method == "GET";
  const bool post = r.method == "POST";
  if (p.empty()) not_found(r);

  if (p[0] == "hypotheses") {
    if (get && p.size() == 1) {
      std::optional<hypothesis::Status> st;
      if (auto it = r.params.find("status"); it != r.params.end() && !it->second.empty()) {
        st = hypothesis::parse_status(it->second);
        if (!st) throw Error("invalid-query", "unknown status " + it->second);
      }
      return list(loop_.hypotheses(st));
    }
    if (get && p.size() == 2) {
      auto h = loop_.hypothesis(p[1]);
      if (!h) throw Error("unknown-hypothesis", "no hypothesis " + p[1]);
      return h->to_json();
    }
    if (post && p.size() == 3) {
      const std::string& id = p[1];
      if (p[2] == "approve") return loop_.approve(id).to_json();
      if (p[2] == "pin") return loop_.pin(id).to_json();
      if (p[2] == "dismiss") return loop_.dismiss(id).to_json();
      if (p[2] == "augment") {
        const Json body = parse_body(r.body);
        const auto add = observables_from_json(body.value("add", Json::array()));
        const auto remove = observables_from_json(body.value("remove", Json::array()));
        return loop_.augment(id, add, remove).to_json();
      }
    }
  } else if (p[0] == "workflows" && get) {
    if (p.size() == 2) return loop_.workflow_view(p[1]);
    if (p.size() == 3 && p[2] == "audit") {
      Json out = Json::array();
      for (const auto& e : loop_.audit(p[1])) out.push_back(e.to_json());
      return out;
    }
  } else if (p[0] == "alerts" && get && p.size() == 1) {
    Json out = Json::array();
    for (const auto& a : loop_.alerts()) out.push_back(a.to_json());
    return out;
  } else if (p[0] == "events" && get && p.size() == 2 && p[1] == "search") {
    Json q;
    if (auto it = r.params.find("q"); it != r.params.end()) {
      q = parse_body(it->second);
    } else {
      q = parse_body(r.body);
    }
    Json out = Json::array();
    for (const auto& e : loop_.search(evidence::Query::from_json(q))) out.push_back(e);
    return out;
  } else if (p[0] == "graph" && get && p.size() == 2 && p[1] == "neighbors") {
    auto id = r.params.find("id");
    if (id == r.params.end()) throw Error("malformed-request", "id is required");
    const auto depth = r.params.find("depth");
    const int d = depth == r.params.end() ? 1 : to_int(depth->second, "depth");
    if (d < 0) throw Error("malformed-request", "depth must be >= 0");
    return loop_.neighbors(id->second, d);
  } else if (p[0] == "triggers" && post && p.size() == 1) {
    const auto out = loop_.on_external_trigger(cnc::Trigger::from_json(parse_body(r.body)));
    status = 201;
    return Json{{"hypotheses", list(out)}};
  } else if (p[0] == "scenarios" && post && p.size() == 2 && p[1] == "run") {
    status = 201;
    return run_scenario(parse_body(r.body));
  } else if (p[0] == "reports" && get && p.size() == 2) {
    std::lock_guard lock(reports_mu_);
    auto it = reports_.find(p[1]);
    if (it == reports_.end()) throw Error("unknown-report", "no report " + p[1]);
    return it->second;
  } else if (p[0] == "status" && get && p.size() == 1) {
    return Json{{"now", loop_.now()}, {"live", live()}, {"quiescent", loop_.quiescent()}};
  } else if (p[0] == "advance" && post && p.size() == 1) {
    if (live()) throw Error("scenario-conflict", "the live clock owns time");
    const Json body = parse_body(r.body);
    const evidence::Tick target = body.contains("tick") ? body["tick"].get<evidence::Tick>()
                                                        : loop_.now() + body.value("ticks", evidence::Tick{1});
    if (target < loop_.now()) throw Error("tick-regression", "cannot move time backwards");
    for (evidence::Tick t = loop_.now() + 1; t <= target; ++t) loop_.advance(t);
    return Json{{"now", loop_.now()}};
  }
  not_found(r);
}

Json Api::run_scenario(const Json& body) {
  if (live()) throw Error("scenario-conflict", "scenario runs are refused while the live clock runs");
  const Json& script_json = body.contains("script") ? body["script"] : body;
  auto script = scenario::ScenarioScript::from_json(script_json);
  if (body.contains("seed")) script.seed = body["seed"].get<std::uint64_t>();
  const Json report = scenario::run_scenario(script, graph_, scenario_base_).to_json();

  std::lock_guard lock(reports_mu_);
  const std::string id = "R" + std::to_string(next_run_++);
  reports_[id] = report;
  return Json{{"run", id}, {"report", report}};
}

Server::Server(Api& api) : api_(api), http_(std::make_unique<httplib::Server>()) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    Request r{req.method, req.path, {}, req.body};
    for (const auto& [k, v] : req.params) r.params.emplace(k, v);
    const Response out = api_.handle(r);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  };
  http_->Get(".*", handler);
  http_->Post(".*", handler);
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = http_->bind_to_any_port(host);
  } else if (!http_->bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error("bind-failed", "cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void Server::listen() { http_->listen_after_bind(); }

void Server::stop() {
  if (running_.exchange(false)) {
    if (clock_.joinable()) clock_.join();
    api_.set_live(false);
  }
  http_->stop();
}

void Server::start_clock(cnc::HuntLoop& loop, std::chrono::milliseconds period) {
  if (running_.exchange(true)) return;
  api_.set_live(true);
  clock_ = std::thread([this, &loop, period] {
    while (running_) {
      std::this_thread::sleep_for(period);
      try {
        loop.advance(loop.now() + 1);
      } catch (const std::exception& e) {
        std::fprintf(stderr, "%s\n", error_json("clock", e.what()).dump().c_str());
      }
    }
  });
}

}  // namespace huntloop::api
