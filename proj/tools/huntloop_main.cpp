// huntloop command line: ingest, serve, hunt, rank.

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "huntloop/api.hpp"
#include "huntloop/attackdb.hpp"
#include "huntloop/error.hpp"
#include "huntloop/hypothesis.hpp"
#include "huntloop/orchestrator.hpp"
#include "huntloop/scenario.hpp"

using namespace huntloop;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

int fail(const std::string& code, const std::string& message, int exit_code = 1) {
  std::cerr << api::error_json(code, message).dump() << '\n';
  return exit_code;
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io-error", "cannot read " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error("malformed-document", path + ": " + e.what());
  }
}

void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("io-error", "cannot write " + path);
  out << j.dump(2) << '\n';
}

attackdb::GraphPtr load_graph(const std::string& flag, const std::optional<std::string>& from_config) {
  const std::string path = !flag.empty() ? flag : from_config.value_or("");
  if (path.empty()) throw Error("missing-graph", "pass --graph or set \"graph\" in the config");
  if (!std::filesystem::exists(path)) throw Error("io-error", "no graph file " + path);
  return attackdb::load_snapshot(path);
}

cnc::Config load_config(const std::string& path, cnc::Config fallback = {}) {
  return path.empty() ? fallback : cnc::Config::load(path);
}

struct IngestArgs {
  std::vector<std::string> bundles;
  std::string base;
  std::string out;
  std::vector<std::string> trusted;
};

int run_ingest(const IngestArgs& a) {
  attackdb::GraphPtr graph = a.base.empty() ? std::make_shared<const attackdb::AttackGraph>()
                                            : attackdb::load_snapshot(a.base);
  attackdb::IngestConfig cfg;
  if (!a.trusted.empty()) cfg.trusted_sources = std::set<std::string>(a.trusted.begin(), a.trusted.end());
  Json files = Json::array();
  for (const auto& path : a.bundles) {
    auto result = attackdb::ingest_bundle(read_json(path), *graph, cfg);
    graph = result.graph;
    files.push_back(Json{{"file", path}, {"report", result.report.to_json()}});
  }
  if (!a.out.empty()) attackdb::save_snapshot(*graph, a.out);
  std::cout << Json{{"files", files}, {"nodes", graph->nodes().size()}, {"edges", graph->edges().size()}}.dump(2)
            << '\n';
  return 0;
}

struct ServeArgs {
  int port = 8080;
  std::string host = "127.0.0.1";
  std::string config;
  std::string graph;
  int tick_ms = 0;
};

int run_serve(const ServeArgs& a) {
  cnc::Config config = load_config(a.config);
  auto graph = load_graph(a.graph, config.graph_path);
  std::unique_ptr<fleet::Fleet> fl;
  if (config.fleet_path) {
    fl = fleet::Fleet::from_json(read_json(*config.fleet_path), config.costs);
  } else {
    fl = fleet::Fleet::blank(10, config.costs);
  }
  cnc::HuntLoop loop(config, graph, std::move(fl));
  const auto orphans = loop.recover_orphans();

  api::Api handler(loop, graph, scenario::scenario_defaults());
  api::Server server(handler);
  const int port = server.bind(a.host, a.port);
  if (a.tick_ms > 0) server.start_clock(loop, std::chrono::milliseconds(a.tick_ms));
  std::cout << Json{{"listening", port}, {"host", a.host}, {"recovered", orphans}}.dump() << std::endl;

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::thread watcher([&] {
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
  });
  server.listen();
  g_stop = true;
  watcher.join();
  return 0;
}

struct HuntArgs {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  bool auto_approve = false;
  std::optional<std::int64_t> budget;
  std::string report;
  std::string config;
  std::string graph;
};

int run_hunt(const HuntArgs& a) {
  cnc::Config base = load_config(a.config, scenario::scenario_defaults());
  auto graph = load_graph(a.graph, base.graph_path);
  auto script = scenario::ScenarioScript::load(a.scenario);
  if (a.seed) script.seed = *a.seed;
  // Flags win over the script's own config overlay.
  if (a.auto_approve) script.config["loop"]["auto_approve_threshold"] = 0.0;
  if (a.budget) script.config["loop"]["workflow_budget"] = *a.budget;

  const Json report = scenario::run_scenario(script, graph, base).to_json();
  if (a.report.empty()) {
    std::cout << report.dump(2) << '\n';
    return 0;
  }
  write_json(a.report, report);
  std::cout << Json{{"scenario", report["scenario"]},
                    {"seed", report["seed"]},
                    {"confirmed", report["confirmed"]},
                    {"precision", report["precision"]},
                    {"recall", report["recall"]},
                    {"no_confirmations", report["no_confirmations"]},
                    {"time_to_confirm", report["time_to_confirm"]},
                    {"total_cost", report["total_cost"]},
                    {"report", a.report}}
                   .dump(2)
            << '\n';
  return 0;
}

struct RankArgs {
  std::string sightings;
  std::string config;
  std::string graph;
  int top = 10;
};

int run_rank(const RankArgs& a) {
  cnc::Config config = load_config(a.config);
  auto graph = load_graph(a.graph, config.graph_path);
  const Json j = read_json(a.sightings);
  std::vector<hypothesis::Sighting> sightings;
  if (j.is_array()) {
    try {
      for (const auto& s : j) sightings.push_back(s.get<hypothesis::Sighting>());
    } catch (const Json::exception& e) {
      throw Error("invalid-trigger", e.what());
    }
  } else {
    sightings = cnc::Trigger::from_json(j).sightings;
  }
  auto result = hypothesis::generate(*graph, sightings, a.top, config.weights);
  Json ranked = Json::array();
  int rank = 1;
  for (const auto& h : result.hypotheses) {
    Json e = h.to_json();
    e["rank"] = rank++;
    ranked.push_back(e);
  }
  std::cout << Json{{"hypotheses", ranked}, {"empty_graph", result.empty_graph}}.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HuntLoop threat-hunting engine"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Ingest STIX-subset bundles and report node/edge counts");
  ingest_cmd->add_option("bundles", ingest.bundles, "Bundle files")->required();
  ingest_cmd->add_option("--base", ingest.base, "Existing graph snapshot to ingest into");
  ingest_cmd->add_option("--out", ingest.out, "Write the resulting graph snapshot here");
  ingest_cmd->add_option("--trusted", ingest.trusted, "Accept only these x_source values");

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP API");
  serve_cmd->add_option("--port", serve.port, "Port (0 picks a free one)");
  serve_cmd->add_option("--host", serve.host, "Bind address");
  serve_cmd->add_option("--config", serve.config, "Config file");
  serve_cmd->add_option("--graph", serve.graph, "Graph bundle or snapshot");
  serve_cmd->add_option("--tick-ms", serve.tick_ms, "Advance one tick every N ms (live mode)");

  HuntArgs hunt;
  auto* hunt_cmd = app.add_subcommand("hunt", "Run a scenario and write its evaluation report");
  hunt_cmd->add_option("--scenario", hunt.scenario, "Scenario file")->required();
  hunt_cmd->add_option("--seed", hunt.seed, "Override the scenario seed");
  hunt_cmd->add_flag("--auto-approve", hunt.auto_approve, "Launch every hypothesis without approval");
  hunt_cmd->add_option("--budget", hunt.budget, "Per-workflow budget in cost units");
  hunt_cmd->add_option("--report", hunt.report, "Report output path");
  hunt_cmd->add_option("--config", hunt.config, "Base config file");
  hunt_cmd->add_option("--graph", hunt.graph, "Graph bundle or snapshot");

  RankArgs rank;
  auto* rank_cmd = app.add_subcommand("rank", "Rank hypotheses for a sightings file");
  rank_cmd->add_option("--sightings", rank.sightings, "Sightings or alert file")->required();
  rank_cmd->add_option("--config", rank.config, "Config file");
  rank_cmd->add_option("--graph", rank.graph, "Graph bundle or snapshot");
  rank_cmd->add_option("--top", rank.top, "Number of hypotheses");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*ingest_cmd) return run_ingest(ingest);
    if (*serve_cmd) return run_serve(serve);
    if (*hunt_cmd) return run_hunt(hunt);
    if (*rank_cmd) return run_rank(rank);
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
