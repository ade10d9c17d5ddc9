// fleet-sim: headless entry points over the libfleetsim C interface.

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "fleetsim/fleetsim.h"
#include "json.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(fs_status s, const char* what) {
  if (s != FS_OK) throw Failure(std::string(what) + ": " + fs_status_name(s) + ": " + fs_last_error());
}

/// Takes ownership of a string returned by the library.
std::string take(char* s) {
  std::string out = s ? s : "";
  fs_string_free(s);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw Failure("cannot write " + path.string());
}

/// Sleeps until `sim_t` seconds of wall time have passed since `start`.
void pace(std::chrono::steady_clock::time_point start, double sim_t) {
  std::this_thread::sleep_until(start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                            std::chrono::duration<double>(sim_t)));
}

int cmd_run(const std::string& experiment, const std::string& scenario, const std::string& seeds,
            const std::string& out, std::string log_dir, bool no_logs, unsigned threads) {
  if (no_logs) {
    log_dir.clear();
  } else if (log_dir.empty()) {
    const std::filesystem::path p(out);
    log_dir = (p.parent_path() / (p.stem().string() + "_logs")).string();
  }
  char* report = nullptr;
  check(fs_run_experiment(experiment.c_str(), read_file(scenario).c_str(), seeds.c_str(), log_dir.c_str(), threads,
                          &report),
        "run");
  const std::string text = take(report);
  write_file(out, text + "\n");
  const auto j = nlohmann::json::parse(text);
  std::cout << j["summary"].dump(2) << "\n";
  std::cerr << "report written to " << out;
  if (!log_dir.empty()) std::cerr << ", trajectory logs in " << log_dir;
  std::cerr << "\n";
  return 0;
}

int cmd_sim(const std::string& scenario, double dt, bool realtime, double duration, const std::string& connect,
            const std::string& log_dir) {
  fs_sim* sim = nullptr;
  check(fs_sim_create(read_file(scenario).c_str(), dt, &sim), "sim");
  std::unique_ptr<fs_sim, decltype(&fs_sim_destroy)> guard(sim, fs_sim_destroy);
  size_t n = 0;
  check(fs_sim_uav_count(sim, &n), "sim");
  if (!connect.empty()) {
    for (size_t i = 0; i < n; ++i) check(fs_sim_connect(sim, i, connect.c_str()), "connect");
    std::cerr << n << " uav(s) connected to " << connect << "\n";
  }
  const auto start = std::chrono::steady_clock::now();
  double t = 0.0;
  double next_report = 1.0;
  while (!g_stop && (duration <= 0.0 || t < duration - 1e-9)) {
    check(fs_sim_step(sim, 1), "step");
    check(fs_sim_time(sim, &t), "step");
    if (realtime) {
      pace(start, t);
      if (t >= next_report) {
        char* state = nullptr;
        check(fs_sim_state_json(sim, &state), "state");
        std::cout << take(state) << std::endl;
        next_report += 1.0;
      }
    }
  }
  char* state = nullptr;
  check(fs_sim_state_json(sim, &state), "state");
  std::cout << take(state) << "\n";
  if (!log_dir.empty()) {
    for (size_t i = 0; i < n; ++i) {
      char* csv = nullptr;
      check(fs_sim_trajectory_csv(sim, i, &csv), "trajectory");
      write_file(std::filesystem::path(log_dir) / ("uav" + std::to_string(i) + ".csv"), take(csv));
    }
  }
  return 0;
}

int cmd_gcs(const std::string& listen, const std::string& scenario, int ui_port, double dt, bool realtime,
            double duration, const std::string& mission, std::string mission_uav, const std::string& log_out) {
  fs_gcs* gcs = nullptr;
  const std::string scenario_text = scenario.empty() ? "" : read_file(scenario);
  check(fs_gcs_create(scenario.empty() ? nullptr : scenario_text.c_str(), dt, &gcs), "gcs");
  std::unique_ptr<fs_gcs, decltype(&fs_gcs_destroy)> guard(gcs, fs_gcs_destroy);
  uint16_t port = 0;
  if (!listen.empty()) {
    check(fs_gcs_listen(gcs, listen.c_str(), &port), "listen");
    std::cerr << "runtimes: listening on port " << port << "\n";
  }
  if (ui_port >= 0) {
    const std::string host = listen.empty() ? "127.0.0.1" : listen.substr(0, listen.rfind(':'));
    check(fs_gcs_ui_listen(gcs, (host + ":" + std::to_string(ui_port)).c_str(), &port), "ui");
    std::cerr << "ui feed: listening on port " << port << "\n";
  }
  nlohmann::json waypoints;
  if (!mission.empty()) waypoints = nlohmann::json::parse(read_file(mission));

  const bool hosted = !scenario.empty();
  const auto start = std::chrono::steady_clock::now();
  double t0 = -1.0, now = 0.0;
  std::size_t events = 0;
  bool mission_sent = waypoints.is_null();
  while (!g_stop) {
    check(fs_gcs_step(gcs, &now), "step");
    if (t0 < 0.0) t0 = now;
    if (duration > 0.0 && now - t0 >= duration - 1e-9) break;

    char* ev = nullptr;
    check(fs_gcs_events_json(gcs, events, &ev), "events");
    for (const auto& e : nlohmann::json::parse(take(ev))) {
      std::cout << e.dump() << std::endl;
      ++events;
    }
    if (!mission_sent) {
      char* fleet = nullptr;
      check(fs_gcs_fleet_json(gcs, &fleet), "fleet");
      const auto snapshot = nlohmann::json::parse(take(fleet));
      for (const auto& u : snapshot["uavs"]) {
        const std::string id = u["id"];
        if (!u["aligned"].get<bool>() || !u["online"].get<bool>() || !u.contains("pose_local")) continue;
        if (!mission_uav.empty() && mission_uav != id) continue;
        for (const char* cmd : {"set_mission", "start_mission"}) {
          nlohmann::json c = {{"v", 1}, {"id", cmd}, {"cmd", cmd}, {"uav", id}};
          if (std::string(cmd) == "set_mission") c["waypoints"] = waypoints;
          char* ack = nullptr;
          check(fs_gcs_command(gcs, c.dump().c_str(), &ack), "command");
          std::cout << take(ack) << std::endl;
        }
        mission_sent = true;
        break;
      }
    }
    if (hosted) {
      if (realtime) pace(start, now - t0);
    } else {
      std::this_thread::sleep_for(std::chrono::milliseconds(realtime ? 10 : 1));
    }
  }
  if (!log_out.empty()) {
    char* log = nullptr;
    check(fs_gcs_mission_log(gcs, &log), "log");
    write_file(log_out, take(log));
  }
  char* fleet = nullptr;
  check(fs_gcs_fleet_json(gcs, &fleet), "fleet");
  std::cout << take(fleet) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fleet-sim: UAV fleet simulation, ground station and experiment runner"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(fs_version()));

  auto* run = app.add_subcommand("run", "Run an experiment over a seed list and write a JSON report");
  std::string experiment, scenario, seeds = "1..10", out, log_dir;
  bool no_logs = false;
  unsigned threads = 0;
  run->add_option("--experiment", experiment, "waypoint_accuracy | avoidance | door | latency | multi_uav_map")
      ->required();
  run->add_option("--scenario", scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--seeds", seeds, "Seed list, e.g. 1..10 or 1,4,7")->capture_default_str();
  run->add_option("--out", out, "Report path")->required();
  run->add_option("--log-dir", log_dir, "Trajectory CSV directory (default: <out stem>_logs)");
  run->add_flag("--no-logs", no_logs, "Skip trajectory logs");
  run->add_option("--threads", threads, "Parallel seeds (0 = all cores)")->capture_default_str();

  auto* sim = app.add_subcommand("sim", "Step a scenario, optionally linked to a ground station");
  double dt = 0.02, duration = 10.0;
  bool realtime = false, fast = false;
  std::string connect, sim_logs;
  sim->add_option("--scenario", scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  sim->add_option("--dt", dt, "Step size in seconds")->capture_default_str();
  auto* rt_flag = sim->add_flag("--realtime", realtime, "Pace sim time to the wall clock");
  sim->add_flag("--fast", fast, "Fast-forward (default)")->excludes(rt_flag);
  sim->add_option("--duration", duration, "Sim seconds to run (0 = until interrupted)")->capture_default_str();
  sim->add_option("--connect", connect, "Ground station host:port for every UAV");
  sim->add_option("--log-dir", sim_logs, "Write per-UAV trajectory CSVs here");

  auto* gcs = app.add_subcommand("gcs", "Run the ground station");
  std::string listen, mission, mission_uav, log_out;
  int ui_port = -1;
  double gcs_duration = 0.0;
  bool gcs_realtime = false, gcs_fast = false;
  gcs->add_option("--listen", listen, "Accept UAV runtimes on host:port");
  gcs->add_option("--scenario", scenario, "Host a simulated fleet in-process")->check(CLI::ExistingFile);
  gcs->add_option("--ui-port", ui_port, "Serve the operator UI feed on this port (0 = any)");
  gcs->add_option("--dt", dt, "Hosted sim step size")->capture_default_str();
  auto* g_rt = gcs->add_flag("--realtime", gcs_realtime, "Pace the hosted sim to the wall clock");
  gcs->add_flag("--fast", gcs_fast, "Fast-forward the hosted sim (default)")->excludes(g_rt);
  gcs->add_option("--duration", gcs_duration, "Seconds to run (0 = until interrupted)")->capture_default_str();
  gcs->add_option("--mission", mission, "Mission file (JSON waypoint list) for the first aligned UAV")
      ->check(CLI::ExistingFile);
  gcs->add_option("--mission-uav", mission_uav, "UAV id that receives --mission");
  gcs->add_option("--log-out", log_out, "Write the mission log (JSON lines) on exit");

  auto* proto = app.add_subcommand("proto", "Encode or decode protocol frames");
  proto->require_subcommand(1);
  std::string input;
  auto* enc = proto->add_subcommand("encode", "JSON message -> hex frame");
  enc->add_option("message", input, "Message JSON")->required();
  auto* dec = proto->add_subcommand("decode", "Hex bytes -> JSON messages");
  dec->add_option("hex", input, "Frame bytes as hex")->required();

  CLI11_PARSE(app, argc, argv);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  try {
    if (*run) return cmd_run(experiment, scenario, seeds, out, log_dir, no_logs, threads);
    if (*sim) return cmd_sim(scenario, dt, realtime, duration, connect, sim_logs);
    if (*gcs) {
      return cmd_gcs(listen, scenario, ui_port, dt, gcs_realtime, gcs_duration, mission, mission_uav, log_out);
    }
    char* result = nullptr;
    if (*enc) check(fs_proto_encode(input.c_str(), &result), "encode");
    else check(fs_proto_decode(input.c_str(), &result), "decode");
    std::cout << take(result) << "\n";
    return 0;
  } catch (const Failure& e) {
    std::cerr << "fleet-sim: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "fleet-sim: " << e.what() << "\n";
    return 1;
  }
}
