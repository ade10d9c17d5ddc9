#include "fleetsim/fleetsim.h"

#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "experiments.hpp"
#include "gcs.hpp"
#include "harness.hpp"
#include "json.hpp"
#include "protocol.hpp"
#include "scenario.hpp"
#include "transport.hpp"
#include "ui.hpp"

using namespace fleetsim;
using nlohmann::json;

struct fs_sim {
  explicit fs_sim(sim::Scenario sc, harness::HarnessConfig cfg) : h(std::move(sc), cfg) {}
  harness::SimHarness h;
  std::vector<std::vector<harness::TrajectorySample>> trajectories;
  std::uint64_t steps = 0;
};

struct fs_gcs {
  fs_gcs(gcs::GcsConfig cfg) : station(cfg), ui(station) {}
  std::unique_ptr<harness::SimHarness> hosted;
  std::unique_ptr<harness::SimLandmarkOracle> oracle;
  gcs::GroundStation station;
  ui::UiServer ui;
  std::unique_ptr<transport::TcpListener> listener;
  std::unique_ptr<ui::CommandHandler> commands;
  transport::SteadyClock clock;
  double now = 0.0;
};

namespace {

thread_local std::string g_last_error;

fs_status from_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::kInvalidArgument: return FS_INVALID_ARGUMENT;
    case ErrorCode::kDegenerateConfiguration: return FS_DEGENERATE_CONFIGURATION;
    case ErrorCode::kAlignmentFailure: return FS_ALIGNMENT_FAILURE;
    case ErrorCode::kScaleIndeterminate: return FS_SCALE_INDETERMINATE;
    case ErrorCode::kUnknownUav: return FS_UNKNOWN_UAV;
    case ErrorCode::kParse: return FS_PARSE_ERROR;
    case ErrorCode::kEncode: return FS_ENCODE_ERROR;
    case ErrorCode::kIo: return FS_IO_ERROR;
    case ErrorCode::kMissingAlignment: return FS_MISSING_ALIGNMENT;
    case ErrorCode::kState: return FS_STATE_ERROR;
  }
  return FS_INTERNAL_ERROR;
}

fs_status fail(fs_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename F>
fs_status guard(F&& f) {
  try {
    f();
    return FS_OK;
  } catch (const Error& e) {
    return fail(from_code(e.code()), e.what());
  } catch (const json::exception& e) {
    return fail(FS_PARSE_ERROR, e.what());
  } catch (const std::bad_alloc&) {
    return fail(FS_INTERNAL_ERROR, "out of memory");
  } catch (const std::exception& e) {
    return fail(FS_INTERNAL_ERROR, e.what());
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void need(const void* p, const char* what) {
  if (!p) throw Error(ErrorCode::kInvalidArgument, std::string(what) + " is null");
}

harness::HarnessConfig harness_config(double dt) {
  if (!(dt > 0.0) || dt > 0.1) throw Error(ErrorCode::kInvalidArgument, "dt must be in (0, 0.1]");
  harness::HarnessConfig cfg;
  cfg.dt = dt;
  return cfg;
}

json pose_json(const geometry::Pose& p) {
  return {{"x", p.position.x()}, {"y", p.position.y()}, {"z", p.position.z()}, {"yaw", p.yaw}};
}

}  // namespace

extern "C" {

const char* fs_version(void) { return "0.1.0"; }
const char* fs_last_error(void) { return g_last_error.c_str(); }
void fs_string_free(char* s) { std::free(s); }

const char* fs_status_name(fs_status s) {
  switch (s) {
    case FS_OK: return "ok";
    case FS_INVALID_ARGUMENT: return "invalid_argument";
    case FS_DEGENERATE_CONFIGURATION: return "degenerate_configuration";
    case FS_ALIGNMENT_FAILURE: return "alignment_failure";
    case FS_SCALE_INDETERMINATE: return "scale_indeterminate";
    case FS_UNKNOWN_UAV: return "unknown_uav";
    case FS_PARSE_ERROR: return "parse_error";
    case FS_ENCODE_ERROR: return "encode_error";
    case FS_IO_ERROR: return "io_error";
    case FS_MISSING_ALIGNMENT: return "missing_alignment";
    case FS_STATE_ERROR: return "state_error";
    case FS_INTERNAL_ERROR: return "internal_error";
  }
  return "unknown";
}

fs_status fs_proto_encode(const char* message_json, char** hex_out) {
  return guard([&] {
    need(message_json, "message_json");
    need(hex_out, "hex_out");
    *hex_out = dup(protocol::to_hex(protocol::encode(protocol::from_json(message_json))));
  });
}

fs_status fs_proto_decode(const char* hex, char** json_out) {
  return guard([&] {
    need(hex, "hex");
    need(json_out, "json_out");
    json arr = json::array();
    for (const auto& m : protocol::decode_all(protocol::from_hex(hex))) arr.push_back(json::parse(protocol::to_json(m)));
    *json_out = dup(arr.dump());
  });
}

fs_status fs_experiment_names(char** json_out) {
  return guard([&] {
    need(json_out, "json_out");
    *json_out = dup(json(experiments::experiment_names()).dump());
  });
}

fs_status fs_run_experiment(const char* name, const char* scenario_json, const char* seeds, const char* log_dir,
                            unsigned threads, char** report_out) {
  return guard([&] {
    need(name, "name");
    need(scenario_json, "scenario_json");
    need(seeds, "seeds");
    need(report_out, "report_out");
    experiments::ExperimentRequest req;
    req.name = name;
    req.scenario_json = scenario_json;
    req.seeds = experiments::parse_seeds(seeds);
    req.log_dir = log_dir ? log_dir : "";
    req.threads = threads;
    *report_out = dup(experiments::run_experiment(req));
  });
}

fs_status fs_sim_create(const char* scenario_json, double dt, fs_sim** out) {
  return guard([&] {
    need(scenario_json, "scenario_json");
    need(out, "out");
    *out = new fs_sim(sim::parse_scenario(scenario_json), harness_config(dt));
    (*out)->trajectories.resize((*out)->h.uav_count());
  });
}

void fs_sim_destroy(fs_sim* sim) { delete sim; }

fs_status fs_sim_step(fs_sim* sim, uint32_t steps) {
  return guard([&] {
    need(sim, "sim");
    for (uint32_t k = 0; k < steps; ++k) {
      sim->h.step();
      if (++sim->steps % 5 == 0) {
        for (std::size_t i = 0; i < sim->h.uav_count(); ++i) sim->trajectories[i].push_back(sim->h.sample(i));
      }
      for (std::size_t i = 0; i < sim->h.uav_count(); ++i) {
        if (!sim->h.attached(i)) sim->h.take_messages(i);
      }
    }
  });
}

fs_status fs_sim_time(const fs_sim* sim, double* seconds) {
  return guard([&] {
    need(sim, "sim");
    need(seconds, "seconds");
    *seconds = sim->h.now();
  });
}

fs_status fs_sim_uav_count(const fs_sim* sim, size_t* count) {
  return guard([&] {
    need(sim, "sim");
    need(count, "count");
    *count = sim->h.uav_count();
  });
}

fs_status fs_sim_connect(fs_sim* sim, size_t index, const char* endpoint) {
  return guard([&] {
    need(sim, "sim");
    need(endpoint, "endpoint");
    if (index >= sim->h.uav_count()) throw Error(ErrorCode::kUnknownUav, "no uav with index " + std::to_string(index));
    auto conn = transport::TcpConnection::connect(transport::parse_endpoint(endpoint));
    sim->h.attach(index, std::make_unique<transport::Channel>(std::move(conn)));
  });
}

fs_status fs_sim_send_task(fs_sim* sim, size_t index, const char* task_json) {
  return guard([&] {
    need(sim, "sim");
    need(task_json, "task_json");
    if (index >= sim->h.uav_count()) throw Error(ErrorCode::kUnknownUav, "no uav with index " + std::to_string(index));
    const auto m = protocol::from_json(task_json);
    if (!std::holds_alternative<protocol::Task>(m)) throw Error(ErrorCode::kInvalidArgument, "message is not a task");
    sim->h.runtime(index).on_message(m, sim->h.now());
  });
}

fs_status fs_sim_state_json(const fs_sim* sim, char** json_out) {
  return guard([&] {
    need(sim, "sim");
    need(json_out, "json_out");
    json arr = json::array();
    for (std::size_t i = 0; i < sim->h.uav_count(); ++i) {
      const auto s = sim->h.sample(i);
      arr.push_back({{"index", i},
                     {"t", s.t},
                     {"estimate", pose_json(s.estimate)},
                     {"truth", pose_json(s.truth_local)},
                     {"mode", s.mode},
                     {"clearance", s.clearance},
                     {"crashed", sim->h.world().uav(i).crashed}});
    }
    *json_out = dup(arr.dump());
  });
}

fs_status fs_sim_trajectory_csv(const fs_sim* sim, size_t index, char** csv_out) {
  return guard([&] {
    need(sim, "sim");
    need(csv_out, "csv_out");
    if (index >= sim->h.uav_count()) throw Error(ErrorCode::kUnknownUav, "no uav with index " + std::to_string(index));
    *csv_out = dup(harness::trajectory_csv(sim->trajectories[index]));
  });
}

fs_status fs_gcs_create(const char* scenario_json, double dt, fs_gcs** out) {
  return guard([&] {
    need(out, "out");
    std::unique_ptr<fs_gcs> g;
    if (scenario_json) {
      auto sc = sim::parse_scenario(scenario_json);
      const auto cfg = harness_config(dt);
      g = std::make_unique<fs_gcs>(harness::gcs_config_for(sc, cfg.sim));
      g->hosted = std::make_unique<harness::SimHarness>(sc, cfg);
      g->oracle = std::make_unique<harness::SimLandmarkOracle>(*g->hosted, 0.02, sc.seed);
      g->station.set_landmark_source(g->oracle.get());
      harness::link_all(*g->hosted, g->station);
    } else {
      g = std::make_unique<fs_gcs>(gcs::GcsConfig{});
    }
    g->commands = std::make_unique<ui::CommandHandler>(g->station);
    *out = g.release();
  });
}

void fs_gcs_destroy(fs_gcs* gcs) { delete gcs; }

fs_status fs_gcs_listen(fs_gcs* gcs, const char* endpoint, uint16_t* bound_port) {
  return guard([&] {
    need(gcs, "gcs");
    need(endpoint, "endpoint");
    gcs->listener = std::make_unique<transport::TcpListener>(transport::parse_endpoint(endpoint));
    if (bound_port) *bound_port = gcs->listener->port();
  });
}

fs_status fs_gcs_ui_listen(fs_gcs* gcs, const char* endpoint, uint16_t* bound_port) {
  return guard([&] {
    need(gcs, "gcs");
    need(endpoint, "endpoint");
    const auto port = gcs->ui.listen(transport::parse_endpoint(endpoint));
    if (bound_port) *bound_port = port;
  });
}

fs_status fs_gcs_step(fs_gcs* gcs, double* now_out) {
  return guard([&] {
    need(gcs, "gcs");
    if (gcs->listener) {
      while (auto conn = gcs->listener->accept(0)) gcs->station.add_connection(std::make_unique<transport::Channel>(std::move(conn)));
    }
    if (gcs->hosted) {
      gcs->hosted->step();
      gcs->now = gcs->hosted->now();
    } else {
      gcs->now = gcs->clock.now();
    }
    gcs->station.tick(gcs->now);
    gcs->ui.poll(gcs->now);
    if (now_out) *now_out = gcs->now;
  });
}

fs_status fs_gcs_command(fs_gcs* gcs, const char* command_json, char** ack_out) {
  return guard([&] {
    need(gcs, "gcs");
    need(command_json, "command_json");
    need(ack_out, "ack_out");
    *ack_out = dup(gcs->commands->handle(command_json, gcs->now));
  });
}

fs_status fs_gcs_fleet_json(const fs_gcs* gcs, char** json_out) {
  return guard([&] {
    need(gcs, "gcs");
    need(json_out, "json_out");
    *json_out = dup(ui::fleet_snapshot_json(gcs->station, gcs->now));
  });
}

fs_status fs_gcs_events_json(const fs_gcs* gcs, size_t since, char** json_out) {
  return guard([&] {
    need(gcs, "gcs");
    need(json_out, "json_out");
    json arr = json::array();
    for (const auto& e : gcs->station.events_since(since)) arr.push_back(json::parse(ui::event_json(e)));
    *json_out = dup(arr.dump());
  });
}

fs_status fs_gcs_mission_log(const fs_gcs* gcs, char** jsonl_out) {
  return guard([&] {
    need(gcs, "gcs");
    need(jsonl_out, "jsonl_out");
    *jsonl_out = dup(gcs::log_to_jsonl(gcs->station.log()));
  });
}

}  // extern "C"
