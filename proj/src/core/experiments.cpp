#include "experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

#include "avoidance.hpp"
#include "error.hpp"
#include "gcs.hpp"
#include "harness.hpp"
#include "json.hpp"
#include "transport.hpp"

namespace fleetsim::experiments {

using geometry::Pose;
using geometry::Vec2;
using geometry::Vec3;
using nlohmann::json;
using protocol::TaskKind;
using protocol::TaskState;

namespace {

struct Stats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  std::size_t n = 0;
};

Stats stats(const std::vector<double>& v) {
  Stats s;
  s.n = v.size();
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double acc = 0.0;
    for (double x : v) acc += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(acc / static_cast<double>(v.size() - 1));
  }
  return s;
}

json stats_json(const std::vector<double>& v) {
  const auto s = stats(v);
  return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}};
}

Pose pose_param(const json& j) {
  return Pose::make(j.at("x").get<double>(), j.at("y").get<double>(), j.value("z", 1.0), j.value("yaw", 0.0));
}

protocol::Task goto_task(std::uint32_t id, const Pose& p) {
  protocol::Task t;
  t.task_id = id;
  t.kind = TaskKind::kGoto;
  t.pose = {static_cast<float>(p.position.x()), static_cast<float>(p.position.y()),
            static_cast<float>(p.position.z()), static_cast<float>(p.yaw)};
  return t;
}

/// Run context shared by the per-experiment loops.
struct Run {
  Run(const sim::Scenario& sc, std::uint64_t seed) : scenario(with_seed(sc, seed)), h(scenario) {}
  static sim::Scenario with_seed(sim::Scenario sc, std::uint64_t seed) {
    sc.seed = seed;
    return sc;
  }

  void step() {
    h.step();
    ++steps;
    if (steps % 5 == 0) {
      for (std::size_t i = 0; i < h.uav_count(); ++i) {
        if (trajectories.size() < h.uav_count()) trajectories.resize(h.uav_count());
        trajectories[i].push_back(h.sample(i));
      }
    }
    for (std::size_t i = 0; i < h.uav_count(); ++i) {
      for (auto& m : h.take_messages(i)) inbox.emplace_back(i, std::move(m));
    }
  }
  void run_for(double seconds) {
    const auto n = static_cast<long>(std::lround(seconds / h.config().dt));
    for (long k = 0; k < n; ++k) step();
  }
  bool crashed() const {
    for (std::size_t i = 0; i < h.uav_count(); ++i) {
      if (h.world().uav(i).crashed) return true;
    }
    return false;
  }
  /// Statuses for a task seen since the last call.
  std::vector<TaskState> statuses(std::uint32_t task) {
    std::vector<TaskState> out;
    for (const auto& [i, m] : inbox) {
      if (const auto* s = std::get_if<protocol::TaskStatus>(&m); s && s->task_id == task) out.push_back(s->state);
    }
    inbox.clear();
    return out;
  }
  std::vector<std::string> write_logs(const std::string& dir, const std::string& stem) const {
    std::vector<std::string> files;
    if (dir.empty()) return files;
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
      const std::string name = stem + (trajectories.size() > 1 ? "_uav" + std::to_string(i) : "") + ".csv";
      std::ofstream out(std::filesystem::path(dir) / name);
      if (!out) throw Error(ErrorCode::kIo, "cannot write trajectory log " + name);
      out << harness::trajectory_csv(trajectories[i]);
      files.push_back(name);
    }
    return files;
  }

  sim::Scenario scenario;
  harness::SimHarness h;
  std::uint64_t steps = 0;
  std::vector<std::vector<harness::TrajectorySample>> trajectories;
  std::vector<std::pair<std::size_t, protocol::Message>> inbox;
};

// ---------------------------------------------------------------- waypoint accuracy

json run_waypoint(const sim::Scenario& sc, const json& p, std::uint64_t seed, const std::string& log_dir) {
  Run r(sc, seed);
  const double hold_s = p.value("hold_s", 10.0);
  const double timeout = p.value("timeout_s", 30.0);
  const double thr = p.value("threshold_m", 0.05);
  std::vector<Pose> targets;
  for (const auto& t : p.at("targets")) targets.push_back(pose_param(t));
  if (targets.empty()) throw Error(ErrorCode::kParse, "waypoint_accuracy: no targets");

  r.run_for(1.0);
  json visits = json::array();
  bool failed = false;
  for (std::size_t k = 0; k < targets.size() && !failed; ++k) {
    const Pose& target = targets[k];
    r.h.runtime(0).on_message(goto_task(static_cast<std::uint32_t>(k + 1), target), r.h.now());
    const double t0 = r.h.now();
    std::optional<double> entered;
    std::vector<double> err, truth_err;
    while (true) {
      r.step();
      if (r.crashed()) {
        failed = true;
        break;
      }
      if (!entered && r.h.now() - t0 > timeout) break;
      const auto est = r.h.runtime(0).estimate();
      if (!est) continue;
      const Vec3 d = est->pose.position - target.position;
      if (!entered && d.cwiseAbs().maxCoeff() <= thr) entered = r.h.now();
      if (entered) {
        err.push_back(d.norm());
        truth_err.push_back((r.h.truth_local(0).position - target.position).norm());
        if (r.h.now() - *entered >= hold_s - 1e-9) break;
      }
    }
    r.inbox.clear();
    json v = {{"target", k}, {"reached", entered.has_value()}};
    if (entered) {
      const auto s = stats(err);
      v["time_to_target_s"] = *entered - t0;
      v["hold_error_mean_m"] = s.mean;
      v["hold_error_std_m"] = s.std;
      v["truth_hold_error_mean_m"] = stats(truth_err).mean;
    }
    visits.push_back(v);
  }
  json run = {{"seed", seed}, {"ok", !failed}, {"visits", visits}};
  if (failed) run["error"] = "crash flag raised";
  run["trajectory_logs"] = r.write_logs(log_dir, "waypoint_accuracy_seed" + std::to_string(seed));
  return run;
}

json summarize_waypoint(const std::vector<json>& runs) {
  std::size_t visits = 0, reached = 0;
  std::vector<double> means, times, truth;
  for (const auto& r : runs) {
    if (!r.contains("visits")) continue;
    for (const auto& v : r["visits"]) {
      ++visits;
      if (!v["reached"].get<bool>()) continue;
      ++reached;
      means.push_back(v["hold_error_mean_m"].get<double>());
      times.push_back(v["time_to_target_s"].get<double>());
      truth.push_back(v["truth_hold_error_mean_m"].get<double>());
    }
  }
  return {{"target_visits", visits},
          {"reached", reached},
          {"hold_error_m", stats_json(means)},
          {"truth_hold_error_m", stats_json(truth)},
          {"time_to_target_s", stats_json(times)}};
}

// ---------------------------------------------------------------- avoidance

bool all_blocked_always_stops(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> near(0.0, 0.4999);
  avoidance::AvoidanceParams params;
  for (int trial = 0; trial < 200; ++trial) {
    avoidance::SphericalRangeImage img;
    img.grid = avoidance::Grid(360, 3, 0.0);
    for (auto& v : img.grid.values) v = near(rng);
    Vec3 cmd(u(rng), u(rng), 0.3 * u(rng));
    if (cmd.norm() < 1e-3) cmd = Vec3(0.5, 0, 0);
    if (!avoidance::adjust(cmd, img, params).stop) return false;
  }
  return true;
}

json run_avoidance(const sim::Scenario& sc, const json& p, std::uint64_t seed, const std::string& log_dir) {
  Run r(sc, seed);
  const Pose goal = pose_param(p.at("goal"));
  const double timeout = p.value("timeout_s", 60.0);
  r.run_for(1.0);
  r.inbox.clear();
  r.h.runtime(0).on_message(goto_task(1, goal), r.h.now());
  const double t0 = r.h.now();
  double min_clearance = std::numeric_limits<double>::infinity();
  std::optional<double> reached;
  int blocked = 0;
  bool crashed = false;
  while (r.h.now() - t0 < timeout) {
    r.step();
    min_clearance = std::min(min_clearance, r.h.world().truth_clearance(0));
    if (r.crashed()) {
      crashed = true;
      break;
    }
    for (auto s : r.statuses(1)) {
      if (s == TaskState::kReached && !reached) reached = r.h.now() - t0;
      if (s == TaskState::kBlocked) ++blocked;
    }
    if (reached) break;
  }
  const Vec3 final = r.h.truth_local(0).position;
  json run = {{"seed", seed},
              {"ok", !crashed},
              {"goal_reached", reached.has_value()},
              {"min_truth_clearance_m", min_clearance},
              {"blocked_reports", blocked},
              {"final_truth_error_m", (final - goal.position).norm()}};
  if (reached) run["time_to_target_s"] = *reached;
  if (crashed) run["error"] = "crash flag raised";
  run["trajectory_logs"] = r.write_logs(log_dir, "avoidance_seed" + std::to_string(seed));
  return run;
}

json summarize_avoidance(const std::vector<json>& runs, std::uint64_t first_seed) {
  std::size_t reached = 0;
  double min_c = std::numeric_limits<double>::infinity();
  std::vector<double> times;
  for (const auto& r : runs) {
    if (r.value("goal_reached", false)) {
      ++reached;
      times.push_back(r["time_to_target_s"].get<double>());
    }
    if (r.contains("min_truth_clearance_m")) min_c = std::min(min_c, r["min_truth_clearance_m"].get<double>());
  }
  return {{"runs", runs.size()},
          {"goal_reached", reached},
          {"min_truth_clearance_m", min_c},
          {"time_to_target_s", stats_json(times)},
          {"all_blocked_stop", all_blocked_always_stops(first_seed)}};
}

// ---------------------------------------------------------------- door

json run_door(const sim::Scenario& sc, const json& p, std::uint64_t seed, const std::string& log_dir) {
  Run r(sc, seed);
  const Pose approach = pose_param(p.at("approach"));
  const double wall_x = p.at("wall_x").get<double>();
  const double gap_lo = p.at("gap")[0].get<double>();
  const double gap_hi = p.at("gap")[1].get<double>();
  const double timeout = p.value("timeout_s", 60.0);

  r.run_for(1.0);
  r.inbox.clear();
  r.h.runtime(0).on_message(goto_task(1, approach), r.h.now());
  bool at_approach = false;
  for (double t0 = r.h.now(); r.h.now() - t0 < 30.0 && !at_approach && !r.crashed();) {
    r.step();
    for (auto s : r.statuses(1)) at_approach = at_approach || s == TaskState::kReached;
  }
  protocol::Task arm;
  arm.task_id = 2;
  arm.kind = TaskKind::kArmDoorTraversal;
  r.h.runtime(0).on_message(arm, r.h.now());
  const double t0 = r.h.now();
  std::optional<TaskState> final_state;
  std::optional<double> crossing_clearance;
  double prev_x = r.h.world().uav(0).pose.position.x();
  bool crashed = false;
  while (r.h.now() - t0 < timeout) {
    r.step();
    if (r.crashed()) {
      crashed = true;
      break;
    }
    const Vec3 pos = r.h.world().uav(0).pose.position;
    if ((prev_x < wall_x) != (pos.x() < wall_x)) {
      const double c = std::min(std::abs(pos.y() - gap_lo), std::abs(pos.y() - gap_hi));
      crossing_clearance = crossing_clearance ? std::min(*crossing_clearance, c) : c;
    }
    prev_x = pos.x();
    for (auto s : r.statuses(2)) {
      if (s == TaskState::kReached || s == TaskState::kAborted) final_state = s;
    }
    if (final_state) break;
  }

  const auto& rt = r.h.runtime(0);
  std::vector<double> widths;
  json series = json::array();
  std::optional<door::DoorCandidate> frozen_first;
  double frozen_variation = 0.0;
  std::size_t frozen_samples = 0;
  for (const auto& d : rt.door_history()) {
    series.push_back({{"t", d.time}, {"phase", door::phase_name(d.phase)}, {"width", d.candidate.width},
                      {"inward_angle", d.candidate.inward_angle()}});
    if (d.phase == door::Phase::kApproaching) widths.push_back(d.candidate.width);
    if (d.phase == door::Phase::kFrozenTraversing) {
      ++frozen_samples;
      if (!frozen_first) frozen_first = d.candidate;
      frozen_variation = std::max({frozen_variation, std::abs(d.candidate.width - frozen_first->width),
                                   (d.candidate.left_edge - frozen_first->left_edge).norm(),
                                   (d.candidate.right_edge - frozen_first->right_edge).norm()});
    }
  }
  const bool phase_done = rt.door_state() && rt.door_state()->phase == door::Phase::kDone;
  const bool past_wall = r.h.world().uav(0).pose.position.x() > wall_x;
  const bool success = !crashed && final_state == TaskState::kReached && phase_done && past_wall;
  json run = {{"seed", seed},
              {"ok", !crashed},
              {"reached_approach", at_approach},
              {"success", success},
              {"approach_width_samples", widths.size()},
              {"approach_width_m", stats_json(widths)},
              {"frozen_samples", frozen_samples},
              {"frozen_variation_m", frozen_variation},
              {"estimate_series", series}};
  if (crossing_clearance) run["crossing_clearance_m"] = *crossing_clearance;
  if (success) run["traversal_time_s"] = r.h.now() - t0;
  if (crashed) run["error"] = "crash flag raised";
  run["trajectory_logs"] = r.write_logs(log_dir, "door_seed" + std::to_string(seed));
  return run;
}

json summarize_door(const std::vector<json>& runs, const json& p) {
  std::size_t successes = 0;
  std::vector<double> pooled;
  double min_crossing = std::numeric_limits<double>::infinity();
  double max_variation = 0.0;
  for (const auto& r : runs) {
    if (r.value("success", false)) ++successes;
    if (r.contains("crossing_clearance_m")) min_crossing = std::min(min_crossing, r["crossing_clearance_m"].get<double>());
    if (r.contains("frozen_variation_m")) max_variation = std::max(max_variation, r["frozen_variation_m"].get<double>());
    if (r.contains("estimate_series")) {
      for (const auto& s : r["estimate_series"]) {
        if (s["phase"] == door::phase_name(door::Phase::kApproaching)) pooled.push_back(s["width"].get<double>());
      }
    }
  }
  const double true_width = p.at("gap")[1].get<double>() - p.at("gap")[0].get<double>();
  return {{"runs", runs.size()},
          {"successes", successes},
          {"true_width_m", true_width},
          {"estimated_width_m", stats_json(pooled)},
          {"min_crossing_clearance_m", min_crossing},
          {"max_frozen_variation_m", max_variation}};
}

// ---------------------------------------------------------------- latency

json run_latency(const sim::Scenario& sc, const json& p, std::uint64_t seed, const std::string& log_dir) {
  Run r(sc, seed);
  const Pose target = pose_param(p.at("step_target"));
  const double thr = p.value("motion_threshold_mps", 0.001);
  r.run_for(1.0);
  const double issued = r.h.now();
  r.h.runtime(0).on_message(goto_task(1, target), issued);
  std::optional<double> moved;
  while (!moved && r.h.now() - issued < 5.0) {
    r.step();
    if (r.h.world().uav(0).velocity.norm() > thr) moved = r.h.now();
  }
  const auto& cmds = r.h.accepted_commands(0);
  std::optional<double> first_cmd;
  for (const auto& [t, c] : cmds) {
    if (t >= issued - 1e-12) {
      first_cmd = t;
      break;
    }
  }

  // Heartbeat round trip through a delayed in-process link on a virtual clock.
  const double rtt = sc.latencies.rtt_s;
  const int beats = p.value("heartbeats", 20);
  transport::ManualClock clock(0.0);
  auto [a, b] = transport::make_loopback_pair();
  gcs::GcsConfig cfg;
  cfg.heartbeat_period = 0.05;
  gcs::GroundStation station(cfg);
  station.add_connection(std::make_unique<transport::Channel>(
      std::make_unique<transport::DelayedConnection>(std::move(b), clock, 0.5 * rtt)));
  transport::Channel uav(std::make_unique<transport::DelayedConnection>(std::move(a), clock, 0.5 * rtt));
  runtime::UavRuntime rt(protocol::uuid_for_index(0), sim::UavModel::kMini3);
  uav.send(rt.hello());
  const double step = 1e-4;
  while (station.rtt_samples(rt.hello().uav_id).size() < static_cast<std::size_t>(beats) && clock.now() < 60.0) {
    clock.advance(step);
    station.tick(clock.now());
    for (const auto& m : uav.poll(0)) rt.on_message(m, clock.now());
    for (const auto& m : rt.take_outbox()) uav.send(m);
  }
  const auto samples = station.rtt_samples(rt.hello().uav_id);

  json run = {{"seed", seed},
              {"ok", moved.has_value() && first_cmd.has_value()},
              {"dt_s", r.h.config().dt},
              {"actuation_latency_s", sc.latencies.actuation_s},
              {"injected_rtt_s", rtt},
              {"rtt_clock_step_s", step},
              {"heartbeat_rtt_s", stats_json(samples)}};
  if (moved && first_cmd) {
    run["command_to_motion_s"] = *moved - *first_cmd;
    run["task_to_motion_s"] = *moved - issued;
  } else {
    run["error"] = "no motion observed";
  }
  if (!samples.empty()) {
    double worst = 0.0;
    for (double s : samples) worst = std::max(worst, std::abs(s - rtt));
    run["heartbeat_rtt_max_error_s"] = worst;
  }
  run["trajectory_logs"] = r.write_logs(log_dir, "latency_seed" + std::to_string(seed));
  return run;
}

json summarize_latency(const std::vector<json>& runs) {
  std::vector<double> delays, rtts;
  double worst_rtt = 0.0;
  for (const auto& r : runs) {
    if (r.contains("command_to_motion_s")) delays.push_back(r["command_to_motion_s"].get<double>());
    if (r.contains("heartbeat_rtt_s")) rtts.push_back(r["heartbeat_rtt_s"]["mean"].get<double>());
    if (r.contains("heartbeat_rtt_max_error_s")) worst_rtt = std::max(worst_rtt, r["heartbeat_rtt_max_error_s"].get<double>());
  }
  double worst_delay = 0.0;
  for (double d : delays) worst_delay = std::max(worst_delay, d);
  return {{"command_to_motion_s", stats_json(delays)},
          {"command_to_motion_max_s", worst_delay},
          {"heartbeat_rtt_s", stats_json(rtts)},
          {"heartbeat_rtt_max_error_s", worst_rtt}};
}

// ---------------------------------------------------------------- multi-UAV map

json run_multi_uav_map(const sim::Scenario& sc, const json& p, std::uint64_t seed, const std::string& log_dir) {
  if (sc.uavs.size() < 2) throw Error(ErrorCode::kParse, "multi_uav_map: scenario needs two uavs");
  Run r(sc, seed);
  gcs::GroundStation station(harness::gcs_config_for(r.scenario));
  harness::SimLandmarkOracle oracle(r.h, p.value("landmark_noise_m", 0.02), seed);
  station.set_landmark_source(&oracle);
  harness::link_all(r.h, station);
  std::vector<double> yaws = p.value("spin_yaws", std::vector<double>{1.2, 2.4, -2.8, -1.6, -0.4, 0.0});
  const double segment = p.value("segment_s", 4.0);
  const auto first = protocol::uuid_for_index(0);
  const auto second = protocol::uuid_for_index(1);

  std::optional<double> admitted_at;
  std::size_t overlap_at_admission = 0;
  auto advance = [&](double s) {
    const auto n = static_cast<int>(std::lround(s / r.h.config().dt));
    for (int k = 0; k < n; ++k) {
      r.step();
      station.tick(r.h.now());
      if (!admitted_at && station.admitted(second)) {
        admitted_at = r.h.now();
        overlap_at_admission = station.overlapping_keyframes(second);
      }
    }
  };
  advance(1.0);
  // Both vehicles turn on the spot under pilot control (local-frame tasks).
  std::uint32_t id = 1000;
  for (double yaw : yaws) {
    for (std::size_t i = 0; i < r.h.uav_count(); ++i) {
      const Pose hold = r.h.runtime(i).estimate() ? r.h.runtime(i).estimate()->pose : Pose{};
      r.h.runtime(i).on_message(goto_task(id, Pose::make(0.0, 0.0, hold.position.z(), yaw)), r.h.now());
    }
    ++id;
    advance(segment);
  }

  std::vector<Vec3> a, b;
  for (const auto& pt : station.map_points_since(0)) (pt.source == first ? a : b).push_back(pt.position);
  double nn_sum = 0.0;
  for (const auto& q : b) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& pa : a) best = std::min(best, (pa - q).norm());
    nn_sum += best;
  }
  std::size_t kf_a = 0, kf_b = 0;
  for (const auto& k : station.keyframes()) (k.source == first ? kf_a : kf_b) += 1;
  json run = {{"seed", seed},
              {"ok", !r.crashed()},
              {"second_admitted", admitted_at.has_value()},
              {"overlapping_keyframes_at_admission", overlap_at_admission},
              {"points_first", a.size()},
              {"points_second", b.size()},
              {"keyframes_first", kf_a},
              {"keyframes_second", kf_b},
              {"buffered_scans_second", station.buffered_scans(second)}};
  if (admitted_at) run["admission_time_s"] = *admitted_at;
  if (!b.empty() && !a.empty()) run["cross_source_nn_mean_m"] = nn_sum / static_cast<double>(b.size());
  if (const auto e = station.entry(second); e && e->alignment) {
    const auto truth = r.h.world().uav(1).local_frame;
    // The first UAV is admitted from its declared start, so the global frame is the world frame.
    run["alignment_error"] = {
        {"translation_m", (e->alignment->translation.head<2>() - truth.position.head<2>()).norm()},
        {"yaw_rad", std::abs(geometry::wrap_angle(e->alignment->yaw - truth.yaw))},
        {"scale", std::abs(e->alignment->scale - 1.0)}};
  }
  if (r.crashed()) run["error"] = "crash flag raised";
  run["trajectory_logs"] = r.write_logs(log_dir, "multi_uav_map_seed" + std::to_string(seed));
  return run;
}

json summarize_multi(const std::vector<json>& runs) {
  std::size_t admitted = 0;
  std::vector<double> nn;
  std::size_t min_overlap = std::numeric_limits<std::size_t>::max();
  for (const auto& r : runs) {
    if (r.value("second_admitted", false)) {
      ++admitted;
      min_overlap = std::min(min_overlap, r["overlapping_keyframes_at_admission"].get<std::size_t>());
    }
    if (r.contains("cross_source_nn_mean_m")) nn.push_back(r["cross_source_nn_mean_m"].get<double>());
  }
  json s = {{"runs", runs.size()}, {"second_admitted", admitted}, {"cross_source_nn_mean_m", stats_json(nn)}};
  if (admitted > 0) s["min_overlapping_keyframes_at_admission"] = min_overlap;
  return s;
}

}  // namespace

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"waypoint_accuracy", "avoidance", "door", "latency",
                                                 "multi_uav_map"};
  return names;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::size_t pos = 0;
  auto number = [&](const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "bad seed list '" + text + "'");
    }
    return std::stoull(s);
  };
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const std::string part = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    const auto dots = part.find("..");
    if (dots == std::string::npos) {
      out.push_back(number(part));
    } else {
      const auto lo = number(part.substr(0, dots));
      const auto hi = number(part.substr(dots + 2));
      if (hi < lo || hi - lo > 100000) throw Error(ErrorCode::kInvalidArgument, "bad seed range '" + part + "'");
      for (auto s = lo; s <= hi; ++s) out.push_back(s);
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::string run_experiment(const ExperimentRequest& req) {
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), req.name) == names.end()) {
    throw Error(ErrorCode::kInvalidArgument, "unknown experiment '" + req.name + "'");
  }
  if (req.seeds.empty()) throw Error(ErrorCode::kInvalidArgument, "no seeds given");
  const sim::Scenario sc = sim::parse_scenario(req.scenario_json);
  json params;
  try {
    params = json::parse(req.scenario_json).value("experiment", json::object());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("scenario: ") + e.what());
  }

  auto one = [&](std::uint64_t seed) -> json {
    try {
      if (req.name == "waypoint_accuracy") return run_waypoint(sc, params, seed, req.log_dir);
      if (req.name == "avoidance") return run_avoidance(sc, params, seed, req.log_dir);
      if (req.name == "door") return run_door(sc, params, seed, req.log_dir);
      if (req.name == "latency") return run_latency(sc, params, seed, req.log_dir);
      return run_multi_uav_map(sc, params, seed, req.log_dir);
    } catch (const json::exception& e) {
      return {{"seed", seed}, {"ok", false}, {"error", std::string("parameters: ") + e.what()}};
    } catch (const std::exception& e) {
      return {{"seed", seed}, {"ok", false}, {"error", e.what()}};
    }
  };

  std::vector<json> runs(req.seeds.size());
  unsigned workers = req.threads ? req.threads : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(req.seeds.size()));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < runs.size(); i = next++) runs[i] = one(req.seeds[i]);
    });
  }
  for (auto& t : pool) t.join();

  json summary;
  if (req.name == "waypoint_accuracy") summary = summarize_waypoint(runs);
  else if (req.name == "avoidance") summary = summarize_avoidance(runs, req.seeds.front());
  else if (req.name == "door") summary = summarize_door(runs, params);
  else if (req.name == "latency") summary = summarize_latency(runs);
  else summary = summarize_multi(runs);

  std::size_t failures = 0;
  for (const auto& r : runs) failures += r.value("ok", false) ? 0 : 1;
  summary["failed_runs"] = failures;
  json report = {{"experiment", req.name}, {"scenario", sc.name}, {"seeds", req.seeds},
                 {"parameters", params}, {"runs", runs}, {"summary", summary}};
  return report.dump(2);
}

}  // namespace fleetsim::experiments
