// Acceptance run: one PASS/FAIL line per primary criterion. Tolerances are
// fixed here; the exit status is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <string>

#include "../support/consistency.hpp"
#include "../support/protocol_gen.hpp"
#include "avoidance.hpp"
#include "error.hpp"
#include "estimator.hpp"
#include "experiments.hpp"
#include "gcs.hpp"
#include "geometry.hpp"
#include "harness.hpp"
#include "json.hpp"
#include "protocol.hpp"
#include "transport.hpp"

using namespace fleetsim;
using geometry::kPi;
using geometry::Pose;
using geometry::Vec3;
using nlohmann::json;

namespace {

// ---- pinned tolerances
constexpr double kWaypointHoldMeanMax = 0.07;      // m
constexpr double kWaypointWallClockMax = 30.0;     // s
constexpr double kActuationLatency = 0.496;        // s
constexpr double kInjectedRtt = 0.0045;            // s
constexpr double kRttTolerance = 1e-3;             // s
constexpr double kDMin = 0.5;                      // m
constexpr int kDoorMinSuccesses = 9;
constexpr double kDoorWidthLo = 0.9, kDoorWidthHi = 1.4;  // m
constexpr double kDoorEdgeClearanceMin = 0.3;      // m
constexpr double kNeesInBandMin = 0.8;
constexpr double kUmeyamaTol = 1e-9;
constexpr double kRansacTol = 1e-6;
constexpr std::size_t kAdmissionKeyframes = 5;
constexpr double kCrossSourceNnMax = 0.2;          // m

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string scenario(const std::string& name) { return read_file(std::string(FLEETSIM_SOURCE_DIR) + "/scenarios/" + name); }

json experiment(const std::string& name, const std::string& file, std::vector<std::uint64_t> seeds) {
  return json::parse(experiments::run_experiment({name, scenario(file), std::move(seeds), "", 0}));
}

std::vector<std::uint64_t> seeds(std::uint64_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::uint64_t i = 0; i < n; ++i) s[i] = i + 1;
  return s;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream ss;
  ss.precision(precision);
  ss << v;
  return ss.str();
}

// ---- criteria

Outcome waypoint() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = experiment("waypoint_accuracy", "waypoint.json", seeds(5));
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& s = r["summary"];
  const std::size_t visits = s["target_visits"], reached = s["reached"];
  const double mean = s["hold_error_m"]["mean"], sd = s["hold_error_m"]["std"];
  const bool pass = visits == 25 && reached == 25 && mean <= kWaypointHoldMeanMax && wall < kWaypointWallClockMax;
  return {pass, std::to_string(reached) + "/" + std::to_string(visits) + " reached, hold error " + fmt(mean) +
                    " +- " + fmt(sd) + " m, wall " + fmt(wall, 3) + " s"};
}

Outcome latency() {
  const auto r = experiment("latency", "latency.json", seeds(3));
  bool pass = r["summary"]["failed_runs"] == 0;
  double worst_delay = 0.0, worst_rtt = 0.0, delay = 0.0, rtt = 0.0;
  for (const auto& run : r["runs"]) {
    if (!run.contains("command_to_motion_s")) {
      pass = false;
      continue;
    }
    delay = run["command_to_motion_s"];
    rtt = run["heartbeat_rtt_s"]["mean"];
    const double dt = run["dt_s"];
    worst_delay = std::max(worst_delay, std::abs(delay - kActuationLatency));
    worst_rtt = std::max(worst_rtt, run["heartbeat_rtt_max_error_s"].get<double>());
    pass = pass && std::abs(delay - kActuationLatency) <= dt + 1e-9 && std::abs(run["injected_rtt_s"].get<double>() - kInjectedRtt) < 1e-12;
  }
  pass = pass && worst_rtt <= kRttTolerance;
  return {pass, "command-to-motion " + fmt(delay) + " s (max dev " + fmt(worst_delay) + "), heartbeat rtt " +
                    fmt(rtt * 1e3) + " ms (max dev " + fmt(worst_rtt * 1e3) + " ms)"};
}

Outcome avoidance_run() {
  const auto r = experiment("avoidance", "avoidance.json", seeds(10));
  const auto& s = r["summary"];
  const std::size_t reached = s["goal_reached"];
  const double clearance = s["min_truth_clearance_m"];
  const bool stops = s["all_blocked_stop"];
  return {reached == 10 && clearance >= kDMin && stops && s["failed_runs"] == 0,
          std::to_string(reached) + "/10 reached, min truth clearance " + fmt(clearance) + " m, all-blocked stop " +
              (stops ? "yes" : "no")};
}

avoidance::Grid brute_force_transform(const avoidance::Grid& f, double decay) {
  avoidance::Grid out(f.azimuth_bins, f.elevation_bins, 0.0);
  for (int el = 0; el < f.elevation_bins; ++el) {
    for (int az = 0; az < f.azimuth_bins; ++az) {
      double best = 0.0;
      for (int qe = 0; qe < f.elevation_bins; ++qe) {
        for (int qa = 0; qa < f.azimuth_bins; ++qa) {
          const int da = std::abs(az - qa);
          const int dist = std::min(da, f.azimuth_bins - da) + std::abs(el - qe);
          best = std::max(best, f.at(qa, qe) - decay * static_cast<double>(dist));
        }
      }
      out.at(az, el) = best;
    }
  }
  return out;
}

Outcome distance_transform() {
  std::mt19937_64 rng(271828);
  std::uniform_int_distribution<int> naz(1, 64), nel(1, 16);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int exact = 0, wrap_cases = 0;
  for (int trial = 0; trial < 100; ++trial) {
    avoidance::Grid f(naz(rng), nel(rng), 0.0);
    const double density = 0.3 * u(rng);
    for (double& v : f.values) v = u(rng) < density ? u(rng) * kPi / 2 : 0.0;
    if (trial % 3 == 0) {
      // Seeds on the azimuth seam so the minimum crosses the wrap.
      const int el = static_cast<int>(u(rng) * f.elevation_bins) % f.elevation_bins;
      f.at(trial % 2 ? 0 : f.azimuth_bins - 1, el) = kPi / 2;
      ++wrap_cases;
    }
    const double decay = 0.01 + u(rng) * 0.3;
    if (avoidance::distance_transform_l1(f, decay).values.values == brute_force_transform(f, decay).values) ++exact;
  }
  return {exact == 100, std::to_string(exact) + "/100 grids exact (" + std::to_string(wrap_cases) + " seam cases)"};
}

Outcome door_traversal() {
  const auto r = experiment("door", "door.json", seeds(10));
  const auto& s = r["summary"];
  const int ok = s["successes"];
  const double width = s["estimated_width_m"]["mean"], width_sd = s["estimated_width_m"]["std"];
  const double variation = s["max_frozen_variation_m"];
  double min_edge = std::numeric_limits<double>::infinity();
  bool every_success_cleared = true;
  for (const auto& run : r["runs"]) {
    if (!run.value("success", false)) continue;
    if (!run.contains("crossing_clearance_m")) {
      every_success_cleared = false;
      continue;
    }
    min_edge = std::min(min_edge, run["crossing_clearance_m"].get<double>());
  }
  const bool pass = ok >= kDoorMinSuccesses && width >= kDoorWidthLo && width <= kDoorWidthHi &&
                    every_success_cleared && min_edge >= kDoorEdgeClearanceMin && variation == 0.0;
  return {pass, std::to_string(ok) + "/10 traversals, width " + fmt(width) + " +- " + fmt(width_sd) +
                    " m (true " + fmt(s["true_width_m"].get<double>()) + "), min edge clearance " + fmt(min_edge) +
                    " m, frozen variation " + fmt(variation) + " m"};
}

bool is_spd(const estimation::StateMatrix& p) {
  if (!p.isApprox(p.transpose(), 1e-12)) return false;
  Eigen::SelfAdjointEigenSolver<estimation::StateMatrix> es(p);
  return es.eigenvalues().minCoeff() > 0.0;
}

Outcome estimator() {
  testing::ConsistencyOptions opt;
  opt.gnss = true;
  const auto r = testing::run_consistency(opt);
  const double lo = testing::chi2_quantile(0.025, 7.0 * opt.runs) / opt.runs;
  const double hi = testing::chi2_quantile(0.975, 7.0 * opt.runs) / opt.runs;
  const auto inside = std::count_if(r.anees.begin(), r.anees.end(), [&](double a) { return a >= lo && a <= hi; });
  const double frac = static_cast<double>(inside) / static_cast<double>(r.anees.size());
  int beaten = 0;
  for (std::size_t i = 0; i < r.filter_rmse.size(); ++i) beaten += r.filter_rmse[i] <= r.dead_reckoning_rmse[i];

  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  auto st = estimation::initial_state(Pose{}, 0.0);
  bool spd = true;
  for (int i = 0; i < 100000 && spd; ++i) {
    if (u(rng) < 0.4) {
      st = estimation::propagate(st, u(rng) * 0.2);
    } else {
      estimation::MeasurementEvent m;
      m.kind = static_cast<estimation::MeasurementKind>(static_cast<int>(u(rng) * 4) % 4);
      m.value = Vec3(n(rng), n(rng), n(rng)) * 0.1;
      if (m.kind == estimation::MeasurementKind::kGnssPosition) m.value += st.position();
      if (m.kind == estimation::MeasurementKind::kAltitude) m.value.x() = st.mean(2) + 0.05 * n(rng);
      if (m.kind == estimation::MeasurementKind::kYaw) m.value.x() = st.yaw() + 0.01 * n(rng);
      if (m.kind == estimation::MeasurementKind::kVelocity) m.value += st.velocity();
      m.quantization_step = u(rng) < 0.5 ? 0.0 : 0.1;
      m.timestamp = st.last_update;
      st = estimation::update(st, m).state;
    }
    if (i % 97 == 0 || i == 99999) spd = is_spd(st.covariance);
  }
  const bool pass = frac >= kNeesInBandMin && beaten == opt.runs && spd;
  return {pass, "NEES in band " + fmt(100.0 * frac, 3) + "% of steps, filter beats dead reckoning on " +
                    std::to_string(beaten) + "/" + std::to_string(opt.runs) + " runs, covariance SPD over 1e5 steps " +
                    (spd ? "yes" : "no")};
}

geometry::SimilarityTransform random_transform(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  geometry::SimilarityTransform t;
  t.scale = std::exp(u(rng) * 1.5);
  t.yaw = u(rng) * kPi;
  t.translation = Vec3(u(rng), u(rng), u(rng)) * 20.0;
  return t;
}

std::vector<Vec3> random_cloud(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng), u(rng) * 0.3);
  return pts;
}

bool close(const geometry::SimilarityTransform& a, const geometry::SimilarityTransform& b, double tol) {
  return std::abs(a.scale - b.scale) <= tol && std::abs(geometry::wrap_angle(a.yaw - b.yaw)) <= tol &&
         (a.translation - b.translation).norm() <= tol;
}

Outcome alignment() {
  std::mt19937_64 rng(99);
  int umeyama_ok = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto t = random_transform(rng);
    const auto src = random_cloud(rng, 3 + trial % 20);
    std::vector<Vec3> dst;
    for (const auto& p : src) dst.push_back(t.apply(p));
    umeyama_ok += close(geometry::umeyama_similarity(src, dst), t, kUmeyamaTol);
  }
  int ransac_ok = 0;
  std::uniform_real_distribution<double> wide(-30.0, 30.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = random_transform(rng);
    const auto pts = random_cloud(rng, 40);
    std::vector<Pose> src;
    std::vector<Vec3> dst;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      src.push_back(Pose{pts[i], 0.0});
      dst.push_back(i % 10 < 3 ? Vec3(wide(rng), wide(rng), wide(rng)) : t.apply(pts[i]));
    }
    geometry::RansacOptions opt;
    opt.seed = 5000 + trial;
    try {
      ransac_ok += close(geometry::ransac_align(src, dst, opt).transform, t, kRansacTol);
    } catch (const Error&) {
    }
  }
  int scale_ok = 0;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double s = std::exp(u(rng));
    std::vector<Pose> metric, vo;
    Vec3 p = Vec3::Zero();
    for (int i = 0; i < 15; ++i) {
      p += Vec3(u(rng), u(rng), 0.1 * u(rng));
      metric.push_back(Pose{p, 0.0});
      vo.push_back(Pose{p / s, 0.0});
    }
    const auto t = geometry::align_gnss_denied(vo, metric, Pose::make(1, 2, 0, 0.3));
    scale_ok += std::abs(t.scale - s) <= 1e-12 * s;
  }
  return {umeyama_ok == 500 && ransac_ok == 50 && scale_ok == 100,
          "umeyama " + std::to_string(umeyama_ok) + "/500, ransac with 30% outliers " + std::to_string(ransac_ok) +
              "/50, scale recovery " + std::to_string(scale_ok) + "/100"};
}

bool reconnect_resumes() {
  sim::Scenario sc;
  sc.walls = {{{-5, -5}, {5, -5}, 3}, {{5, -5}, {5, 5}, 3}, {{5, 5}, {-5, 5}, 3}, {{-5, 5}, {-5, -5}, 3}};
  sim::UavSpec spec;
  spec.start = Pose::make(-1.0, 0.0, 1.0, 0.0);
  sc.uavs.push_back(spec);
  harness::SimHarness h(sc);
  gcs::GroundStation g(harness::gcs_config_for(sc));
  harness::link_all(h, g);
  auto run = [&](double s) {
    for (int k = 0; k < static_cast<int>(std::lround(s / h.config().dt)); ++k) {
      h.step();
      g.tick(h.now());
    }
  };
  const auto id = protocol::uuid_for_index(0);
  auto wp = [](double x, double y) {
    gcs::Waypoint w;
    w.pose = Pose::make(x, y, 1.0, 0.0);
    return w;
  };
  run(1.0);
  g.set_mission(id, {wp(-0.5, 0.0), wp(-0.5, 0.6), wp(0.0, 0.6)});
  if (!g.start_mission(id)) return false;
  for (int k = 0; k < 600 && g.entry(id)->mission->index < 1; ++k) run(0.1);
  if (g.entry(id)->mission->index != 1) return false;
  h.detach(0);
  run(0.5);
  const auto paused = g.entry(id);
  if (paused->online || paused->mission->state != gcs::MissionState::kPaused || paused->mission->index != 1) return false;
  auto [x, y] = transport::make_loopback_pair();
  g.add_connection(std::make_unique<transport::Channel>(std::move(y)));
  h.attach(0, std::make_unique<transport::Channel>(std::move(x)));
  run(0.2);
  const auto resumed = g.entry(id);
  if (!resumed->online || resumed->mission->state != gcs::MissionState::kExecuting || resumed->mission->index != 1) {
    return false;
  }
  for (int k = 0; k < 80 && g.entry(id)->mission->state == gcs::MissionState::kExecuting; ++k) run(0.5);
  return g.entry(id)->mission->state == gcs::MissionState::kCompleted;
}

Outcome protocol_criterion() {
  using namespace protocol;
  int roundtrip_ok = 0;
  for (auto type : testing::kAllTypes) {
    testing::Rng rng(0xACCE97 + static_cast<int>(type));
    bool ok = true;
    for (int i = 0; i < 10000 && ok; ++i) {
      const Message m = testing::random_message(type, rng);
      const auto bytes = encode(m);
      const auto back = decode_all(bytes);
      ok = back.size() == 1 && back[0] == m && encode(back[0]) == bytes;
    }
    roundtrip_ok += ok;
  }

  const std::string doc = read_file(std::string(FLEETSIM_SOURCE_DIR) + "/PROTOCOL.md");
  const std::regex row(R"(\|\s*`([a-z_0-9]+)`\s*\|\s*`(\{.*\})`\s*\|\s*`([0-9A-F ]+)`\s*\|)");
  int vectors = 0, golden_ok = 0;
  std::set<MessageType> covered;
  for (std::sregex_iterator it(doc.begin(), doc.end(), row), end; it != end; ++it) {
    ++vectors;
    const Message m = from_json((*it)[2]);
    const auto expected = from_hex((*it)[3]);
    const auto back = decode_all(expected);
    if (encode(m) == expected && back.size() == 1 && back[0] == m) ++golden_ok;
    covered.insert(type_of(m));
  }

  testing::Rng rng(31337);
  int resync_ok = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<Message> sent;
    for (int i = 0; i < 12; ++i) sent.push_back(testing::random_message(testing::kAllTypes[rng() % 8], rng));
    const std::size_t k = rng() % (sent.size() + 1);
    std::vector<std::uint8_t> stream;
    for (std::size_t i = 0; i <= sent.size(); ++i) {
      if (i == k) {
        for (std::size_t g = 0, n = 1 + rng() % 64; g < n; ++g) {
          const bool magic = trial % 2 == 0 && rng() % 4 == 0;
          stream.push_back(magic ? ((rng() & 1) ? kMagic0 : kMagic1) : static_cast<std::uint8_t>(rng()));
        }
      }
      if (i < sent.size()) {
        const auto f = encode(sent[i]);
        stream.insert(stream.end(), f.begin(), f.end());
      }
    }
    Decoder d;
    std::vector<Message> got;
    for (std::size_t pos = 0; pos < stream.size();) {
      const std::size_t n = std::min<std::size_t>(1 + rng() % 50, stream.size() - pos);
      d.feed(std::span(stream.data() + pos, n));
      pos += n;
      while (auto m = d.next()) got.push_back(*m);
    }
    std::vector<Message> lossy;
    for (std::size_t i = 0; i < sent.size(); ++i) {
      if (i != k) lossy.push_back(sent[i]);
    }
    resync_ok += got == sent || got == lossy;
  }
  const bool resumed = reconnect_resumes();
  const bool pass = roundtrip_ok == 8 && vectors >= 8 && golden_ok == vectors && covered.size() == 8 &&
                    resync_ok == 2000 && resumed;
  return {pass, "round trip " + std::to_string(roundtrip_ok) + "/8 types x 1e4, golden " + std::to_string(golden_ok) +
                    "/" + std::to_string(vectors) + ", resync " + std::to_string(resync_ok) +
                    "/2000, reconnect resumes at same index " + (resumed ? "yes" : "no")};
}

Outcome multi_uav() {
  const auto r = experiment("multi_uav_map", "multi_uav.json", seeds(5));
  std::size_t admitted = 0, min_overlap = std::numeric_limits<std::size_t>::max();
  double worst_nn = 0.0;
  bool every_nn = true;
  for (const auto& run : r["runs"]) {
    if (!run.value("second_admitted", false)) continue;
    ++admitted;
    min_overlap = std::min(min_overlap, run["overlapping_keyframes_at_admission"].get<std::size_t>());
    if (!run.contains("cross_source_nn_mean_m")) {
      every_nn = false;
      continue;
    }
    worst_nn = std::max(worst_nn, run["cross_source_nn_mean_m"].get<double>());
  }
  const bool pass = admitted == 5 && min_overlap >= kAdmissionKeyframes && every_nn && worst_nn < kCrossSourceNnMax;
  return {pass, std::to_string(admitted) + "/5 second uav admitted, min overlapping keyframes " +
                    (admitted ? std::to_string(min_overlap) : "-") + ", worst cross-source NN mean " + fmt(worst_nn) +
                    " m"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"waypoint-accuracy", waypoint},       {"latency", latency},
      {"obstacle-avoidance", avoidance_run}, {"distance-transform-oracle", distance_transform},
      {"door-traversal", door_traversal},              {"estimator", estimator},
      {"alignment", alignment},              {"protocol", protocol_criterion},
      {"multi-uav-map", multi_uav}};
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return failures;
}
