#include "harness.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "error.hpp"

namespace fleetsim::harness {

namespace {

sim::World make_world(sim::Scenario s, const sim::SimConfig& c) { return sim::World(std::move(s), c); }

}  // namespace

SimHarness::SimHarness(sim::Scenario scenario, HarnessConfig config)
    : world_(make_world(std::move(scenario), config.sim)), config_(std::move(config)) {
  if (!(config_.dt > 0.0) || config_.dt > 0.1) throw Error(ErrorCode::kInvalidArgument, "harness: dt in (0, 0.1]");
  scan_every_ = std::max(1, static_cast<int>(std::lround(config_.scan_period / config_.dt)));
  const auto& sc = world_.scenario();
  for (std::size_t i = 0; i < world_.uav_count(); ++i) {
    runtime::RuntimeConfig rc = config_.runtime;
    rc.telemetry_latency = sc.latencies.telemetry_s;
    rc.controller.actuation_latency = sc.latencies.actuation_s;
    rc.controller.time_constant = config_.sim.velocity_time_constant;
    if (sc.uavs[i].gnss) rc.gnss_home = world_.uav(i).local_frame;
    runtimes_.push_back(std::make_unique<runtime::UavRuntime>(protocol::uuid_for_index(static_cast<std::uint32_t>(i)),
                                                               sc.uavs[i].model, rc));
  }
  links_.resize(runtimes_.size());
  unlinked_.resize(runtimes_.size());
  accepted_.resize(runtimes_.size());
}

void SimHarness::attach(std::size_t i, std::unique_ptr<transport::Channel> channel) {
  links_.at(i) = std::move(channel);
  unlinked_[i].clear();  // nothing queued while offline reaches the ground
  links_[i]->send(runtimes_[i]->hello());
}

void SimHarness::detach(std::size_t i) {
  if (links_.at(i)) links_[i]->close();
  links_[i].reset();
}

void SimHarness::step() {
  world_.step(config_.dt);
  ++steps_;
  const double t = world_.clock();
  const bool scan_now = steps_ % static_cast<std::uint64_t>(scan_every_) == 0;
  for (std::size_t i = 0; i < runtimes_.size(); ++i) {
    auto& rt = *runtimes_[i];
    if (world_.uav(i).crashed) continue;
    if (auto tel = world_.sample_telemetry(i)) rt.on_vehicle_telemetry(*tel);
    if (scan_now) rt.on_vehicle_scan(world_.sample_range_scan(i));
    if (links_[i]) {
      if (!links_[i]->is_open()) {
        links_[i].reset();
      } else {
        for (const auto& m : links_[i]->poll()) rt.on_message(m, t);
      }
    }
    const auto out = rt.tick(t);
    switch (out.kind) {
      case control::ControlOutput::Kind::kVelocity: {
        sim::VelocityCommand c = out.command;
        c.timestamp = t;
        if (world_.apply_virtual_stick(i, c) == sim::Admission::kAccepted) accepted_[i].emplace_back(t, c);
        break;
      }
      case control::ControlOutput::Kind::kHold: world_.request_position_hold(i, t); break;
      case control::ControlOutput::Kind::kRelease: world_.release_control(i, t); break;
      case control::ControlOutput::Kind::kNone: break;
    }
    auto outbox = rt.take_outbox();
    if (!links_[i]) {
      unlinked_[i].insert(unlinked_[i].end(), outbox.begin(), outbox.end());
      // Keep memory bounded when nobody collects.
      if (unlinked_[i].size() > 100000) unlinked_[i].erase(unlinked_[i].begin(), unlinked_[i].begin() + 50000);
    } else {
      try {
        for (const auto& m : outbox) links_[i]->send(m);
      } catch (const Error&) {
        links_[i].reset();
      }
    }
  }
}

std::vector<protocol::Message> SimHarness::take_messages(std::size_t i) {
  std::vector<protocol::Message> out;
  out.swap(unlinked_.at(i));
  return out;
}

void SimHarness::run_for(double seconds) {
  const auto n = static_cast<std::int64_t>(std::llround(seconds / config_.dt));
  for (std::int64_t k = 0; k < n; ++k) step();
}

geometry::Pose SimHarness::truth_local(std::size_t i) const {
  const auto& u = world_.uav(i);
  return geometry::compose(geometry::inverse(u.local_frame), u.pose);
}

TrajectorySample SimHarness::sample(std::size_t i) const {
  TrajectorySample s;
  s.t = world_.clock();
  if (const auto e = runtimes_.at(i)->estimate_at(s.t)) s.estimate = e->pose;
  s.truth_local = truth_local(i);
  s.mode = static_cast<int>(runtimes_[i]->controller().mode());
  s.clearance = world_.truth_clearance(i);
  return s;
}

std::optional<std::size_t> SimHarness::index_of(const protocol::Uuid& id) const {
  for (std::size_t i = 0; i < runtimes_.size(); ++i) {
    if (runtimes_[i]->hello().uav_id == id) return i;
  }
  return std::nullopt;
}

SimLandmarkOracle::SimLandmarkOracle(const SimHarness& harness, double noise_sigma, std::uint64_t seed)
    : harness_(harness), sigma_(noise_sigma), rng_(seed) {}

std::vector<gcs::LandmarkObservation> SimLandmarkOracle::observe(const protocol::Uuid& uav) {
  std::vector<gcs::LandmarkObservation> out;
  const auto i = harness_.index_of(uav);
  if (!i) return out;
  const auto est = harness_.runtime(*i).estimate_at(harness_.now());
  if (!est) return out;
  const auto& u = harness_.world().uav(*i);
  // The estimate trails the vehicle by the telemetry delay; only steady
  // moments give consistent correspondences.
  if (u.velocity.norm() > 0.05 || std::abs(u.yaw_rate) > 0.05) return out;
  const auto& truth = u.pose;
  std::normal_distribution<double> noise(0.0, sigma_);
  for (const auto& lm : harness_.world().visible_landmarks(*i)) {
    const geometry::Vec3 body = geometry::rotate_yaw(lm.position - truth.position, -truth.yaw);
    geometry::Vec3 local = geometry::transform_point(est->pose, body);
    if (sigma_ > 0.0) local += geometry::Vec3(noise(rng_), noise(rng_), noise(rng_));
    out.push_back({lm.id, local});
  }
  return out;
}

gcs::GcsConfig gcs_config_for(const sim::Scenario& scenario, const sim::SimConfig& sim) {
  gcs::GcsConfig c;
  auto [lo, hi] = scenario.bounds();
  const geometry::Vec2 pad(sim.max_range, sim.max_range);
  c.map_bounds = std::make_pair(geometry::Vec2(lo - pad), geometry::Vec2(hi + pad));
  for (std::size_t i = 0; i < scenario.uavs.size(); ++i) {
    c.declared_starts[protocol::uuid_for_index(static_cast<std::uint32_t>(i))] = scenario.uavs[i].start;
  }
  return c;
}

void link_all(SimHarness& harness, gcs::GroundStation& station) {
  for (std::size_t i = 0; i < harness.uav_count(); ++i) {
    auto [a, b] = transport::make_loopback_pair();
    station.add_connection(std::make_unique<transport::Channel>(std::move(b)));
    harness.attach(i, std::make_unique<transport::Channel>(std::move(a)));
  }
}

std::string trajectory_csv(const std::vector<TrajectorySample>& samples) {
  std::ostringstream os;
  os << "t,x,y,z,yaw,truth_x,truth_y,truth_z,truth_yaw,mode,clearance\n";
  char line[256];
  for (const auto& s : samples) {
    std::snprintf(line, sizeof line, "%.3f,%.5f,%.5f,%.5f,%.5f,%.5f,%.5f,%.5f,%.5f,%d,%.4f\n", s.t,
                  s.estimate.position.x(), s.estimate.position.y(), s.estimate.position.z(), s.estimate.yaw,
                  s.truth_local.position.x(), s.truth_local.position.y(), s.truth_local.position.z(),
                  s.truth_local.yaw, s.mode, std::isfinite(s.clearance) ? s.clearance : -1.0);
    os << line;
  }
  return os.str();
}

}  // namespace fleetsim::harness
