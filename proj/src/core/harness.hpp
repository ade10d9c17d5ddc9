#pragma once

#include <memory>
#include <random>
#include <vector>

#include "gcs.hpp"
#include "runtime.hpp"
#include "sim_world.hpp"
#include "transport.hpp"

namespace fleetsim::harness {

struct HarnessConfig {
  double dt = 0.02;
  double scan_period = 0.1;
  sim::SimConfig sim;
  runtime::RuntimeConfig runtime;
};

/// One truth/estimate sample for trajectory logs.
struct TrajectorySample {
  double t = 0.0;
  geometry::Pose estimate;
  geometry::Pose truth_local;
  int mode = 0;
  double clearance = 0.0;
};

/// Sim world plus one runtime per UAV, stepped in virtual time. Runtimes can
/// be linked to a ground station through protocol channels.
class SimHarness {
 public:
  SimHarness(sim::Scenario scenario, HarnessConfig config = {});

  /// Advances one dt: physics, sensors, runtimes, vehicle commands, links.
  void step();
  void run_for(double seconds);

  double now() const { return world_.clock(); }
  sim::World& world() { return world_; }
  const sim::World& world() const { return world_; }
  runtime::UavRuntime& runtime(std::size_t i) { return *runtimes_.at(i); }
  const runtime::UavRuntime& runtime(std::size_t i) const { return *runtimes_.at(i); }
  /// Fleet index of a UAV id, if it belongs to this harness.
  std::optional<std::size_t> index_of(const protocol::Uuid& id) const;
  std::size_t uav_count() const { return runtimes_.size(); }
  const HarnessConfig& config() const { return config_; }

  /// Routes runtime i's outbox into `channel` and its inbound messages back.
  /// Sends Hello immediately.
  void attach(std::size_t i, std::unique_ptr<transport::Channel> channel);
  void detach(std::size_t i);
  bool attached(std::size_t i) const { return links_.at(i) != nullptr; }

  /// Runtime output produced while no link was attached.
  std::vector<protocol::Message> take_messages(std::size_t i);

  /// Truth pose of UAV i expressed in its local frame.
  geometry::Pose truth_local(std::size_t i) const;
  TrajectorySample sample(std::size_t i) const;

  /// Commands that reached the vehicle, per UAV (for latency checks).
  const std::vector<std::pair<double, sim::VelocityCommand>>& accepted_commands(std::size_t i) const {
    return accepted_.at(i);
  }

 private:
  sim::World world_;
  HarnessConfig config_;
  std::vector<std::unique_ptr<runtime::UavRuntime>> runtimes_;
  std::vector<std::unique_ptr<transport::Channel>> links_;
  std::vector<std::vector<protocol::Message>> unlinked_;
  std::vector<std::vector<std::pair<double, sim::VelocityCommand>>> accepted_;
  std::uint64_t steps_ = 0;
  int scan_every_ = 5;
};

/// Landmark correspondences for map admission: the truth landmark relative
/// to the UAV body, re-expressed through the runtime's estimated pose, plus
/// Gaussian noise.
class SimLandmarkOracle final : public gcs::LandmarkSource {
 public:
  SimLandmarkOracle(const SimHarness& harness, double noise_sigma, std::uint64_t seed);
  std::vector<gcs::LandmarkObservation> observe(const protocol::Uuid& uav) override;

 private:
  const SimHarness& harness_;
  double sigma_;
  std::mt19937_64 rng_;
};

/// Ground-station settings for a scenario: map bounds inflated by the sensor
/// range and the declared start poses.
gcs::GcsConfig gcs_config_for(const sim::Scenario& scenario, const sim::SimConfig& sim = {});

/// Links every runtime to the ground station over in-process connections.
void link_all(SimHarness& harness, gcs::GroundStation& station);

std::string trajectory_csv(const std::vector<TrajectorySample>& samples);

}  // namespace fleetsim::harness
