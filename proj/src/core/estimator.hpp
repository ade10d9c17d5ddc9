#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "geometry.hpp"

namespace fleetsim::estimation {

using geometry::Pose;
using geometry::Vec3;

inline constexpr int kStateDim = 7;  // position(3), velocity(3), yaw
using StateVector = Eigen::Matrix<double, kStateDim, 1>;
using StateMatrix = Eigen::Matrix<double, kStateDim, kStateDim>;

enum class MeasurementKind : std::uint8_t { kVelocity = 0, kYaw = 1, kAltitude = 2, kGnssPosition = 3 };
inline constexpr int kMeasurementKinds = 4;

/// Scalar kinds (yaw, altitude) use value.x().
struct MeasurementEvent {
  MeasurementKind kind = MeasurementKind::kVelocity;
  Vec3 value = Vec3::Zero();
  double quantization_step = 0.0;
  double timestamp = 0.0;
};

struct FilterConfig {
  double sigma_accel = 0.8;      // m/s^2, white acceleration
  double sigma_yaw_rate = 0.3;   // rad/s
  double velocity_floor = 0.02;  // m/s std
  double yaw_floor = 0.1 * geometry::kPi / 180.0;
  double altitude_floor = 0.05;
  double gnss_floor = 0.1;
  double initial_position_sigma = 0.01;
  double initial_velocity_sigma = 0.1;
  double initial_yaw_sigma = 1.0 * geometry::kPi / 180.0;
};

struct FilterState {
  StateVector mean = StateVector::Zero();
  StateMatrix covariance = StateMatrix::Identity();
  double last_update = 0.0;

  Vec3 position() const { return mean.head<3>(); }
  Vec3 velocity() const { return mean.segment<3>(3); }
  double yaw() const { return mean(6); }
  Pose pose() const { return Pose{position(), yaw()}; }
};

FilterState initial_state(const Pose& start, double timestamp, const FilterConfig& cfg = {});

/// Constant-velocity prediction with white-acceleration process noise.
FilterState propagate(const FilterState& s, double dt, const FilterConfig& cfg = {});

/// Variance of a quantized reading: step^2/12 from uniform rounding error plus the kind's floor.
double measurement_variance(MeasurementKind kind, double step, const FilterConfig& cfg = {});

/// Chi-square 0.999 quantile for the measurement dimension.
double gate_threshold(int dof);

struct UpdateResult {
  FilterState state;
  bool accepted = true;
  double mahalanobis_sq = 0.0;
};

/// EKF update at the state's current time. A gated-out measurement returns the
/// input state with accepted = false. Requires m.timestamp >= s.last_update.
UpdateResult update(const FilterState& s, const MeasurementEvent& m, const FilterConfig& cfg = {});

struct Estimate {
  Pose pose;
  Vec3 velocity = Vec3::Zero();
  double timestamp = 0.0;
};

/// Extrapolates the mean to time t without touching the stored state.
Estimate estimate_at(const FilterState& s, double t);

/// Re-emits the latest value of every kind at a fixed rate (hold-last). Ticks
/// sit on the grid k / rate; a kind is silent until its first event.
class RateAdapter {
 public:
  explicit RateAdapter(double rate_hz);

  void push(const MeasurementEvent& e);
  /// Emissions for all ticks with time < until, in tick order.
  std::vector<MeasurementEvent> drain(double until);
  double rate() const { return rate_; }

 private:
  double rate_;
  std::optional<std::int64_t> next_tick_;
  std::array<std::deque<MeasurementEvent>, kMeasurementKinds> queued_;
  std::array<std::optional<MeasurementEvent>, kMeasurementKinds> current_;
};

std::vector<MeasurementEvent> rate_adapt(std::span<const MeasurementEvent> events, double rate_hz,
                                         double start, double end);

/// Per-UAV filter: propagates to each event's time, then updates.
class CvFilter {
 public:
  explicit CvFilter(const Pose& start, double timestamp, FilterConfig cfg = {});

  /// Returns false when the event is stale or gated out.
  bool process(const MeasurementEvent& e);
  Estimate estimate_at(double t) const { return estimation::estimate_at(state_, t); }
  const FilterState& state() const { return state_; }
  const FilterConfig& config() const { return cfg_; }
  std::uint64_t rejected() const { return rejected_; }

 private:
  FilterState state_;
  FilterConfig cfg_;
  std::uint64_t rejected_ = 0;
};

}  // namespace fleetsim::estimation
