#include "estimator.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace fleetsim::estimation {

using geometry::wrap_angle;

namespace {

void symmetrize(StateMatrix& p) { p = 0.5 * (p + p.transpose()).eval(); }

int dimension(MeasurementKind k) {
  return (k == MeasurementKind::kVelocity || k == MeasurementKind::kGnssPosition) ? 3 : 1;
}

}  // namespace

FilterState initial_state(const Pose& start, double timestamp, const FilterConfig& cfg) {
  FilterState s;
  s.mean.head<3>() = start.position;
  s.mean(6) = wrap_angle(start.yaw);
  s.covariance.setZero();
  for (int i = 0; i < 3; ++i) {
    s.covariance(i, i) = cfg.initial_position_sigma * cfg.initial_position_sigma;
    s.covariance(3 + i, 3 + i) = cfg.initial_velocity_sigma * cfg.initial_velocity_sigma;
  }
  s.covariance(6, 6) = cfg.initial_yaw_sigma * cfg.initial_yaw_sigma;
  s.last_update = timestamp;
  return s;
}

FilterState propagate(const FilterState& s, double dt, const FilterConfig& cfg) {
  if (dt < 0.0) throw Error(ErrorCode::kInvalidArgument, "propagate: negative dt");
  if (dt == 0.0) return s;
  FilterState out = s;
  out.mean.head<3>() += dt * s.mean.segment<3>(3);

  StateMatrix f = StateMatrix::Identity();
  f.block<3, 3>(0, 3) = dt * Eigen::Matrix3d::Identity();

  const double qa = cfg.sigma_accel * cfg.sigma_accel;
  StateMatrix q = StateMatrix::Zero();
  for (int i = 0; i < 3; ++i) {
    q(i, i) = qa * dt * dt * dt / 3.0;
    q(i, 3 + i) = q(3 + i, i) = qa * dt * dt / 2.0;
    q(3 + i, 3 + i) = qa * dt;
  }
  q(6, 6) = cfg.sigma_yaw_rate * cfg.sigma_yaw_rate * dt;

  out.covariance = f * s.covariance * f.transpose() + q;
  symmetrize(out.covariance);
  out.last_update = s.last_update + dt;
  return out;
}

double measurement_variance(MeasurementKind kind, double step, const FilterConfig& cfg) {
  double floor = 0.0;
  switch (kind) {
    case MeasurementKind::kVelocity: floor = cfg.velocity_floor; break;
    case MeasurementKind::kYaw: floor = cfg.yaw_floor; break;
    case MeasurementKind::kAltitude: floor = cfg.altitude_floor; break;
    case MeasurementKind::kGnssPosition: floor = cfg.gnss_floor; break;
  }
  return step * step / 12.0 + floor * floor;
}

double gate_threshold(int dof) {
  switch (dof) {
    case 1: return 10.827566;
    case 2: return 13.815511;
    case 3: return 16.266236;
    default: throw Error(ErrorCode::kInvalidArgument, "gate_threshold: unsupported dof");
  }
}

UpdateResult update(const FilterState& s, const MeasurementEvent& m, const FilterConfig& cfg) {
  if (m.timestamp + 1e-9 < s.last_update) {
    throw Error(ErrorCode::kInvalidArgument, "update: measurement older than state");
  }
  const int dim = dimension(m.kind);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, kStateDim);
  Eigen::VectorXd innovation(dim);
  switch (m.kind) {
    case MeasurementKind::kVelocity:
      h.block<3, 3>(0, 3).setIdentity();
      innovation = m.value - s.velocity();
      break;
    case MeasurementKind::kGnssPosition:
      h.block<3, 3>(0, 0).setIdentity();
      innovation = m.value - s.position();
      break;
    case MeasurementKind::kYaw:
      h(0, 6) = 1.0;
      innovation(0) = wrap_angle(m.value.x() - s.yaw());
      break;
    case MeasurementKind::kAltitude:
      h(0, 2) = 1.0;
      innovation(0) = m.value.x() - s.mean(2);
      break;
  }
  const double r_var = measurement_variance(m.kind, m.quantization_step, cfg);
  const Eigen::MatrixXd r = r_var * Eigen::MatrixXd::Identity(dim, dim);
  const Eigen::MatrixXd ph = s.covariance * h.transpose();
  Eigen::MatrixXd sm = h * ph + r;
  sm = 0.5 * (sm + sm.transpose()).eval();
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(sm);
  const double d2 = innovation.dot(ldlt.solve(innovation));

  UpdateResult res;
  res.mahalanobis_sq = d2;
  if (!(d2 <= gate_threshold(dim))) {
    res.state = s;
    res.accepted = false;
    return res;
  }
  const Eigen::MatrixXd k = ldlt.solve(ph.transpose()).transpose();
  FilterState out = s;
  out.mean += k * innovation;
  out.mean(6) = wrap_angle(out.mean(6));
  const StateMatrix ikh = StateMatrix::Identity() - k * h;
  // Joseph form keeps the covariance positive definite.
  out.covariance = ikh * s.covariance * ikh.transpose() + k * r * k.transpose();
  symmetrize(out.covariance);
  res.state = out;
  return res;
}

Estimate estimate_at(const FilterState& s, double t) {
  const double dt = std::max(0.0, t - s.last_update);
  Estimate e;
  e.pose.position = s.position() + dt * s.velocity();
  e.pose.yaw = s.yaw();
  e.velocity = s.velocity();
  e.timestamp = t;
  return e;
}

RateAdapter::RateAdapter(double rate_hz) : rate_(rate_hz) {
  if (!(rate_hz >= 10.0 && rate_hz <= 100.0)) {
    throw Error(ErrorCode::kInvalidArgument, "RateAdapter: rate must be in [10, 100] Hz");
  }
}

void RateAdapter::push(const MeasurementEvent& e) {
  auto& q = queued_[static_cast<int>(e.kind)];
  auto it = std::upper_bound(q.begin(), q.end(), e.timestamp,
                             [](double t, const MeasurementEvent& x) { return t < x.timestamp; });
  q.insert(it, e);
  // The tick grid starts at the first event; later events never rewind it.
  if (!next_tick_) next_tick_ = static_cast<std::int64_t>(std::ceil(e.timestamp * rate_ - 1e-9));
}

std::vector<MeasurementEvent> RateAdapter::drain(double until) {
  std::vector<MeasurementEvent> out;
  if (!next_tick_) return out;
  while (static_cast<double>(*next_tick_) < until * rate_ - 1e-9) {
    const double t = static_cast<double>(*next_tick_) / rate_;
    for (int k = 0; k < kMeasurementKinds; ++k) {
      auto& q = queued_[k];
      while (!q.empty() && q.front().timestamp <= t + 1e-12) {
        current_[k] = q.front();
        q.pop_front();
      }
      if (current_[k]) {
        MeasurementEvent e = *current_[k];
        e.timestamp = t;
        out.push_back(e);
      }
    }
    ++*next_tick_;
  }
  return out;
}

std::vector<MeasurementEvent> rate_adapt(std::span<const MeasurementEvent> events, double rate_hz,
                                         double start, double end) {
  RateAdapter adapter(rate_hz);
  for (const auto& e : events) adapter.push(e);
  auto all = adapter.drain(end);
  std::erase_if(all, [&](const MeasurementEvent& e) { return e.timestamp < start - 1e-12; });
  return all;
}

CvFilter::CvFilter(const Pose& start, double timestamp, FilterConfig cfg)
    : state_(initial_state(start, timestamp, cfg)), cfg_(cfg) {}

bool CvFilter::process(const MeasurementEvent& e) {
  if (e.timestamp + 1e-9 < state_.last_update) {
    ++rejected_;
    return false;
  }
  state_ = propagate(state_, std::max(0.0, e.timestamp - state_.last_update), cfg_);
  const UpdateResult r = update(state_, e, cfg_);
  if (!r.accepted) {
    ++rejected_;
    return false;
  }
  state_ = r.state;
  return true;
}

}  // namespace fleetsim::estimation
