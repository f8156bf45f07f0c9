#include "peg/sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/Geometry>

namespace peg {

namespace {

constexpr double kDegToRad = M_PI / 180.0;

Eigen::Vector3d peg_axis(const Vector6d& pose) {
  const Eigen::Matrix3d rot =
      (Eigen::AngleAxisd(pose[kRz] * kDegToRad, Eigen::Vector3d::UnitZ()) *
       Eigen::AngleAxisd(pose[kRy] * kDegToRad, Eigen::Vector3d::UnitY()) *
       Eigen::AngleAxisd(pose[kRx] * kDegToRad, Eigen::Vector3d::UnitX()))
          .toRotationMatrix();
  return rot * Eigen::Vector3d::UnitZ();
}

struct ContactPoint {
  Eigen::Vector3d point;   // world
  Eigen::Vector3d normal;  // unit, pointing into the peg's free side
  double magnitude;        // N
};

Eigen::Vector2d radial_unit(const Eigen::Vector2d& v) {
  const double n = v.norm();
  return n > 0.0 ? Eigen::Vector2d(v / n) : Eigen::Vector2d(1.0, 0.0);
}

double uniform_symmetric(double range, Rng& rng) {
  if (range <= 0.0) return 0.0;
  return std::uniform_real_distribution<double>(-range, range)(rng);
}

}  // namespace

void HoleGeom::validate() const {
  if (!(hole_radius > 0.0)) throw std::invalid_argument("hole_radius must be > 0");
  if (!(clearance > 0.0 && clearance < hole_radius))
    throw std::invalid_argument("clearance must lie in (0, hole_radius)");
  if (!(hole_depth > 0.0)) throw std::invalid_argument("hole_depth must be > 0");
  if (!(chamfer >= 0.0 && chamfer < hole_depth))
    throw std::invalid_argument("chamfer must lie in [0, hole_depth)");
  if (!(wall_stiffness > 0.0)) throw std::invalid_argument("wall_stiffness must be > 0");
  if (!(friction_coeff >= 0.0)) throw std::invalid_argument("friction_coeff must be >= 0");
}

void SimConfig::validate() const {
  if (!(tick_hz > 0.0)) throw std::invalid_argument("tick_hz must be > 0");
  if (max_ticks <= 0) throw std::invalid_argument("max_ticks must be > 0");
  if (substeps <= 0) throw std::invalid_argument("substeps must be > 0");
  if ((impedance_stiffness.array() <= 0.0).any())
    throw std::invalid_argument("impedance_stiffness must be componentwise > 0");
  if ((impedance_damping.array() <= 0.0).any())
    throw std::invalid_argument("impedance_damping must be componentwise > 0");
  if (!(force_limit > 0.0) || !(moment_limit > 0.0))
    throw std::invalid_argument("force and moment limits must be > 0");
  if (!(start_offset_range >= 0.0) || !(start_tilt_range >= 0.0))
    throw std::invalid_argument("start ranges must be >= 0");
  if (!(sensor_noise >= 0.0)) throw std::invalid_argument("sensor_noise must be >= 0");
}

Vector6d Wrench::vector() const {
  Vector6d v;
  v << force, moment;
  return v;
}

Wrench Wrench::from_vector(const Vector6d& v) {
  Wrench w;
  w.force = v.head<3>();
  w.moment = v.tail<3>();
  return w;
}

bool Wrench::all_finite() const { return force.allFinite() && moment.allFinite(); }

std::string EpisodeStatus::name() const {
  if (is_running()) return "running";
  if (is_success()) return "success";
  return "timeout";
}

bool operator==(const EpisodeStatus& a, const EpisodeStatus& b) {
  if (a.value_.index() != b.value_.index()) return false;
  if (a.is_success()) return a.success_ticks() == b.success_ticks();
  return true;
}

double insertion_depth(const Vector6d& pose, const HoleGeom& geom) {
  return std::clamp(-pose[kZ], 0.0, geom.hole_depth);
}

PegState reset(const SimConfig& config, const HoleGeom& geom, std::uint64_t seed) {
  config.validate();
  geom.validate();
  if (config.start_offset_range > geom.hole_radius)
    throw std::invalid_argument("start_offset_range exceeds hole_radius");
  // The tip rim has to land on the chamfer, otherwise it sits on the top face.
  if (std::sqrt(2.0) * config.start_offset_range >= geom.clearance + geom.chamfer)
    throw std::invalid_argument("start_offset_range does not fit inside the entry chamfer");

  Rng rng(seed);
  PegState s;
  s.pose[kX] = uniform_symmetric(config.start_offset_range, rng);
  s.pose[kY] = uniform_symmetric(config.start_offset_range, rng);
  s.pose[kZ] = config.start_height;
  s.pose[kRx] = uniform_symmetric(config.start_tilt_range, rng);
  s.pose[kRy] = uniform_symmetric(config.start_tilt_range, rng);
  s.pose[kRz] = 0.0;
  s.reference = s.pose;
  s.depth = insertion_depth(s.pose, geom);
  const ContactResult c = contact_wrench(s.pose, geom);
  s.contact_points = c.contact_points;
  s.in_contact = c.contact_points > 0;
  return s;
}

ContactResult contact_wrench(const Vector6d& pose, const HoleGeom& geom, const Wrench& drive) {
  const double peg_r = geom.peg_radius();
  const double k = geom.wall_stiffness;
  const Eigen::Vector3d tip = pose.head<3>();

  std::array<ContactPoint, 2> contacts{};
  int n = 0;
  double max_lateral = 0.0;

  // Tip rim against the chamfer cone or the bore wall. Small-angle model: the
  // rim and the peg cross-section are treated as circles of radius peg_r.
  if (tip.z() < 0.0) {
    const Eigen::Vector2d c = tip.head<2>();
    const Eigen::Vector2d dir = radial_unit(c);
    const Eigen::Vector3d point(c.x() + peg_r * dir.x(), c.y() + peg_r * dir.y(), tip.z());
    if (tip.z() <= -geom.chamfer) {
      const double pen = c.norm() + peg_r - geom.hole_radius;
      if (pen > 0.0) {
        contacts[n++] = {point, Eigen::Vector3d(-dir.x(), -dir.y(), 0.0), k * pen};
        max_lateral = std::max(max_lateral, pen);
      }
    } else {
      const double wall_r = geom.hole_radius + (tip.z() + geom.chamfer);
      const double pen = c.norm() + peg_r - wall_r;
      if (pen > 0.0) {
        const double s = M_SQRT1_2;
        contacts[n++] = {point, Eigen::Vector3d(-dir.x() * s, -dir.y() * s, s), k * pen * s};
      }
    }
  }

  // Peg side against the edge where the chamfer meets the bore.
  const double edge_z = -geom.chamfer;
  if (tip.z() < edge_z) {
    const Eigen::Vector3d axis = peg_axis(pose);
    const double height = edge_z - tip.z();
    const Eigen::Vector2d a = tip.head<2>() + height * axis.head<2>() / axis.z();
    const double pen = a.norm() + peg_r - geom.hole_radius;
    if (pen > 0.0) {
      const Eigen::Vector2d dir = radial_unit(a);
      const Eigen::Vector3d point(a.x() + peg_r * dir.x(), a.y() + peg_r * dir.y(), edge_z);
      contacts[n++] = {point, Eigen::Vector3d(-dir.x(), -dir.y(), 0.0), k * pen};
      max_lateral = std::max(max_lateral, pen);
    }
  }

  ContactResult out;
  out.contact_points = n;
  out.max_lateral_penetration = max_lateral;
  if (n == 0) return out;

  double normal_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d f = contacts[i].magnitude * contacts[i].normal;
    out.wrench.force += f;
    out.wrench.moment += (contacts[i].point - tip).cross(f);
    normal_sum += contacts[i].magnitude;
  }
  out.normal_sum = normal_sum;

  // Static friction along the hole axis, shared in proportion to the normals.
  const double cap = geom.friction_coeff * normal_sum;
  const double axial = std::clamp(-(drive.force.z() + out.wrench.force.z()), -cap, cap);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d f(0.0, 0.0, axial * contacts[i].magnitude / normal_sum);
    out.wrench.force += f;
    out.wrench.moment += (contacts[i].point - tip).cross(f);
  }
  return out;
}

int stable_substeps(const PegState& state, const SimConfig& config, const HoleGeom& geom) {
  // Explicit Euler on D * x' = F(x) is stable for dt * lambda_max < 2, where
  // lambda_max is bounded by the trace of D^-1 K. Keep dt * bound <= 1.
  const double k = geom.wall_stiffness;
  const double lever = std::max(0.0, -geom.chamfer - state.pose[kZ]) + 1.0;
  const double d_lin = config.impedance_damping.head<3>().minCoeff();
  const double d_rot = config.impedance_damping.tail<3>().minCoeff();
  const double spring = config.impedance_stiffness.cwiseQuotient(config.impedance_damping).maxCoeff();
  const double bound = 2.0 * k / d_lin + k * lever * lever * kDegToRad / d_rot + spring;
  const int needed = static_cast<int>(std::ceil(bound / config.tick_hz));
  return std::max(config.substeps, needed);
}

Wrench clip_command(const Wrench& target, const SimConfig& config) {
  Wrench w;
  w.force = target.force.cwiseMax(-config.force_limit).cwiseMin(config.force_limit);
  w.moment = target.moment.cwiseMax(-config.moment_limit).cwiseMin(config.moment_limit);
  return w;
}

Wrench impedance_drive(const PegState& state, const Wrench& applied, const SimConfig& config) {
  const Vector6d spring = -config.impedance_stiffness.cwiseProduct(state.pose - state.reference);
  Vector6d total = applied.vector() + spring;
  if (!config.gravity_compensated) total[kZ] -= config.peg_weight;
  return Wrench::from_vector(total);
}

StepResult step(const PegState& state, const Wrench& target, const SimConfig& config,
                const HoleGeom& geom, Rng& rng) {
  if (check_termination(state, state.tick, config, geom).is_terminal())
    throw std::logic_error("step called on a finished episode");

  const Wrench applied = clip_command(target, config);
  const int substeps = stable_substeps(state, config, geom);
  const double dt = 1.0 / (config.tick_hz * substeps);

  PegState s = state;
  for (int i = 0; i < substeps; ++i) {
    const Wrench drive = impedance_drive(s, applied, config);
    const ContactResult contact = contact_wrench(s.pose, geom, drive);
    const Vector6d net = drive.vector() + contact.wrench.vector();
    s.twist = net.cwiseQuotient(config.impedance_damping);
    s.pose += dt * s.twist;
    if (s.pose[kZ] < -geom.hole_depth) {
      s.pose[kZ] = -geom.hole_depth;
      s.twist[kZ] = 0.0;
    }
  }
  s.tick = state.tick + 1;
  s.depth = insertion_depth(s.pose, geom);

  const ContactResult contact = contact_wrench(s.pose, geom, impedance_drive(s, applied, config));
  s.contact_points = contact.contact_points;
  s.in_contact = contact.contact_points > 0;

  StepResult out;
  out.applied = applied;
  out.sensed = contact.wrench;
  if (config.sensor_noise > 0.0) {
    std::normal_distribution<double> noise(0.0, config.sensor_noise);
    for (int i = 0; i < 3; ++i) out.sensed.force[i] += noise(rng);
    for (int i = 0; i < 3; ++i) out.sensed.moment[i] += noise(rng);
  }
  if (!s.pose.allFinite() || !s.twist.allFinite() || !out.sensed.all_finite())
    throw SimFault("non-finite simulator state at tick " + std::to_string(s.tick));
  out.status = check_termination(s, s.tick, config, geom);
  out.state = s;
  return out;
}

Action action_from_code(int code) {
  if (code < 0 || code >= kNumActions)
    throw std::out_of_range("action code out of range: " + std::to_string(code));
  return static_cast<Action>(code);
}

Wrench decode_action(Action a, int /*tick*/, const WiggleParams& amp, Rng& rng) {
  const int code = static_cast<int>(a);
  if (code < 0 || code >= kNumActions)
    throw std::out_of_range("action code out of range: " + std::to_string(code));
  Wrench w;
  if ((code & 2) == 0) w.force.z() = -amp.down_force;
  if ((code & 1) == 0) {
    std::uniform_real_distribution<double> u(-amp.amplitude, amp.amplitude);
    for (int i = 0; i < 3; ++i) w.moment[i] = u(rng);
  }
  return w;
}

EpisodeStatus check_termination(const PegState& state, int tick, const SimConfig& config,
                                const HoleGeom& geom) {
  if (tick > config.max_ticks) throw std::logic_error("tick beyond max_ticks");
  if (state.depth >= geom.hole_depth) return EpisodeStatus::success(tick);
  if (tick >= config.max_ticks) return EpisodeStatus::timeout();
  return EpisodeStatus::running();
}

}  // namespace peg
