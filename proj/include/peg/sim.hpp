#ifndef PEG_SIM_HPP_
#define PEG_SIM_HPP_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

#include <Eigen/Core>

namespace peg {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Rng = std::mt19937_64;

// Pose layout: p_x, p_y, p_z (mm), p_rx, p_ry, p_rz (deg). The translational
// part is the centre of the peg tip. The hole axis is world z, the bore entry
// (bottom of the chamfer) at z = -chamfer, the mouth at z = 0.
enum PoseIndex : int { kX = 0, kY, kZ, kRx, kRy, kRz };

class SimFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct HoleGeom {
  double hole_radius = 10.0;     // mm
  double clearance = 0.05;       // mm, radial
  double hole_depth = 20.0;      // mm, measured from the mouth
  double chamfer = 1.5;          // mm, 45 degree entry chamfer
  double wall_stiffness = 2000.0; // N/mm
  double friction_coeff = 0.8;

  double peg_radius() const { return hole_radius - clearance; }
  void validate() const;
};

struct Wrench {
  Eigen::Vector3d force = Eigen::Vector3d::Zero();   // N
  Eigen::Vector3d moment = Eigen::Vector3d::Zero();  // N*mm

  Vector6d vector() const;
  static Wrench from_vector(const Vector6d& v);
  bool all_finite() const;
};

struct PegState {
  Vector6d pose = Vector6d::Zero();
  Vector6d twist = Vector6d::Zero();   // mm/s, deg/s
  Vector6d reference = Vector6d::Zero(); // impedance set point held by the arm
  double depth = 0.0;
  bool in_contact = false;
  int contact_points = 0;
  int tick = 0;
};

struct SimConfig {
  double tick_hz = 100.0;
  Vector6d impedance_stiffness = (Vector6d() << 0.5, 0.5, 0.25, 15.0, 15.0, 15.0).finished();
  Vector6d impedance_damping = (Vector6d() << 2.5, 2.5, 2.5, 1.0, 1.0, 1.0).finished();
  double force_limit = 50.0;     // N, per component
  double moment_limit = 200.0;   // N*mm, per component
  int max_ticks = 3000;
  double start_offset_range = 1.0;  // mm
  double start_tilt_range = 2.0;    // deg
  double start_height = 0.5;        // mm above the mouth
  bool gravity_compensated = true;
  double peg_weight = 1.0;          // N, only used without compensation
  double sensor_noise = 0.05;       // sigma, applied to all six channels
  int substeps = 4;  // lower bound; more are taken when contact stiffness requires

  void validate() const;
};

struct Running {};
struct Success {
  int ticks = 0;
};
struct Timeout {};

class EpisodeStatus {
 public:
  EpisodeStatus() = default;
  static EpisodeStatus running() { return EpisodeStatus(Running{}); }
  static EpisodeStatus success(int ticks) { return EpisodeStatus(Success{ticks}); }
  static EpisodeStatus timeout() { return EpisodeStatus(Timeout{}); }

  bool is_running() const { return std::holds_alternative<Running>(value_); }
  bool is_success() const { return std::holds_alternative<Success>(value_); }
  bool is_timeout() const { return std::holds_alternative<Timeout>(value_); }
  bool is_terminal() const { return !is_running(); }
  int success_ticks() const { return std::get<Success>(value_).ticks; }
  std::string name() const;

  friend bool operator==(const EpisodeStatus& a, const EpisodeStatus& b);

 private:
  explicit EpisodeStatus(std::variant<Running, Success, Timeout> v) : value_(v) {}
  std::variant<Running, Success, Timeout> value_;
};

struct WiggleParams {
  double down_force = 10.0;  // N
  double amplitude = 50.0;   // N*mm
};

/// Discrete actions: bit 0 of the code clears wiggle, bit 1 clears the
/// downward force.
enum class Action : int {
  kDownWiggle = 0,
  kDown = 1,
  kWiggle = 2,
  kIdle = 3,
};
inline constexpr int kNumActions = 4;

struct ContactResult {
  Wrench wrench;
  int contact_points = 0;
  double normal_sum = 0.0;           // N, sum of normal force magnitudes
  double max_lateral_penetration = 0.0; // mm, beyond the wall
};

struct StepResult {
  PegState state;
  Wrench sensed;
  EpisodeStatus status;
  Wrench applied;  // controller force after clipping
};

PegState reset(const SimConfig& config, const HoleGeom& geom, std::uint64_t seed);

/// Penalty-spring contact wrench acting on the peg, expressed at the tip
/// centre. `drive` is the non-contact wrench pushing the peg; static Coulomb
/// friction along the hole axis balances it up to mu * sum(N).
ContactResult contact_wrench(const Vector6d& pose, const HoleGeom& geom,
                             const Wrench& drive = {});

/// Wrench the controller and the compliance springs put on the peg.
Wrench impedance_drive(const PegState& state, const Wrench& applied, const SimConfig& config);

Wrench clip_command(const Wrench& target, const SimConfig& config);

/// Integration substeps for the next tick from a stability bound on the wall
/// stiffness seen through the current lever arm.
int stable_substeps(const PegState& state, const SimConfig& config, const HoleGeom& geom);

StepResult step(const PegState& state, const Wrench& target, const SimConfig& config,
                const HoleGeom& geom, Rng& rng);

Wrench decode_action(Action a, int tick, const WiggleParams& amp, Rng& rng);
Action action_from_code(int code);

EpisodeStatus check_termination(const PegState& state, int tick, const SimConfig& config,
                                const HoleGeom& geom);

double insertion_depth(const Vector6d& pose, const HoleGeom& geom);

}  // namespace peg

#endif  // PEG_SIM_HPP_
