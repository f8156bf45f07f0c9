#ifndef PEG_TELEOP_HPP_
#define PEG_TELEOP_HPP_

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "peg/demos.hpp"
#include "peg/sim.hpp"

namespace peg::teleop {

struct TeleopCommand {
  double fx = 0.0;  // N
  double fy = 0.0;  // N
  bool down = false;
  double mz = 0.0;  // N*mm
  bool record = false;  // toggle
  bool reset = false;
};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses a client message of type "cmd". Missing fields default to zero/false.
TeleopCommand parse_command(const std::string& json_text);
std::string command_json(const TeleopCommand& cmd);

struct TelemetryFrame {
  int tick = 0;
  int episode = 0;
  Vector6d pose = Vector6d::Zero();
  Vector6d sensed = Vector6d::Zero();
  Vector6d cmd = Vector6d::Zero();
  std::string status = "running";
  bool recording = false;
};

std::string frame_json(const TelemetryFrame& f);
TelemetryFrame parse_frame(const std::string& json_text);
std::string warn_json(const std::string& msg);

struct AppliedCommand {
  Wrench wrench;
  std::vector<std::string> warnings;
};

/// (f_x, f_y, -F_down if down, 0, 0, m_z), clipped to the simulator limits.
AppliedCommand apply_command(const TeleopCommand& cmd, const SimConfig& cfg,
                             const WiggleParams& wiggle);

/// Latest-wins slot. Toggle requests are counted so a record or reset press
/// is not lost when a newer command overwrites it before the next tick.
class CommandMailbox {
 public:
  void post(const TeleopCommand& cmd);
  /// Latest command, with record/reset set if any press arrived since the
  /// last take. Record presses cancel in pairs.
  TeleopCommand take();

 private:
  std::mutex mu_;
  TeleopCommand latest_;
  int record_presses_ = 0;
  bool reset_pending_ = false;
};

struct SessionOptions {
  SimConfig sim;
  HoleGeom geom;
  WiggleParams wiggle;
  std::string out_dir;  // recordings; empty disables saving
  std::uint64_t seed = 1;
};

/// The tick loop's state. Not thread-safe: owned by one thread, fed through
/// the mailbox.
class TeleopSession {
 public:
  explicit TeleopSession(SessionOptions opts);

  CommandMailbox& mailbox() { return mailbox_; }

  /// One tick: apply the latest command, step, return the messages to send
  /// (warnings, then the frame). Returns only warnings while the episode is
  /// over and no reset has been requested.
  std::vector<std::string> tick();

  const PegState& state() const { return state_; }
  const EpisodeStatus& status() const { return status_; }
  int episode() const { return episode_; }
  bool recording() const { return record_.has_value(); }
  const std::vector<std::string>& saved_records() const { return saved_; }
  /// Drops an unfinished recording (client disconnect).
  void abort();

 private:
  void start_episode();
  void stop_recording();

  SessionOptions opts_;
  CommandMailbox mailbox_;
  PegState state_;
  Wrench sensed_;
  EpisodeStatus status_ = EpisodeStatus::running();
  Rng rng_;
  int episode_ = 0;
  std::optional<Episode> record_;
  std::vector<std::string> saved_;
};

/// Sleeps to an absolute schedule so the long-run rate matches tick_hz.
class TickPacer {
 public:
  explicit TickPacer(double tick_hz);
  void wait();

 private:
  std::chrono::steady_clock::duration period_;
  std::chrono::steady_clock::time_point next_;
};

struct ServerOptions {
  std::string bind = "127.0.0.1:8765";
  SessionOptions session;
};

/// Websocket endpoint serving one operator session at a time.
class TeleopServer {
 public:
  explicit TeleopServer(ServerOptions opts);
  ~TeleopServer();
  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  /// Bound port (useful with port 0).
  unsigned short port() const;
  /// Serves until stop().
  void run();
  void stop();
  /// Ticks executed across all sessions so far.
  long ticks_run() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::pair<std::string, unsigned short> split_bind(const std::string& bind);

}  // namespace peg::teleop

#endif  // PEG_TELEOP_HPP_
