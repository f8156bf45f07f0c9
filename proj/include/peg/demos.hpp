#ifndef PEG_DEMOS_HPP_
#define PEG_DEMOS_HPP_

#include <deque>
#include <string>
#include <vector>

#include "peg/policy.hpp"
#include "peg/sim.hpp"

namespace peg {

inline constexpr int kNoAction = -1;

/// One tick. `pose` and `sensed` are what the controller saw before acting;
/// `command` is the target wrench it sent.
struct Transition {
  int tick = 0;
  double timestamp = 0.0;  // s
  Vector6d pose = Vector6d::Zero();
  Vector6d sensed = Vector6d::Zero();
  Vector6d command = Vector6d::Zero();
  int action = kNoAction;  // kNoAction in raw teleoperation records

  friend bool operator==(const Transition&, const Transition&) = default;
};

enum class EpisodeKind { kDemo, kTeleop, kRollout };
std::string kind_name(EpisodeKind k);

struct Episode {
  EpisodeKind kind = EpisodeKind::kDemo;
  std::uint64_t seed = 0;
  bool success = false;
  int insertion_ticks = 0;  // success tick, or max_ticks on failure
  HoleGeom geom;
  double tick_hz = 100.0;
  std::string fault;  // non-empty if the simulator aborted the episode
  std::vector<Transition> transitions;
};

class EpisodeFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kEpisodeFormatVersion = 1;

void save_episode(const Episode& ep, const std::string& path);
Episode load_episode(const std::string& path);
std::string encode_episode(const Episode& ep);
Episode decode_episode(const std::string& bytes);

struct ExpertConfig {
  double progress_eps = 0.01;  // mm per tick
  int stuck_ticks = 20;
};

/// Tracks recent depth to detect a stalled insertion.
class ProgressHistory {
 public:
  explicit ProgressHistory(int stuck_ticks = 20) : k_(stuck_ticks) {}
  void push(double depth);
  /// True when mean progress over the last k ticks is below eps.
  bool stuck(double eps) const;
  void clear() { depths_.clear(); }

 private:
  int k_;
  std::deque<double> depths_;
};

/// 1 while progressing, 0 once stuck for k ticks, 3 after success.
Action scripted_expert(const PegState& state, const ProgressHistory& history, const HoleGeom& geom,
                       const ExpertConfig& cfg, Rng& rng);

/// Runs the scripted expert from reset(seed) to termination.
Episode record_scripted_demo(std::uint64_t seed, const SimConfig& sim, const HoleGeom& geom,
                             const WiggleParams& wiggle, const ExpertConfig& expert);

struct DiscretizeConfig {
  double down_threshold = 5.0;    // N, F_down / 2
  double wiggle_threshold = 12.5; // A_w / 4
  int window = 10;

  static DiscretizeConfig from(const WiggleParams& w, int window);
};

/// Labels a continuous record with discrete actions. The wiggle bit is set
/// where the std of the lateral and rotational commands exceeds the threshold
/// over both the trailing and the leading T-tick window.
Episode discretize_teleop(const Episode& record, const DiscretizeConfig& cfg);

struct DemoDataset {
  std::vector<Episode> episodes;
  Eigen::MatrixXd windows;  // one flattened window per column
  std::vector<int> actions;
  std::vector<std::string> warnings;

  Eigen::Index samples() const { return windows.cols(); }
};

/// Sensor reading available before the first action: the noiseless contact
/// wrench at the reset pose.
Wrench initial_sensed(const PegState& state, const HoleGeom& geom);

/// (window, action) samples of an episode, rebuilt through a HistoryBuffer.
std::pair<Eigen::MatrixXd, std::vector<int>> episode_samples(const Episode& ep,
                                                             const PolicyConfig& cfg);

inline constexpr int kNominalDatasetSamples = 500;

/// Loads the files and keeps successful episodes. Raw teleoperation records
/// are discretized with `disc` first.
DemoDataset build_expert_dataset(const std::vector<std::string>& paths, const PolicyConfig& cfg,
                                 const DiscretizeConfig& disc = {});

/// Episode files (*.pegep) in a directory, sorted by name.
std::vector<std::string> list_episode_files(const std::string& dir);

}  // namespace peg

#endif  // PEG_DEMOS_HPP_
