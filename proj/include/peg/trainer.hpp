#ifndef PEG_TRAINER_HPP_
#define PEG_TRAINER_HPP_

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "peg/demos.hpp"
#include "peg/discriminator.hpp"
#include "peg/ppo.hpp"

namespace peg {

struct TrainConfig {
  int n_episodes = 20;
  int disc_update_every = 1;      // episodes between discriminator rounds
  int gen_updates_per_episode = 4;
  int replay_episodes = 3;        // generated pairs come from the last N episodes
  int metric_window = 5;
  std::uint64_t seed = 1;
  std::string expert_dataset_path;  // directory of episode files
  std::string out_dir;              // empty: no files written

  SimConfig sim;
  HoleGeom geom;
  WiggleParams wiggle;
  PolicyConfig policy;
  PPOConfig ppo;
  DiscConfig disc;
  ExpertConfig expert;

  void validate() const;
};

struct EpisodeMetrics {
  int episode = 0;  // 1-based
  double gen_reward_mean = 0.0;
  double disc_loss = 0.0;  // NaN when no discriminator round ran
  int insertion_ticks = 0;
  bool success = false;
  double entropy = 0.0;
};

using TrainMetrics = std::vector<EpisodeMetrics>;

inline constexpr char kMetricsHeader[] = "episode,gen_reward_mean,disc_loss,insertion_ticks,success,entropy";

std::string metrics_csv_row(const EpisodeMetrics& m);
void write_metrics_csv(const TrainMetrics& metrics, const std::string& path);

/// Trailing moving average of insertion time in seconds; the first entries
/// average over what is available.
std::vector<double> insertion_time_series(const std::vector<int>& insertion_ticks, int window,
                                          double tick_hz);
std::vector<double> insertion_time_series(const TrainMetrics& metrics, int window, double tick_hz);

/// A generator rollout with everything PPO and the discriminator need.
struct CollectedEpisode {
  Episode episode;
  Eigen::MatrixXd windows;
  std::vector<int> actions;
  Eigen::VectorXd log_probs;
  Eigen::VectorXd entropies;
  std::vector<EpisodeStatus> statuses;

  EpisodeStatus final_status() const;
};

using ActionSource = std::function<PolicyDecision(const Eigen::VectorXd& window, Rng& rng)>;

/// Rolls out from reset(env_seed) until termination. A SimFault ends the
/// episode early and is stored in episode.fault.
CollectedEpisode collect_episode(const SimConfig& sim, const HoleGeom& geom,
                                 const WiggleParams& wiggle, const PolicyConfig& policy,
                                 std::uint64_t env_seed, const ActionSource& source, Rng& rng);

CollectedEpisode collect_episode(const SimConfig& sim, const HoleGeom& geom,
                                 const WiggleParams& wiggle, const PolicyConfig& policy,
                                 std::uint64_t env_seed, const nn::NetSpec& spec,
                                 const nn::ParamSet<double>& params, ActMode mode, Rng& rng);

/// Everything needed to continue a run after `episode`.
struct TrainerState {
  int episode = 0;
  PPOLearner learner;
  nn::NetSpec disc_spec;
  nn::ParamSet<double> disc;
  nn::OptimizerState<double> disc_opt;
  std::vector<Eigen::MatrixXd> replay;  // discriminator input pairs per recent episode
};

TrainerState init_trainer_state(const TrainConfig& cfg);

std::string encode_checkpoint(const TrainerState& st);
TrainerState decode_checkpoint(const std::string& bytes, const TrainConfig& cfg);
void save_checkpoint(const TrainerState& st, const std::string& path);
TrainerState load_checkpoint(const std::string& path, const TrainConfig& cfg);

/// Instrumentation of update ordering, one event per update call.
struct TrainEvent {
  enum class Kind { kCollect, kGenerator, kDiscriminator } kind;
  int episode = 0;
  Eigen::Index expert_count = 0;     // discriminator rounds only
  Eigen::Index generated_count = 0;
};

struct TrainHooks {
  std::function<void(const TrainEvent&)> on_event;
  std::function<void(const EpisodeMetrics&)> on_episode;
  std::function<void(const std::string&)> on_warning;
};

struct TrainResult {
  TrainMetrics metrics;
  TrainerState final_state;
};

/// Runs episodes state.episode + 1 .. n_episodes against `expert`.
TrainResult run_training(const TrainConfig& cfg, const DemoDataset& expert, TrainerState state,
                         const TrainHooks& hooks = {});

/// Loads the dataset, starts from fresh parameters, writes metrics and
/// checkpoints under out_dir if set.
TrainResult run_training(const TrainConfig& cfg, const TrainHooks& hooks = {});

class DatasetNotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

DemoDataset load_expert_dataset(const TrainConfig& cfg);

struct EvalEpisode {
  std::uint64_t env_seed = 0;
  bool success = false;
  int insertion_ticks = 0;
  double mean_entropy = 0.0;
};

struct EvalSummary {
  std::vector<EvalEpisode> episodes;
  double success_rate = 0.0;
  double mean_seconds = 0.0;
  double p50_seconds = 0.0;
  double p90_seconds = 0.0;
};

/// Argmax rollouts with environment seeds derived from `seed`.
EvalSummary evaluate_policy(const TrainConfig& cfg, const nn::ParamSet<double>& policy,
                            int n_episodes, std::uint64_t seed, ActMode mode = ActMode::kArgmax);

}  // namespace peg

#endif  // PEG_TRAINER_HPP_
