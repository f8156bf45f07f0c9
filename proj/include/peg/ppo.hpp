#ifndef PEG_PPO_HPP_
#define PEG_PPO_HPP_

#include <utility>
#include <vector>

#include "peg/nn/network.hpp"
#include "peg/nn/optimizer.hpp"
#include "peg/policy.hpp"

namespace peg {

struct PPOConfig {
  double clip_ratio = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  int epochs = 4;
  int minibatch = 256;
  double value_weight = 0.5;
  double entropy_weight = 0.01;
  double learning_rate = 1e-3;
  double value_learning_rate = 1e-3;
  bool normalize_advantages = true;
  nn::OptimizerKind optimizer = nn::OptimizerKind::kAdam;

  void validate() const;
};

/// Generator trunk with a scalar head.
nn::NetSpec value_spec(const PolicyConfig& cfg);

/// One sample per column of `windows`. `done` marks the last step of an
/// episode; the value after it is taken as 0.
struct Rollout {
  Eigen::MatrixXd windows;
  std::vector<int> actions;
  Eigen::VectorXd log_prob_old;
  Eigen::VectorXd rewards;
  Eigen::VectorXd values;
  std::vector<bool> dones;

  Eigen::Index size() const { return windows.cols(); }
  void validate() const;
};

/// Returns (advantages, returns).
std::pair<Eigen::VectorXd, Eigen::VectorXd> compute_advantages(const Eigen::VectorXd& rewards,
                                                                const Eigen::VectorXd& values,
                                                                const std::vector<bool>& dones,
                                                                double gamma, double lambda);

Eigen::VectorXd value_forward(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                              const Eigen::MatrixXd& windows);
double value_forward_one(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                         const Eigen::VectorXd& window);

struct PolicyLossTerms {
  double loss = 0.0;       // -(surrogate + entropy_weight * entropy)
  double surrogate = 0.0;
  double entropy = 0.0;
  double mean_ratio = 0.0;
};

/// Clipped-surrogate loss (to be minimised) on a batch, and its gradient.
PolicyLossTerms policy_loss(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                            const Eigen::MatrixXd& windows, const std::vector<int>& actions,
                            const Eigen::VectorXd& log_prob_old, const Eigen::VectorXd& advantages,
                            const PPOConfig& cfg, Eigen::VectorXd* grad);

/// value_weight * mean (V - target)^2 and its gradient.
double value_loss(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                  const Eigen::MatrixXd& windows, const Eigen::VectorXd& targets,
                  const PPOConfig& cfg, Eigen::VectorXd* grad);

struct PPOStats {
  double surrogate = 0.0;  // first minibatch of the first epoch
  double value_loss = 0.0;
  double entropy = 0.0;
  double mean_ratio = 0.0;  // last minibatch
  double approx_kl = 0.0;   // over the whole rollout after the update
  int minibatch_steps = 0;
  bool aborted = false;
};

struct PPOLearner {
  nn::NetSpec policy_spec;
  nn::ParamSet<double> policy;
  nn::OptimizerState<double> policy_opt;
  nn::NetSpec value_spec;
  nn::ParamSet<double> value;
  nn::OptimizerState<double> value_opt;
};

/// `epochs` passes of shuffled minibatch updates. Advantages are recomputed
/// from the rollout's rewards and values. A non-finite loss or gradient
/// restores the learner to its state before the call.
PPOStats ppo_update(PPOLearner& learner, const Rollout& rollout, const PPOConfig& cfg, Rng& rng);

/// Mean KL(old || new) over the rollout windows.
double mean_kl(const nn::NetSpec& spec, const nn::ParamSet<double>& old_params,
               const nn::ParamSet<double>& new_params, const Eigen::MatrixXd& windows);

}  // namespace peg

#endif  // PEG_PPO_HPP_
