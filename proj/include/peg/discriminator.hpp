#ifndef PEG_DISCRIMINATOR_HPP_
#define PEG_DISCRIMINATOR_HPP_

#include "peg/nn/network.hpp"
#include "peg/nn/optimizer.hpp"
#include "peg/policy.hpp"

namespace peg {

inline constexpr double kDiscClamp = 1e-6;

enum class RewardForm { kNegLogOneMinusD, kLogD };

struct DiscConfig {
  int hidden = 64;
  int iters = 100;        // minibatch steps per round
  int batch_per_class = 64;
  double learning_rate = 1e-4;
  nn::OptimizerKind optimizer = nn::OptimizerKind::kAdam;
  RewardForm reward = RewardForm::kNegLogOneMinusD;

  void validate() const;
};

/// Input: flattened T x C window followed by the 4-way action one-hot.
nn::NetSpec discriminator_spec(const PolicyConfig& policy, const DiscConfig& cfg);

/// Stacks a window feature vector and an action into one discriminator input.
Eigen::VectorXd pair_features(const Eigen::VectorXd& window_features, int action);
Eigen::MatrixXd pair_features(const Eigen::MatrixXd& windows, const std::vector<int>& actions);

double clamp_d(double d);
double sigmoid(double z);

/// D(s, a) in [delta, 1 - delta] for every column of `pairs`.
Eigen::VectorXd score(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                      const Eigen::MatrixXd& pairs);
double score_one(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                 const Eigen::VectorXd& pair);

/// Mean binary cross-entropy, expert -> 1, generated -> 0.
double bce_loss(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                const Eigen::MatrixXd& expert, const Eigen::MatrixXd& generated);

/// Loss and its parameter gradient on one labelled batch.
double bce_loss_and_grad(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                         const Eigen::MatrixXd& expert, const Eigen::MatrixXd& generated,
                         Eigen::VectorXd* grad);

struct DiscTrainResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int iters = 0;
};

/// Minibatch training on equal-size expert/generated batches. The returned
/// losses are evaluated on the full balanced batch.
DiscTrainResult train_discriminator(const nn::NetSpec& spec, nn::ParamSet<double>& params,
                                    nn::OptimizerState<double>& opt,
                                    const Eigen::MatrixXd& expert,
                                    const Eigen::MatrixXd& generated, const DiscConfig& cfg,
                                    Rng& rng);

double gail_reward(double d, RewardForm form = RewardForm::kNegLogOneMinusD);

}  // namespace peg

#endif  // PEG_DISCRIMINATOR_HPP_
