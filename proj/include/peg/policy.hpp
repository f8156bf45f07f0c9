#ifndef PEG_POLICY_HPP_
#define PEG_POLICY_HPP_

#include <deque>

#include "peg/nn/network.hpp"
#include "peg/sim.hpp"

namespace peg {

// Frame channels: pose (6), sensed f_x f_y f_z m_x m_y (5), previous action
// one-hot (4).
inline constexpr int kPoseChannels = 6;
inline constexpr int kWrenchChannels = 5;
inline constexpr int kFrameChannels = kPoseChannels + kWrenchChannels + kNumActions;

struct PolicyConfig {
  int window = 10;
  double norm_eps = 0.1;
  int conv_filters = 16;
  int conv_kernel = 3;
  int hidden = 64;
  bool use_wrench = true;  // false zeroes the sensed-wrench channels

  void validate() const;
  int features() const { return window * kFrameChannels; }
};

nn::NetSpec generator_spec(const PolicyConfig& cfg);

Eigen::VectorXd one_hot(int action);

/// Rolling T x C observation history. Until T frames have been seen the
/// window is padded by repeating the first frame with prev-action = 3.
class HistoryBuffer {
 public:
  explicit HistoryBuffer(const PolicyConfig& cfg);

  /// Appends a frame and returns the current T x C window (oldest row first).
  Eigen::MatrixXd observe(const Vector6d& pose, const Wrench& sensed, int prev_action);
  Eigen::MatrixXd window() const;
  void clear() { frames_.clear(); }
  int size() const { return static_cast<int>(frames_.size()); }

 private:
  Eigen::VectorXd frame(const Vector6d& pose, const Wrench& sensed, int prev_action) const;

  PolicyConfig cfg_;
  std::deque<Eigen::VectorXd> frames_;
};

/// Network input layout: row-major flattening, feature t * C + c.
Eigen::VectorXd flatten_window(const Eigen::MatrixXd& window);

enum class ActMode { kSample, kArgmax };

struct PolicyDecision {
  Action action = Action::kIdle;
  double log_prob = 0.0;
  Eigen::Vector4d probs = Eigen::Vector4d::Constant(0.25);
};

class NonFiniteOutput : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Lowest index among the maximal entries.
int argmax_lowest(const Eigen::Vector4d& probs);

PolicyDecision decide(const Eigen::Vector4d& probs, Rng& rng, ActMode mode);

PolicyDecision act(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                   const Eigen::VectorXd& window_features, Rng& rng, ActMode mode);

double entropy(const Eigen::Vector4d& probs);

}  // namespace peg

#endif  // PEG_POLICY_HPP_
