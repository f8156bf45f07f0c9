#include "peg/policy.hpp"

#include <cmath>
#include <random>

namespace peg {

void PolicyConfig::validate() const {
  if (window < 2) throw std::invalid_argument("policy window must be >= 2");
  if (!(norm_eps > 0.0)) throw std::invalid_argument("norm_eps must be > 0");
  if (conv_filters < 1 || hidden < 1) throw std::invalid_argument("layer widths must be >= 1");
  if (conv_kernel < 1 || conv_kernel > window)
    throw std::invalid_argument("conv_kernel must lie in [1, window]");
}

nn::NetSpec generator_spec(const PolicyConfig& cfg) {
  cfg.validate();
  using nn::LayerSpec;
  const int conv_out = (cfg.window - cfg.conv_kernel + 1) * cfg.conv_filters;
  return {
      LayerSpec::norm_time(cfg.window, kFrameChannels, cfg.norm_eps),
      LayerSpec::conv1d_time(cfg.window, kFrameChannels, cfg.conv_filters, cfg.conv_kernel),
      LayerSpec::relu(conv_out),
      LayerSpec::dense(conv_out, cfg.hidden),
      LayerSpec::relu(cfg.hidden),
      LayerSpec::dense(cfg.hidden, cfg.hidden),
      LayerSpec::relu(cfg.hidden),
      LayerSpec::dense(cfg.hidden, kNumActions),
      LayerSpec::softmax(kNumActions),
  };
}

Eigen::VectorXd one_hot(int action) {
  if (action < 0 || action >= kNumActions)
    throw std::out_of_range("action code out of range: " + std::to_string(action));
  Eigen::VectorXd v = Eigen::VectorXd::Zero(kNumActions);
  v[action] = 1.0;
  return v;
}

HistoryBuffer::HistoryBuffer(const PolicyConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

Eigen::VectorXd HistoryBuffer::frame(const Vector6d& pose, const Wrench& sensed,
                                     int prev_action) const {
  Eigen::VectorXd f(kFrameChannels);
  f.head<kPoseChannels>() = pose;
  if (cfg_.use_wrench) {
    f.segment<kWrenchChannels>(kPoseChannels) << sensed.force, sensed.moment.x(), sensed.moment.y();
  } else {
    f.segment<kWrenchChannels>(kPoseChannels).setZero();
  }
  f.tail<kNumActions>() = one_hot(prev_action);
  return f;
}

Eigen::MatrixXd HistoryBuffer::observe(const Vector6d& pose, const Wrench& sensed,
                                       int prev_action) {
  Eigen::VectorXd f = frame(pose, sensed, prev_action);
  if (frames_.empty()) {
    Eigen::VectorXd pad = f;
    pad.tail<kNumActions>() = one_hot(static_cast<int>(Action::kIdle));
    frames_.assign(cfg_.window - 1, pad);
  }
  frames_.push_back(std::move(f));
  while (static_cast<int>(frames_.size()) > cfg_.window) frames_.pop_front();
  return window();
}

Eigen::MatrixXd HistoryBuffer::window() const {
  if (frames_.empty()) throw std::logic_error("history is empty");
  Eigen::MatrixXd w(cfg_.window, kFrameChannels);
  for (int t = 0; t < cfg_.window; ++t) w.row(t) = frames_[t].transpose();
  return w;
}

Eigen::VectorXd flatten_window(const Eigen::MatrixXd& window) {
  Eigen::VectorXd v(window.size());
  for (Eigen::Index t = 0; t < window.rows(); ++t)
    v.segment(t * window.cols(), window.cols()) = window.row(t).transpose();
  return v;
}

int argmax_lowest(const Eigen::Vector4d& probs) {
  int best = 0;
  for (int i = 1; i < kNumActions; ++i)
    if (probs[i] > probs[best]) best = i;
  return best;
}

PolicyDecision decide(const Eigen::Vector4d& probs, Rng& rng, ActMode mode) {
  if (!probs.allFinite()) throw NonFiniteOutput("non-finite policy output");
  int a = 0;
  if (mode == ActMode::kArgmax) {
    a = argmax_lowest(probs);
  } else {
    std::discrete_distribution<int> dist(probs.data(), probs.data() + kNumActions);
    a = dist(rng);
  }
  PolicyDecision d;
  d.action = static_cast<Action>(a);
  d.probs = probs;
  d.log_prob = std::log(probs[a]);
  return d;
}

PolicyDecision act(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                   const Eigen::VectorXd& window_features, Rng& rng, ActMode mode) {
  const Eigen::VectorXd out = nn::forward_one(spec, params, window_features);
  if (out.size() != kNumActions) throw nn::ShapeError("policy head must have 4 outputs");
  return decide(Eigen::Vector4d(out), rng, mode);
}

double entropy(const Eigen::Vector4d& probs) {
  double h = 0.0;
  for (int i = 0; i < kNumActions; ++i)
    if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
  return h;
}

}  // namespace peg
