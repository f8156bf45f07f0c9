#include "peg/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace peg {

void DiscConfig::validate() const {
  if (hidden < 1) throw std::invalid_argument("discriminator hidden width must be >= 1");
  if (iters < 0) throw std::invalid_argument("discriminator iters must be >= 0");
  if (batch_per_class < 1) throw std::invalid_argument("discriminator batch must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("discriminator learning rate must be > 0");
}

nn::NetSpec discriminator_spec(const PolicyConfig& policy, const DiscConfig& cfg) {
  policy.validate();
  cfg.validate();
  using nn::LayerSpec;
  const int in = policy.features() + kNumActions;
  return {
      LayerSpec::norm_time(policy.window, kFrameChannels, policy.norm_eps, kNumActions),
      LayerSpec::dense(in, cfg.hidden),
      LayerSpec::relu(cfg.hidden),
      LayerSpec::dense(cfg.hidden, cfg.hidden),
      LayerSpec::relu(cfg.hidden),
      LayerSpec::dense(cfg.hidden, 1),
  };
}

Eigen::VectorXd pair_features(const Eigen::VectorXd& window_features, int action) {
  Eigen::VectorXd v(window_features.size() + kNumActions);
  v << window_features, one_hot(action);
  return v;
}

Eigen::MatrixXd pair_features(const Eigen::MatrixXd& windows, const std::vector<int>& actions) {
  if (static_cast<std::size_t>(windows.cols()) != actions.size())
    throw nn::ShapeError("window and action counts differ");
  Eigen::MatrixXd out(windows.rows() + kNumActions, windows.cols());
  for (Eigen::Index i = 0; i < windows.cols(); ++i)
    out.col(i) = pair_features(Eigen::VectorXd(windows.col(i)), actions[i]);
  return out;
}

double clamp_d(double d) { return std::clamp(d, kDiscClamp, 1.0 - kDiscClamp); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Eigen::VectorXd score(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                      const Eigen::MatrixXd& pairs) {
  const Eigen::MatrixXd logits = nn::forward(spec, params, pairs);
  if (logits.rows() != 1) throw nn::ShapeError("discriminator head must be scalar");
  if (!logits.allFinite()) throw NonFiniteOutput("non-finite discriminator logit");
  Eigen::VectorXd d(logits.cols());
  for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = clamp_d(sigmoid(logits(0, i)));
  return d;
}

double score_one(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                 const Eigen::VectorXd& pair) {
  return score(spec, params, Eigen::MatrixXd(pair))[0];
}

double bce_loss_and_grad(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                         const Eigen::MatrixXd& expert, const Eigen::MatrixXd& generated,
                         Eigen::VectorXd* grad) {
  const Eigen::Index ne = expert.cols();
  const Eigen::Index ng = generated.cols();
  if (ne + ng == 0) throw std::invalid_argument("empty discriminator batch");
  Eigen::MatrixXd x(expert.rows(), ne + ng);
  x << expert, generated;
  nn::ForwardCache<double> cache;
  const Eigen::MatrixXd logits = nn::forward(spec, params, x, grad ? &cache : nullptr);
  if (!logits.allFinite()) throw NonFiniteOutput("non-finite discriminator logit");
  const double n = static_cast<double>(ne + ng);
  double loss = 0.0;
  Eigen::MatrixXd g(1, ne + ng);
  for (Eigen::Index i = 0; i < ne + ng; ++i) {
    const double y = i < ne ? 1.0 : 0.0;
    const double d = clamp_d(sigmoid(logits(0, i)));
    loss -= y * std::log(d) + (1.0 - y) * std::log(1.0 - d);
    g(0, i) = (sigmoid(logits(0, i)) - y) / n;
  }
  loss /= n;
  if (grad) *grad = nn::backward(spec, params, cache, g);
  return loss;
}

double bce_loss(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                const Eigen::MatrixXd& expert, const Eigen::MatrixXd& generated) {
  return bce_loss_and_grad(spec, params, expert, generated, nullptr);
}

namespace {

Eigen::MatrixXd draw_columns(const Eigen::MatrixXd& src, int count, Rng& rng) {
  std::vector<Eigen::Index> idx(src.cols());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  Eigen::MatrixXd out(src.rows(), count);
  for (int i = 0; i < count; ++i) out.col(i) = src.col(idx[i]);
  return out;
}

}  // namespace

DiscTrainResult train_discriminator(const nn::NetSpec& spec, nn::ParamSet<double>& params,
                                    nn::OptimizerState<double>& opt,
                                    const Eigen::MatrixXd& expert,
                                    const Eigen::MatrixXd& generated, const DiscConfig& cfg,
                                    Rng& rng) {
  cfg.validate();
  if (expert.cols() == 0 || generated.cols() == 0)
    throw std::invalid_argument("empty discriminator batch");
  if (expert.cols() != generated.cols())
    throw std::invalid_argument("expert and generated batches must be the same size");
  DiscTrainResult r;
  r.initial_loss = bce_loss(spec, params, expert, generated);
  const int mb = static_cast<int>(std::min<Eigen::Index>(cfg.batch_per_class, expert.cols()));
  Eigen::VectorXd grad;
  for (int it = 0; it < cfg.iters; ++it) {
    const Eigen::MatrixXd e = draw_columns(expert, mb, rng);
    const Eigen::MatrixXd g = draw_columns(generated, mb, rng);
    bce_loss_and_grad(spec, params, e, g, &grad);
    nn::update(params, grad, opt, cfg.learning_rate);
    ++r.iters;
  }
  r.final_loss = bce_loss(spec, params, expert, generated);
  return r;
}

double gail_reward(double d, RewardForm form) {
  const double c = clamp_d(d);
  return form == RewardForm::kLogD ? std::log(c) : -std::log(1.0 - c);
}

}  // namespace peg
