#include "peg/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace peg {

void PPOConfig::validate() const {
  if (!(clip_ratio > 0.0 && clip_ratio < 1.0)) throw std::invalid_argument("clip_ratio must lie in (0,1)");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in [0,1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0))
    throw std::invalid_argument("gae_lambda must lie in [0,1]");
  if (epochs < 1 || minibatch < 1) throw std::invalid_argument("epochs and minibatch must be >= 1");
  if (!(learning_rate > 0.0) || !(value_learning_rate > 0.0))
    throw std::invalid_argument("learning rates must be > 0");
  if (!(entropy_weight >= 0.0) || !(value_weight >= 0.0))
    throw std::invalid_argument("loss weights must be >= 0");
}

nn::NetSpec value_spec(const PolicyConfig& cfg) {
  nn::NetSpec spec = generator_spec(cfg);
  spec.pop_back();  // softmax
  spec.back() = nn::LayerSpec::dense(cfg.hidden, 1);
  return spec;
}

void Rollout::validate() const {
  const auto n = static_cast<std::size_t>(windows.cols());
  if (actions.size() != n || dones.size() != n || static_cast<std::size_t>(log_prob_old.size()) != n ||
      static_cast<std::size_t>(rewards.size()) != n || static_cast<std::size_t>(values.size()) != n)
    throw nn::ShapeError("rollout fields have different lengths");
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> compute_advantages(const Eigen::VectorXd& rewards,
                                                                const Eigen::VectorXd& values,
                                                                const std::vector<bool>& dones,
                                                                double gamma, double lambda) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n || static_cast<Eigen::Index>(dones.size()) != n)
    throw nn::ShapeError("rewards, values and dones differ in length");
  Eigen::VectorXd adv(n);
  double next_adv = 0.0;
  double next_value = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double live = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * live * next_value - values[t];
    adv[t] = delta + gamma * lambda * live * next_adv;
    next_adv = adv[t];
    next_value = values[t];
  }
  return {adv, adv + values};
}

Eigen::VectorXd value_forward(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                              const Eigen::MatrixXd& windows) {
  const Eigen::MatrixXd out = nn::forward(spec, params, windows);
  if (out.rows() != 1) throw nn::ShapeError("value head must be scalar");
  if (!out.allFinite()) throw NonFiniteOutput("non-finite value estimate");
  return out.row(0).transpose();
}

double value_forward_one(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                         const Eigen::VectorXd& window) {
  return value_forward(spec, params, Eigen::MatrixXd(window))[0];
}

PolicyLossTerms policy_loss(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                            const Eigen::MatrixXd& windows, const std::vector<int>& actions,
                            const Eigen::VectorXd& log_prob_old, const Eigen::VectorXd& advantages,
                            const PPOConfig& cfg, Eigen::VectorXd* grad) {
  const Eigen::Index n = windows.cols();
  if (n == 0) throw std::invalid_argument("empty policy batch");
  nn::ForwardCache<double> cache;
  const Eigen::MatrixXd probs = nn::forward(spec, params, windows, grad ? &cache : nullptr);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(probs.rows(), n);
  PolicyLossTerms terms;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = actions[i];
    const double p = probs(a, i);
    const double ratio = std::exp(std::log(p) - log_prob_old[i]);
    const double adv = advantages[i];
    const double clipped = std::clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
    const double unclipped_term = ratio * adv;
    const double clipped_term = clipped * adv;
    terms.surrogate += std::min(unclipped_term, clipped_term) * inv_n;
    terms.mean_ratio += ratio * inv_n;
    // The clipped branch has zero gradient in the ratio.
    if (unclipped_term <= clipped_term) g(a, i) -= adv * ratio / p * inv_n;
    for (Eigen::Index k = 0; k < probs.rows(); ++k) {
      const double pk = probs(k, i);
      if (pk > 0.0) {
        terms.entropy -= pk * std::log(pk) * inv_n;
        g(k, i) += cfg.entropy_weight * (std::log(pk) + 1.0) * inv_n;
      }
    }
  }
  terms.loss = -(terms.surrogate + cfg.entropy_weight * terms.entropy);
  if (grad) *grad = nn::backward(spec, params, cache, g);
  return terms;
}

double value_loss(const nn::NetSpec& spec, const nn::ParamSet<double>& params,
                  const Eigen::MatrixXd& windows, const Eigen::VectorXd& targets,
                  const PPOConfig& cfg, Eigen::VectorXd* grad) {
  const Eigen::Index n = windows.cols();
  if (n == 0) throw std::invalid_argument("empty value batch");
  nn::ForwardCache<double> cache;
  const Eigen::MatrixXd v = nn::forward(spec, params, windows, grad ? &cache : nullptr);
  const Eigen::RowVectorXd diff = v.row(0) - targets.transpose();
  const double loss = cfg.value_weight * diff.squaredNorm() / static_cast<double>(n);
  if (grad) {
    const Eigen::MatrixXd g = (2.0 * cfg.value_weight / static_cast<double>(n)) * diff;
    *grad = nn::backward(spec, params, cache, g);
  }
  return loss;
}

double mean_kl(const nn::NetSpec& spec, const nn::ParamSet<double>& old_params,
               const nn::ParamSet<double>& new_params, const Eigen::MatrixXd& windows) {
  if (windows.cols() == 0) return 0.0;
  const Eigen::MatrixXd p = nn::forward(spec, old_params, windows);
  const Eigen::MatrixXd q = nn::forward(spec, new_params, windows);
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.cols(); ++i)
    for (Eigen::Index k = 0; k < p.rows(); ++k)
      if (p(k, i) > 0.0) kl += p(k, i) * (std::log(p(k, i)) - std::log(q(k, i)));
  return kl / static_cast<double>(p.cols());
}

namespace {

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(idx[i]);
  return out;
}

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

}  // namespace

PPOStats ppo_update(PPOLearner& learner, const Rollout& rollout, const PPOConfig& cfg, Rng& rng) {
  cfg.validate();
  rollout.validate();
  const Eigen::Index n = rollout.size();
  if (n == 0) throw std::invalid_argument("empty rollout");

  auto [adv, returns] =
      compute_advantages(rollout.rewards, rollout.values, rollout.dones, cfg.gamma, cfg.gae_lambda);
  if (cfg.normalize_advantages && n > 1) {
    const double mean = adv.mean();
    const double sd = std::sqrt((adv.array() - mean).square().mean());
    adv = (adv.array() - mean) / (sd + 1e-8);
  }

  const PPOLearner saved = learner;
  PPOStats stats;
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  Eigen::VectorXd pg;
  Eigen::VectorXd vg;
  try {
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (Eigen::Index start = 0; start < n; start += cfg.minibatch) {
        const Eigen::Index len = std::min<Eigen::Index>(cfg.minibatch, n - start);
        const std::vector<Eigen::Index> idx(order.begin() + start, order.begin() + start + len);
        const Eigen::MatrixXd w = gather(rollout.windows, idx);
        std::vector<int> acts(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) acts[i] = rollout.actions[idx[i]];
        const PolicyLossTerms t = policy_loss(learner.policy_spec, learner.policy, w, acts,
                                              gather(rollout.log_prob_old, idx), gather(adv, idx),
                                              cfg, &pg);
        const double vl = value_loss(learner.value_spec, learner.value, w, gather(returns, idx), cfg, &vg);
        if (!std::isfinite(t.loss) || !std::isfinite(vl))
          throw nn::NonFiniteGradient("non-finite PPO loss");
        if (stats.minibatch_steps == 0) stats.surrogate = t.surrogate;
        stats.value_loss = vl;
        stats.entropy = t.entropy;
        stats.mean_ratio = t.mean_ratio;
        nn::update(learner.policy, pg, learner.policy_opt, cfg.learning_rate);
        nn::update(learner.value, vg, learner.value_opt, cfg.value_learning_rate);
        ++stats.minibatch_steps;
      }
    }
    if (!learner.policy.values.allFinite() || !learner.value.values.allFinite())
      throw nn::NonFiniteGradient("non-finite parameters after PPO update");
  } catch (const nn::NonFiniteGradient&) {
    learner = saved;
    stats.aborted = true;
    return stats;
  }
  stats.approx_kl = mean_kl(learner.policy_spec, saved.policy, learner.policy, rollout.windows);
  return stats;
}

}  // namespace peg
