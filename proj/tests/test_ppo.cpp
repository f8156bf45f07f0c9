#include <doctest.h>

#include <cmath>

#include "oracles/fd_oracle.hpp"
#include "oracles/gae_oracle.hpp"
#include "peg/ppo.hpp"

using namespace peg;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const PolicyConfig kPolicy;

VectorXd normal_vector(Eigen::Index n, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

MatrixXd unit_windows(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  MatrixXd m(kPolicy.features(), n);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

PPOLearner make_learner(std::uint64_t seed, const PPOConfig& cfg) {
  PPOLearner l;
  l.policy_spec = generator_spec(kPolicy);
  l.policy = nn::init_params(l.policy_spec, seed);
  l.policy_opt = nn::OptimizerState<double>::make(cfg.optimizer, l.policy.size());
  l.value_spec = value_spec(kPolicy);
  l.value = nn::init_params(l.value_spec, seed + 1);
  l.value_opt = nn::OptimizerState<double>::make(cfg.optimizer, l.value.size());
  return l;
}

// Rollout sampled from the learner's own policy, so log_prob_old is exact.
Rollout sampled_rollout(const PPOLearner& l, int n, std::uint64_t seed, int episode_len = 60) {
  Rng rng(seed);
  Rollout r;
  r.windows = unit_windows(n, seed);
  r.actions.resize(n);
  r.log_prob_old.resize(n);
  r.dones.resize(n);
  for (int i = 0; i < n; ++i) {
    const PolicyDecision d = act(l.policy_spec, l.policy, r.windows.col(i), rng, ActMode::kSample);
    r.actions[i] = static_cast<int>(d.action);
    r.log_prob_old[i] = d.log_prob;
    r.dones[i] = (i + 1) % episode_len == 0 || i + 1 == n;
  }
  r.rewards = normal_vector(n, rng).cwiseAbs();
  r.values = value_forward(l.value_spec, l.value, r.windows);
  return r;
}

VectorXd log_probs(const PPOLearner& l, const MatrixXd& windows, const std::vector<int>& actions) {
  const MatrixXd p = nn::forward(l.policy_spec, l.policy, windows);
  VectorXd out(windows.cols());
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = std::log(p(actions[i], i));
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  PPOConfig c;
  CHECK_NOTHROW(c.validate());
  c.clip_ratio = 1.0;
  CHECK_THROWS(c.validate());
  c = PPOConfig{};
  c.gamma = 1.5;
  CHECK_THROWS(c.validate());
  c = PPOConfig{};
  c.gae_lambda = -0.1;
  CHECK_THROWS(c.validate());
}

TEST_CASE("advantages: one-step TD when lambda is 0") {
  Rng rng(1);
  const VectorXd r = normal_vector(30, rng);
  const VectorXd v = normal_vector(30, rng);
  std::vector<bool> done(30, false);
  done[9] = done[29] = true;
  const auto [adv, ret] = compute_advantages(r, v, done, 0.99, 0.0);
  for (int t = 0; t < 30; ++t) {
    const double next = done[t] ? 0.0 : v[t + 1];
    CHECK(adv[t] == r[t] + 0.99 * next - v[t]);
  }
  CHECK((ret - adv - v).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("advantages: reward-to-go when gamma = lambda = 1 and values are zero") {
  Rng rng(2);
  const VectorXd r = normal_vector(25, rng);
  std::vector<bool> done(25, false);
  done[11] = done[24] = true;
  const auto [adv, ret] = compute_advantages(r, VectorXd::Zero(25), done, 1.0, 1.0);
  for (int t = 0; t < 25; ++t) {
    double expected = 0.0;
    for (int k = t; k < 25; ++k) {
      expected += r[k];
      if (done[k]) break;
    }
    CHECK(adv[t] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("advantages match the summation oracle on random episodes") {
  Rng rng(3);
  std::uniform_int_distribution<int> len(1, 50);
  for (int ep = 0; ep < 1000; ++ep) {
    const int n = len(rng);
    const VectorXd r = normal_vector(n, rng);
    const VectorXd v = normal_vector(n, rng);
    std::vector<bool> done(n, false);
    done[n - 1] = true;
    const auto [adv, ret] = compute_advantages(r, v, done, 0.99, 0.95);
    const VectorXd ref = oracle::gae_bruteforce(r, v, done, 0.99, 0.95);
    CHECK((adv - ref).cwiseAbs().maxCoeff() <= 1e-12);
  }
  // Several episodes concatenated.
  const int n = 200;
  const VectorXd r = normal_vector(n, rng);
  const VectorXd v = normal_vector(n, rng);
  std::vector<bool> done(n, false);
  for (int t : {17, 18, 90, 150, 199}) done[t] = true;
  const auto [adv, ret] = compute_advantages(r, v, done, 0.99, 0.95);
  CHECK((adv - oracle::gae_bruteforce(r, v, done, 0.99, 0.95)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK_THROWS_AS(compute_advantages(r, v.head(3), done, 0.99, 0.95), nn::ShapeError);
}

TEST_CASE("surrogate equals the mean advantage at ratio one") {
  const PPOConfig cfg;
  const PPOLearner l = make_learner(4, cfg);
  const Rollout r = sampled_rollout(l, 64, 4);
  Rng rng(5);
  const VectorXd adv = normal_vector(64, rng);
  const PolicyLossTerms t =
      policy_loss(l.policy_spec, l.policy, r.windows, r.actions, r.log_prob_old, adv, cfg, nullptr);
  CHECK(t.mean_ratio == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(t.surrogate == doctest::Approx(adv.mean()).epsilon(1e-12));
  CHECK(t.loss == doctest::Approx(-(t.surrogate + cfg.entropy_weight * t.entropy)).epsilon(1e-12));

  // Same through ppo_update: the first minibatch covers the whole rollout.
  PPOLearner copy = l;
  PPOConfig one_batch = cfg;
  one_batch.minibatch = 64;
  const PPOStats s = ppo_update(copy, r, one_batch, rng);
  CHECK(std::abs(s.surrogate) < 1e-9);  // normalised advantages have zero mean
}

TEST_CASE("zero advantages and zero entropy weight leave the policy unchanged") {
  PPOConfig cfg;
  cfg.entropy_weight = 0.0;
  for (auto kind : {nn::OptimizerKind::kSgd, nn::OptimizerKind::kAdam}) {
    cfg.optimizer = kind;
    PPOLearner l = make_learner(6, cfg);
    Rollout r = sampled_rollout(l, 100, 6);
    r.rewards.setZero();
    r.values.setZero();
    const VectorXd before = l.policy.values;
    Rng rng(6);
    const PPOStats s = ppo_update(l, r, cfg, rng);
    CHECK_FALSE(s.aborted);
    CHECK(l.policy.values == before);
  }
  // With an entropy bonus the policy moves even without advantages.
  cfg = PPOConfig{};
  PPOLearner l = make_learner(6, cfg);
  Rollout r = sampled_rollout(l, 100, 6);
  r.rewards.setZero();
  r.values.setZero();
  const VectorXd before = l.policy.values;
  Rng rng(6);
  ppo_update(l, r, cfg, rng);
  CHECK(l.policy.values != before);
}

TEST_CASE("policy loss gradient matches finite differences") {
  const PPOConfig cfg;
  const PPOLearner l = make_learner(7, cfg);
  const Rollout r = sampled_rollout(l, 24, 7);
  Rng rng(7);
  const VectorXd adv = normal_vector(24, rng);
  // Shift the old log-probs so that some ratios fall in the clipped region,
  // away from the clip boundaries.
  VectorXd old = r.log_prob_old;
  for (Eigen::Index i = 0; i < old.size(); ++i) old[i] += (i % 3 == 0) ? 0.5 : (i % 3 == 1 ? -0.5 : 0.0);
  VectorXd grad;
  policy_loss(l.policy_spec, l.policy, r.windows, r.actions, old, adv, cfg, &grad);
  auto f = [&](const VectorXd& x) {
    nn::ParamSet<double> p = l.policy;
    p.values = x;
    return policy_loss(l.policy_spec, p, r.windows, r.actions, old, adv, cfg, nullptr).loss;
  };
  const auto rep = oracle::fd_compare(f, l.policy.values, grad, oracle::all_coords(grad.size()));
  CHECK(rep.worst < 1e-4);

  VectorXd vgrad;
  const VectorXd targets = normal_vector(24, rng);
  value_loss(l.value_spec, l.value, r.windows, targets, cfg, &vgrad);
  auto fv = [&](const VectorXd& x) {
    nn::ParamSet<double> p = l.value;
    p.values = x;
    return value_loss(l.value_spec, p, r.windows, targets, cfg, nullptr);
  };
  CHECK(oracle::fd_compare(fv, l.value.values, vgrad, oracle::all_coords(vgrad.size())).worst < 1e-4);
}

TEST_CASE("per-sample surrogate never exceeds (1 + clip) |A|") {
  const PPOConfig cfg;
  const PPOLearner l = make_learner(8, cfg);
  const Rollout r = sampled_rollout(l, 200, 8);
  Rng rng(8);
  std::normal_distribution<double> shift(0.0, 1.0);
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    const double a = shift(rng) * 3.0;
    VectorXd old(1);
    old[0] = r.log_prob_old[i] + shift(rng);
    const PolicyLossTerms t = policy_loss(l.policy_spec, l.policy, r.windows.col(i),
                                          {r.actions[i]}, old, VectorXd::Constant(1, a), cfg, nullptr);
    CHECK(t.surrogate <= (1.0 + cfg.clip_ratio) * std::abs(a) + 1e-12);
    if (a > 0.0) CHECK(t.surrogate >= 0.0);
  }
}

TEST_CASE("one update keeps the policy close to the sampling policy") {
  const PPOConfig cfg;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    PPOLearner l = make_learner(10 + seed, cfg);
    const Rollout r = sampled_rollout(l, 1000, 10 + seed);
    const PPOLearner old = l;
    Rng rng(seed);
    const PPOStats s = ppo_update(l, r, cfg, rng);
    CAPTURE(seed);
    CHECK_FALSE(s.aborted);
    CHECK(s.minibatch_steps == cfg.epochs * 4);
    CHECK(s.approx_kl == doctest::Approx(mean_kl(l.policy_spec, old.policy, l.policy, r.windows)));
    CHECK(s.approx_kl >= 0.0);
    CHECK(s.approx_kl <= 0.1);
  }
}

TEST_CASE("update raises the probability of positively rewarded actions") {
  PPOConfig cfg;
  cfg.entropy_weight = 0.0;
  PPOLearner l = make_learner(12, cfg);
  Rollout r = sampled_rollout(l, 400, 12, 1);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.rewards[i] = r.actions[i] == 2 ? 1.0 : 0.0;
  r.values.setZero();
  const VectorXd before = log_probs(l, r.windows, r.actions);
  Rng rng(12);
  ppo_update(l, r, cfg, rng);
  const VectorXd after = log_probs(l, r.windows, r.actions);
  double up = 0.0, down = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) (r.actions[i] == 2 ? up : down) += after[i] - before[i];
  CHECK(up > 0.0);
  CHECK(down < 0.0);
}

TEST_CASE("value head") {
  const PPOConfig cfg;
  PPOLearner l = make_learner(13, cfg);
  const MatrixXd x = unit_windows(200, 13);
  const VectorXd v = value_forward(l.value_spec, l.value, x);
  CHECK(v.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(value_forward(l.value_spec, l.value, x) == v);
  CHECK(value_forward_one(l.value_spec, l.value, x.col(0)) == doctest::Approx(v[0]).epsilon(1e-12));

  const MatrixXd fit = unit_windows(32, 14);
  const VectorXd targets = VectorXd::Constant(32, 5.0);
  VectorXd grad;
  for (int i = 0; i < 500; ++i) {
    value_loss(l.value_spec, l.value, fit, targets, cfg, &grad);
    nn::update(l.value, grad, l.value_opt, cfg.value_learning_rate);
  }
  const VectorXd fitted = value_forward(l.value_spec, l.value, fit);
  CHECK((fitted.array() - 5.0).abs().maxCoeff() <= 0.5);

  l.value.values[l.value.size() - 1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS(value_forward(l.value_spec, l.value, x));
}

TEST_CASE("non-finite rollout aborts and restores the learner") {
  const PPOConfig cfg;
  PPOLearner l = make_learner(15, cfg);
  Rollout r = sampled_rollout(l, 50, 15);
  Rng rng(15);
  ppo_update(l, r, cfg, rng);  // non-trivial optimiser state
  const PPOLearner before = l;
  r.rewards[7] = std::numeric_limits<double>::quiet_NaN();
  const PPOStats s = ppo_update(l, r, cfg, rng);
  CHECK(s.aborted);
  CHECK(l.policy.values == before.policy.values);
  CHECK(l.value.values == before.value.values);
  CHECK(l.policy_opt.steps == before.policy_opt.steps);
  CHECK(l.value_opt.first_moment == before.value_opt.first_moment);

  Rollout empty;
  CHECK_THROWS(ppo_update(l, empty, cfg, rng));
  Rollout ragged = sampled_rollout(l, 10, 16);
  ragged.actions.pop_back();
  CHECK_THROWS_AS(ppo_update(l, ragged, cfg, rng), nn::ShapeError);
}
