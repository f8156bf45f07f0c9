#include <doctest.h>

#include <cmath>

#include "peg/demos.hpp"
#include "peg/discriminator.hpp"

using namespace peg;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const PolicyConfig kPolicy;

// Final layer zeroed so that the logit equals `bias`.
nn::ParamSet<double> constant_logit(const nn::NetSpec& spec, double bias) {
  nn::ParamSet<double> p = nn::init_params(spec, 1);
  const Eigen::Index last = p.offsets.back();
  p.values.tail(p.size() - last).setZero();
  p.values[p.size() - 1] = bias;
  return p;
}

// Windows whose first pose channel ramps up (rising = true) or down over time,
// with noise on every channel. Classes stay separable after normalisation.
MatrixXd ramp_pairs(int n, bool rising, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  MatrixXd windows(kPolicy.features(), n);
  for (int j = 0; j < n; ++j) {
    for (int t = 0; t < kPolicy.window; ++t)
      for (int c = 0; c < kFrameChannels; ++c) {
        double v = noise(rng);
        if (c == 0) v = (rising ? 1.0 : -1.0) * t + 0.2 * noise(rng);
        windows(t * kFrameChannels + c, j) = v;
      }
  }
  return pair_features(windows, std::vector<int>(n, 1));
}

// Pairs from real rollouts: scripted expert, or uniformly random actions.
MatrixXd rollout_pairs(bool expert, int n, std::uint64_t seed) {
  const SimConfig sc;
  const HoleGeom g;
  const WiggleParams wp;
  Rng rng(seed);
  PegState s = reset(sc, g, seed);
  HistoryBuffer h(kPolicy);
  ProgressHistory progress(20);
  Wrench sensed = initial_sensed(s, g);
  int prev = 3;
  MatrixXd out(kPolicy.features() + kNumActions, n);
  for (int i = 0; i < n; ++i) {
    const VectorXd x = flatten_window(h.observe(s.pose, sensed, prev));
    progress.push(s.depth);
    const int a = expert ? static_cast<int>(scripted_expert(s, progress, g, ExpertConfig{}, rng))
                         : static_cast<int>(rng() % kNumActions);
    out.col(i) = pair_features(x, a);
    const StepResult r = step(s, decode_action(action_from_code(a), s.tick, wp, rng), sc, g, rng);
    s = r.state;
    sensed = r.sensed;
    prev = a;
    if (r.status.is_terminal()) {
      s = reset(sc, g, seed + 1000 + i);
      h.clear();
      progress.clear();
      sensed = initial_sensed(s, g);
      prev = 3;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("network shape") {
  const nn::NetSpec spec = discriminator_spec(kPolicy, DiscConfig{});
  CHECK(spec.front().input_size() == kPolicy.features() + kNumActions);
  CHECK(spec.back().output_size() == 1);
  const VectorXd pf = pair_features(VectorXd::Zero(kPolicy.features()).eval(), 2);
  CHECK(pf.tail<4>() == one_hot(2));
  CHECK_THROWS_AS(pair_features(MatrixXd(MatrixXd::Zero(kPolicy.features(), 2)), std::vector<int>{1}), nn::ShapeError);
}

TEST_CASE("score examples") {
  const nn::NetSpec spec = discriminator_spec(kPolicy, DiscConfig{});
  const VectorXd x = ramp_pairs(1, true, 1).col(0);
  CHECK(score_one(spec, constant_logit(spec, 0.0), x) == 0.5);
  CHECK(score_one(spec, constant_logit(spec, 20.0), x) == 1.0 - kDiscClamp);
  CHECK(score_one(spec, constant_logit(spec, -20.0), x) == kDiscClamp);
  const nn::ParamSet<double> p = nn::init_params(spec, 3);
  CHECK(score_one(spec, p, x) == score_one(spec, p, x));
  nn::ParamSet<double> bad = constant_logit(spec, 0.0);
  bad.values[bad.size() - 1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(score_one(spec, bad, x), NonFiniteOutput);
}

TEST_CASE("loss at d = 0.5 is ln 2") {
  const nn::NetSpec spec = discriminator_spec(kPolicy, DiscConfig{});
  const MatrixXd e = ramp_pairs(8, true, 1);
  const MatrixXd g = ramp_pairs(8, false, 2);
  CHECK(bce_loss(spec, constant_logit(spec, 0.0), e, g) == doctest::Approx(0.6931).epsilon(1e-4));
}

TEST_CASE("training input checks") {
  const DiscConfig cfg;
  const nn::NetSpec spec = discriminator_spec(kPolicy, cfg);
  nn::ParamSet<double> p = nn::init_params(spec, 1);
  auto opt = nn::OptimizerState<double>::make(cfg.optimizer, p.size());
  Rng rng(1);
  const MatrixXd e = ramp_pairs(4, true, 1);
  CHECK_THROWS_AS(train_discriminator(spec, p, opt, e, MatrixXd(e.rows(), 0), cfg, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(train_discriminator(spec, p, opt, e, ramp_pairs(3, false, 2), cfg, rng),
                  std::invalid_argument);
}

TEST_CASE("separable windows are learned") {
  DiscConfig cfg;
  cfg.iters = 500;
  const nn::NetSpec spec = discriminator_spec(kPolicy, cfg);
  nn::ParamSet<double> p = nn::init_params(spec, 4);
  auto opt = nn::OptimizerState<double>::make(cfg.optimizer, p.size());
  Rng rng(4);
  const DiscTrainResult r =
      train_discriminator(spec, p, opt, ramp_pairs(128, true, 5), ramp_pairs(128, false, 6), cfg, rng);
  CHECK(r.iters == 500);
  CHECK(r.final_loss < 0.1);
}

TEST_CASE("identical batches stay near chance") {
  const DiscConfig cfg;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const nn::NetSpec spec = discriminator_spec(kPolicy, cfg);
    nn::ParamSet<double> p = nn::init_params(spec, seed);
    auto opt = nn::OptimizerState<double>::make(cfg.optimizer, p.size());
    Rng rng(seed);
    const MatrixXd x = rollout_pairs(false, 128, seed);
    const DiscTrainResult r = train_discriminator(spec, p, opt, x, x, cfg, rng);
    CAPTURE(seed);
    CHECK(r.final_loss >= 0.6);
  }
}

TEST_CASE("fresh loss is near chance and training does not raise it") {
  const DiscConfig cfg;
  const nn::NetSpec spec = discriminator_spec(kPolicy, cfg);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    nn::ParamSet<double> p = nn::init_params(spec, 100 + seed);
    auto opt = nn::OptimizerState<double>::make(cfg.optimizer, p.size());
    Rng rng(seed);
    const MatrixXd e = rollout_pairs(true, 256, 10 + seed);
    const MatrixXd g = rollout_pairs(false, 256, 20 + seed);
    const double fresh = bce_loss(spec, p, e, g);
    CAPTURE(seed);
    CHECK(fresh >= 0.5);
    CHECK(fresh <= 0.9);
    double before = fresh;
    for (int pass = 0; pass < 3; ++pass) {
      const DiscTrainResult r = train_discriminator(spec, p, opt, e, g, cfg, rng);
      CHECK(r.initial_loss == doctest::Approx(before));
      CHECK(r.final_loss <= 1.1 * r.initial_loss);
      before = r.final_loss;
    }
  }
}

TEST_CASE("gail reward") {
  CHECK(gail_reward(0.5) == doctest::Approx(0.6931).epsilon(1e-4));
  CHECK(gail_reward(kDiscClamp) == doctest::Approx(kDiscClamp).epsilon(1e-5));
  CHECK(gail_reward(0.0) == gail_reward(kDiscClamp));
  CHECK(gail_reward(1.0) == doctest::Approx(-std::log(kDiscClamp)));
  CHECK(std::isfinite(gail_reward(1.0)));
  CHECK(gail_reward(0.5, RewardForm::kLogD) == doctest::Approx(-0.6931).epsilon(1e-4));
  for (RewardForm form : {RewardForm::kNegLogOneMinusD, RewardForm::kLogD}) {
    double last = -std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 1000; ++i) {
      const double d = kDiscClamp + (1.0 - 2.0 * kDiscClamp) * i / 1000.0;
      const double r = gail_reward(d, form);
      CHECK(std::isfinite(r));
      CHECK(r > last);
      last = r;
    }
  }
}
