// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// An optional argument restricts the run to criteria whose name contains it.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "oracles/fd_oracle.hpp"
#include "oracles/gae_oracle.hpp"
#include "peg/demos.hpp"
#include "peg/discriminator.hpp"
#include "peg/nn/network.hpp"
#include "peg/ppo.hpp"
#include "peg/seeding.hpp"
#include "peg/trainer.hpp"

using namespace peg;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

void info(const std::string& line) { std::printf("  %s\n", line.c_str()); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// ---- training runs shared by several criteria ----

constexpr int kSeeds = 5;
constexpr int kDemos = 8;

struct Run {
  std::uint64_t seed = 0;
  int demos = 0;
  int demo_successes = 0;
  TrainConfig cfg;
  TrainResult result;
  nn::ParamSet<double> fresh_policy;
  std::vector<TrainEvent> events;
  double ratio = 0.0;
  double seconds = 0.0;
};

// Same recipe as `peg demo-scripted -n 8` followed by `peg train`.
Run train_seed(std::uint64_t seed) {
  Run run;
  run.seed = seed;
  run.cfg.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = fs::temp_directory_path() / ("peg_acceptance_demos_" + std::to_string(seed));
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (int i = 0; i < kDemos; ++i) {
    const Episode ep = record_scripted_demo(derive_seed(seed, static_cast<std::uint64_t>(i), 0x64656d6fULL),
                                            run.cfg.sim, run.cfg.geom, run.cfg.wiggle, run.cfg.expert);
    char name[32];
    std::snprintf(name, sizeof name, "demo_%03d.pegep", i);
    save_episode(ep, (dir / name).string());
    run.demo_successes += ep.success ? 1 : 0;
  }
  run.cfg.expert_dataset_path = dir.string();
  const DemoDataset ds = load_expert_dataset(run.cfg);
  run.demos = static_cast<int>(ds.episodes.size());
  TrainerState st = init_trainer_state(run.cfg);
  run.fresh_policy = st.learner.policy;
  TrainHooks hooks;
  hooks.on_event = [&](const TrainEvent& e) { run.events.push_back(e); };
  run.result = run_training(run.cfg, ds, std::move(st), hooks);
  const auto series = insertion_time_series(run.result.metrics, 5, run.cfg.sim.tick_hz);
  run.ratio = series.size() == 20 ? series[19] / series[4] : NAN;
  run.seconds = seconds_since(t0);
  fs::remove_all(dir);
  return run;
}

std::vector<Run>& runs() {
  static std::vector<Run> all = [] {
    std::vector<Run> v;
    for (std::uint64_t s = 1; s <= kSeeds; ++s) {
      v.push_back(train_seed(s));
      const Run& r = v.back();
      info("seed " + std::to_string(s) + ": early " +
           fmt("%.2f s", insertion_time_series(r.result.metrics, 5, r.cfg.sim.tick_hz)[4]) + ", late " +
           fmt("%.2f s", insertion_time_series(r.result.metrics, 5, r.cfg.sim.tick_hz)[19]) + ", ratio " +
           fmt("%.3f", r.ratio) + ", wall " + fmt("%.0f s", r.seconds));
    }
    return v;
  }();
  return all;
}

// ---- criteria ----

Outcome learning_curve() {
  int ok = 0;
  double worst_wall = 0.0;
  for (const Run& r : runs()) {
    ok += r.ratio <= 0.75 ? 1 : 0;
    worst_wall = std::max(worst_wall, r.seconds);
  }
  return {ok >= 4 && worst_wall < 600.0, std::to_string(ok) + "/5 seeds with late/early <= 0.75, slowest seed " +
                                             fmt("%.0f s", worst_wall)};
}

Outcome sample_efficiency() {
  bool exact = true;
  int ok = 0;
  for (const Run& r : runs()) {
    exact = exact && r.demos == kDemos && r.demo_successes == kDemos && r.result.metrics.size() == 20 &&
            r.cfg.n_episodes == 20;
    ok += r.ratio <= 0.75 ? 1 : 0;
  }
  return {exact && ok >= 4, std::string(exact ? "8 demos and 20 episodes in every run" : "demo or episode count off") +
                                ", " + std::to_string(ok) + "/5 seeds improve"};
}

Outcome trained_vs_fresh() {
  const Run& r = runs().front();
  const TrainConfig& cfg = r.cfg;
  const nn::NetSpec spec = generator_spec(cfg.policy);

  // 100 windows from simulator states visited under random actions.
  Rng rng(derive_seed(cfg.seed, 0, 0x77696e64ULL));
  double total = 0.0;
  int n = 0;
  const WiggleParams wp;
  for (std::uint64_t ep = 0; n < 100; ++ep) {
    PegState s = reset(cfg.sim, cfg.geom, derive_seed(cfg.seed, ep, 0x72616e64ULL));
    HistoryBuffer h(cfg.policy);
    Wrench sensed = initial_sensed(s, cfg.geom);
    int prev = 3;
    const int skip = static_cast<int>(rng() % 200);
    for (int t = 0; t <= skip; ++t) {
      const VectorXd x = flatten_window(h.observe(s.pose, sensed, prev));
      const int a = static_cast<int>(rng() % kNumActions);
      if (t == skip) {
        total += entropy(act(spec, r.fresh_policy, x, rng, ActMode::kArgmax).probs);
        ++n;
        break;
      }
      const StepResult sr = step(s, decode_action(action_from_code(a), s.tick, wp, rng), cfg.sim, cfg.geom, rng);
      s = sr.state;
      sensed = sr.sensed;
      prev = a;
      if (sr.status.is_terminal()) break;
    }
  }
  const double fresh_entropy = total / n;
  const EvalSummary trained = evaluate_policy(cfg, r.result.final_state.learner.policy, 50, 0xE7A1);
  const EvalSummary fresh = evaluate_policy(cfg, r.fresh_policy, 50, 0xE7A1);
  for (const Run& other : runs()) {
    const double t = evaluate_policy(other.cfg, other.result.final_state.learner.policy, 50, 0xE7A1).success_rate;
    const double f = evaluate_policy(other.cfg, other.fresh_policy, 50, 0xE7A1).success_rate;
    info("seed " + std::to_string(other.seed) + ": trained " + fmt("%.2f", t) + ", fresh " + fmt("%.2f", f));
  }
  const bool pass = fresh_entropy >= 1.2 && trained.success_rate >= 0.9 && fresh.success_rate <= 0.3;
  return {pass, "seed 1: fresh entropy " + fmt("%.3f", fresh_entropy) + " nats, trained success " +
                    fmt("%.2f", trained.success_rate) + ", fresh success " + fmt("%.2f", fresh.success_rate)};
}

Outcome discriminator_trend() {
  const TrainMetrics& m = runs().front().result.metrics;
  if (m.size() != 20 || std::isnan(m[0].disc_loss)) return {false, "missing discriminator losses"};
  double lo = 1e9, hi = -1e9;
  bool returns = false;
  for (int e = 10; e < 20; ++e) {
    const double l = m[e].disc_loss;
    if (std::isnan(l)) return {false, "episode " + std::to_string(e + 1) + " has no discriminator round"};
    lo = std::min(lo, l);
    hi = std::max(hi, l);
    returns = returns || std::abs(l - m[0].disc_loss) <= 0.05;
  }
  return {hi - lo <= 0.3 && !returns, "episode 1 loss " + fmt("%.3f", m[0].disc_loss) + ", episodes 11-20 in [" +
                                          fmt("%.3f", lo) + ", " + fmt("%.3f", hi) + "]"};
}

Outcome layer_norm_suite() {
  bool ok = true;
  MatrixXd x(3, 2);
  x << 5, 1, 5, 2, 5, 3;
  const MatrixXd y = nn::layer_norm_time(x, 0.1);
  ok = ok && y.col(0).isZero(0.0);
  ok = ok && std::abs(y(0, 1) + 1.0911) <= 1e-4 && y(1, 1) == 0.0 && std::abs(y(2, 1) - 1.0911) <= 1e-4;
  Rng rng(1);
  std::uniform_real_distribution<double> shift(-100.0, 100.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const MatrixXd w = normal_matrix(10, kFrameChannels, rng, 5.0);
    const MatrixXd s = (w.array() + shift(rng)).matrix();
    worst = std::max(worst, (nn::layer_norm_time(w, 0.1) - nn::layer_norm_time(s, 0.1)).cwiseAbs().maxCoeff());
  }
  ok = ok && worst <= 1e-9;
  return {ok, "examples exact to 1e-4, worst shift deviation " + fmt("%.2e", worst) + " over 1000 windows"};
}

Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const PolicyConfig pc;
  const DiscConfig dc;
  const std::vector<std::pair<std::string, nn::NetSpec>> nets = {
      {"generator", generator_spec(pc)}, {"value", value_spec(pc)}, {"discriminator", discriminator_spec(pc, dc)}};
  bool ok = true;
  std::string detail;
  for (const auto& [name, spec] : nets) {
    double worst = 0.0;
    for (int point = 0; point < 20; ++point) {
      Rng rng(derive_seed(point, 0, 0x6664ULL));
      nn::ParamSet<double> p = nn::init_params<double>(spec, rng());
      p.values += normal_matrix(p.size(), 1, rng, 0.05);
      MatrixXd input = normal_matrix(pc.features(), 1, rng, 2.0);
      if (name == "discriminator") input = pair_features(input, std::vector<int>{point % kNumActions});
      nn::ForwardCache<double> cache;
      const MatrixXd out = nn::forward(spec, p, input, &cache);
      const MatrixXd w = normal_matrix(out.rows(), out.cols(), rng);
      const VectorXd analytic = nn::backward(spec, p, cache, w);
      nn::ParamSet<double> q = p;
      auto f = [&](const VectorXd& v) {
        q.values = v;
        return (nn::forward(spec, q, input).array() * w.array()).sum();
      };
      worst = std::max(worst, oracle::fd_compare(f, p.values, analytic, oracle::all_coords(p.size())).worst);
    }
    ok = ok && worst < 1e-4;
    detail += name + " " + fmt("%.1e", worst) + ", ";
  }
  const double wall = seconds_since(t0);
  return {ok && wall < 60.0, detail + "all coordinates at 20 points each, " + fmt("%.1f s", wall)};
}

Outcome gae_oracle() {
  Rng rng(3);
  double worst = 0.0;
  for (int e = 0; e < 1000; ++e) {
    const int len = 1 + static_cast<int>(rng() % 50);
    const VectorXd r = normal_matrix(len, 1, rng);
    const VectorXd v = normal_matrix(len, 1, rng);
    std::vector<bool> done(len, false);
    done.back() = rng() % 2 == 0;
    const VectorXd adv = compute_advantages(r, v, done, 0.99, 0.95).first;
    worst = std::max(worst, (adv - oracle::gae_bruteforce(r, v, done, 0.99, 0.95)).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-12, "worst deviation " + fmt("%.1e", worst) + " over 1000 episodes"};
}

Outcome simulator_properties() {
  const SimConfig c;
  const HoleGeom g;
  const WiggleParams w;
  std::string detail;

  // Determinism, force boundedness and containment on mixed-action episodes.
  bool deterministic = true, bounded = true, contained = true;
  const double lateral_bound = c.force_limit / g.wall_stiffness;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto run = [&](std::vector<Vector6d>* trace) {
      PegState s = reset(c, g, seed);
      Rng rng(derive_seed(seed, 1));
      for (int i = 0; i < c.max_ticks; ++i) {
        const Action a = action_from_code(static_cast<int>(rng() % kNumActions));
        const StepResult r = step(s, decode_action(a, s.tick, w, rng), c, g, rng);
        trace->push_back(r.state.pose);
        trace->push_back(r.sensed.vector());
        bounded = bounded && r.applied.force.cwiseAbs().maxCoeff() <= c.force_limit;
        contained = contained && r.state.depth <= g.hole_depth &&
                    contact_wrench(r.state.pose, g).max_lateral_penetration <= lateral_bound;
        s = r.state;
        if (r.status.is_terminal()) break;
      }
    };
    std::vector<Vector6d> a, b;
    run(&a);
    run(&b);
    deterministic = deterministic && a == b;
  }

  // Jam escape: drive straight down until two-point contact, then wiggle down.
  int jams = 0, escapes = 0;
  std::uint64_t seed = 0;
  for (; jams < 100 && seed < 5000; ++seed) {
    PegState s = reset(c, g, seed);
    Rng rng(derive_seed(seed, 2));
    EpisodeStatus status = EpisodeStatus::running();
    while (status.is_running() && s.contact_points < 2) {
      const StepResult r = step(s, decode_action(Action::kDown, s.tick, w, rng), c, g, rng);
      s = r.state;
      status = r.status;
    }
    if (!status.is_running()) continue;
    ++jams;
    while (status.is_running()) {
      const StepResult r = step(s, decode_action(Action::kDownWiggle, s.tick, w, rng), c, g, rng);
      s = r.state;
      status = r.status;
    }
    escapes += status.is_success() ? 1 : 0;
  }
  const double escape_rate = jams ? static_cast<double>(escapes) / jams : 0.0;

  int expert_ok = 0;
  for (std::uint64_t s = 0; s < 100; ++s)
    expert_ok += record_scripted_demo(derive_seed(s, 0, 0x657870ULL), c, g, w, ExpertConfig{}).success ? 1 : 0;

  const bool pass = deterministic && bounded && contained && jams == 100 && escape_rate >= 0.9 && expert_ok >= 95;
  detail = std::string("determinism ") + (deterministic ? "ok" : "broken") + ", force bound " +
           (bounded ? "ok" : "broken") + ", containment " + (contained ? "ok" : "broken") + ", jam escape " +
           std::to_string(escapes) + "/" + std::to_string(jams) + " (" + std::to_string(seed) +
           " resets scanned), expert " + std::to_string(expert_ok) + "/100";
  return {pass, detail};
}

Outcome balanced_alternation() {
  bool balanced = true, ordered = true;
  int rounds = 0;
  for (const Run& r : runs()) {
    std::map<int, std::vector<TrainEvent::Kind>> per_episode;
    for (const TrainEvent& e : r.events) {
      per_episode[e.episode].push_back(e.kind);
      if (e.kind == TrainEvent::Kind::kDiscriminator) {
        ++rounds;
        balanced = balanced && e.expert_count == e.generated_count && e.expert_count > 0;
      }
    }
    for (const auto& [ep, kinds] : per_episode) {
      // Collect, then every generator update, then the discriminator round.
      std::vector<TrainEvent::Kind> expected{TrainEvent::Kind::kCollect};
      for (int u = 0; u < r.cfg.gen_updates_per_episode; ++u) expected.push_back(TrainEvent::Kind::kGenerator);
      if (ep % r.cfg.disc_update_every == 0) expected.push_back(TrainEvent::Kind::kDiscriminator);
      ordered = ordered && kinds == expected;
    }
    ordered = ordered && per_episode.size() == 20;
  }
  return {balanced && ordered, std::to_string(rounds) + " discriminator rounds, counts " +
                                   (balanced ? "equal" : "unequal") + ", phases " +
                                   (ordered ? "never interleaved" : "interleaved")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string filter = argc > 1 ? argv[1] : "";
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"layer-norm suite", layer_norm_suite},
      {"gradient oracle", gradient_oracle},
      {"GAE oracle", gae_oracle},
      {"simulator properties", simulator_properties},
      {"learning curve", learning_curve},
      {"sample efficiency", sample_efficiency},
      {"trained vs fresh", trained_vs_fresh},
      {"discriminator trend", discriminator_trend},
      {"balanced batches and alternation", balanced_alternation},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    if (!filter.empty() && name.find(filter) == std::string::npos) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
