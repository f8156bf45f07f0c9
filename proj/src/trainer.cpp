#include "peg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "peg/binary_io.hpp"
#include "peg/nn/param_io.hpp"
#include "peg/seeding.hpp"

namespace peg {

namespace {

enum Stream : std::uint64_t {
  kInitGenerator = 1,
  kInitValue,
  kInitDisc,
  kEnv,
  kRollout,
  kPpo,
  kDisc,
  kEvalEnv,
  kEvalRollout,
};

constexpr char kCheckpointMagic[] = "PEGCKPT1";
constexpr std::uint32_t kCheckpointVersion = 1;

void put_blob(std::string& out, const std::string& blob) {
  bin::put_u64(out, blob.size());
  out += blob;
}

std::string get_blob(bin::Reader& r) { return r.raw(static_cast<std::size_t>(r.u64())); }

Eigen::MatrixXd hcat(const std::vector<Eigen::MatrixXd>& blocks) {
  Eigen::Index cols = 0;
  for (const auto& b : blocks) cols += b.cols();
  Eigen::MatrixXd out(blocks.empty() ? 0 : blocks.front().rows(), cols);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    out.middleCols(at, b.cols()) = b;
    at += b.cols();
  }
  return out;
}

Eigen::MatrixXd sample_columns(const Eigen::MatrixXd& src, Eigen::Index count, Rng& rng) {
  std::vector<Eigen::Index> idx(src.cols());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  Eigen::MatrixXd out(src.rows(), count);
  for (Eigen::Index i = 0; i < count; ++i) out.col(i) = src.col(idx[i]);
  return out;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (n_episodes < 0) throw std::invalid_argument("n_episodes must be >= 0");
  if (disc_update_every < 1 || gen_updates_per_episode < 1 || replay_episodes < 1 || metric_window < 1)
    throw std::invalid_argument("training counts must be >= 1");
  sim.validate();
  geom.validate();
  policy.validate();
  ppo.validate();
  disc.validate();
}

std::string metrics_csv_row(const EpisodeMetrics& m) {
  return std::to_string(m.episode) + "," + format_double(m.gen_reward_mean) + "," +
         format_double(m.disc_loss) + "," + std::to_string(m.insertion_ticks) + "," +
         (m.success ? "1" : "0") + "," + format_double(m.entropy);
}

void write_metrics_csv(const TrainMetrics& metrics, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << kMetricsHeader << '\n';
  for (const auto& m : metrics) out << metrics_csv_row(m) << '\n';
}

std::vector<double> insertion_time_series(const std::vector<int>& ticks, int window,
                                          double tick_hz) {
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  if (!(tick_hz > 0.0)) throw std::invalid_argument("tick_hz must be > 0");
  std::vector<double> out;
  if (ticks.empty()) return out;
  if (static_cast<std::size_t>(window) > ticks.size()) {
    const double sum = std::accumulate(ticks.begin(), ticks.end(), 0.0);
    return {sum / static_cast<double>(ticks.size()) / tick_hz};
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < ticks.size(); ++i) {
    sum += ticks[i];
    if (i >= static_cast<std::size_t>(window)) sum -= ticks[i - window];
    const double n = static_cast<double>(std::min<std::size_t>(i + 1, window));
    out.push_back(sum / n / tick_hz);
  }
  return out;
}

std::vector<double> insertion_time_series(const TrainMetrics& metrics, int window, double tick_hz) {
  std::vector<int> ticks;
  for (const auto& m : metrics) ticks.push_back(m.insertion_ticks);
  return insertion_time_series(ticks, window, tick_hz);
}

EpisodeStatus CollectedEpisode::final_status() const {
  return statuses.empty() ? EpisodeStatus::running() : statuses.back();
}

CollectedEpisode collect_episode(const SimConfig& sim, const HoleGeom& geom,
                                 const WiggleParams& wiggle, const PolicyConfig& policy,
                                 std::uint64_t env_seed, const ActionSource& source, Rng& rng) {
  CollectedEpisode out;
  Episode& ep = out.episode;
  ep.kind = EpisodeKind::kRollout;
  ep.seed = env_seed;
  ep.geom = geom;
  ep.tick_hz = sim.tick_hz;
  PegState s = reset(sim, geom, env_seed);
  Wrench sensed = initial_sensed(s, geom);
  HistoryBuffer history(policy);
  int prev = static_cast<int>(Action::kIdle);
  std::vector<Eigen::VectorXd> windows;
  std::vector<double> log_probs;
  std::vector<double> entropies;
  EpisodeStatus status = EpisodeStatus::running();
  while (status.is_running()) {
    const Eigen::VectorXd w = flatten_window(history.observe(s.pose, sensed, prev));
    const PolicyDecision d = source(w, rng);
    const Wrench target = decode_action(d.action, s.tick, wiggle, rng);
    Transition t;
    t.tick = s.tick;
    t.timestamp = s.tick / sim.tick_hz;
    t.pose = s.pose;
    t.sensed = sensed.vector();
    t.command = target.vector();
    t.action = static_cast<int>(d.action);
    StepResult res;
    try {
      res = step(s, target, sim, geom, rng);
    } catch (const SimFault& e) {
      ep.fault = e.what();
      break;
    }
    ep.transitions.push_back(t);
    windows.push_back(w);
    out.actions.push_back(t.action);
    log_probs.push_back(d.log_prob);
    entropies.push_back(entropy(d.probs));
    s = res.state;
    sensed = res.sensed;
    status = res.status;
    out.statuses.push_back(status);
    prev = t.action;
  }
  ep.success = status.is_success();
  ep.insertion_ticks = ep.success ? status.success_ticks() : sim.max_ticks;
  out.windows.resize(policy.features(), static_cast<Eigen::Index>(windows.size()));
  for (std::size_t i = 0; i < windows.size(); ++i) out.windows.col(static_cast<Eigen::Index>(i)) = windows[i];
  out.log_probs = Eigen::Map<Eigen::VectorXd>(log_probs.data(), static_cast<Eigen::Index>(log_probs.size()));
  out.entropies = Eigen::Map<Eigen::VectorXd>(entropies.data(), static_cast<Eigen::Index>(entropies.size()));
  return out;
}

CollectedEpisode collect_episode(const SimConfig& sim, const HoleGeom& geom,
                                 const WiggleParams& wiggle, const PolicyConfig& policy,
                                 std::uint64_t env_seed, const nn::NetSpec& spec,
                                 const nn::ParamSet<double>& params, ActMode mode, Rng& rng) {
  return collect_episode(sim, geom, wiggle, policy, env_seed,
                         [&](const Eigen::VectorXd& w, Rng& r) { return act(spec, params, w, r, mode); },
                         rng);
}

TrainerState init_trainer_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainerState st;
  PPOLearner& l = st.learner;
  l.policy_spec = generator_spec(cfg.policy);
  l.value_spec = value_spec(cfg.policy);
  l.policy = nn::init_params<double>(l.policy_spec, derive_seed(cfg.seed, 0, kInitGenerator));
  l.value = nn::init_params<double>(l.value_spec, derive_seed(cfg.seed, 0, kInitValue));
  l.policy_opt = nn::OptimizerState<double>::make(cfg.ppo.optimizer, l.policy.size());
  l.value_opt = nn::OptimizerState<double>::make(cfg.ppo.optimizer, l.value.size());
  st.disc_spec = discriminator_spec(cfg.policy, cfg.disc);
  st.disc = nn::init_params<double>(st.disc_spec, derive_seed(cfg.seed, 0, kInitDisc));
  st.disc_opt = nn::OptimizerState<double>::make(cfg.disc.optimizer, st.disc.size());
  return st;
}

std::string encode_checkpoint(const TrainerState& st) {
  std::string out(kCheckpointMagic, 8);
  bin::put_u32(out, kCheckpointVersion);
  bin::put_u32(out, static_cast<std::uint32_t>(st.episode));
  put_blob(out, nn::encode_params(st.learner.policy_spec, st.learner.policy));
  put_blob(out, nn::encode_params(st.learner.value_spec, st.learner.value));
  put_blob(out, nn::encode_params(st.disc_spec, st.disc));
  put_blob(out, nn::encode_optimizer(st.learner.policy_opt));
  put_blob(out, nn::encode_optimizer(st.learner.value_opt));
  put_blob(out, nn::encode_optimizer(st.disc_opt));
  bin::put_u32(out, static_cast<std::uint32_t>(st.replay.size()));
  for (const auto& m : st.replay) {
    bin::put_u64(out, static_cast<std::uint64_t>(m.rows()));
    bin::put_u64(out, static_cast<std::uint64_t>(m.cols()));
    bin::put_f64s(out, m.reshaped());
  }
  return out;
}

TrainerState decode_checkpoint(const std::string& bytes, const TrainConfig& cfg) {
  TrainerState st = init_trainer_state(cfg);
  bin::Reader r(bytes);
  if (r.raw(8) != std::string(kCheckpointMagic, 8)) throw bin::FormatError("not a checkpoint");
  if (r.u32() != kCheckpointVersion) throw bin::FormatError("unsupported checkpoint version");
  st.episode = static_cast<int>(r.u32());
  st.learner.policy = nn::decode_params(st.learner.policy_spec, get_blob(r));
  st.learner.value = nn::decode_params(st.learner.value_spec, get_blob(r));
  st.disc = nn::decode_params(st.disc_spec, get_blob(r));
  st.learner.policy_opt = nn::decode_optimizer(get_blob(r));
  st.learner.value_opt = nn::decode_optimizer(get_blob(r));
  st.disc_opt = nn::decode_optimizer(get_blob(r));
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto rows = static_cast<Eigen::Index>(r.u64());
    const auto cols = static_cast<Eigen::Index>(r.u64());
    if (rows != st.disc_spec.front().input_size()) throw bin::FormatError("replay shape mismatch");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.f64();
    st.replay.push_back(std::move(m));
  }
  if (r.remaining() != 0) throw bin::FormatError("trailing bytes in checkpoint");
  return st;
}

void save_checkpoint(const TrainerState& st, const std::string& path) {
  bin::write_file(path, encode_checkpoint(st));
}

TrainerState load_checkpoint(const std::string& path, const TrainConfig& cfg) {
  return decode_checkpoint(bin::read_file(path), cfg);
}

DemoDataset load_expert_dataset(const TrainConfig& cfg) {
  const std::vector<std::string> files = cfg.expert_dataset_path.empty()
                                             ? std::vector<std::string>{}
                                             : list_episode_files(cfg.expert_dataset_path);
  if (files.empty()) throw DatasetNotFound("expert dataset not found: " + cfg.expert_dataset_path);
  return build_expert_dataset(files, cfg.policy,
                              DiscretizeConfig::from(cfg.wiggle, cfg.policy.window));
}

TrainResult run_training(const TrainConfig& cfg, const DemoDataset& expert, TrainerState state,
                         const TrainHooks& hooks) {
  cfg.validate();
  if (expert.samples() == 0) throw std::invalid_argument("expert dataset is empty");
  const Eigen::MatrixXd expert_pairs = pair_features(expert.windows, expert.actions);
  auto emit = [&](const TrainEvent& e) {
    if (hooks.on_event) hooks.on_event(e);
  };
  std::filesystem::path ckpt_dir;
  if (!cfg.out_dir.empty()) {
    ckpt_dir = std::filesystem::path(cfg.out_dir) / "checkpoints";
    std::filesystem::create_directories(ckpt_dir);
  }

  TrainResult result;
  PPOLearner& learner = state.learner;
  for (int e = state.episode + 1; e <= cfg.n_episodes; ++e) {
    Rng rollout_rng(derive_seed(cfg.seed, e, kRollout));
    CollectedEpisode ce = collect_episode(cfg.sim, cfg.geom, cfg.wiggle, cfg.policy,
                                          derive_seed(cfg.seed, e, kEnv), learner.policy_spec,
                                          learner.policy, ActMode::kSample, rollout_rng);
    emit({TrainEvent::Kind::kCollect, e});
    if (!ce.episode.fault.empty() && hooks.on_warning)
      hooks.on_warning("episode " + std::to_string(e) + " aborted: " + ce.episode.fault);

    EpisodeMetrics m;
    m.episode = e;
    m.success = ce.episode.success;
    m.insertion_ticks = ce.episode.insertion_ticks;
    m.entropy = ce.entropies.size() > 0 ? ce.entropies.mean() : 0.0;
    m.disc_loss = std::numeric_limits<double>::quiet_NaN();

    const Eigen::Index n = ce.windows.cols();
    if (n > 0) {
      const Eigen::MatrixXd pairs = pair_features(ce.windows, ce.actions);
      const Eigen::VectorXd d = score(state.disc_spec, state.disc, pairs);
      Rollout ro;
      ro.windows = ce.windows;
      ro.actions = ce.actions;
      ro.log_prob_old = ce.log_probs;
      ro.rewards = d.unaryExpr([&](double x) { return gail_reward(x, cfg.disc.reward); });
      ro.dones.assign(n, false);
      ro.dones.back() = true;
      m.gen_reward_mean = ro.rewards.mean();

      Rng ppo_rng(derive_seed(cfg.seed, e, kPpo));
      for (int u = 0; u < cfg.gen_updates_per_episode; ++u) {
        ro.values = value_forward(learner.value_spec, learner.value, ro.windows);
        const PPOStats stats = ppo_update(learner, ro, cfg.ppo, ppo_rng);
        if (stats.aborted && hooks.on_warning)
          hooks.on_warning("episode " + std::to_string(e) + ": PPO update aborted on non-finite loss");
        emit({TrainEvent::Kind::kGenerator, e});
      }

      state.replay.push_back(pairs);
      while (static_cast<int>(state.replay.size()) > cfg.replay_episodes)
        state.replay.erase(state.replay.begin());
    }

    if (e % cfg.disc_update_every == 0 && !state.replay.empty()) {
      Rng disc_rng(derive_seed(cfg.seed, e, kDisc));
      const Eigen::MatrixXd pool = hcat(state.replay);
      const Eigen::Index count = std::min(pool.cols(), expert_pairs.cols());
      const Eigen::MatrixXd eb = sample_columns(expert_pairs, count, disc_rng);
      const Eigen::MatrixXd gb = sample_columns(pool, count, disc_rng);
      const DiscTrainResult dr =
          train_discriminator(state.disc_spec, state.disc, state.disc_opt, eb, gb, cfg.disc, disc_rng);
      m.disc_loss = dr.final_loss;
      emit({TrainEvent::Kind::kDiscriminator, e, eb.cols(), gb.cols()});
    }

    state.episode = e;
    result.metrics.push_back(m);
    if (!ckpt_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "ep_%03d.ckpt", e);
      save_checkpoint(state, (ckpt_dir / name).string());
      std::ofstream csv(std::filesystem::path(cfg.out_dir) / "metrics.csv", std::ios::app);
      csv << metrics_csv_row(m) << '\n';
    }
    if (hooks.on_episode) hooks.on_episode(m);
  }
  result.final_state = std::move(state);
  return result;
}

TrainResult run_training(const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const DemoDataset expert = load_expert_dataset(cfg);
  if (hooks.on_warning)
    for (const auto& w : expert.warnings) hooks.on_warning(w);
  TrainerState state = init_trainer_state(cfg);
  if (!cfg.out_dir.empty()) {
    const auto ckpt_dir = std::filesystem::path(cfg.out_dir) / "checkpoints";
    std::filesystem::create_directories(ckpt_dir);
    save_checkpoint(state, (ckpt_dir / "init.ckpt").string());
    write_metrics_csv({}, (std::filesystem::path(cfg.out_dir) / "metrics.csv").string());
  }
  return run_training(cfg, expert, std::move(state), hooks);
}

EvalSummary evaluate_policy(const TrainConfig& cfg, const nn::ParamSet<double>& policy,
                            int n_episodes, std::uint64_t seed, ActMode mode) {
  if (n_episodes < 0) throw std::invalid_argument("n_episodes must be >= 0");
  const nn::NetSpec spec = generator_spec(cfg.policy);
  EvalSummary s;
  std::vector<double> seconds;
  for (int i = 0; i < n_episodes; ++i) {
    Rng rng(derive_seed(seed, i, kEvalRollout));
    const std::uint64_t env_seed = derive_seed(seed, i, kEvalEnv);
    const CollectedEpisode ce =
        collect_episode(cfg.sim, cfg.geom, cfg.wiggle, cfg.policy, env_seed, spec, policy, mode, rng);
    EvalEpisode ee;
    ee.env_seed = env_seed;
    ee.success = ce.episode.success;
    ee.insertion_ticks = ce.episode.insertion_ticks;
    ee.mean_entropy = ce.entropies.size() > 0 ? ce.entropies.mean() : 0.0;
    s.episodes.push_back(ee);
    seconds.push_back(ee.insertion_ticks / cfg.sim.tick_hz);
  }
  if (n_episodes == 0) return s;
  s.success_rate = std::count_if(s.episodes.begin(), s.episodes.end(),
                                 [](const EvalEpisode& e) { return e.success; }) /
                   static_cast<double>(n_episodes);
  s.mean_seconds = std::accumulate(seconds.begin(), seconds.end(), 0.0) / n_episodes;
  std::sort(seconds.begin(), seconds.end());
  auto pct = [&](double q) {
    const auto rank = static_cast<std::size_t>(std::ceil(q * seconds.size()));
    return seconds[std::max<std::size_t>(rank, 1) - 1];
  };
  s.p50_seconds = pct(0.5);
  s.p90_seconds = pct(0.9);
  return s;
}

}  // namespace peg
