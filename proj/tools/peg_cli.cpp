// peg: command-line entry points for training, evaluation, demonstrations,
// teleoperation and export.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "peg/binary_io.hpp"
#include "peg/config.hpp"
#include "peg/nn/param_io.hpp"
#include "peg/seeding.hpp"
#include "peg/teleop.hpp"
#include "peg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace peg;

namespace {

constexpr char kToolVersion[] = "0.1.0";
constexpr int kExitError = 1;
constexpr int kExitMissingDataset = 2;

struct CommonOptions {
  std::string config_path;
  std::string manifest_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "key = value config file");
  cmd->add_option("--manifest", o.manifest_path, "rerun with the settings of a run manifest");
  cmd->add_option("--set", o.overrides, "override a config key (key=value)");
  cmd->add_option("--seed", o.seed, "seed");
}

TrainConfig resolve_config(const CommonOptions& o) {
  TrainConfig cfg;
  if (!o.manifest_path.empty()) {
    const json m = json::parse(bin::read_file(o.manifest_path));
    for (const auto& [k, v] : m.at("config").items()) apply_setting(cfg, k, v.get<std::string>());
  }
  if (!o.config_path.empty()) apply_config_text(cfg, bin::read_file(o.config_path), o.config_path);
  apply_overrides(cfg, o.overrides);
  if (o.seed) cfg.seed = *o.seed;
  return cfg;
}

void write_manifest(const fs::path& dir, const std::string& command, const TrainConfig& cfg,
                    const json& extra) {
  fs::create_directories(dir);
  json m;
  m["tool"] = "peg";
  m["version"] = kToolVersion;
  m["command"] = command;
  m["seed"] = cfg.seed;
  m["config"] = dump_config(cfg);
  m["artifacts"] = extra;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << m.dump(2) << '\n';
}

void error_line(const std::string& kind, const std::string& detail) {
  std::cerr << json{{"error", kind}, {"detail", detail}}.dump() << std::endl;
}

int cmd_train(const CommonOptions& common, const std::optional<int>& episodes,
              const std::string& demos, const std::string& out) {
  TrainConfig cfg = resolve_config(common);
  if (episodes) cfg.n_episodes = *episodes;
  if (!demos.empty()) cfg.expert_dataset_path = demos;
  if (!out.empty()) cfg.out_dir = out;
  if (cfg.out_dir.empty()) cfg.out_dir = "run";
  cfg.validate();
  const fs::path dir(cfg.out_dir);
  write_manifest(dir, "train", cfg,
                 {{"metrics", (dir / "metrics.csv").string()},
                  {"checkpoints", (dir / "checkpoints").string()},
                  {"expert_dataset", cfg.expert_dataset_path}});
  TrainHooks hooks;
  hooks.on_warning = [](const std::string& w) { std::cerr << "warning: " << w << '\n'; };
  hooks.on_episode = [&](const EpisodeMetrics& m) {
    std::printf("episode %d/%d  ticks %d  success %d  reward %.4f  disc_loss %.4f  entropy %.3f\n",
                m.episode, cfg.n_episodes, m.insertion_ticks, m.success ? 1 : 0, m.gen_reward_mean,
                m.disc_loss, m.entropy);
    std::fflush(stdout);
  };
  const TrainResult r = run_training(cfg, hooks);
  save_checkpoint(r.final_state, (dir / "checkpoints" / "final.ckpt").string());
  const auto series = insertion_time_series(r.metrics, cfg.metric_window, cfg.sim.tick_hz);
  if (!series.empty())
    std::printf("final %d-episode mean insertion time: %.2f s\n", cfg.metric_window, series.back());
  return 0;
}

nn::ParamSet<double> load_policy(const std::string& path, const TrainConfig& cfg) {
  const std::string bytes = bin::read_file(path);
  if (bytes.rfind(nn::kParamMagic, 0) == 0) return nn::decode_params(generator_spec(cfg.policy), bytes);
  return decode_checkpoint(bytes, cfg).learner.policy;
}

int cmd_eval(const CommonOptions& common, const std::string& checkpoint, int episodes,
             const std::string& out, bool sample) {
  TrainConfig cfg = resolve_config(common);
  const nn::ParamSet<double> policy = load_policy(checkpoint, cfg);
  const EvalSummary s =
      evaluate_policy(cfg, policy, episodes, cfg.seed, sample ? ActMode::kSample : ActMode::kArgmax);
  json summary = {{"checkpoint", checkpoint},
                  {"episodes", episodes},
                  {"seed", cfg.seed},
                  {"mode", sample ? "sample" : "argmax"},
                  {"success_rate", s.success_rate},
                  {"mean_seconds", s.mean_seconds},
                  {"p50_seconds", s.p50_seconds},
                  {"p90_seconds", s.p90_seconds}};
  std::cout << summary.dump(2) << '\n';
  if (!out.empty()) {
    const fs::path dir(out);
    write_manifest(dir, "eval", cfg,
                   {{"checkpoint", checkpoint}, {"episodes", episodes},
                    {"summary", (dir / "eval_summary.json").string()},
                    {"rows", (dir / "eval_episodes.csv").string()}});
    std::ofstream(dir / "eval_summary.json") << summary.dump(2) << '\n';
    std::ofstream rows(dir / "eval_episodes.csv");
    rows << "index,env_seed,success,insertion_ticks,mean_entropy\n";
    for (std::size_t i = 0; i < s.episodes.size(); ++i) {
      const auto& e = s.episodes[i];
      rows << i << ',' << e.env_seed << ',' << (e.success ? 1 : 0) << ',' << e.insertion_ticks << ','
           << e.mean_entropy << '\n';
    }
  }
  return 0;
}

int cmd_demo_scripted(const CommonOptions& common, int n, const std::string& out) {
  TrainConfig cfg = resolve_config(common);
  const fs::path dir(out);
  write_manifest(dir, "demo-scripted", cfg, {{"count", n}, {"directory", dir.string()}});
  int ok = 0;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(i), 0x64656d6fULL);
    const Episode ep = record_scripted_demo(seed, cfg.sim, cfg.geom, cfg.wiggle, cfg.expert);
    char name[32];
    std::snprintf(name, sizeof name, "demo_%03d.pegep", i);
    save_episode(ep, (dir / name).string());
    ok += ep.success ? 1 : 0;
    std::printf("%s  success %d  ticks %d  samples %zu\n", name, ep.success ? 1 : 0,
                ep.insertion_ticks, ep.transitions.size());
  }
  std::printf("%d/%d demonstrations succeeded\n", ok, n);
  return 0;
}

int cmd_teleop(const std::string& bind, const std::string& config_path, const std::string& out,
               const std::vector<std::string>& overrides) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  apply_overrides(cfg, overrides);
  teleop::ServerOptions opts;
  opts.bind = bind;
  opts.session.sim = cfg.sim;
  opts.session.geom = cfg.geom;
  opts.session.wiggle = cfg.wiggle;
  opts.session.out_dir = out;
  opts.session.seed = cfg.seed;
  write_manifest(fs::path(out), "teleop", cfg, {{"bind", bind}, {"recordings", out}});
  teleop::TeleopServer server(opts);
  std::printf("teleop bridge listening on port %u\n", server.port());
  std::fflush(stdout);
  server.run();
  return 0;
}

int cmd_replay(const std::string& file, const std::string& out) {
  const Episode ep = load_episode(file);
  std::ofstream file_out;
  if (!out.empty()) file_out.open(out, std::ios::trunc);
  std::ostream& os = out.empty() ? std::cout : file_out;
  os << "u_fx,u_fy,u_fz,u_frx,u_fry,u_frz,p_z,r_x,r_y,f_x,f_y,f_z,m_x,m_y,m_z\n";
  char buf[64];
  for (const Transition& t : ep.transitions) {
    std::string row;
    auto put = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.9g", v);
      if (!row.empty()) row += ',';
      row += buf;
    };
    for (int i = 0; i < 6; ++i) put(t.command[i]);
    put(t.pose[kZ]);
    put(t.pose[kRx]);
    put(t.pose[kRy]);
    for (int i = 0; i < 6; ++i) put(t.sensed[i]);
    os << row << '\n';
  }
  return 0;
}

int cmd_export_metrics(const std::string& run, int window, double tick_hz, const std::string& out) {
  const fs::path csv = fs::is_directory(run) ? fs::path(run) / "metrics.csv" : fs::path(run);
  std::ifstream in(csv);
  if (!in) throw std::runtime_error("cannot read " + csv.string());
  std::string line;
  std::getline(in, line);
  if (line != kMetricsHeader) throw std::runtime_error("unexpected metrics header in " + csv.string());
  std::vector<std::vector<std::string>> rows;
  std::vector<int> ticks;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw std::runtime_error("malformed metrics row: " + line);
    ticks.push_back(std::stoi(cells[3]));
    rows.push_back(std::move(cells));
  }
  std::vector<double> series = insertion_time_series(ticks, std::min<int>(window, std::max<int>(1, ticks.size())), tick_hz);
  std::ofstream file_out;
  if (!out.empty()) file_out.open(out, std::ios::trunc);
  std::ostream& os = out.empty() ? std::cout : file_out;
  os << "episode,insertion_seconds,insertion_seconds_avg,gen_reward_mean,disc_loss,success,entropy\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    os << r[0] << ',' << ticks[i] / tick_hz << ',' << series[i] << ',' << r[1] << ',' << r[2] << ','
       << r[4] << ',' << r[5] << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Peg-in-hole imitation learning toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  CommonOptions common;
  std::optional<int> episodes;
  std::string demos;
  std::string out;
  auto* train = app.add_subcommand("train", "train a policy against expert demonstrations");
  add_common(train, common);
  train->add_option("--episodes", episodes, "training episodes");
  train->add_option("--demos", demos, "directory of expert episode files");
  train->add_option("--out", out, "run directory");

  std::string checkpoint;
  int eval_episodes = 50;
  bool sample = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "trainer checkpoint or parameter blob")->required();
  eval->add_option("--episodes", eval_episodes, "evaluation episodes");
  eval->add_option("--out", out, "output directory");
  eval->add_flag("--sample", sample, "sample actions instead of argmax");

  int n_demos = 8;
  auto* demo = app.add_subcommand("demo-scripted", "record scripted expert demonstrations");
  add_common(demo, common);
  demo->add_option("-n,--count", n_demos, "number of demonstrations");
  demo->add_option("--out", out, "output directory")->required();

  std::string bind = "127.0.0.1:8765";
  std::string teleop_config;
  std::vector<std::string> teleop_overrides;
  auto* tele = app.add_subcommand("teleop", "serve the teleoperation bridge");
  tele->add_option("--bind", bind, "listen address addr:port");
  tele->add_option("--config", teleop_config, "config file");
  tele->add_option("--set", teleop_overrides, "override a config key (key=value)");
  tele->add_option("--out", out, "directory for recordings")->required();

  std::string episode_file;
  auto* replay = app.add_subcommand("replay", "print an episode as CSV");
  replay->add_option("episode", episode_file, "episode file")->required();
  replay->add_option("--out", out, "CSV output file (default stdout)");

  std::string run_dir;
  int window = 5;
  double tick_hz = 100.0;
  auto* exp = app.add_subcommand("export-metrics", "export training metrics with moving averages");
  exp->add_option("run", run_dir, "run directory or metrics.csv")->required();
  exp->add_option("--window", window, "moving-average window");
  exp->add_option("--tick-hz", tick_hz, "simulator tick rate");
  exp->add_option("--out", out, "CSV output file (default stdout)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(common, episodes, demos, out);
    if (*eval) return cmd_eval(common, checkpoint, eval_episodes, out, sample);
    if (*demo) return cmd_demo_scripted(common, n_demos, out);
    if (*tele) return cmd_teleop(bind, teleop_config, out, teleop_overrides);
    if (*replay) return cmd_replay(episode_file, out);
    if (*exp) return cmd_export_metrics(run_dir, window, tick_hz, out);
  } catch (const DatasetNotFound& e) {
    error_line("expert dataset not found", e.what());
    return kExitMissingDataset;
  } catch (const std::exception& e) {
    error_line("failed", e.what());
    return kExitError;
  }
  return kExitError;
}
