#include "peg/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "peg/binary_io.hpp"

namespace peg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::logic_error&) {
    throw ConfigError("not a number: '" + s + "'");
  }
  if (used != s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

long long parse_int(const std::string& s) {
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("not an integer: '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("not an unsigned integer: '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("not a boolean: '" + s + "'");
}

Vector6d parse_vec6(const std::string& s) {
  Vector6d v;
  std::stringstream ss(s);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 6) throw ConfigError("expected 6 comma-separated values: '" + s + "'");
    v[i++] = parse_double(trim(item));
  }
  if (i != 6) throw ConfigError("expected 6 comma-separated values: '" + s + "'");
  return v;
}

std::string fmt_vec6(const Vector6d& v) {
  std::string out;
  for (int i = 0; i < 6; ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

nn::OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return nn::OptimizerKind::kSgd;
  if (s == "adam") return nn::OptimizerKind::kAdam;
  throw ConfigError("optimizer must be sgd or adam: '" + s + "'");
}

std::string fmt_optimizer(nn::OptimizerKind k) { return k == nn::OptimizerKind::kSgd ? "sgd" : "adam"; }

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

#define PEG_DOUBLE(key, member)                                                       \
  {key, {[](const TrainConfig& c) { return fmt(c.member); },                          \
         [](TrainConfig& c, const std::string& v) { c.member = parse_double(v); }}}
#define PEG_INT(key, member)                                                          \
  {key, {[](const TrainConfig& c) { return std::to_string(c.member); },               \
         [](TrainConfig& c, const std::string& v) { c.member = static_cast<int>(parse_int(v)); }}}
#define PEG_BOOL(key, member)                                                         \
  {key, {[](const TrainConfig& c) { return std::string(c.member ? "true" : "false"); }, \
         [](TrainConfig& c, const std::string& v) { c.member = parse_bool(v); }}}
#define PEG_STRING(key, member)                                                       \
  {key, {[](const TrainConfig& c) { return c.member; },                               \
         [](TrainConfig& c, const std::string& v) { c.member = v; }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      PEG_DOUBLE("sim.tick_hz", sim.tick_hz),
      {"sim.impedance_stiffness",
       {[](const TrainConfig& c) { return fmt_vec6(c.sim.impedance_stiffness); },
        [](TrainConfig& c, const std::string& v) { c.sim.impedance_stiffness = parse_vec6(v); }}},
      {"sim.impedance_damping",
       {[](const TrainConfig& c) { return fmt_vec6(c.sim.impedance_damping); },
        [](TrainConfig& c, const std::string& v) { c.sim.impedance_damping = parse_vec6(v); }}},
      PEG_DOUBLE("sim.force_limit", sim.force_limit),
      PEG_DOUBLE("sim.moment_limit", sim.moment_limit),
      PEG_INT("sim.max_ticks", sim.max_ticks),
      PEG_DOUBLE("sim.start_offset_range", sim.start_offset_range),
      PEG_DOUBLE("sim.start_tilt_range", sim.start_tilt_range),
      PEG_DOUBLE("sim.start_height", sim.start_height),
      PEG_BOOL("sim.gravity_compensated", sim.gravity_compensated),
      PEG_DOUBLE("sim.peg_weight", sim.peg_weight),
      PEG_DOUBLE("sim.sensor_noise", sim.sensor_noise),
      PEG_INT("sim.substeps", sim.substeps),
      PEG_DOUBLE("geom.hole_radius", geom.hole_radius),
      PEG_DOUBLE("geom.clearance", geom.clearance),
      PEG_DOUBLE("geom.hole_depth", geom.hole_depth),
      PEG_DOUBLE("geom.chamfer", geom.chamfer),
      PEG_DOUBLE("geom.wall_stiffness", geom.wall_stiffness),
      PEG_DOUBLE("geom.friction_coeff", geom.friction_coeff),
      PEG_DOUBLE("wiggle.down_force", wiggle.down_force),
      PEG_DOUBLE("wiggle.amplitude", wiggle.amplitude),
      PEG_INT("policy.window", policy.window),
      PEG_DOUBLE("policy.norm_eps", policy.norm_eps),
      PEG_INT("policy.conv_filters", policy.conv_filters),
      PEG_INT("policy.conv_kernel", policy.conv_kernel),
      PEG_INT("policy.hidden", policy.hidden),
      PEG_BOOL("policy.use_wrench", policy.use_wrench),
      PEG_DOUBLE("ppo.clip_ratio", ppo.clip_ratio),
      PEG_DOUBLE("ppo.gamma", ppo.gamma),
      PEG_DOUBLE("ppo.gae_lambda", ppo.gae_lambda),
      PEG_INT("ppo.epochs", ppo.epochs),
      PEG_INT("ppo.minibatch", ppo.minibatch),
      PEG_DOUBLE("ppo.value_weight", ppo.value_weight),
      PEG_DOUBLE("ppo.entropy_weight", ppo.entropy_weight),
      PEG_DOUBLE("ppo.learning_rate", ppo.learning_rate),
      PEG_DOUBLE("ppo.value_learning_rate", ppo.value_learning_rate),
      PEG_BOOL("ppo.normalize_advantages", ppo.normalize_advantages),
      {"ppo.optimizer",
       {[](const TrainConfig& c) { return fmt_optimizer(c.ppo.optimizer); },
        [](TrainConfig& c, const std::string& v) { c.ppo.optimizer = parse_optimizer(v); }}},
      PEG_INT("disc.hidden", disc.hidden),
      PEG_INT("disc.iters", disc.iters),
      PEG_INT("disc.batch_per_class", disc.batch_per_class),
      PEG_DOUBLE("disc.learning_rate", disc.learning_rate),
      {"disc.optimizer",
       {[](const TrainConfig& c) { return fmt_optimizer(c.disc.optimizer); },
        [](TrainConfig& c, const std::string& v) { c.disc.optimizer = parse_optimizer(v); }}},
      {"disc.reward",
       {[](const TrainConfig& c) {
          return std::string(c.disc.reward == RewardForm::kLogD ? "log_d" : "neg_log_one_minus_d");
        },
        [](TrainConfig& c, const std::string& v) {
          if (v == "log_d") c.disc.reward = RewardForm::kLogD;
          else if (v == "neg_log_one_minus_d") c.disc.reward = RewardForm::kNegLogOneMinusD;
          else throw ConfigError("disc.reward must be neg_log_one_minus_d or log_d");
        }}},
      PEG_DOUBLE("expert.progress_eps", expert.progress_eps),
      PEG_INT("expert.stuck_ticks", expert.stuck_ticks),
      PEG_INT("train.n_episodes", n_episodes),
      PEG_INT("train.disc_update_every", disc_update_every),
      PEG_INT("train.gen_updates_per_episode", gen_updates_per_episode),
      PEG_INT("train.replay_episodes", replay_episodes),
      PEG_INT("train.metric_window", metric_window),
      {"train.seed",
       {[](const TrainConfig& c) { return std::to_string(c.seed); },
        [](TrainConfig& c, const std::string& v) { c.seed = parse_u64(v); }}},
      PEG_STRING("train.expert_dataset_path", expert_dataset_path),
      PEG_STRING("train.out_dir", out_dir),
  };
  return table;
}

#undef PEG_DOUBLE
#undef PEG_INT
#undef PEG_BOOL
#undef PEG_STRING

}  // namespace

void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
  const auto& t = fields();
  const auto it = t.find(key);
  if (it == t.end()) throw ConfigError("unknown config key: " + key);
  try {
    it->second.set(cfg, trim(value));
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

void apply_config_text(TrainConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

TrainConfig load_config(const std::string& path) {
  TrainConfig cfg;
  std::string text;
  try {
    text = bin::read_file(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  apply_config_text(cfg, text, path);
  return cfg;
}

void apply_overrides(TrainConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be key=value: " + o);
    apply_setting(cfg, trim(o.substr(0, eq)), o.substr(eq + 1));
  }
}

std::map<std::string, std::string> dump_config(const TrainConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(cfg);
  return out;
}

std::string config_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : dump_config(cfg)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace peg
