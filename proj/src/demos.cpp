#include "peg/demos.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <set>
#include <sstream>

#include <zlib.h>

#include "peg/binary_io.hpp"
#include "peg/seeding.hpp"

namespace peg {

namespace {

constexpr char kMagic[] = "PEGEPISODE";
constexpr std::uint64_t kDemoStream = 0x64656d6fULL;

EpisodeKind kind_from_name(const std::string& s) {
  if (s == "demo") return EpisodeKind::kDemo;
  if (s == "teleop") return EpisodeKind::kTeleop;
  if (s == "rollout") return EpisodeKind::kRollout;
  throw EpisodeFormatError("unknown episode kind: " + s);
}

std::uint32_t crc_of(const std::string& bytes, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n)));
}

constexpr std::size_t kRecordBytes = 4 + 8 + 4 + 18 * 8;

}  // namespace

std::string kind_name(EpisodeKind k) {
  switch (k) {
    case EpisodeKind::kDemo: return "demo";
    case EpisodeKind::kTeleop: return "teleop";
    case EpisodeKind::kRollout: return "rollout";
  }
  return "demo";
}

std::string encode_episode(const Episode& ep) {
  std::ostringstream h;
  h << std::setprecision(17);
  std::string fault = ep.fault;
  std::replace(fault.begin(), fault.end(), '\n', ' ');
  h << kMagic << ' ' << kEpisodeFormatVersion << '\n'
    << "kind " << kind_name(ep.kind) << '\n'
    << "seed " << ep.seed << '\n'
    << "success " << (ep.success ? 1 : 0) << '\n'
    << "insertion_ticks " << ep.insertion_ticks << '\n'
    << "tick_hz " << ep.tick_hz << '\n'
    << "hole_radius " << ep.geom.hole_radius << '\n'
    << "clearance " << ep.geom.clearance << '\n'
    << "hole_depth " << ep.geom.hole_depth << '\n'
    << "chamfer " << ep.geom.chamfer << '\n'
    << "wall_stiffness " << ep.geom.wall_stiffness << '\n'
    << "friction_coeff " << ep.geom.friction_coeff << '\n'
    << "fault " << fault << '\n'
    << "records " << ep.transitions.size() << '\n'
    << "end\n";
  std::string out = h.str();
  for (const Transition& t : ep.transitions) {
    bin::put_u32(out, static_cast<std::uint32_t>(kRecordBytes - 4));
    bin::put_u32(out, static_cast<std::uint32_t>(t.tick));
    bin::put_f64(out, t.timestamp);
    bin::put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(t.action)));
    bin::put_f64s(out, t.pose);
    bin::put_f64s(out, t.sensed);
    bin::put_f64s(out, t.command);
  }
  bin::put_u32(out, crc_of(out, out.size()));
  return out;
}

Episode decode_episode(const std::string& bytes) {
  const std::size_t eol = bytes.find('\n');
  if (eol == std::string::npos) throw EpisodeFormatError("truncated episode header");
  {
    std::istringstream first(bytes.substr(0, eol));
    std::string magic;
    int version = 0;
    first >> magic >> version;
    if (magic != kMagic) throw EpisodeFormatError("not an episode file");
    if (version != kEpisodeFormatVersion)
      throw EpisodeFormatError("episode format version mismatch: " + std::to_string(version));
  }
  if (bytes.size() < 4) throw EpisodeFormatError("truncated episode file");
  const std::size_t body = bytes.size() - 4;
  bin::Reader tail(bytes, body);
  if (tail.u32() != crc_of(bytes, body)) throw EpisodeFormatError("episode checksum mismatch");

  const std::size_t end_marker = bytes.find("\nend\n");
  if (end_marker == std::string::npos || end_marker + 5 > body)
    throw EpisodeFormatError("episode header not terminated");
  std::istringstream h(bytes.substr(eol + 1, end_marker - eol));
  Episode ep;
  std::size_t records = 0;
  bool have_records = false;
  std::string line;
  while (std::getline(h, line)) {
    const std::size_t sp = line.find(' ');
    const std::string key = line.substr(0, sp);
    const std::string value = sp == std::string::npos ? "" : line.substr(sp + 1);
    try {
      if (key == "kind") ep.kind = kind_from_name(value);
      else if (key == "seed") ep.seed = std::stoull(value);
      else if (key == "success") ep.success = std::stoi(value) != 0;
      else if (key == "insertion_ticks") ep.insertion_ticks = std::stoi(value);
      else if (key == "tick_hz") ep.tick_hz = std::stod(value);
      else if (key == "hole_radius") ep.geom.hole_radius = std::stod(value);
      else if (key == "clearance") ep.geom.clearance = std::stod(value);
      else if (key == "hole_depth") ep.geom.hole_depth = std::stod(value);
      else if (key == "chamfer") ep.geom.chamfer = std::stod(value);
      else if (key == "wall_stiffness") ep.geom.wall_stiffness = std::stod(value);
      else if (key == "friction_coeff") ep.geom.friction_coeff = std::stod(value);
      else if (key == "fault") ep.fault = value;
      else if (key == "records") { records = std::stoull(value); have_records = true; }
    } catch (const std::logic_error&) {
      throw EpisodeFormatError("bad header field: " + line);
    }
  }
  if (!have_records) throw EpisodeFormatError("episode header lacks a record count");

  bin::Reader r(bytes, end_marker + 5);
  ep.transitions.reserve(records);
  try {
    for (std::size_t i = 0; i < records; ++i) {
      if (r.pos() + kRecordBytes > body) throw EpisodeFormatError("truncated episode records");
      if (r.u32() != kRecordBytes - 4) throw EpisodeFormatError("unexpected record length");
      Transition t;
      t.tick = static_cast<int>(r.u32());
      t.timestamp = r.f64();
      t.action = static_cast<std::int32_t>(r.u32());
      for (int k = 0; k < 6; ++k) t.pose[k] = r.f64();
      for (int k = 0; k < 6; ++k) t.sensed[k] = r.f64();
      for (int k = 0; k < 6; ++k) t.command[k] = r.f64();
      ep.transitions.push_back(t);
    }
  } catch (const bin::FormatError& e) {
    throw EpisodeFormatError(e.what());
  }
  if (r.pos() != body) throw EpisodeFormatError("trailing bytes after episode records");
  return ep;
}

void save_episode(const Episode& ep, const std::string& path) {
  bin::write_file(path, encode_episode(ep));
}

Episode load_episode(const std::string& path) { return decode_episode(bin::read_file(path)); }

void ProgressHistory::push(double depth) {
  depths_.push_back(depth);
  while (static_cast<int>(depths_.size()) > k_ + 1) depths_.pop_front();
}

bool ProgressHistory::stuck(double eps) const {
  if (static_cast<int>(depths_.size()) <= k_) return false;
  return (depths_.back() - depths_.front()) < eps * k_;
}

Action scripted_expert(const PegState& state, const ProgressHistory& history, const HoleGeom& geom,
                       const ExpertConfig& cfg, Rng& /*rng*/) {
  if (state.depth >= geom.hole_depth) return Action::kIdle;
  return history.stuck(cfg.progress_eps) ? Action::kDownWiggle : Action::kDown;
}

Wrench initial_sensed(const PegState& state, const HoleGeom& geom) {
  return contact_wrench(state.pose, geom).wrench;
}

Episode record_scripted_demo(std::uint64_t seed, const SimConfig& sim, const HoleGeom& geom,
                             const WiggleParams& wiggle, const ExpertConfig& expert) {
  Episode ep;
  ep.kind = EpisodeKind::kDemo;
  ep.seed = seed;
  ep.geom = geom;
  ep.tick_hz = sim.tick_hz;
  Rng rng(derive_seed(seed, kDemoStream));
  PegState s = reset(sim, geom, seed);
  Wrench sensed = initial_sensed(s, geom);
  ProgressHistory history(expert.stuck_ticks);
  EpisodeStatus status = EpisodeStatus::running();
  while (status.is_running()) {
    history.push(s.depth);
    const Action a = scripted_expert(s, history, geom, expert, rng);
    const Wrench target = decode_action(a, s.tick, wiggle, rng);
    Transition t;
    t.tick = s.tick;
    t.timestamp = s.tick / sim.tick_hz;
    t.pose = s.pose;
    t.sensed = sensed.vector();
    t.command = target.vector();
    t.action = static_cast<int>(a);
    ep.transitions.push_back(t);
    const StepResult res = step(s, target, sim, geom, rng);
    s = res.state;
    sensed = res.sensed;
    status = res.status;
  }
  ep.success = status.is_success();
  ep.insertion_ticks = ep.success ? status.success_ticks() : sim.max_ticks;
  return ep;
}

DiscretizeConfig DiscretizeConfig::from(const WiggleParams& w, int window) {
  DiscretizeConfig c;
  c.down_threshold = w.down_force / 2.0;
  c.wiggle_threshold = w.amplitude / 4.0;
  c.window = window;
  return c;
}

namespace {

// Largest population std among the lateral and rotational command channels
// over transitions [begin, end).
double command_spread(const std::vector<Transition>& tr, std::size_t begin, std::size_t end) {
  static constexpr int kChannels[] = {0, 1, 3, 4, 5};
  const double n = static_cast<double>(end - begin);
  double worst = 0.0;
  for (int c : kChannels) {
    double mean = 0.0;
    for (std::size_t i = begin; i < end; ++i) mean += tr[i].command[c];
    mean /= n;
    double var = 0.0;
    for (std::size_t i = begin; i < end; ++i) var += std::pow(tr[i].command[c] - mean, 2);
    worst = std::max(worst, std::sqrt(var / n));
  }
  return worst;
}

}  // namespace

Episode discretize_teleop(const Episode& record, const DiscretizeConfig& cfg) {
  if (cfg.window < 1) throw std::invalid_argument("discretize window must be >= 1");
  const auto& tr = record.transitions;
  if (tr.empty()) throw EpisodeFormatError("empty teleoperation record");
  for (std::size_t i = 1; i < tr.size(); ++i)
    if (!(tr[i].timestamp > tr[i - 1].timestamp) || tr[i].tick <= tr[i - 1].tick)
      throw EpisodeFormatError("non-monotone timestamps in teleoperation record");
  Episode out = record;
  out.kind = EpisodeKind::kDemo;
  const std::size_t n = tr.size();
  const std::size_t w = static_cast<std::size_t>(cfg.window);
  for (std::size_t i = 0; i < n; ++i) {
    const bool down = std::abs(tr[i].command[kZ]) > cfg.down_threshold;
    // Windows are clipped to the record; a single-sample window says nothing
    // about spread, so it is widened to two samples.
    std::size_t t_lo = i + 1 >= w ? i + 1 - w : 0, t_hi = i + 1;
    std::size_t l_lo = i, l_hi = std::min(n, i + w);
    if (n >= 2 && t_hi - t_lo < 2) t_hi = t_lo + 2;
    if (n >= 2 && l_hi - l_lo < 2) l_lo = l_hi - 2;
    const double spread =
        std::min(command_spread(tr, t_lo, t_hi), command_spread(tr, l_lo, l_hi));
    const bool wiggle = spread > cfg.wiggle_threshold;
    out.transitions[i].action = (down ? 0 : 2) + (wiggle ? 0 : 1);
  }
  return out;
}

std::pair<Eigen::MatrixXd, std::vector<int>> episode_samples(const Episode& ep,
                                                             const PolicyConfig& cfg) {
  HistoryBuffer buf(cfg);
  Eigen::MatrixXd windows(cfg.features(), static_cast<Eigen::Index>(ep.transitions.size()));
  std::vector<int> actions;
  actions.reserve(ep.transitions.size());
  int prev = static_cast<int>(Action::kIdle);
  for (std::size_t i = 0; i < ep.transitions.size(); ++i) {
    const Transition& t = ep.transitions[i];
    if (t.action < 0 || t.action >= kNumActions)
      throw EpisodeFormatError("episode has unlabelled transitions");
    windows.col(static_cast<Eigen::Index>(i)) =
        flatten_window(buf.observe(t.pose, Wrench::from_vector(t.sensed), prev));
    actions.push_back(t.action);
    prev = t.action;
  }
  return {windows, actions};
}

DemoDataset build_expert_dataset(const std::vector<std::string>& paths, const PolicyConfig& cfg,
                                 const DiscretizeConfig& disc) {
  if (paths.empty()) throw std::invalid_argument("no expert episode files given");
  DemoDataset ds;
  std::set<std::string> seen;
  std::vector<Eigen::MatrixXd> blocks;
  Eigen::Index total = 0;
  for (const std::string& p : paths) {
    if (!seen.insert(std::filesystem::weakly_canonical(p).string()).second)
      ds.warnings.push_back("episode file listed more than once: " + p);
    Episode ep = load_episode(p);
    if (ep.kind == EpisodeKind::kTeleop) ep = discretize_teleop(ep, disc);
    if (!ep.success) {
      ds.warnings.push_back("skipping failed episode: " + p);
      continue;
    }
    auto [w, a] = episode_samples(ep, cfg);
    total += w.cols();
    blocks.push_back(std::move(w));
    ds.actions.insert(ds.actions.end(), a.begin(), a.end());
    ds.episodes.push_back(std::move(ep));
  }
  if (ds.episodes.empty() || total == 0)
    throw std::runtime_error("expert dataset is empty: no successful episodes");
  ds.windows.resize(cfg.features(), total);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    ds.windows.middleCols(at, b.cols()) = b;
    at += b.cols();
  }
  if (total > 5 * kNominalDatasetSamples || total * 5 < kNominalDatasetSamples)
    ds.warnings.push_back("expert dataset has " + std::to_string(total) +
                          " samples, far from the nominal " +
                          std::to_string(kNominalDatasetSamples));
  return ds;
}

std::vector<std::string> list_episode_files(const std::string& dir) {
  std::vector<std::string> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pegep") out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace peg
