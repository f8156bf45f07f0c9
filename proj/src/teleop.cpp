#include "peg/teleop.hpp"

#include <filesystem>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>

#include "peg/seeding.hpp"

namespace peg::teleop {

using nlohmann::json;

namespace {

double number_field(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return 0.0;
  if (!j[key].is_number()) throw ProtocolError(std::string("field '") + key + "' must be a number");
  const double v = j[key].get<double>();
  if (!std::isfinite(v)) throw ProtocolError(std::string("field '") + key + "' must be finite");
  return v;
}

bool bool_field(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return false;
  if (!j[key].is_boolean()) throw ProtocolError(std::string("field '") + key + "' must be a boolean");
  return j[key].get<bool>();
}

json vec_json(const Vector6d& v) {
  json a = json::array();
  for (int i = 0; i < 6; ++i) a.push_back(v[i]);
  return a;
}

Vector6d vec_field(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != 6)
    throw ProtocolError(std::string("field '") + key + "' must be an array of 6 numbers");
  Vector6d v;
  for (int i = 0; i < 6; ++i) v[i] = j[key][i].get<double>();
  return v;
}

}  // namespace

TeleopCommand parse_command(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("type") || j["type"] != "cmd")
    throw ProtocolError("expected a message of type \"cmd\"");
  TeleopCommand c;
  c.fx = number_field(j, "fx");
  c.fy = number_field(j, "fy");
  c.mz = number_field(j, "mz");
  c.down = bool_field(j, "down");
  c.record = bool_field(j, "record");
  c.reset = bool_field(j, "reset");
  return c;
}

std::string command_json(const TeleopCommand& c) {
  return json{{"type", "cmd"}, {"fx", c.fx},         {"fy", c.fy},          {"down", c.down},
              {"mz", c.mz},    {"record", c.record}, {"reset", c.reset}}
      .dump();
}

std::string frame_json(const TelemetryFrame& f) {
  return json{{"type", "frame"},          {"tick", f.tick},          {"episode", f.episode},
              {"pose", vec_json(f.pose)}, {"sensed", vec_json(f.sensed)}, {"cmd", vec_json(f.cmd)},
              {"status", f.status},       {"recording", f.recording}}
      .dump();
}

TelemetryFrame parse_frame(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("type", "") != "frame") throw ProtocolError("not a frame message");
  TelemetryFrame f;
  f.tick = j.at("tick").get<int>();
  f.episode = j.value("episode", 0);
  f.pose = vec_field(j, "pose");
  f.sensed = vec_field(j, "sensed");
  f.cmd = vec_field(j, "cmd");
  f.status = j.at("status").get<std::string>();
  f.recording = j.at("recording").get<bool>();
  return f;
}

std::string warn_json(const std::string& msg) { return json{{"type", "warn"}, {"msg", msg}}.dump(); }

AppliedCommand apply_command(const TeleopCommand& cmd, const SimConfig& cfg,
                             const WiggleParams& wiggle) {
  AppliedCommand out;
  Wrench target;
  target.force << cmd.fx, cmd.fy, cmd.down ? -wiggle.down_force : 0.0;
  target.moment << 0.0, 0.0, cmd.mz;
  out.wrench = clip_command(target, cfg);
  if (std::abs(cmd.fx) > cfg.force_limit || std::abs(cmd.fy) > cfg.force_limit)
    out.warnings.push_back("lateral force clipped to " + std::to_string(cfg.force_limit) + " N");
  if (std::abs(cmd.mz) > cfg.moment_limit)
    out.warnings.push_back("moment clipped to " + std::to_string(cfg.moment_limit) + " N*mm");
  return out;
}

void CommandMailbox::post(const TeleopCommand& cmd) {
  std::lock_guard lock(mu_);
  latest_ = cmd;
  if (cmd.record) ++record_presses_;
  if (cmd.reset) reset_pending_ = true;
}

TeleopCommand CommandMailbox::take() {
  std::lock_guard lock(mu_);
  TeleopCommand c = latest_;
  c.record = record_presses_ % 2 == 1;
  c.reset = reset_pending_;
  record_presses_ = 0;
  reset_pending_ = false;
  latest_.record = false;
  latest_.reset = false;
  return c;
}

TeleopSession::TeleopSession(SessionOptions opts) : opts_(std::move(opts)) {
  opts_.sim.validate();
  opts_.geom.validate();
  start_episode();
}

void TeleopSession::start_episode() {
  ++episode_;
  const std::uint64_t seed = derive_seed(opts_.seed, static_cast<std::uint64_t>(episode_));
  state_ = reset(opts_.sim, opts_.geom, seed);
  sensed_ = initial_sensed(state_, opts_.geom);
  status_ = EpisodeStatus::running();
  rng_ = Rng(derive_seed(seed, 1));
}

void TeleopSession::stop_recording() {
  if (!record_) return;
  Episode ep = std::move(*record_);
  record_.reset();
  ep.success = status_.is_success();
  ep.insertion_ticks = ep.success ? status_.success_ticks() : opts_.sim.max_ticks;
  if (opts_.out_dir.empty()) return;
  std::filesystem::create_directories(opts_.out_dir);
  const std::string path = (std::filesystem::path(opts_.out_dir) /
                            ("teleop_" + std::to_string(episode_) + "_" +
                             std::to_string(saved_.size()) + ".pegep"))
                               .string();
  save_episode(ep, path);
  saved_.push_back(path);
}

void TeleopSession::abort() {
  if (record_ && status_.is_terminal()) stop_recording();
  record_.reset();
}

std::vector<std::string> TeleopSession::tick() {
  std::vector<std::string> msgs;
  const TeleopCommand c = mailbox_.take();
  if (c.reset) {
    if (record_) {
      record_.reset();
      msgs.push_back(warn_json("unfinished recording discarded on reset"));
    }
    start_episode();
  }
  if (c.record) {
    if (record_) {
      stop_recording();
    } else if (status_.is_running()) {
      Episode ep;
      ep.kind = EpisodeKind::kTeleop;
      ep.seed = derive_seed(opts_.seed, static_cast<std::uint64_t>(episode_));
      ep.geom = opts_.geom;
      ep.tick_hz = opts_.sim.tick_hz;
      record_ = std::move(ep);
    } else {
      msgs.push_back(warn_json("episode is over; reset before recording"));
    }
  }
  if (status_.is_terminal()) return msgs;

  const AppliedCommand applied = apply_command(c, opts_.sim, opts_.wiggle);
  for (const auto& w : applied.warnings) msgs.push_back(warn_json(w));
  if (record_) {
    Transition t;
    t.tick = state_.tick;
    t.timestamp = state_.tick / opts_.sim.tick_hz;
    t.pose = state_.pose;
    t.sensed = sensed_.vector();
    t.command = applied.wrench.vector();
    record_->transitions.push_back(t);
  }
  const StepResult res = step(state_, applied.wrench, opts_.sim, opts_.geom, rng_);
  state_ = res.state;
  sensed_ = res.sensed;
  status_ = res.status;

  TelemetryFrame f;
  f.tick = state_.tick;
  f.episode = episode_;
  f.pose = state_.pose;
  f.sensed = sensed_.vector();
  f.cmd = res.applied.vector();
  f.status = status_.name();
  f.recording = record_.has_value();
  msgs.push_back(frame_json(f));
  if (record_ && status_.is_terminal()) stop_recording();
  return msgs;
}

TickPacer::TickPacer(double tick_hz)
    : period_(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(1.0 / tick_hz))),
      next_(std::chrono::steady_clock::now()) {
  if (!(tick_hz > 0.0)) throw std::invalid_argument("tick_hz must be > 0");
}

void TickPacer::wait() {
  next_ += period_;
  const auto now = std::chrono::steady_clock::now();
  // After a long stall, restart the schedule rather than bursting.
  if (now > next_ + 10 * period_) next_ = now;
  std::this_thread::sleep_until(next_);
}

std::pair<std::string, unsigned short> split_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("bind address must be addr:port");
  const std::string host = bind.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(bind.substr(colon + 1));
  } catch (const std::logic_error&) {
    throw std::invalid_argument("bad port in bind address: " + bind);
  }
  if (port < 0 || port > 65535) throw std::invalid_argument("bad port in bind address: " + bind);
  return {host.empty() ? "0.0.0.0" : host, static_cast<unsigned short>(port)};
}

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

namespace {

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, const SessionOptions& opts, std::atomic<long>& ticks,
             std::atomic<bool>& stopping, std::function<void()> on_close)
      : ws_(std::move(socket)),
        core_(std::make_unique<TeleopSession>(opts)),
        tick_hz_(opts.sim.tick_hz),
        ticks_(ticks),
        stopping_(stopping),
        on_close_(std::move(on_close)) {}

  ~Connection() { stop_ticker(); }

  void start() {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
  }

  void shutdown() {
    alive_ = false;
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().close(ec);
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return finish();
    ws_.text(true);
    std::weak_ptr<Connection> weak = shared_from_this();
    auto executor = ws_.get_executor();
    ticker_ = std::thread([this, weak, executor] {
      TickPacer pacer(tick_hz_);
      while (alive_ && !stopping_) {
        pacer.wait();
        if (!alive_ || stopping_) break;
        std::vector<std::string> msgs = core_->tick();
        ++ticks_;
        for (auto& m : msgs)
          net::post(executor, [weak, m = std::move(m)]() mutable {
            if (auto s = weak.lock()) s->send(std::move(m));
          });
      }
    });
    do_read();
  }

  void do_read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->on_read(ec);
    });
  }

  void on_read(beast::error_code ec) {
    if (ec) return finish();
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    try {
      core_->mailbox().post(parse_command(text));
    } catch (const ProtocolError& e) {
      send(warn_json(e.what()));
    }
    do_read();
  }

  void send(std::string msg) {
    if (!alive_) return;
    queue_.push_back(std::move(msg));
    if (!writing_) do_write();
  }

  void do_write() {
    writing_ = true;
    ws_.async_write(net::buffer(queue_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      self->on_write(ec);
                    });
  }

  void on_write(beast::error_code ec) {
    if (ec) return finish();
    queue_.pop_front();
    if (queue_.empty()) {
      writing_ = false;
    } else {
      do_write();
    }
  }

  void stop_ticker() {
    alive_ = false;
    if (ticker_.joinable() && ticker_.get_id() != std::this_thread::get_id()) ticker_.join();
  }

  void finish() {
    if (finished_) return;
    finished_ = true;
    stop_ticker();
    core_->abort();
    queue_.clear();
    if (on_close_) on_close_();
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::deque<std::string> queue_;
  bool writing_ = false;
  bool finished_ = false;
  std::unique_ptr<TeleopSession> core_;
  double tick_hz_;
  std::atomic<long>& ticks_;
  std::atomic<bool>& stopping_;
  std::atomic<bool> alive_{true};
  std::thread ticker_;
  std::function<void()> on_close_;
};

}  // namespace

struct TeleopServer::Impl {
  explicit Impl(ServerOptions o) : opts(std::move(o)), acceptor(ioc) {
    const auto [host, port] = split_bind(opts.bind);
    const tcp::endpoint ep(net::ip::make_address(host), port);
    acceptor.open(ep.protocol());
    acceptor.set_option(net::socket_base::reuse_address(true));
    acceptor.bind(ep);
    acceptor.listen();
  }

  void do_accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      if (active.lock()) {
        beast::error_code ignored;
        socket.close(ignored);  // one operator at a time
      } else {
        auto conn = std::make_shared<Connection>(std::move(socket), opts.session, ticks, stopping,
                                                 [this] { active.reset(); });
        active = conn;
        conn->start();
      }
      do_accept();
    });
  }

  ServerOptions opts;
  net::io_context ioc;
  tcp::acceptor acceptor;
  std::weak_ptr<Connection> active;
  std::atomic<long> ticks{0};
  std::atomic<bool> stopping{false};
};

TeleopServer::TeleopServer(ServerOptions opts) : impl_(std::make_unique<Impl>(std::move(opts))) {}

TeleopServer::~TeleopServer() { stop(); }

unsigned short TeleopServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void TeleopServer::run() {
  impl_->do_accept();
  impl_->ioc.run();
}

void TeleopServer::stop() {
  impl_->stopping = true;
  net::post(impl_->ioc, [impl = impl_.get()] {
    beast::error_code ec;
    impl->acceptor.close(ec);
    if (auto c = impl->active.lock()) c->shutdown();
  });
  impl_->ioc.stop();
}

long TeleopServer::ticks_run() const { return impl_->ticks; }

}  // namespace peg::teleop
