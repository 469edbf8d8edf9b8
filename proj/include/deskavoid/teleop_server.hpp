#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast.hpp>
#include <boost/beast/websocket.hpp>

#include "deskavoid/scene_io.hpp"
#include "deskavoid/teleop.hpp"

namespace deskavoid::teleop {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

struct ServerOptions {
  std::uint16_t port = 8765;
  std::string address = "127.0.0.1";
  double speed = 1.0;          // sim seconds per wall second
  double message_rate_hz = 10.0;
  std::string web_root;        // optional static files for the browser client
  std::size_t max_queued_frames = 4;
};

/// Inbound events from the network side to the simulation thread.
struct SimEvent {
  enum class Kind { command, reset, controller_left } kind;
  Command cmd{0.0, 0.0};
};

/// Thread-safe mailbox. The only state shared by the two threads.
class Mailbox {
 public:
  void push(SimEvent e) {
    std::lock_guard lock(mu_);
    events_.push_back(e);
  }
  std::vector<SimEvent> drain() {
    std::lock_guard lock(mu_);
    std::vector<SimEvent> out(events_.begin(), events_.end());
    events_.clear();
    return out;
  }

 private:
  std::mutex mu_;
  std::deque<SimEvent> events_;
};

namespace detail {

inline std::string mime_type(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".html") return "text/html";
  if (ext == ".js") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".png") return "image/png";
  return "application/octet-stream";
}

class Hub;

class ClientSession : public std::enable_shared_from_this<ClientSession> {
 public:
  ClientSession(websocket::stream<beast::tcp_stream> ws, Hub& hub, int id) : ws_(std::move(ws)), hub_(hub), id_(id) {}

  template <class Request>
  void start(Request req);
  void send(std::shared_ptr<const std::string> text);
  void close();
  [[nodiscard]] int id() const { return id_; }

 private:
  void read();
  void write_next();

  websocket::stream<beast::tcp_stream> ws_;
  Hub& hub_;
  int id_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  bool writing_ = false;
  bool closed_ = false;
};

/// Client registry; lives on the io thread only.
class Hub {
 public:
  Hub(Mailbox& mailbox, std::size_t max_queued) : mailbox_(mailbox), max_queued_(max_queued) {}

  void join(const std::shared_ptr<ClientSession>& c) {
    clients_[c->id()] = c;
    if (controller_ < 0) controller_ = c->id();
    c->send(std::make_shared<const std::string>(hello(c->id())));
  }

  void leave(int id) {
    if (clients_.erase(id) == 0) return;
    if (id != controller_) return;
    mailbox_.push({SimEvent::Kind::controller_left});
    controller_ = clients_.empty() ? -1 : clients_.begin()->first;
    if (controller_ >= 0) clients_[controller_]->send(std::make_shared<const std::string>(hello(controller_)));
  }

  void message(int id, const std::string& text) {
    if (id != controller_) return;  // spectators are read-only
    try {
      const ClientMessage m = parse_client_message(text);
      if (const auto* c = std::get_if<CommandMessage>(&m)) {
        mailbox_.push({SimEvent::Kind::command, {c->vx, c->vtheta}});
      } else {
        mailbox_.push({SimEvent::Kind::reset});
      }
    } catch (const ValidationError&) {
      // malformed frames are dropped
    }
  }

  void broadcast(const std::shared_ptr<const std::string>& text) {
    for (auto& [id, c] : clients_) c->send(text);
  }

  void close_all() {
    auto copy = clients_;
    for (auto& [id, c] : copy) c->close();
  }

  [[nodiscard]] int controller() const { return controller_; }
  [[nodiscard]] std::size_t max_queued() const { return max_queued_; }
  [[nodiscard]] std::size_t size() const { return clients_.size(); }

 private:
  std::string hello(int id) const {
    return json{{"type", "hello"}, {"role", id == controller_ ? "controller" : "spectator"}}.dump();
  }

  Mailbox& mailbox_;
  std::size_t max_queued_;
  std::map<int, std::shared_ptr<ClientSession>> clients_;
  int controller_ = -1;
};

template <class Request>
void ClientSession::start(Request req) {
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
    if (ec) return;
    self->hub_.join(self);
    self->read();
  });
}

inline void ClientSession::read() {
  ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      self->closed_ = true;
      self->hub_.leave(self->id_);
      return;
    }
    self->hub_.message(self->id_, beast::buffers_to_string(self->buffer_.data()));
    self->buffer_.consume(self->buffer_.size());
    self->read();
  });
}

inline void ClientSession::send(std::shared_ptr<const std::string> text) {
  if (closed_) return;
  // a slow reader loses its oldest frames instead of growing the queue
  if (queue_.size() >= hub_.max_queued()) queue_.erase(queue_.begin() + (writing_ ? 1 : 0));
  queue_.push_back(std::move(text));
  if (!writing_) write_next();
}

inline void ClientSession::write_next() {
  if (queue_.empty() || closed_) {
    writing_ = false;
    return;
  }
  writing_ = true;
  ws_.text(true);
  ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
    self->queue_.pop_front();
    if (ec) {
      self->closed_ = true;
      self->writing_ = false;
      return;
    }
    self->write_next();
  });
}

inline void ClientSession::close() {
  if (closed_) return;
  closed_ = true;
  beast::error_code ec;
  beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
}

/// Plain HTTP request on a fresh connection: serve the scene or a static file, or upgrade.
class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, Hub& hub, const std::string& scene_json, const std::string& web_root, int id)
      : stream_(std::move(socket)), hub_(hub), scene_json_(scene_json), web_root_(web_root), id_(id) {}

  void start() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (!ec) self->handle();
    });
  }

 private:
  void handle() {
    if (websocket::is_upgrade(req_)) {
      stream_.expires_never();
      auto ws = std::make_shared<ClientSession>(websocket::stream<beast::tcp_stream>(std::move(stream_)), hub_, id_);
      ws->start(std::move(req_));
      return;
    }
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req_.version());
    res->keep_alive(false);
    const std::string target(req_.target());
    if (req_.method() != http::verb::get) {
      res->result(http::status::method_not_allowed);
    } else if (target == "/scene.json") {
      res->result(http::status::ok);
      res->set(http::field::content_type, "application/json");
      res->body() = scene_json_;
    } else if (!serve_static(target, *res)) {
      res->result(http::status::not_found);
      res->body() = "not found";
    }
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ec;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
    });
  }

  bool serve_static(const std::string& target, http::response<http::string_body>& res) const {
    if (web_root_.empty() || target.find("..") != std::string::npos) return false;
    std::string rel = target.substr(0, target.find('?'));
    if (rel == "/") rel = "/index.html";
    const std::filesystem::path p = std::filesystem::path(web_root_) / rel.substr(1);
    std::ifstream in(p, std::ios::binary);
    if (!in) return false;
    res.result(http::status::ok);
    res.set(http::field::content_type, mime_type(p.string()));
    res.body().assign(std::istreambuf_iterator<char>(in), {});
    return true;
  }

  beast::tcp_stream stream_;
  Hub& hub_;
  const std::string& scene_json_;
  const std::string& web_root_;
  int id_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace detail

/// WebSocket teleoperation server. The simulation runs on its own thread; the network side
/// runs on one io thread. They exchange events through a Mailbox and frames through post().
class TeleopServer {
 public:
  TeleopServer(std::unique_ptr<TeleopSession> session, ServerOptions opt)
      : session_(std::move(session)),
        opt_(std::move(opt)),
        scene_json_(scene_to_json(session_->scene()).dump()),
        hub_(mailbox_, opt_.max_queued_frames),
        acceptor_(io_) {
    if (!(opt_.speed > 0.0) || !std::isfinite(opt_.speed)) throw ValidationError("teleop: speed must be positive");
    if (!(opt_.message_rate_hz > 0.0)) throw ValidationError("teleop: message rate must be positive");
    const tcp::endpoint ep(net::ip::make_address(opt_.address), opt_.port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
    port_ = acceptor_.local_endpoint().port();
  }

  ~TeleopServer() { stop(); }
  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  [[nodiscard]] std::uint16_t port() const { return port_; }
  /// Frames where the simulation could not keep up with the requested speed.
  [[nodiscard]] long long overrun_frames() const { return dropped_ticks_.load(); }

  void start() {
    accept();
    io_thread_ = std::thread([this] { io_.run(); });
    sim_thread_ = std::thread([this] { sim_loop(); });
  }

  /// Blocks until stop() is called from another thread or a signal handler.
  void wait() {
    std::unique_lock lock(stop_mu_);
    stop_cv_.wait(lock, [this] { return stopping_.load(); });
  }

  void stop() {
    bool already;
    {
      std::lock_guard lock(stop_mu_);
      already = stopping_.exchange(true);
    }
    if (already) {
      join();
      return;
    }
    stop_cv_.notify_all();
    net::post(io_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
      hub_.close_all();
    });
    if (sim_thread_.joinable()) sim_thread_.join();
    // give closing sockets a moment, then stop the loop
    net::post(io_, [this] { io_.stop(); });
    join();
  }

 private:
  void join() {
    if (sim_thread_.joinable()) sim_thread_.join();
    if (io_thread_.joinable()) io_thread_.join();
  }

  void accept() {
    acceptor_.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<detail::HttpSession>(std::move(socket), hub_, scene_json_, opt_.web_root, next_id_++)->start();
      accept();
    });
  }

  void apply(const SimEvent& e) {
    switch (e.kind) {
      case SimEvent::Kind::command:
        session_->set_user_command(e.cmd);
        break;
      case SimEvent::Kind::reset:
        session_->reset();
        break;
      case SimEvent::Kind::controller_left:
        session_->client_disconnected();
        break;
    }
  }

  void sim_loop() {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    const auto period = std::chrono::duration<double>(1.0 / opt_.message_rate_hz);
    const double ticks_per_wall_second = opt_.speed / session_->tick_seconds();
    long long done = 0;
    for (long long frame = 1; !stopping_.load(); ++frame) {
      const auto deadline = t0 + std::chrono::duration_cast<clock::duration>(period * frame);
      const long long due = std::llround(ticks_per_wall_second * period.count() * frame);
      while (done < due && !stopping_.load()) {
        if (clock::now() >= deadline) {
          done = due;  // too slow for the requested speed: drop ticks, keep the frame rate
          ++dropped_ticks_;
          break;
        }
        for (const SimEvent& e : mailbox_.drain()) apply(e);
        session_->tick();
        ++done;
      }
      for (const SimEvent& e : mailbox_.drain()) apply(e);
      auto text = std::make_shared<const std::string>(encode_state_message(session_->snapshot()));
      net::post(io_, [this, text] { hub_.broadcast(text); });
      std::unique_lock lock(stop_mu_);
      stop_cv_.wait_until(lock, deadline, [this] { return stopping_.load(); });
    }
  }

  std::unique_ptr<TeleopSession> session_;
  ServerOptions opt_;
  std::string scene_json_;
  Mailbox mailbox_;
  net::io_context io_;
  detail::Hub hub_;
  tcp::acceptor acceptor_;
  std::uint16_t port_ = 0;
  int next_id_ = 0;
  std::thread io_thread_;
  std::thread sim_thread_;
  std::atomic<bool> stopping_{false};
  std::atomic<long long> dropped_ticks_{0};
  std::mutex stop_mu_;
  std::condition_variable stop_cv_;
};

}  // namespace deskavoid::teleop
