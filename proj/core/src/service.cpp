#include <algorithm>
#include <atomic>
#include <chrono>
#include <deque>
#include <memory>
#include <set>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

#include "lapfov/error.hpp"
#include "lapfov/service.hpp"

namespace lapfov {

namespace {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using Clock = std::chrono::steady_clock;

struct Outgoing {
  std::uint64_t seq = 0;
  std::string text;
};

// Control replies (hello, errors) waiting per client beyond this are dropped.
constexpr std::size_t kMaxPendingReplies = 16;
constexpr auto kPumpInterval = std::chrono::milliseconds(5);

}  // namespace

struct SimService::Impl {
  class Client;

  Impl(ScenarioConfig cfg, ServiceOptions opts)
      : config(std::move(cfg)),
        options(opts),
        session(config),
        heatmap_id(session.heatmap_id()),
        inbound(opts.inbound_capacity),
        acceptor(ioc),
        pump_timer(ioc) {}

  ScenarioConfig config;
  ServiceOptions options;
  Session session;  // owned by the loop thread once started
  const std::string heatmap_id;
  BoundedQueue<InboundMessage> inbound;
  Mailbox<Outgoing> state_box;
  Mailbox<Outgoing> frame_box;
  Mailbox<Outgoing> notice_box;
  std::atomic<std::uint64_t> next_seq{0};

  asio::io_context ioc;
  tcp::acceptor acceptor;
  asio::steady_timer pump_timer;
  std::set<std::shared_ptr<Client>> clients;  // IO thread only

  std::thread io_thread;
  std::thread loop_thread;
  std::atomic<bool> running{false};
  std::uint16_t bound_port = 0;

  std::atomic<std::uint64_t> steps{0}, states_published{0}, frames_published{0};
  std::atomic<std::uint64_t> commands_applied{0}, commands_rejected{0};
  std::atomic<std::size_t> client_count{0};

  std::uint64_t take_seq() { return ++next_seq; }

  void accept();
  void pump();
  void run_loop();
};

class SimService::Impl::Client : public std::enable_shared_from_this<Client> {
 public:
  Client(Impl& owner, tcp::socket socket) : owner_(owner), ws_(std::move(socket)) {}

  void start() {
    http::async_read(ws_.next_layer(), buffer_, request_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       self->on_request(ec);
                     });
  }

  void close() {
    closed_ = true;
    beast::error_code ec;
    ws_.next_layer().shutdown(tcp::socket::shutdown_both, ec);
    ws_.next_layer().close(ec);
  }

  void reply(Outgoing message) {
    if (pending_.size() < kMaxPendingReplies) pending_.push_back(std::move(message));
    pump();
  }

  /// Sends at most one message: pending replies first, then whichever
  /// mailbox holds something newer than what this client has seen, oldest
  /// sequence number first.
  void pump() {
    if (!open_ || writing_ || closed_) return;
    std::string next;
    if (!pending_.empty()) {
      // Anything older than a reply already sent is skipped later, which
      // keeps the sequence numbers seen by this client increasing.
      last_sent_ = std::max(last_sent_, pending_.front().seq);
      next = std::move(pending_.front().text);
      pending_.pop_front();
    } else {
      std::shared_ptr<const Outgoing> pick;
      for (const Mailbox<Outgoing>* box :
           {&owner_.state_box, &owner_.frame_box, &owner_.notice_box}) {
        auto latest = box->latest();
        if (latest && latest->seq > last_sent_ && (!pick || latest->seq < pick->seq)) {
          pick = std::move(latest);
        }
      }
      if (!pick) return;
      last_sent_ = pick->seq;
      next = pick->text;
    }
    writing_ = true;
    outgoing_ = std::make_shared<std::string>(std::move(next));
    ws_.text(true);
    ws_.async_write(asio::buffer(*outgoing_),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      self->writing_ = false;
                      if (ec) return self->drop();
                      self->pump();
                    });
  }

 private:
  void on_request(beast::error_code ec) {
    if (ec) return drop();
    if (!websocket::is_upgrade(request_) || std::string_view(request_.target().data(), request_.target().size()) != kProtocolPath) {
      auto res = std::make_shared<http::response<http::string_body>>(http::status::not_found,
                                                                     request_.version());
      res->set(http::field::content_type, "text/plain");
      res->body() = "connect with a WebSocket upgrade to /v1\n";
      res->prepare_payload();
      http::async_write(ws_.next_layer(), *res,
                        [self = shared_from_this(), res](beast::error_code, std::size_t) {
                          self->drop();
                        });
      return;
    }
    const auto offered = request_[http::field::sec_websocket_protocol];
    const bool wants_subprotocol =
        std::string_view(offered.data(), offered.size()).find(kSubprotocol) != std::string_view::npos;
    ws_.set_option(websocket::stream_base::decorator([wants_subprotocol](websocket::response_type& res) {
      res.set(http::field::server, "lapfov-sim/v1");
      if (wants_subprotocol) res.set(http::field::sec_websocket_protocol, std::string(kSubprotocol));
    }));
    ws_.async_accept(request_, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return self->drop();
      self->open_ = true;
      const std::uint64_t seq = self->owner_.take_seq();
      self->reply({seq, encode_hello(seq, self->owner_.config, self->owner_.heatmap_id)});
      self->read();
    });
  }

  void read() {
    ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->drop();
      self->handle(beast::buffers_to_string(self->in_.data()));
      self->in_.consume(self->in_.size());
      self->read();
    });
  }

  void handle(const std::string& text) {
    std::optional<std::uint64_t> seq;
    try {
      InboundMessage msg = parse_inbound(text, owner_.config.intrinsics);
      seq = msg.seq;
      if (last_inbound_ && msg.seq <= *last_inbound_) {
        fail(ErrorCode::kMalformedMessage, "seq must increase on every message");
      }
      last_inbound_ = msg.seq;
      if (!owner_.inbound.try_push(std::move(msg))) {
        ++owner_.commands_rejected;
        const std::uint64_t out = owner_.take_seq();
        reply({out, encode_error(out, "command queue full; message dropped", seq)});
      }
    } catch (const Error& e) {
      // A message that fails validation still names its seq if it parsed
      // as JSON, so the client can tell which command was refused.
      if (!seq) {
        const auto raw = nlohmann::json::parse(text, nullptr, false);
        if (raw.is_object() && raw.contains("seq") && raw["seq"].is_number_unsigned()) {
          seq = raw["seq"].get<std::uint64_t>();
        }
      }
      ++owner_.commands_rejected;
      const std::uint64_t out = owner_.take_seq();
      reply({out, encode_error(out, e.what(), seq)});
    }
  }

  void drop() {
    if (closed_) return;
    close();
    auto self = shared_from_this();
    if (owner_.clients.erase(self) > 0) --owner_.client_count;
  }

  Impl& owner_;
  websocket::stream<tcp::socket> ws_;
  beast::flat_buffer buffer_;
  beast::flat_buffer in_;
  http::request<http::string_body> request_;
  std::deque<Outgoing> pending_;
  std::shared_ptr<std::string> outgoing_;
  std::uint64_t last_sent_ = 0;
  std::optional<std::uint64_t> last_inbound_;
  bool open_ = false;
  bool writing_ = false;
  bool closed_ = false;
};

void SimService::Impl::accept() {
  acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;  // acceptor closed
    auto client = std::make_shared<Client>(*this, std::move(socket));
    clients.insert(client);
    ++client_count;
    client->start();
    accept();
  });
}

void SimService::Impl::pump() {
  // Copy: a pump can drop a client and erase it from the set.
  const auto snapshot = clients;
  for (const auto& client : snapshot) client->pump();
  pump_timer.expires_after(kPumpInterval);
  pump_timer.async_wait([this](beast::error_code ec) {
    if (!ec) pump();
  });
}

void SimService::Impl::run_loop() {
  const auto step_period = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double>(config.dt_s / options.time_scale));
  const auto state_period = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double>(1.0 / options.state_hz));
  const auto frame_period = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double>(1.0 / options.frame_hz));
  auto next_step = Clock::now();
  auto next_state = next_step;
  auto next_frame = next_step;

  while (running) {
    for (InboundMessage& msg : inbound.drain()) {
      session.apply(msg);
      ++commands_applied;
    }
    try {
      session.tick();
      ++steps;
    } catch (const Error& e) {
      // An invariant abort ends the scripted run; restart so the live
      // session stays usable and tell clients why.
      const std::uint64_t seq = take_seq();
      notice_box.publish({seq, encode_error(seq, std::string("run restarted: ") + e.what(),
                                            std::nullopt)});
      session.apply({session.settings().applied_seq, Reset{}});
    }

    const auto now = Clock::now();
    if (now >= next_state) {
      const std::uint64_t seq = take_seq();
      state_box.publish({seq, encode_state(session.snapshot(seq))});
      ++states_published;
      next_state = std::max(next_state + state_period, now);
    }
    if (now >= next_frame) {
      const std::uint64_t seq = take_seq();
      frame_box.publish({seq, encode_frame(session.frame(seq))});
      ++frames_published;
      next_frame = std::max(next_frame + frame_period, now);
    }

    next_step += step_period;
    const auto after = Clock::now();
    // Falling far behind (slow machine, debugger) resets the schedule
    // instead of bursting to catch up.
    if (after - next_step > 10 * step_period) next_step = after;
    std::this_thread::sleep_until(next_step);
  }
}

SimService::SimService(ScenarioConfig config, ServiceOptions options) {
  if (!(options.time_scale > 0.0) || !(options.state_hz > 0.0) || !(options.frame_hz > 0.0) ||
      options.inbound_capacity == 0) {
    fail(ErrorCode::kInvalidConfig, "service rates, time scale and queue capacity must be positive");
  }
  impl_ = std::make_unique<Impl>(std::move(config), options);
}

SimService::~SimService() { stop(); }

void SimService::start() {
  Impl& s = *impl_;
  if (s.running) return;
  beast::error_code ec;
  const auto address = asio::ip::make_address(s.options.address, ec);
  if (ec) fail(ErrorCode::kInvalidConfig, "bad bind address " + s.options.address);
  const tcp::endpoint endpoint(address, s.options.port);
  s.acceptor.open(endpoint.protocol(), ec);
  if (!ec) s.acceptor.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) s.acceptor.bind(endpoint, ec);
  if (!ec) s.acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) {
    beast::error_code ignored;
    s.acceptor.close(ignored);
    fail(ErrorCode::kPortUnavailable, "cannot listen on " + s.options.address + ":" +
                                          std::to_string(s.options.port) + ": " + ec.message());
  }
  s.bound_port = s.acceptor.local_endpoint().port();
  s.running = true;
  s.accept();
  s.pump();
  s.io_thread = std::thread([&s] { s.ioc.run(); });
  s.loop_thread = std::thread([&s] { s.run_loop(); });
}

void SimService::stop() {
  if (!impl_) return;
  Impl& s = *impl_;
  if (!s.running.exchange(false)) return;
  if (s.loop_thread.joinable()) s.loop_thread.join();
  asio::post(s.ioc, [&s] {
    beast::error_code ec;
    s.acceptor.close(ec);
    s.pump_timer.cancel();
    for (const auto& client : s.clients) client->close();
    s.clients.clear();
    s.client_count = 0;
    s.ioc.stop();
  });
  if (s.io_thread.joinable()) s.io_thread.join();
}

std::uint16_t SimService::port() const { return impl_->bound_port; }

ServiceStats SimService::stats() const {
  const Impl& s = *impl_;
  return {s.steps, s.states_published, s.frames_published, s.commands_applied,
          s.commands_rejected, s.client_count};
}

}  // namespace lapfov
