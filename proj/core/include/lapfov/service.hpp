#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "lapfov/scenario.hpp"

namespace lapfov {

/// Wire protocol tag. Clients connect to ws://host:port/v1 and may also
/// request it as the WebSocket subprotocol.
inline constexpr std::string_view kProtocolVersion = "v1";
inline constexpr std::string_view kProtocolPath = "/v1";
inline constexpr std::string_view kSubprotocol = "lapfov.v1";

/// Human drag intent is a position target; the tool moves toward it no
/// faster than this.
inline constexpr double kMaxDragSpeedMmPerS = 50.0;

// Inbound messages. Every message is one JSON object on a single line with
// "type" and a strictly increasing per-connection "seq".

struct ToolDragPixel {
  Vec2 pixel;
};
struct ToolDragPoint {
  Vec3 point;
};
struct ToolRelease {};
struct SetGain {
  std::string name;  // ks0..ks3, kr0, kr1, k_theta, k_d
  double value = 0.0;
};
struct SetMrc {
  bool on = false;
};
struct Pause {};
struct Resume {};
struct Reset {
  std::optional<std::uint64_t> seed;
};

using Command = std::variant<ToolDragPixel, ToolDragPoint, ToolRelease, SetGain, SetMrc, Pause,
                             Resume, Reset>;

struct InboundMessage {
  std::uint64_t seq = 0;
  Command command;
};

/// Parses and range-checks one inbound line. Pixel bounds come from the
/// camera; gains must be positive. Throws kMalformedMessage.
InboundMessage parse_inbound(const std::string& text, const CameraIntrinsics& camera);

/// Settings echoed in every state message so clients can confirm that their
/// commands took effect.
struct SessionSettings {
  ControlGains gains;
  bool mrc_on = false;
  bool paused = false;
  std::optional<Vec3> drag_target;
  std::uint64_t seed = 0;
  /// Sequence number of the last inbound message applied (0 if none).
  std::uint64_t applied_seq = 0;
};

struct StateSnapshot {
  std::uint64_t seq = 0;
  std::size_t step = 0;
  StepRecord record;
  Vec3 tool_tip = Vec3::Zero();
  std::string heatmap_id;
  SessionSettings settings;
};

struct FrameSnapshot {
  std::uint64_t seq = 0;
  std::uint64_t image_id = 0;
  double t = 0.0;
  /// Binary PPM (P6) at half width and half height.
  std::vector<std::uint8_t> ppm;
};

std::string encode_hello(std::uint64_t seq, const ScenarioConfig& config,
                         const std::string& heatmap_id);
std::string encode_state(const StateSnapshot& state);
std::string encode_frame(const FrameSnapshot& frame);
std::string encode_error(std::uint64_t seq, const std::string& message,
                         std::optional<std::uint64_t> in_reply_to);

/// 2x2 box downsampling followed by 8-bit PPM encoding.
std::vector<std::uint8_t> quarter_resolution_ppm(const ImageBuffer& rgb);

/// The simulation side of a live session. Single-threaded: the service's
/// loop thread owns it, and tests drive it directly.
class Session {
 public:
  explicit Session(ScenarioConfig config);

  void apply(const InboundMessage& message);

  /// Advances one step unless paused; returns the latest record either way.
  const StepRecord& tick();

  bool paused() const { return settings_.paused; }
  const SessionSettings& settings() const { return settings_; }
  const StepRecord& last_record() const { return last_; }
  std::size_t steps() const { return steps_; }
  const ClosedLoop& loop() const { return loop_; }
  const std::string& heatmap_id() const { return heatmap_id_; }
  Vec3 tool_tip() const { return tool_tip_; }

  StateSnapshot snapshot(std::uint64_t seq) const;
  /// Renders the current view; each call gets a fresh image id.
  FrameSnapshot frame(std::uint64_t seq);

 private:
  void restart(std::uint64_t seed);

  ScenarioConfig base_config_;
  ClosedLoop loop_;
  SessionSettings settings_;
  StepRecord last_;
  std::size_t steps_ = 0;
  std::uint64_t frames_ = 0;
  std::string heatmap_id_;
  Vec3 tool_tip_ = Vec3::Zero();
  bool dragging_ = false;
};

/// Fixed-capacity FIFO; push fails instead of blocking when full.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  bool try_push(T value) {
    std::lock_guard lock(mutex_);
    if (items_.size() >= capacity_) return false;
    items_.push_back(std::move(value));
    return true;
  }

  std::deque<T> drain() {
    std::lock_guard lock(mutex_);
    std::deque<T> out;
    out.swap(items_);
    return out;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return items_.size();
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::deque<T> items_;
};

/// Last-writer-wins slot. Readers get a shared immutable copy.
template <typename T>
class Mailbox {
 public:
  void publish(T value) {
    auto next = std::make_shared<const T>(std::move(value));
    std::lock_guard lock(mutex_);
    latest_ = std::move(next);
  }

  std::shared_ptr<const T> latest() const {
    std::lock_guard lock(mutex_);
    return latest_;
  }

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const T> latest_;
};

struct ServiceOptions {
  std::string address = "127.0.0.1";
  /// 0 picks a free port; see SimService::port().
  std::uint16_t port = 8765;
  /// Simulated seconds per wall-clock second.
  double time_scale = 1.0;
  double state_hz = 30.0;
  double frame_hz = 12.0;
  std::size_t inbound_capacity = 64;
};

struct ServiceStats {
  std::uint64_t steps = 0;
  std::uint64_t states_published = 0;
  std::uint64_t frames_published = 0;
  std::uint64_t commands_applied = 0;
  std::uint64_t commands_rejected = 0;
  std::size_t clients = 0;
};

/// WebSocket front end plus the loop thread. Client I/O talks to the loop
/// only through the inbound queue and the two mailboxes, so a slow client
/// loses intermediate messages instead of stalling the simulation.
class SimService {
 public:
  SimService(ScenarioConfig config, ServiceOptions options);
  ~SimService();
  SimService(const SimService&) = delete;
  SimService& operator=(const SimService&) = delete;

  /// Binds and starts both threads. Throws kPortUnavailable.
  void start();
  /// Idempotent; also run by the destructor.
  void stop();

  std::uint16_t port() const;
  ServiceStats stats() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace lapfov
