#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <set>
#include <string>

#include <boost/beast/core/detail/base64.hpp>
#include <nlohmann/json.hpp>

#include "lapfov/error.hpp"
#include "lapfov/service.hpp"

namespace lapfov {

namespace {

using nlohmann::json;

[[noreturn]] void malformed(const std::string& what) { fail(ErrorCode::kMalformedMessage, what); }

void require_keys(const json& msg, std::initializer_list<const char*> allowed) {
  std::set<std::string> known{"type", "seq"};
  for (const char* key : allowed) known.insert(key);
  for (const auto& [key, value] : msg.items()) {
    if (!known.contains(key)) malformed("unknown field \"" + key + "\"");
  }
}

double finite_number(const json& v, const std::string& what) {
  if (!v.is_number()) malformed(what + " must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) malformed(what + " must be finite");
  return x;
}

template <int N>
Eigen::Matrix<double, N, 1> fixed_vector(const json& v, const std::string& what) {
  if (!v.is_array() || v.size() != static_cast<std::size_t>(N)) {
    malformed(what + " must be an array of " + std::to_string(N) + " numbers");
  }
  Eigen::Matrix<double, N, 1> out;
  for (int i = 0; i < N; ++i) out[i] = finite_number(v[static_cast<std::size_t>(i)], what);
  return out;
}

const std::set<std::string>& gain_names() {
  static const std::set<std::string> names{"ks0", "ks1", "ks2", "ks3",
                                           "kr0", "kr1", "k_theta", "k_d"};
  return names;
}

json vec_json(const auto& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json pose_json(const Pose& pose) {
  json rotation = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) rotation.push_back(pose.rotation()(r, c));
  }
  return {{"rotation", rotation}, {"translation", vec_json(pose.translation())}};
}

json gains_json(const ControlGains& g) {
  return {{"ks", vec_json(g.ks)}, {"kr", vec_json(g.kr)}, {"k_theta", g.k_theta}, {"k_d", g.k_d}};
}

std::string heatmap_fingerprint(const Heatmap& heatmap) {
  // FNV-1a over the float32 samples; stable across runs and platforms.
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : heatmap.values()) {
    const float f = static_cast<float>(v);
    unsigned char bytes[sizeof f];
    std::memcpy(bytes, &f, sizeof f);
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "hm-%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

InboundMessage parse_inbound(const std::string& text, const CameraIntrinsics& camera) {
  json msg;
  try {
    msg = json::parse(text);
  } catch (const json::exception& e) {
    malformed(std::string("not valid JSON: ") + e.what());
  }
  if (!msg.is_object()) malformed("message must be a JSON object");
  if (!msg.contains("type") || !msg["type"].is_string()) malformed("missing string field \"type\"");
  if (!msg.contains("seq") || !msg["seq"].is_number_unsigned()) {
    malformed("missing nonnegative integer field \"seq\"");
  }

  InboundMessage out;
  out.seq = msg["seq"].get<std::uint64_t>();
  const std::string type = msg["type"].get<std::string>();

  if (type == "tool_drag") {
    require_keys(msg, {"pixel", "point", "release"});
    const int given = static_cast<int>(msg.contains("pixel")) +
                      static_cast<int>(msg.contains("point")) +
                      static_cast<int>(msg.contains("release"));
    if (given != 1) malformed("tool_drag needs exactly one of pixel, point, release");
    if (msg.contains("pixel")) {
      const Vec2 px = fixed_vector<2>(msg["pixel"], "pixel");
      if (px.x() < 0.0 || px.y() < 0.0 || px.x() > camera.width - 1.0 ||
          px.y() > camera.height - 1.0) {
        malformed("pixel lies outside the image");
      }
      out.command = ToolDragPixel{px};
    } else if (msg.contains("point")) {
      out.command = ToolDragPoint{fixed_vector<3>(msg["point"], "point")};
    } else {
      if (msg["release"] != true) malformed("release must be true");
      out.command = ToolRelease{};
    }
  } else if (type == "set_gain") {
    require_keys(msg, {"name", "value"});
    if (!msg.contains("name") || !msg["name"].is_string()) malformed("set_gain needs a name");
    const std::string name = msg["name"].get<std::string>();
    if (!gain_names().contains(name)) malformed("unknown gain \"" + name + "\"");
    if (!msg.contains("value")) malformed("set_gain needs a value");
    const double value = finite_number(msg["value"], "value");
    if (!(value > 0.0)) malformed("gain values must be positive");
    out.command = SetGain{name, value};
  } else if (type == "set_mrc") {
    require_keys(msg, {"value"});
    if (!msg.contains("value")) malformed("set_mrc needs a value");
    const json& v = msg["value"];
    if (v.is_boolean()) {
      out.command = SetMrc{v.get<bool>()};
    } else if (v == "on" || v == "off") {
      out.command = SetMrc{v == "on"};
    } else {
      malformed("set_mrc value must be \"on\", \"off\" or a boolean");
    }
  } else if (type == "pause") {
    require_keys(msg, {});
    out.command = Pause{};
  } else if (type == "resume") {
    require_keys(msg, {});
    out.command = Resume{};
  } else if (type == "reset") {
    require_keys(msg, {"seed"});
    Reset reset;
    if (msg.contains("seed")) {
      if (!msg["seed"].is_number_unsigned()) malformed("seed must be a nonnegative integer");
      reset.seed = msg["seed"].get<std::uint64_t>();
    }
    out.command = reset;
  } else {
    malformed("unknown message type \"" + type + "\"");
  }
  return out;
}

std::string encode_hello(std::uint64_t seq, const ScenarioConfig& config,
                         const std::string& heatmap_id) {
  const json msg = {{"type", "hello"},
                    {"version", kProtocolVersion},
                    {"seq", seq},
                    {"scenario", config.name},
                    {"dt", config.dt_s},
                    {"width", config.intrinsics.width},
                    {"height", config.intrinsics.height},
                    {"frame_width", config.intrinsics.width / 2},
                    {"frame_height", config.intrinsics.height / 2},
                    {"heatmap_id", heatmap_id},
                    {"max_drag_speed", kMaxDragSpeedMmPerS}};
  return msg.dump();
}

std::string encode_state(const StateSnapshot& state) {
  const StepRecord& r = state.record;
  const SessionSettings& s = state.settings;
  json settings = {{"mrc", s.mrc_on ? "on" : "off"},
                   {"paused", s.paused},
                   {"gains", gains_json(s.gains)},
                   {"drag_target", s.drag_target ? vec_json(*s.drag_target) : json(nullptr)},
                   {"seed", s.seed},
                   {"applied_seq", s.applied_seq}};
  const json msg = {
      {"type", "state"},
      {"seq", state.seq},
      {"step", state.step},
      {"t", r.t},
      {"errors",
       {{"e_p", vec_json(r.errors.e_p)},
        {"e_d", r.errors.e_d},
        {"e_r", vec_json(r.errors.e_r)},
        {"theta_star", r.errors.theta_star}}},
      {"V", r.v},
      {"tip_px", vec_json(r.tip_px)},
      {"target_px", vec_json(r.target_px)},
      {"d_tool", r.d_tool},
      {"d_target", r.d_target},
      {"misorientation", r.misorientation},
      {"rcm_error", r.rcm_error_norm},
      {"perception_ok", r.perception_ok},
      {"camera", pose_json(r.camera)},
      {"tool_tip", vec_json(state.tool_tip)},
      {"heatmap_id", state.heatmap_id},
      {"settings", settings}};
  return msg.dump();
}

std::string encode_frame(const FrameSnapshot& frame) {
  namespace b64 = boost::beast::detail::base64;
  std::string data(b64::encoded_size(frame.ppm.size()), '\0');
  data.resize(b64::encode(data.data(), frame.ppm.data(), frame.ppm.size()));
  const json msg = {{"type", "frame"},   {"seq", frame.seq},         {"image_id", frame.image_id},
                    {"t", frame.t},      {"format", "ppm"},          {"encoding", "base64"},
                    {"data", data}};
  return msg.dump();
}

std::string encode_error(std::uint64_t seq, const std::string& message,
                         std::optional<std::uint64_t> in_reply_to) {
  const json msg = {{"type", "error"},
                    {"seq", seq},
                    {"message", message},
                    {"in_reply_to", in_reply_to ? json(*in_reply_to) : json(nullptr)}};
  return msg.dump();
}

std::vector<std::uint8_t> quarter_resolution_ppm(const ImageBuffer& rgb) {
  const int w = rgb.width() / 2, h = rgb.height() / 2, channels = rgb.channels();
  ImageBuffer small(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src = std::min(c, channels - 1);
        small.at(x, y, c) = 0.25 * (rgb.at(2 * x, 2 * y, src) + rgb.at(2 * x + 1, 2 * y, src) +
                                    rgb.at(2 * x, 2 * y + 1, src) +
                                    rgb.at(2 * x + 1, 2 * y + 1, src));
      }
    }
  }
  return encode_pnm(small);
}

Session::Session(ScenarioConfig config) : base_config_(config), loop_(std::move(config)) {
  heatmap_id_ = heatmap_fingerprint(loop_.heatmap());
  settings_.gains = loop_.config().gains;
  settings_.mrc_on = loop_.config().mrc == MrcMode::kOn;
  restart(base_config_.seed);
}

void Session::restart(std::uint64_t seed) {
  loop_.reset(seed);
  settings_.seed = seed;
  settings_.drag_target.reset();
  dragging_ = false;
  steps_ = 0;
  tool_tip_ = loop_.tool().tip;
  last_ = StepRecord{};
  last_.camera = loop_.camera();
}

void Session::apply(const InboundMessage& message) {
  std::visit(
      [&](const auto& cmd) {
        using T = std::decay_t<decltype(cmd)>;
        if constexpr (std::is_same_v<T, ToolDragPixel>) {
          // Keep the tool at its current depth along the new viewing ray.
          const CameraIntrinsics& k = loop_.config().intrinsics;
          const Pose& camera = loop_.camera();
          const double depth = std::max(camera.inverse().transform(tool_tip_).z(), 1.0);
          const Vec3 ray((cmd.pixel.x() - k.cx) / k.fx, (cmd.pixel.y() - k.cy) / k.fy, 1.0);
          settings_.drag_target = camera.transform(depth * ray);
          dragging_ = true;
        } else if constexpr (std::is_same_v<T, ToolDragPoint>) {
          settings_.drag_target = cmd.point;
          dragging_ = true;
        } else if constexpr (std::is_same_v<T, ToolRelease>) {
          settings_.drag_target.reset();
        } else if constexpr (std::is_same_v<T, SetGain>) {
          ControlGains g = settings_.gains;
          if (cmd.name.starts_with("ks")) {
            g.ks[cmd.name[2] - '0'] = cmd.value;
          } else if (cmd.name.starts_with("kr")) {
            g.kr[cmd.name[2] - '0'] = cmd.value;
          } else if (cmd.name == "k_theta") {
            g.k_theta = cmd.value;
          } else {
            g.k_d = cmd.value;
          }
          loop_.set_gains(g);
          settings_.gains = g;
        } else if constexpr (std::is_same_v<T, SetMrc>) {
          loop_.set_mrc(cmd.on ? MrcMode::kOn : MrcMode::kOff);
          settings_.mrc_on = cmd.on;
        } else if constexpr (std::is_same_v<T, Pause>) {
          settings_.paused = true;
        } else if constexpr (std::is_same_v<T, Resume>) {
          settings_.paused = false;
        } else if constexpr (std::is_same_v<T, Reset>) {
          restart(cmd.seed.value_or(base_config_.seed));
        }
      },
      message.command);
  settings_.applied_seq = message.seq;
}

const StepRecord& Session::tick() {
  if (settings_.paused) return last_;
  if (settings_.drag_target) {
    const Vec3 delta = *settings_.drag_target - tool_tip_;
    const double max_step = kMaxDragSpeedMmPerS * loop_.config().dt_s;
    const double dist = delta.norm();
    tool_tip_ = dist <= max_step ? *settings_.drag_target : tool_tip_ + delta * (max_step / dist);
  }
  // Once dragged, the tool stays where the operator left it.
  if (dragging_) loop_.set_tool_override(tool_tip_);
  last_ = loop_.step();
  tool_tip_ = loop_.tool().tip;
  ++steps_;
  return last_;
}

StateSnapshot Session::snapshot(std::uint64_t seq) const {
  return {seq, steps_, last_, tool_tip_, heatmap_id_, settings_};
}

FrameSnapshot Session::frame(std::uint64_t seq) {
  FrameSnapshot out;
  out.seq = seq;
  out.image_id = ++frames_;
  out.t = last_.t;
  out.ppm = quarter_resolution_ppm(colorize(loop_.render_view()));
  return out;
}

}  // namespace lapfov
