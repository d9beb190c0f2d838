#include "lapfov/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <numbers>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "lapfov/error.hpp"

namespace lapfov {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::string where(const YAML::Node& node, const std::string& key) {
  const YAML::Mark mark = node.Mark();
  if (mark.line < 0) return "'" + key + "'";
  return "'" + key + "' (line " + std::to_string(mark.line + 1) + ")";
}

void require_map(const YAML::Node& node, const std::string& key) {
  if (!node.IsMap()) fail(ErrorCode::kInvalidConfig, where(node, key) + " must be a mapping");
}

void check_keys(const YAML::Node& node, const std::string& section,
                std::initializer_list<const char*> allowed) {
  require_map(node, section);
  for (const auto& item : node) {
    const std::string key = item.first.as<std::string>();
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) {
      fail(ErrorCode::kInvalidConfig,
           "unknown key " + where(item.first, key) + " in section '" + section + "'");
    }
  }
}

template <typename T>
T scalar(const YAML::Node& node, const std::string& key) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    fail(ErrorCode::kInvalidConfig, where(node, key) + " has the wrong type");
  }
}

template <typename T>
void read(const YAML::Node& parent, const char* key, T& out) {
  if (const YAML::Node node = parent[key]) out = scalar<T>(node, key);
}

std::vector<double> numbers(const YAML::Node& node, const std::string& key,
                            std::size_t expected = 0) {
  if (!node.IsSequence()) fail(ErrorCode::kInvalidConfig, where(node, key) + " must be a list");
  std::vector<double> out;
  for (const auto& item : node) out.push_back(scalar<double>(item, key));
  if (expected != 0 && out.size() != expected) {
    fail(ErrorCode::kInvalidConfig,
         where(node, key) + " must have " + std::to_string(expected) + " entries");
  }
  return out;
}

void read_vec(const YAML::Node& parent, const char* key, Vec2& out) {
  if (const YAML::Node node = parent[key]) {
    const auto v = numbers(node, key, 2);
    out = Vec2(v[0], v[1]);
  }
}

void read_vec(const YAML::Node& parent, const char* key, Vec3& out) {
  if (const YAML::Node node = parent[key]) {
    const auto v = numbers(node, key, 3);
    out = Vec3(v[0], v[1], v[2]);
  }
}

void read_vec(const YAML::Node& parent, const char* key, Vec4& out) {
  if (const YAML::Node node = parent[key]) {
    const auto v = numbers(node, key, 4);
    out = Vec4(v[0], v[1], v[2], v[3]);
  }
}

void read_camera(const YAML::Node& node, CameraIntrinsics& k) {
  check_keys(node, "camera", {"width", "height", "fx", "fy", "cx", "cy"});
  read(node, "width", k.width);
  read(node, "height", k.height);
  read(node, "fx", k.fx);
  read(node, "fy", k.fy);
  read(node, "cx", k.cx);
  read(node, "cy", k.cy);
  try {
    k.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kInvalidConfig, e.what());
  }
}

void read_texture(const YAML::Node& node, TextureParams& t) {
  check_keys(node, "texture", {"seed", "cell_mm", "tool_cell_mm", "octaves", "gain"});
  read(node, "seed", t.seed);
  read(node, "cell_mm", t.cell_mm);
  read(node, "tool_cell_mm", t.tool_cell_mm);
  read(node, "octaves", t.octaves);
  read(node, "gain", t.gain);
  if (!(t.cell_mm > 0.0 && t.tool_cell_mm > 0.0 && t.octaves >= 1 && t.gain > 0.0)) {
    fail(ErrorCode::kInvalidConfig, "texture needs positive cell sizes, octaves and gain");
  }
}

void read_loss(const YAML::Node& node, LossConfig& loss) {
  check_keys(node, "loss", {"alpha", "mu", "lambda", "scales", "d_min", "d_max"});
  read(node, "alpha", loss.alpha);
  read(node, "mu", loss.mu);
  read(node, "lambda", loss.lambda);
  if (const YAML::Node s = node["scales"]) loss.scales = numbers(s, "scales");
  read(node, "d_min", loss.range.min);
  read(node, "d_max", loss.range.max);
  try {
    loss.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kInvalidConfig, e.what());
  }
}

void read_optimizer(const YAML::Node& node, DepthOptimizerOptions& opt) {
  check_keys(node, "optimizer",
             {"grid_width", "grid_height", "iterations", "learning_rate", "momentum",
              "init_depth_mm"});
  read(node, "grid_width", opt.grid_width);
  read(node, "grid_height", opt.grid_height);
  read(node, "iterations", opt.iterations);
  read(node, "learning_rate", opt.learning_rate);
  read(node, "momentum", opt.momentum);
  read(node, "init_depth_mm", opt.init_depth_mm);
  if (!(opt.grid_width >= 2 && opt.grid_height >= 2 && opt.iterations >= 0 &&
        opt.learning_rate > 0.0 && opt.momentum >= 0.0 && opt.momentum < 1.0 &&
        opt.init_depth_mm > 0.0)) {
    fail(ErrorCode::kInvalidConfig, "optimizer settings out of range");
  }
}

ToolState read_tool(const YAML::Node& node) {
  check_keys(node, "tool", {"tip", "shaft_dir", "radius"});
  ToolState tool;
  read_vec(node, "tip", tool.tip);
  read_vec(node, "shaft_dir", tool.shaft_dir);
  read(node, "radius", tool.radius);
  if (!(tool.shaft_dir.norm() > 0.0)) {
    fail(ErrorCode::kInvalidConfig, "tool shaft direction must be nonzero");
  }
  tool.shaft_dir.normalize();
  return tool;
}

void read_scene(const YAML::Node& node, ScenarioConfig& cfg) {
  check_keys(node, "scene", {"plane", "texture", "tool", "tip_region_mm", "tool_length_mm"});
  if (const YAML::Node plane = node["plane"]) {
    check_keys(plane, "plane", {"normal", "offset"});
    read_vec(plane, "normal", cfg.scene.background.normal);
    read(plane, "offset", cfg.scene.background.offset);
    if (!(cfg.scene.background.normal.norm() > 0.0)) {
      fail(ErrorCode::kInvalidConfig, "plane normal must be nonzero");
    }
    const double scale = cfg.scene.background.normal.norm();
    cfg.scene.background.normal /= scale;
    cfg.scene.background.offset /= scale;
  }
  if (const YAML::Node t = node["texture"]) read_texture(t, cfg.scene.texture);
  if (const YAML::Node tool = node["tool"]) cfg.scene.tool = read_tool(tool);
  read(node, "tip_region_mm", cfg.scene.tip_region_mm);
  read(node, "tool_length_mm", cfg.scene.tool_length_mm);
  if (!(cfg.scene.tip_region_mm > 0.0 && cfg.scene.tool_length_mm >= cfg.scene.tip_region_mm)) {
    fail(ErrorCode::kInvalidConfig, "tip region must be positive and within the tool length");
  }
}

void read_trajectory(const YAML::Node& node, TrajectoryScript& traj) {
  check_keys(node, "trajectory",
             {"kind", "step_offset", "step_time", "pitch_mm_per_rev", "rate_rev_per_s",
              "phase_deg", "waypoints"});
  if (const YAML::Node kind = node["kind"]) {
    const std::string k = scalar<std::string>(kind, "kind");
    if (k == "static") {
      traj.kind = TrajectoryScript::Kind::kStatic;
    } else if (k == "step") {
      traj.kind = TrajectoryScript::Kind::kStep;
    } else if (k == "spiral") {
      traj.kind = TrajectoryScript::Kind::kSpiral;
    } else if (k == "waypoints") {
      traj.kind = TrajectoryScript::Kind::kWaypoints;
    } else {
      fail(ErrorCode::kInvalidConfig, "trajectory kind must be static, step, spiral or waypoints");
    }
  }
  read_vec(node, "step_offset", traj.step_offset);
  read(node, "step_time", traj.step_time);
  read(node, "pitch_mm_per_rev", traj.pitch_mm_per_rev);
  read(node, "rate_rev_per_s", traj.rate_rev_per_s);
  double phase_deg = traj.phase / kDeg;
  read(node, "phase_deg", phase_deg);
  traj.phase = phase_deg * kDeg;
  if (const YAML::Node wps = node["waypoints"]) {
    if (!wps.IsSequence()) fail(ErrorCode::kInvalidConfig, "waypoints must be a list");
    traj.waypoints.clear();
    for (const auto& wp : wps) {
      check_keys(wp, "waypoints", {"t", "tip"});
      Waypoint w;
      if (!wp["t"] || !wp["tip"]) fail(ErrorCode::kInvalidConfig, "each waypoint needs t and tip");
      read(wp, "t", w.time);
      read_vec(wp, "tip", w.tip);
      traj.waypoints.push_back(w);
    }
  }
}

void read_rig(const YAML::Node& node, RigConfig& rig) {
  check_keys(node, "rig",
             {"trocar", "insertion_mm", "pitch_deg", "yaw_deg", "roll_deg", "shaft_offset",
              "hand_eye", "min_insertion_mm", "max_insertion_mm"});
  read_vec(node, "trocar", rig.trocar);
  read(node, "insertion_mm", rig.insertion_mm);
  double pitch = rig.pitch / kDeg, yaw = rig.yaw / kDeg, roll = rig.roll / kDeg;
  read(node, "pitch_deg", pitch);
  read(node, "yaw_deg", yaw);
  read(node, "roll_deg", roll);
  rig.pitch = pitch * kDeg;
  rig.yaw = yaw * kDeg;
  rig.roll = roll * kDeg;
  read_vec(node, "shaft_offset", rig.shaft_offset);
  if (const YAML::Node he = node["hand_eye"]) {
    check_keys(he, "hand_eye", {"rotation_vector_deg", "translation"});
    Vec3 rv = rotation_log(rig.hand_eye.rotation()) / kDeg;
    Vec3 t = rig.hand_eye.translation();
    read_vec(he, "rotation_vector_deg", rv);
    read_vec(he, "translation", t);
    rig.hand_eye = Pose(rodrigues(rv * kDeg), t);
  }
  read(node, "min_insertion_mm", rig.min_insertion_mm);
  read(node, "max_insertion_mm", rig.max_insertion_mm);
}

void read_gains(const YAML::Node& node, ControlGains& gains) {
  check_keys(node, "gains", {"ks", "kr", "k_theta", "k_d"});
  read_vec(node, "ks", gains.ks);
  read_vec(node, "kr", gains.kr);
  read(node, "k_theta", gains.k_theta);
  read(node, "k_d", gains.k_d);
}

void read_viewgen(const YAML::Node& node, ViewGenConfig& vg) {
  check_keys(node, "viewgen", {"w1", "w2", "percentile", "depth_interval"});
  read(node, "w1", vg.w1);
  read(node, "w2", vg.w2);
  read(node, "percentile", vg.percentile);
  if (const YAML::Node di = node["depth_interval"]) {
    const auto v = numbers(di, "depth_interval", 2);
    vg.depth_lo = v[0];
    vg.depth_hi = v[1];
  }
}

void read_heatmap(const YAML::Node& node, HeatmapSource& hm, const std::filesystem::path& base) {
  check_keys(node, "heatmap", {"points_file", "centre", "spread_px", "count", "seed", "sigma"});
  if (const YAML::Node pf = node["points_file"]) {
    std::filesystem::path p = scalar<std::string>(pf, "points_file");
    if (p.is_relative() && !base.empty()) p = base / p;
    hm.points_file = p;
  }
  read_vec(node, "centre", hm.centre);
  read(node, "spread_px", hm.spread_px);
  read(node, "count", hm.count);
  read(node, "seed", hm.seed);
  read(node, "sigma", hm.sigma);
}

YAML::Node parse_yaml(const std::string& text) {
  try {
    YAML::Node root = YAML::Load(text);
    if (root.IsNull()) return YAML::Node(YAML::NodeType::Map);
    return root;
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::kInvalidConfig, std::string("malformed YAML: ") + e.what());
  }
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kInvalidConfig, "cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ScenarioConfig parse_scenario_config(const std::string& text,
                                     const std::filesystem::path& base_dir) {
  const YAML::Node root = parse_yaml(text);
  check_keys(root, "scenario",
             {"name", "seed", "duration_s", "dt_s", "steady_fraction", "perception", "mrc",
              "camera", "depth_range", "scene", "trajectory", "rig", "gains", "limits",
              "viewgen", "heatmap", "noise", "optimized", "loss"});

  ScenarioConfig cfg;
  read(root, "name", cfg.name);
  read(root, "seed", cfg.seed);
  read(root, "duration_s", cfg.duration_s);
  read(root, "dt_s", cfg.dt_s);
  read(root, "steady_fraction", cfg.steady_fraction);
  if (const YAML::Node p = root["perception"]) {
    const std::string mode = scalar<std::string>(p, "perception");
    if (mode == "oracle") {
      cfg.perception = PerceptionMode::kOracle;
    } else if (mode == "noisy") {
      cfg.perception = PerceptionMode::kNoisy;
    } else if (mode == "optimized") {
      cfg.perception = PerceptionMode::kOptimized;
    } else {
      fail(ErrorCode::kInvalidConfig, "perception must be oracle, noisy or optimized");
    }
  }
  if (const YAML::Node m = root["mrc"]) {
    // Plain YAML 1.1 readers turn on/off into booleans; accept both spellings.
    const std::string mode = scalar<std::string>(m, "mrc");
    if (mode == "on" || mode == "true") {
      cfg.mrc = MrcMode::kOn;
    } else if (mode == "off" || mode == "false") {
      cfg.mrc = MrcMode::kOff;
    } else {
      fail(ErrorCode::kInvalidConfig, "mrc must be on or off");
    }
  }
  if (const YAML::Node c = root["camera"]) read_camera(c, cfg.intrinsics);
  cfg.viewgen = ViewGenConfig::ForImage(cfg.intrinsics.width, cfg.intrinsics.height);
  if (const YAML::Node d = root["depth_range"]) {
    check_keys(d, "depth_range", {"min", "max"});
    read(d, "min", cfg.depth_range.min);
    read(d, "max", cfg.depth_range.max);
  }
  cfg.loss.range = cfg.depth_range;
  if (const YAML::Node s = root["scene"]) read_scene(s, cfg);
  cfg.trajectory.base = cfg.scene.tool;
  if (const YAML::Node t = root["trajectory"]) read_trajectory(t, cfg.trajectory);
  if (const YAML::Node r = root["rig"]) read_rig(r, cfg.rig);
  cfg.scene.trocar = cfg.rig.trocar;
  if (const YAML::Node g = root["gains"]) read_gains(g, cfg.gains);
  if (const YAML::Node l = root["limits"]) {
    check_keys(l, "limits", {"max_linear", "max_angular"});
    read(l, "max_linear", cfg.limits.max_linear);
    read(l, "max_angular", cfg.limits.max_angular);
  }
  if (const YAML::Node v = root["viewgen"]) read_viewgen(v, cfg.viewgen);
  if (const YAML::Node h = root["heatmap"]) read_heatmap(h, cfg.heatmap, base_dir);
  if (const YAML::Node n = root["noise"]) {
    check_keys(n, "noise", {"pixel_sigma", "depth_rel_sigma"});
    read(n, "pixel_sigma", cfg.noise.pixel_sigma);
    read(n, "depth_rel_sigma", cfg.noise.depth_rel_sigma);
  }
  if (const YAML::Node l = root["loss"]) read_loss(l, cfg.loss);
  if (const YAML::Node o = root["optimized"]) {
    check_keys(o, "optimized", {"baseline_mm", "period_steps", "optimizer"});
    read(o, "baseline_mm", cfg.optimized.baseline_mm);
    read(o, "period_steps", cfg.optimized.period_steps);
    if (const YAML::Node opt = o["optimizer"]) read_optimizer(opt, cfg.optimized.optimizer);
  }
  cfg.validate();
  return cfg;
}

ScenarioConfig load_scenario_config(const std::filesystem::path& path) {
  return parse_scenario_config(slurp(path), path.parent_path());
}

DepthEvalConfig parse_depth_eval_config(const std::string& text) {
  const YAML::Node root = parse_yaml(text);
  check_keys(root, "depth_eval",
             {"camera", "loss", "optimizer", "texture", "plane_distance_mm", "tool_radius_mm",
              "shaft_dir", "baseline_mm", "bands", "placement_fractions",
              "init_at_band_centre", "init_at_truth"});
  DepthEvalConfig cfg;
  if (const YAML::Node c = root["camera"]) read_camera(c, cfg.intrinsics);
  if (const YAML::Node l = root["loss"]) read_loss(l, cfg.loss);
  if (const YAML::Node o = root["optimizer"]) read_optimizer(o, cfg.optimizer);
  if (const YAML::Node t = root["texture"]) read_texture(t, cfg.texture);
  read(root, "plane_distance_mm", cfg.plane_distance_mm);
  read(root, "tool_radius_mm", cfg.tool_radius_mm);
  read_vec(root, "shaft_dir", cfg.shaft_dir);
  read(root, "baseline_mm", cfg.baseline_mm);
  if (const YAML::Node b = root["bands"]) {
    if (!b.IsSequence()) fail(ErrorCode::kInvalidConfig, "bands must be a list of [lo, hi]");
    cfg.bands.clear();
    for (const auto& item : b) {
      const auto v = numbers(item, "bands", 2);
      cfg.bands.push_back({v[0], v[1]});
    }
  }
  if (const YAML::Node f = root["placement_fractions"]) {
    cfg.placement_fractions = numbers(f, "placement_fractions");
  }
  read(root, "init_at_band_centre", cfg.init_at_band_centre);
  read(root, "init_at_truth", cfg.init_at_truth);

  for (const DepthBand& band : cfg.bands) {
    if (!(band.lo > 0.0 && band.lo < band.hi)) {
      fail(ErrorCode::kInvalidConfig, "depth bands must satisfy 0 < lo < hi");
    }
  }
  for (double f : cfg.placement_fractions) {
    if (!(f >= 0.0 && f <= 1.0)) {
      fail(ErrorCode::kInvalidConfig, "placement fractions must lie in [0, 1]");
    }
  }
  if (!(cfg.plane_distance_mm > 0.0 && cfg.tool_radius_mm > 0.0 &&
        cfg.shaft_dir.norm() > 0.0 && cfg.baseline_mm > kMinBaselineMm)) {
    fail(ErrorCode::kInvalidConfig, "depth-eval geometry out of range");
  }
  cfg.shaft_dir.normalize();
  return cfg;
}

DepthEvalConfig load_depth_eval_config(const std::filesystem::path& path) {
  return parse_depth_eval_config(slurp(path));
}

}  // namespace lapfov
