#include "lapfov/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lapfov/error.hpp"

namespace lapfov {

namespace {

constexpr double kConvergedPixels = 5.0;
constexpr double kConvergedDepth = 2.0;
constexpr double kMaxRcmError = 10.0;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Scene scene_with_tool(const Scene& scene, const ToolState& tool) {
  Scene out = scene;
  out.tool = tool;
  return out;
}

double median_of(std::vector<double> values) {
  const std::size_t mid = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid),
                   values.end());
  return values[mid];
}

}  // namespace

void ScenarioConfig::validate() const {
  if (!(dt_s > 0.0)) fail(ErrorCode::kInvalidConfig, "dt must be positive");
  if (!(duration_s >= dt_s)) fail(ErrorCode::kInvalidConfig, "duration must be at least dt");
  if (!(steady_fraction > 0.0 && steady_fraction <= 1.0)) {
    fail(ErrorCode::kInvalidConfig, "steady_fraction must lie in (0, 1]");
  }
  if (!(depth_range.min > 0.0 && depth_range.min < depth_range.max)) {
    fail(ErrorCode::kInvalidConfig, "depth range must satisfy 0 < min < max");
  }
  try {
    intrinsics.validate();
    scene.tool.validate();
    trajectory.validate();
    loss.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kInvalidConfig, e.what());
  }
  gains.validate();
  limits.validate();
  viewgen.validate();
  if (!(noise.pixel_sigma >= 0.0 && noise.depth_rel_sigma >= 0.0)) {
    fail(ErrorCode::kInvalidConfig, "noise levels must be nonnegative");
  }
  if (!(optimized.baseline_mm > kMinBaselineMm) || optimized.period_steps < 1) {
    fail(ErrorCode::kInvalidConfig, "optimized perception needs baseline > 0.5 mm and period >= 1");
  }
  if (!(rig.insertion_mm >= rig.min_insertion_mm && rig.insertion_mm <= rig.max_insertion_mm)) {
    fail(ErrorCode::kInvalidConfig, "initial insertion outside the legal range");
  }
  if (!(heatmap.sigma >= 0.0) || (!heatmap.points_file && heatmap.count < 1)) {
    fail(ErrorCode::kInvalidConfig, "heatmap needs sigma >= 0 and at least one point");
  }
}

Heatmap load_heatmap(const HeatmapSource& source, int width, int height) {
  const std::vector<Vec2> points =
      source.points_file ? read_points(*source.points_file)
                         : synthesize_points(source.centre, source.spread_px, source.count,
                                             source.seed);
  return build_heatmap(points, width, height, source.sigma);
}

double misorientation_of(const Pose& camera, const NlsReference& reference) {
  const Mat3 relative = reference.camera.rotation().transpose() * camera.rotation();
  return rotation_log(relative).z();
}

std::pair<Pose, Pose> initial_poses(const RigConfig& rig) {
  const Mat3 tilt = rot_y(rig.yaw) * rot_x(rig.pitch);
  const Mat3 rotation = tilt * rot_z(rig.roll);
  const Vec3 axis = tilt.col(2);
  const Vec3 position = rig.trocar + rig.insertion_mm * axis +
                        rotation * Vec3(rig.shaft_offset.x(), rig.shaft_offset.y(), 0.0);
  const Pose camera(rotation, position);
  const Pose end_effector = compose(camera, rig.hand_eye.inverse());
  return {camera, end_effector};
}

ClosedLoop::ClosedLoop(ScenarioConfig config) : config_(std::move(config)) {
  config_.validate();
  heatmap_ = load_heatmap(config_.heatmap, config_.intrinsics.width, config_.intrinsics.height);
  initialise();
}

void ClosedLoop::initialise() {
  const auto [camera, end_effector] = initial_poses(config_.rig);
  camera_ = camera;
  end_effector_ = end_effector;
  time_ = 0.0;
  step_index_ = 0;
  rng_.seed(config_.seed);
  last_estimate_.reset();
  last_estimated_depth_ = 0.0;
  tool_override_.reset();
  tool_ = tool_at(config_.trajectory, 0.0);

  reference_.camera = camera_;
  const Vec3 tip_camera = camera_.inverse().transform(tool_.tip);
  reference_.plane_depth_mm =
      tip_camera.z() > 0.0 ? tip_camera.z() : 0.5 * (config_.depth_range.min + config_.depth_range.max);
}

void ClosedLoop::set_tool_override(const std::optional<Vec3>& tip) { tool_override_ = tip; }

void ClosedLoop::set_gains(const ControlGains& gains) {
  gains.validate();
  config_.gains = gains;
}

void ClosedLoop::set_mrc(MrcMode mode) { config_.mrc = mode; }

void ClosedLoop::reset(std::uint64_t seed) {
  config_.seed = seed;
  initialise();
}

RenderOutput ClosedLoop::render_view() const {
  return render(scene_with_tool(config_.scene, tool_), camera_, config_.intrinsics,
                config_.depth_range);
}

ClosedLoop::Observation ClosedLoop::observe() {
  const Scene scene = scene_with_tool(config_.scene, tool_);
  const CameraIntrinsics& k = config_.intrinsics;
  Observation obs;

  if (config_.perception == PerceptionMode::kOptimized) {
    const RenderOutput view = render(scene, camera_, k, config_.depth_range);
    if (mask_count(view.mask) == 0) return obs;
    obs.tip_px = mask_centroid(view.mask);
    if (!last_estimate_ || step_index_ % static_cast<std::size_t>(config_.optimized.period_steps) == 0) {
      const Pose second = camera_ * Pose(Mat3::Identity(),
                                         Vec3(config_.optimized.baseline_mm, 0.0, 0.0));
      const RenderOutput other = render(scene, second, k, config_.depth_range);
      DepthOptimizerOptions options = config_.optimized.optimizer;
      if (last_estimate_) {
        options.init_disparity_m = last_estimate_->grid_m.values();
        options.init_disparity_n = last_estimate_->grid_n.values();
      }
      last_estimate_ = estimate_depth_map(view.image, other.image, camera_, second, k,
                                          config_.loss, options);
      last_estimated_depth_ = median_depth_in_mask(last_estimate_->depth_m, view.mask);
    }
    obs.d_tool = last_estimated_depth_;
    obs.ok = true;
    return obs;
  }

  const RenderOutput view = render_tip_region(scene, camera_, k, config_.depth_range);
  if (mask_count(view.mask) == 0) return obs;
  obs.tip_px = mask_centroid(view.mask);
  obs.d_tool = median_depth_in_mask(view.depth, view.mask);
  if (config_.perception == PerceptionMode::kNoisy) {
    std::normal_distribution<double> unit(0.0, 1.0);
    const double nx = unit(rng_), ny = unit(rng_), nd = unit(rng_);
    obs.tip_px += config_.noise.pixel_sigma * Vec2(nx, ny);
    obs.tip_px.x() = std::clamp(obs.tip_px.x(), 0.0, k.width - 1.0);
    obs.tip_px.y() = std::clamp(obs.tip_px.y(), 0.0, k.height - 1.0);
    obs.d_tool *= 1.0 + config_.noise.depth_rel_sigma * nd;
    obs.d_tool = std::clamp(obs.d_tool, config_.depth_range.min, config_.depth_range.max);
  }
  obs.ok = true;
  return obs;
}

StepRecord ClosedLoop::step() {
  const CameraIntrinsics& k = config_.intrinsics;
  tool_ = tool_at(config_.trajectory, time_);
  if (tool_override_) tool_.tip = *tool_override_;

  StepRecord rec;
  rec.t = time_;
  rec.camera = camera_;
  rec.misorientation = misorientation_of(camera_, reference_);

  const Observation obs = observe();
  rec.perception_ok = obs.ok;
  rec.errors.e_r = rcm_error(config_.rig.trocar, camera_);
  rec.rcm_error_norm = rec.errors.e_r.norm();

  const RcmState rcm = make_rcm_state(camera_, end_effector_, config_.rig.trocar);
  ControlCommand cmd;
  if (obs.ok) {
    const ViewTarget target =
        generate_view_target(heatmap_, obs.tip_px, obs.d_tool, config_.viewgen);
    rec.tip_px = obs.tip_px;
    rec.target_px = target.target_px;
    rec.d_tool = obs.d_tool;
    rec.d_target = target.d_target;
    rec.errors.e_p = obs.tip_px - target.target_px;
    rec.errors.e_d = target.e_d;

    try {
      if (config_.mrc == MrcMode::kOn) {
        const ThetaSearch search = search_theta_star(reference_, camera_, k, obs.tip_px, obs.d_tool);
        rec.errors.theta_star = search.theta_star;
        rec.phi_at_zero = search.phi_at_zero;
        rec.phi_at_star = search.phi_at_star;
      } else {
        rec.phi_at_zero = misorientation_angle(
            estimate_affine(reference_, camera_, 0.0, k, obs.tip_px, obs.d_tool));
        rec.phi_at_star = rec.phi_at_zero;
      }
    } catch (const Error&) {
      rec.errors.theta_star = 0.0;
    }

    const Mat23 j_img = image_jacobian(obs.tip_px, obs.d_tool, k);
    const TaskJacobians jac = task_jacobians(tool_lever(rcm, obs.tip_px, obs.d_tool, k), j_img);
    cmd = null_space_law(rec.errors, jac, config_.gains);
    rec.ill_conditioned = cmd.ill_conditioned;
    if (cmd.ill_conditioned) {
      // Keep regulating the trocar even when the image task is singular.
      cmd.linear.head<2>() = -config_.gains.kr.cwiseProduct(rec.errors.e_r);
    }
  } else {
    cmd.linear.head<2>() = -config_.gains.kr.cwiseProduct(rec.errors.e_r);
  }
  rec.v = lyapunov(rec.errors);

  cmd = apply_limits(cmd, config_.limits);
  rec.command = cmd.twist();

  end_effector_ = integrate_twist(end_effector_, to_end_effector(cmd, rcm), config_.dt_s);
  camera_ = compose(end_effector_, config_.rig.hand_eye);
  ++step_index_;
  time_ = static_cast<double>(step_index_) * config_.dt_s;

  const RcmState next = make_rcm_state(camera_, end_effector_, config_.rig.trocar);
  if (!(next.camera_offset >= config_.rig.min_insertion_mm &&
        next.camera_offset <= config_.rig.max_insertion_mm)) {
    fail(ErrorCode::kInvariantViolation,
         "laparoscope insertion " + std::to_string(next.camera_offset) +
             " mm left the legal range at t = " + std::to_string(time_) + " s");
  }
  if (!(rcm_error(config_.rig.trocar, camera_).norm() < kMaxRcmError)) {
    fail(ErrorCode::kInvariantViolation, "shaft drifted away from the trocar");
  }
  return rec;
}

std::size_t count_lyapunov_violations(const std::vector<StepRecord>& records,
                                      double floor_fraction) {
  if (records.empty()) return 0;
  const double floor = floor_fraction * records.front().v;
  std::size_t violations = 0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i - 1].v > floor && !(records[i].v < records[i - 1].v)) ++violations;
  }
  return violations;
}

RunSummary summarize(const std::vector<StepRecord>& records, double steady_fraction) {
  RunSummary s;
  s.steps = records.size();
  if (records.empty()) return s;
  const double dt = records.size() > 1 ? records[1].t - records[0].t : 0.0;
  s.duration_s = records.back().t + dt;
  const double steady_start = (1.0 - steady_fraction) * s.duration_s;

  std::optional<std::size_t> last_ep_bad, last_ed_bad;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const StepRecord& r = records[i];
    const double ep = r.errors.e_p.norm();
    const double ed = std::abs(r.errors.e_d);
    if (!(ep < kConvergedPixels) || !r.perception_ok) last_ep_bad = i;
    if (!(ed < kConvergedDepth) || !r.perception_ok) last_ed_bad = i;
    if (r.t >= steady_start - 1e-12) {
      s.steady_max_ep = std::max(s.steady_max_ep, ep);
      s.steady_max_ed = std::max(s.steady_max_ed, ed);
    }
    s.max_rcm_error = std::max(s.max_rcm_error, r.rcm_error_norm);
    s.max_misorientation = std::max(s.max_misorientation, std::abs(r.misorientation));
    if (std::abs(r.phi_at_star) > std::abs(r.phi_at_zero) + 1e-12) ++s.mrc_worsened_steps;
    if (!r.perception_ok) ++s.perception_failures;
    if (r.ill_conditioned) ++s.ill_conditioned_steps;
  }
  auto convergence = [&](const std::optional<std::size_t>& last_bad) -> std::optional<double> {
    if (!last_bad) return records.front().t;
    if (*last_bad + 1 >= records.size()) return std::nullopt;
    return records[*last_bad + 1].t;
  };
  s.ep_convergence_s = convergence(last_ep_bad);
  s.ed_convergence_s = convergence(last_ed_bad);
  s.final_misorientation = records.back().misorientation;
  s.lyapunov_violations = count_lyapunov_violations(records);
  return s;
}

RunTrace run(const ScenarioConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  ClosedLoop loop(config);
  const auto steps = static_cast<std::size_t>(std::llround(config.duration_s / config.dt_s));
  RunTrace trace;
  trace.records.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) trace.records.push_back(loop.step());
  trace.summary = summarize(trace.records, config.steady_fraction);
  trace.summary.wall_time_s = seconds_since(start);
  return trace;
}

std::string trace_csv_header() {
  std::string header =
      "t,e_p_x,e_p_y,e_d,e_r_x,e_r_y,theta_star,V,"
      "cmd_vx,cmd_vy,cmd_vz,cmd_wx,cmd_wy,cmd_wz";
  for (int row = 0; row < 3; ++row) {
    for (int col = 0; col < 3; ++col) {
      header += ",cam_r" + std::to_string(row) + std::to_string(col);
    }
    header += ",cam_t" + std::string(1, "xyz"[row]);
  }
  header +=
      ",misorientation,phi_at_zero,phi_at_star,tip_u,tip_v,target_u,target_v,"
      "d_tool,d_target,rcm_error,perception_ok,ill_conditioned";
  return header;
}

std::string trace_csv(const RunTrace& trace) {
  std::string out = trace_csv_header() + "\n";
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    out += buf;
  };
  for (const StepRecord& r : trace.records) {
    double pose[12];
    r.camera.to_row_major12(pose);
    const double fields[] = {
        r.t, r.errors.e_p.x(), r.errors.e_p.y(), r.errors.e_d, r.errors.e_r.x(),
        r.errors.e_r.y(), r.errors.theta_star, r.v};
    bool first = true;
    for (double v : fields) {
      if (!first) out += ',';
      first = false;
      put(v);
    }
    for (int i = 0; i < 6; ++i) {
      out += ',';
      put(r.command(i));
    }
    for (double v : pose) {
      out += ',';
      put(v);
    }
    const double extra[] = {r.misorientation, r.phi_at_zero, r.phi_at_star, r.tip_px.x(),
                            r.tip_px.y(), r.target_px.x(), r.target_px.y(), r.d_tool,
                            r.d_target, r.rcm_error_norm};
    for (double v : extra) {
      out += ',';
      put(v);
    }
    out += r.perception_ok ? ",1" : ",0";
    out += r.ill_conditioned ? ",1\n" : ",0\n";
  }
  return out;
}

void write_trace_csv(const std::filesystem::path& path, const RunTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot open " + path.string());
  out << trace_csv(trace);
}

std::string summary_json(const ScenarioConfig& config, const RunSummary& summary) {
  using nlohmann::json;
  auto optional = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["scenario"] = config.name;
  j["seed"] = config.seed;
  j["perception"] = config.perception == PerceptionMode::kOracle   ? "oracle"
                    : config.perception == PerceptionMode::kNoisy ? "noisy"
                                                                  : "optimized";
  j["mrc"] = config.mrc == MrcMode::kOn ? "on" : "off";
  j["parameters"] = {
      {"Ks", {config.gains.ks(0), config.gains.ks(1), config.gains.ks(2), config.gains.ks(3)}},
      {"Kr", {config.gains.kr(0), config.gains.kr(1)}},
      {"k_theta", config.gains.k_theta},
      {"k_d", config.gains.k_d},
      {"alpha", config.loss.alpha},
      {"mu", config.loss.mu},
      {"lambda", config.loss.lambda},
      {"percentile", config.viewgen.percentile},
      {"depth_interval_mm", {config.viewgen.depth_lo, config.viewgen.depth_hi}},
      {"w1", config.viewgen.w1},
      {"w2", config.viewgen.w2},
      {"dt_s", config.dt_s},
      {"duration_s", config.duration_s},
  };
  j["summary"] = {
      {"steps", summary.steps},
      {"ep_convergence_s", optional(summary.ep_convergence_s)},
      {"ed_convergence_s", optional(summary.ed_convergence_s)},
      {"steady_max_ep_px", summary.steady_max_ep},
      {"steady_max_ed_mm", summary.steady_max_ed},
      {"max_rcm_error_mm", summary.max_rcm_error},
      {"max_abs_misorientation_deg", summary.max_misorientation * 180.0 / M_PI},
      {"final_misorientation_deg", summary.final_misorientation * 180.0 / M_PI},
      {"lyapunov_violations", summary.lyapunov_violations},
      {"mrc_worsened_steps", summary.mrc_worsened_steps},
      {"perception_failures", summary.perception_failures},
      {"ill_conditioned_steps", summary.ill_conditioned_steps},
  };
  return j.dump(2) + "\n";
}

DepthEvalReport depth_eval(const DepthEvalConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const CameraIntrinsics& k = config.intrinsics;
  if (!(config.baseline_mm > kMinBaselineMm)) {
    fail(ErrorCode::kInvalidConfig, "depth-eval baseline must exceed 0.5 mm");
  }

  struct Accumulator {
    std::vector<double> est, gt;
    std::size_t placements = 0;
    double seconds = 0.0;
  };
  std::vector<Accumulator> acc(config.bands.size());

  const Pose cam_m = Pose::Identity();
  const Pose cam_n(Mat3::Identity(), Vec3(config.baseline_mm, 0.0, 0.0));
  for (const DepthBand& band : config.bands) {
    if (!(band.lo > 0.0 && band.lo < band.hi)) {
      fail(ErrorCode::kInvalidConfig, "depth bands must satisfy 0 < lo < hi");
    }
    for (const double fraction : config.placement_fractions) {
      const double tip_depth = band.lo + fraction * (band.hi - band.lo);
      Scene scene;
      scene.texture = config.texture;
      scene.background.normal = Vec3::UnitZ();
      scene.background.offset = config.plane_distance_mm;
      scene.tool.tip = Vec3(0.0, 0.0, tip_depth);
      scene.tool.shaft_dir = config.shaft_dir.normalized();
      scene.tool.radius = config.tool_radius_mm;
      const RenderOutput view_m = render(scene, cam_m, k, config.loss.range);
      const RenderOutput view_n = render(scene, cam_n, k, config.loss.range);
      if (mask_count(view_m.mask) == 0) continue;

      DepthOptimizerOptions options = config.optimizer;
      if (config.init_at_band_centre) options.init_depth_mm = 0.5 * (band.lo + band.hi);
      if (config.init_at_truth) {
        auto block_disparity = [&](const DepthMap& depth) {
          std::vector<double> grid(static_cast<std::size_t>(options.grid_width) *
                                   options.grid_height);
          for (int gy = 0; gy < options.grid_height; ++gy) {
            for (int gx = 0; gx < options.grid_width; ++gx) {
              const int x = std::min(k.width - 1, (2 * gx + 1) * k.width / (2 * options.grid_width));
              const int y = std::min(k.height - 1, (2 * gy + 1) * k.height / (2 * options.grid_height));
              grid[static_cast<std::size_t>(gy) * options.grid_width + gx] =
                  depth_to_disparity(depth.at(x, y), config.loss.range);
            }
          }
          return grid;
        };
        options.init_disparity_m = block_disparity(view_m.depth);
        options.init_disparity_n = block_disparity(view_n.depth);
      }

      const auto t0 = std::chrono::steady_clock::now();
      const DepthEstimate est =
          estimate_depth_map(view_m.image, view_n.image, cam_m, cam_n, k, config.loss, options);
      const double seconds = seconds_since(t0);

      std::vector<double> gt_values;
      for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x) {
          if (mask_set(view_m.mask, x, y)) gt_values.push_back(view_m.depth.at(x, y));
        }
      }
      const double gt_median = median_of(gt_values);
      for (std::size_t b = 0; b < config.bands.size(); ++b) {
        const DepthBand& target = config.bands[b];
        const bool last = b + 1 == config.bands.size();
        if (!(gt_median >= target.lo && (gt_median < target.hi || (last && gt_median <= target.hi)))) {
          continue;
        }
        Accumulator& a = acc[b];
        for (int y = 0; y < k.height; ++y) {
          for (int x = 0; x < k.width; ++x) {
            if (!mask_set(view_m.mask, x, y)) continue;
            a.est.push_back(est.depth_m.at(x, y));
            a.gt.push_back(view_m.depth.at(x, y));
          }
        }
        ++a.placements;
        a.seconds += seconds;
        break;
      }
    }
  }

  DepthEvalReport report;
  Accumulator all;
  for (std::size_t b = 0; b < config.bands.size(); ++b) {
    DepthBandResult r;
    r.band = config.bands[b];
    r.placements = acc[b].placements;
    r.pixels = acc[b].gt.size();
    r.empty = acc[b].placements == 0;
    if (!r.empty) {
      r.metrics = depth_metrics(acc[b].est, acc[b].gt);
      r.seconds_per_frame = acc[b].seconds / static_cast<double>(acc[b].placements);
      all.est.insert(all.est.end(), acc[b].est.begin(), acc[b].est.end());
      all.gt.insert(all.gt.end(), acc[b].gt.begin(), acc[b].gt.end());
      all.placements += acc[b].placements;
      all.seconds += acc[b].seconds;
    }
    report.bands.push_back(r);
  }
  if (!config.bands.empty()) {
    report.overall.band = {config.bands.front().lo, config.bands.back().hi};
  }
  report.overall.placements = all.placements;
  report.overall.pixels = all.gt.size();
  report.overall.empty = all.placements == 0;
  if (!report.overall.empty) {
    report.overall.metrics = depth_metrics(all.est, all.gt);
    report.overall.seconds_per_frame = all.seconds / static_cast<double>(all.placements);
  }
  report.wall_time_s = seconds_since(start);
  return report;
}

std::string depth_report_text(const DepthEvalReport& report) {
  std::ostringstream out;
  char line[160];
  out << "band_mm      placements  pixels   abs_rel_%   rmse_mm   s_per_frame\n";
  auto row = [&](const DepthBandResult& r, const char* label) {
    if (r.empty) {
      std::snprintf(line, sizeof(line), "%-12s %10zu  (empty band, omitted)\n", label,
                    r.placements);
    } else {
      std::snprintf(line, sizeof(line), "%-12s %10zu %7zu %11.3f %9.3f %13.3f\n", label,
                    r.placements, r.pixels, r.metrics.abs_rel_percent, r.metrics.rmse_mm,
                    r.seconds_per_frame);
    }
    out << line;
  };
  for (const DepthBandResult& r : report.bands) {
    char label[64];
    std::snprintf(label, sizeof(label), "[%g,%g]", r.band.lo, r.band.hi);
    row(r, label);
  }
  char label[64];
  std::snprintf(label, sizeof(label), "overall[%g,%g]", report.overall.band.lo,
                report.overall.band.hi);
  row(report.overall, label);
  return out.str();
}

}  // namespace lapfov
