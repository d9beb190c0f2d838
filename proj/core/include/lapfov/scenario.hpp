#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lapfov/controller.hpp"
#include "lapfov/geometry.hpp"
#include "lapfov/mrc.hpp"
#include "lapfov/perception.hpp"
#include "lapfov/scene.hpp"
#include "lapfov/viewgen.hpp"

namespace lapfov {

enum class PerceptionMode { kOracle, kOptimized, kNoisy };

struct NoiseConfig {
  double pixel_sigma = 2.0;
  double depth_rel_sigma = 0.08;
};

/// Depth from a second view offset along the camera x axis, re-estimated
/// every `period_steps` steps and warm-started from the previous grids.
struct OptimizedPerceptionConfig {
  double baseline_mm = 1.0;
  int period_steps = 100;
  DepthOptimizerOptions optimizer;
};

/// Source of the expert-preference heatmap.
struct HeatmapSource {
  std::optional<std::filesystem::path> points_file;
  /// Synthetic cluster used when no file is given.
  Vec2 centre = Vec2(159.5, 119.5);
  double spread_px = 20.0;
  int count = 2000;
  std::uint64_t seed = 2024;
  double sigma = 6.0;
};

Heatmap load_heatmap(const HeatmapSource& source, int width, int height);

/// Laparoscope mounting and starting pose. The shaft enters through the
/// trocar at the base origin along +z; `pitch`/`yaw` tilt it about the
/// trocar, `roll` turns the camera about its own axis.
struct RigConfig {
  Vec3 trocar = Vec3::Zero();
  double insertion_mm = 30.0;
  double pitch = 0.0;
  double yaw = 0.0;
  double roll = 0.0;
  /// Initial shaft offset from the trocar in shaft-frame x/y.
  Vec2 shaft_offset = Vec2::Zero();
  /// End-effector to camera transform.
  Pose hand_eye = Pose(rot_z(0.5 * 3.14159265358979323846), Vec3(0.0, 0.0, 250.0));
  /// Legal insertion range; leaving it aborts the run.
  double min_insertion_mm = 5.0;
  double max_insertion_mm = 65.0;
};

enum class MrcMode { kOff, kOn };

struct ScenarioConfig {
  std::string name = "scenario";
  Scene scene;
  TrajectoryScript trajectory;
  CameraIntrinsics intrinsics;
  DepthRange depth_range;
  ControlGains gains;
  MotionLimits limits;
  ViewGenConfig viewgen;
  HeatmapSource heatmap;
  PerceptionMode perception = PerceptionMode::kOracle;
  NoiseConfig noise;
  OptimizedPerceptionConfig optimized;
  LossConfig loss;
  RigConfig rig;
  MrcMode mrc = MrcMode::kOff;
  double duration_s = 10.0;
  double dt_s = 0.01;
  std::uint64_t seed = 1;
  /// Fraction of the run treated as steady state in the summary.
  double steady_fraction = 0.3;

  void validate() const;
};

struct StepRecord {
  double t = 0.0;
  TaskErrors errors;
  double v = 0.0;
  Vec6 command = Vec6::Zero();  // RCM frame, after limits
  Pose camera;
  double misorientation = 0.0;
  double phi_at_zero = 0.0;
  double phi_at_star = 0.0;
  Vec2 tip_px = Vec2::Zero();
  Vec2 target_px = Vec2::Zero();
  double d_tool = 0.0;
  double d_target = 0.0;
  double rcm_error_norm = 0.0;
  bool perception_ok = true;
  bool ill_conditioned = false;
};

struct RunSummary {
  std::size_t steps = 0;
  double duration_s = 0.0;
  std::optional<double> ep_convergence_s;  // |e_p| < 5 px from then on
  std::optional<double> ed_convergence_s;  // |e_d| < 2 mm from then on
  double steady_max_ep = 0.0;
  double steady_max_ed = 0.0;
  double max_rcm_error = 0.0;
  double max_misorientation = 0.0;
  double final_misorientation = 0.0;
  std::size_t lyapunov_violations = 0;
  std::size_t mrc_worsened_steps = 0;
  std::size_t perception_failures = 0;
  std::size_t ill_conditioned_steps = 0;
  double wall_time_s = 0.0;
};

struct RunTrace {
  std::vector<StepRecord> records;
  RunSummary summary;
};

/// V(k+1) < V(k) is required while V(k) exceeds floor_fraction * V(0).
std::size_t count_lyapunov_violations(const std::vector<StepRecord>& records,
                                      double floor_fraction = 1e-3);

RunSummary summarize(const std::vector<StepRecord>& records, double steady_fraction);

/// Roll of the camera relative to the reference: z component of the
/// axis-angle vector of R_ref^T R_cam.
double misorientation_of(const Pose& camera, const NlsReference& reference);

/// Deterministic simulation loop. One instance owns all mutable state.
class ClosedLoop {
 public:
  explicit ClosedLoop(ScenarioConfig config);

  /// Advances one step and returns its record (errors observed at the start
  /// of the step, command applied during it).
  StepRecord step();

  double time() const { return time_; }
  const Pose& camera() const { return camera_; }
  const Pose& end_effector() const { return end_effector_; }
  const ToolState& tool() const { return tool_; }
  const ScenarioConfig& config() const { return config_; }
  const Heatmap& heatmap() const { return heatmap_; }
  const NlsReference& reference() const { return reference_; }

  /// Replaces the scripted tool position from now on (live steering).
  void set_tool_override(const std::optional<Vec3>& tip);
  void set_gains(const ControlGains& gains);
  void set_mrc(MrcMode mode);
  void reset(std::uint64_t seed);

  /// Full shaded render of the current view.
  RenderOutput render_view() const;

 private:
  struct Observation {
    bool ok = false;
    Vec2 tip_px = Vec2::Zero();
    double d_tool = 0.0;
  };

  Observation observe();
  void initialise();

  ScenarioConfig config_;
  Heatmap heatmap_;
  NlsReference reference_;
  Pose camera_;
  Pose end_effector_;
  ToolState tool_;
  std::optional<Vec3> tool_override_;
  double time_ = 0.0;
  std::size_t step_index_ = 0;
  std::mt19937_64 rng_;
  std::optional<DepthEstimate> last_estimate_;
  double last_estimated_depth_ = 0.0;
};

/// Camera and end-effector poses for a rig configuration.
std::pair<Pose, Pose> initial_poses(const RigConfig& rig);

RunTrace run(const ScenarioConfig& config);

/// Trace CSV: fixed column order announced in the header row.
std::string trace_csv_header();
void write_trace_csv(const std::filesystem::path& path, const RunTrace& trace);
std::string trace_csv(const RunTrace& trace);

/// Summary plus the parameters that produced it, as indented JSON.
std::string summary_json(const ScenarioConfig& config, const RunSummary& summary);

struct DepthBand {
  double lo = 0.0;
  double hi = 0.0;
};

struct DepthEvalConfig {
  CameraIntrinsics intrinsics;
  LossConfig loss;
  DepthOptimizerOptions optimizer;
  TextureParams texture;
  /// Background plane distance from the camera.
  double plane_distance_mm = 60.0;
  double tool_radius_mm = 2.5;
  Vec3 shaft_dir = Vec3(-0.6, -0.3, 0.74);
  double baseline_mm = 1.0;
  std::vector<DepthBand> bands = {{4.0, 8.0}, {8.0, 12.0}, {12.0, 16.0}};
  /// Placement positions inside each band, as fractions of its width.
  std::vector<double> placement_fractions = {0.35, 0.75};
  /// Initialise each estimate at its band's mid-depth rather than the
  /// optimizer default.
  bool init_at_band_centre = true;
  /// Start from ground-truth disparity (diagnostic).
  bool init_at_truth = false;
};

struct DepthBandResult {
  DepthBand band;
  std::size_t placements = 0;
  std::size_t pixels = 0;
  DepthMetrics metrics;
  double seconds_per_frame = 0.0;
  bool empty = false;
};

struct DepthEvalReport {
  std::vector<DepthBandResult> bands;
  DepthBandResult overall;
  double wall_time_s = 0.0;
};

DepthEvalReport depth_eval(const DepthEvalConfig& config);

std::string depth_report_text(const DepthEvalReport& report);

}  // namespace lapfov
