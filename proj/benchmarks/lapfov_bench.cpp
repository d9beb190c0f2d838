#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "lapfov/config.hpp"
#include "lapfov/mrc.hpp"
#include "lapfov/perception.hpp"
#include "lapfov/scenario.hpp"
#include "lapfov/viewgen.hpp"
#include "rendered_pair.hpp"

namespace {

using namespace lapfov;

void BM_Render(benchmark::State& state) {
  const auto rp = lapfov::testing::make_rendered_pair(50.0, 1.0, 10.0);
  const Pose camera(Mat3::Identity(), Vec3(0.0, 0.0, 20.0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(render(rp.scene, camera, rp.k));
  }
}
BENCHMARK(BM_Render)->Unit(benchmark::kMillisecond);

void BM_RenderGeometry(benchmark::State& state) {
  const auto rp = lapfov::testing::make_rendered_pair(50.0, 1.0, 10.0);
  const Pose camera(Mat3::Identity(), Vec3(0.0, 0.0, 20.0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(render_geometry(rp.scene, camera, rp.k));
  }
}
BENCHMARK(BM_RenderGeometry)->Unit(benchmark::kMillisecond);

// Argument: number of pyramid scales (1 = full resolution only).
void BM_LossGradient(benchmark::State& state) {
  LossConfig cfg;
  cfg.scales.resize(static_cast<std::size_t>(state.range(0)));
  const auto rp = lapfov::testing::make_rendered_pair(50.0, 1.0, 10.0, cfg);
  for (auto _ : state) {
    benchmark::DoNotOptimize(total_loss_with_gradient(rp.pair, rp.truth_m, rp.truth_n, rp.k, cfg));
  }
}
BENCHMARK(BM_LossGradient)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_DepthEstimate(benchmark::State& state) {
  const LossConfig cfg;
  const auto rp = lapfov::testing::make_rendered_pair(50.0, 1.0, 10.0, cfg);
  DepthOptimizerOptions opts;
  opts.iterations = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(estimate_depth_map(rp.pair.image_m, rp.pair.image_n, rp.pair.pose_m,
                                                rp.pair.pose_n, rp.k, cfg, opts));
  }
}
BENCHMARK(BM_DepthEstimate)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_ThetaStar(benchmark::State& state) {
  NlsReference ref;
  ref.camera = Pose(Mat3::Identity(), Vec3(0.0, 0.0, 30.0));
  ref.plane_depth_mm = 40.0;
  const Pose current = Pose(rot_y(0.1) * rot_x(0.15), Vec3::Zero()) * ref.camera *
                       Pose(rot_z(0.3), Vec3::Zero());
  const CameraIntrinsics k;
  for (auto _ : state) {
    benchmark::DoNotOptimize(search_theta_star(ref, current, k, Vec2(170.0, 110.0)));
  }
}
BENCHMARK(BM_ThetaStar)->Unit(benchmark::kMicrosecond);

void BM_SelectTarget(benchmark::State& state) {
  const int w = 320, h = 240;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 20.0);
  std::vector<Vec2> pts;
  for (int i = 0; i < 5000; ++i) pts.emplace_back(160.0 + n(rng), 120.0 + n(rng));
  const Heatmap hm = build_heatmap(pts, w, h, 6.0);
  const ViewGenConfig cfg = ViewGenConfig::ForImage(w, h);
  const Vec2 tip(250.0, 60.0);
  for (auto _ : state) {
    const ScalarField reward = reward_map(hm, tip, cfg);
    benchmark::DoNotOptimize(select_target(reward, tip, cfg));
  }
}
BENCHMARK(BM_SelectTarget)->Unit(benchmark::kMicrosecond);

void BM_ClosedLoopStep(benchmark::State& state) {
  ScenarioConfig cfg =
      load_scenario_config(std::string(LAPFOV_SCENARIO_DIR) + "/waypoints.yaml");
  cfg.duration_s = 1e6;
  ClosedLoop loop(cfg);
  for (auto _ : state) {
    benchmark::DoNotOptimize(loop.step());
  }
}
BENCHMARK(BM_ClosedLoopStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
