// lapfov: batch entry point for scenarios, depth evaluation, heatmaps and the
// live session service.
//
// Exit codes: 0 success, 1 configuration or input error, 2 runtime invariant
// violation. Outputs are staged and moved into --out only when a command
// succeeds, so a failed command leaves nothing behind.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lapfov/config.hpp"
#include "lapfov/error.hpp"
#include "lapfov/scenario.hpp"
#include "lapfov/service.hpp"
#include "lapfov/viewgen.hpp"

namespace fs = std::filesystem;
using namespace lapfov;

namespace {

constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

/// Files are written into a hidden directory under --out and renamed into
/// place by commit(); destruction without commit removes them.
class StagedOutput {
 public:
  explicit StagedOutput(fs::path out) : out_(std::move(out)) {
    fs::create_directories(out_);
    std::random_device rd;
    staging_ = out_ / (".staging-" + std::to_string(rd()));
    fs::create_directories(staging_);
  }
  ~StagedOutput() {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }

  fs::path path(const std::string& name) {
    names_.push_back(name);
    return staging_ / name;
  }

  void commit() {
    for (const auto& name : names_) fs::rename(staging_ / name, out_ / name);
    names_.clear();
  }

 private:
  fs::path out_;
  fs::path staging_;
  std::vector<std::string> names_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
}

ScenarioConfig scenario_from(const std::string& path, const std::optional<std::uint64_t>& seed,
                             const std::string& mrc) {
  ScenarioConfig cfg = load_scenario_config(path);
  if (seed) cfg.seed = *seed;
  if (mrc == "on") cfg.mrc = MrcMode::kOn;
  if (mrc == "off") cfg.mrc = MrcMode::kOff;
  return cfg;
}

void print_summary(const std::string& label, const RunSummary& s) {
  std::printf("%s: %zu steps, steady |e_p| %.3f px, steady |e_d| %.3f mm, max rcm %.4f mm, "
              "max misorientation %.3f deg, lyapunov violations %zu, wall %.2f s\n",
              label.c_str(), s.steps, s.steady_max_ep, s.steady_max_ed, s.max_rcm_error,
              s.max_misorientation * kRadToDeg, s.lyapunov_violations, s.wall_time_s);
}

int cmd_run(const std::string& config, const std::string& out,
            const std::optional<std::uint64_t>& seed, const std::string& mrc) {
  const ScenarioConfig cfg = scenario_from(config, seed, mrc);
  const RunTrace trace = run(cfg);
  StagedOutput staged(out);
  write_trace_csv(staged.path("trace.csv"), trace);
  write_text(staged.path("summary.json"), summary_json(cfg, trace.summary));
  staged.commit();
  print_summary(cfg.name, trace.summary);
  return 0;
}

int cmd_mrc_compare(const std::string& config, const std::string& out,
                    const std::optional<std::uint64_t>& seed) {
  ScenarioConfig off = scenario_from(config, seed, "off");
  ScenarioConfig on = off;
  on.mrc = MrcMode::kOn;
  const RunTrace trace_off = run(off);
  const RunTrace trace_on = run(on);

  double excess = 0.0;
  const std::size_t n = std::min(trace_off.records.size(), trace_on.records.size());
  for (std::size_t i = 0; i < n; ++i) {
    excess = std::max(excess, std::abs(trace_on.records[i].misorientation) -
                                  std::abs(trace_off.records[i].misorientation));
  }
  const nlohmann::json comparison = {
      {"scenario", off.name},
      {"seed", off.seed},
      {"peak_misorientation_off_deg", trace_off.summary.max_misorientation * kRadToDeg},
      {"peak_misorientation_on_deg", trace_on.summary.max_misorientation * kRadToDeg},
      {"final_misorientation_off_deg", trace_off.summary.final_misorientation * kRadToDeg},
      {"final_misorientation_on_deg", trace_on.summary.final_misorientation * kRadToDeg},
      {"max_on_minus_off_deg", excess * kRadToDeg},
      {"mrc_worsened_steps", trace_on.summary.mrc_worsened_steps},
      {"wall_time_s", trace_off.summary.wall_time_s + trace_on.summary.wall_time_s}};

  StagedOutput staged(out);
  write_trace_csv(staged.path("trace_mrc_off.csv"), trace_off);
  write_trace_csv(staged.path("trace_mrc_on.csv"), trace_on);
  write_text(staged.path("summary_mrc_off.json"), summary_json(off, trace_off.summary));
  write_text(staged.path("summary_mrc_on.json"), summary_json(on, trace_on.summary));
  write_text(staged.path("comparison.json"), comparison.dump(2) + "\n");
  staged.commit();
  std::printf("%s: peak misorientation off %.3f deg, on %.3f deg, max on-off excess %.3f deg\n",
              off.name.c_str(), trace_off.summary.max_misorientation * kRadToDeg,
              trace_on.summary.max_misorientation * kRadToDeg, excess * kRadToDeg);
  return 0;
}

int cmd_depth_eval(const std::string& config, const std::string& out) {
  const DepthEvalConfig cfg = load_depth_eval_config(config);
  const DepthEvalReport report = depth_eval(cfg);

  nlohmann::json bands = nlohmann::json::array();
  auto band_json = [](const DepthBandResult& b) {
    return nlohmann::json{{"lo_mm", b.band.lo},
                          {"hi_mm", b.band.hi},
                          {"placements", b.placements},
                          {"pixels", b.pixels},
                          {"empty", b.empty},
                          {"abs_rel_percent", b.metrics.abs_rel_percent},
                          {"rmse_mm", b.metrics.rmse_mm},
                          {"seconds_per_frame", b.seconds_per_frame}};
  };
  for (const auto& b : report.bands) bands.push_back(band_json(b));
  const nlohmann::json doc = {{"bands", bands},
                              {"overall", band_json(report.overall)},
                              {"wall_time_s", report.wall_time_s}};

  const std::string table = depth_report_text(report);
  StagedOutput staged(out);
  write_text(staged.path("depth_report.txt"), table);
  write_text(staged.path("depth_report.json"), doc.dump(2) + "\n");
  staged.commit();
  std::fputs(table.c_str(), stdout);
  return 0;
}

int cmd_heatmap_build(const std::string& points_path, const std::string& size, double sigma,
                      const std::string& out) {
  int width = 0, height = 0;
  char sep = 0;
  std::istringstream in(size);
  if (!(in >> width >> sep >> height) || (sep != 'x' && sep != 'X') || !in.eof() || width <= 0 ||
      height <= 0) {
    fail(ErrorCode::kInvalidConfig, "--size must look like 320x240");
  }
  const std::vector<Vec2> points = read_points(points_path);
  Heatmap heatmap;
  try {
    heatmap = build_heatmap(points, width, height, sigma);
  } catch (const Error& e) {
    fail(ErrorCode::kInvalidConfig, e.what());
  }
  StagedOutput staged(out);
  write_heatmap(staged.path("heatmap.hmap"), heatmap);
  write_pnm(staged.path("heatmap.pgm"), heatmap_image(heatmap));
  staged.commit();
  std::printf("heatmap %dx%d from %zu points (sigma %.3g px)\n", width, height, points.size(),
              sigma);
  return 0;
}

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

int cmd_serve(const std::string& config, const std::optional<std::uint64_t>& seed,
              const ServiceOptions& options, double duration_s) {
  const ScenarioConfig cfg = scenario_from(config, seed, "");
  SimService service(cfg, options);
  service.start();
  std::printf("serving %s on ws://%s:%u%s (protocol %s)\n", cfg.name.c_str(),
              options.address.c_str(), static_cast<unsigned>(service.port()),
              std::string(kProtocolPath).c_str(), std::string(kProtocolVersion).c_str());
  std::fflush(stdout);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto start = std::chrono::steady_clock::now();
  while (!g_interrupted) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (duration_s > 0.0 && elapsed >= duration_s) break;
  }
  service.stop();
  const ServiceStats stats = service.stats();
  std::printf("stopped after %llu steps, %llu states, %llu frames\n",
              static_cast<unsigned long long>(stats.steps),
              static_cast<unsigned long long>(stats.states_published),
              static_cast<unsigned long long>(stats.frames_published));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Automated laparoscope field-of-view simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "lapfov 0.1.0");

  std::string config, out, mrc, points, size = "320x240";
  std::optional<std::uint64_t> seed;
  double sigma = 12.0, duration = 0.0;
  ServiceOptions service;

  auto* run_cmd = app.add_subcommand("run", "Run one scenario; writes trace.csv and summary.json");
  run_cmd->add_option("--config", config, "Scenario YAML file (schema: scenarios/README.md)")
      ->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--out", out, "Output directory")->required();
  run_cmd->add_option("--seed", seed, "Override the scenario seed");
  run_cmd->add_option("--mrc", mrc, "Override the MRC mode")->check(CLI::IsMember({"on", "off"}));

  auto* compare_cmd = app.add_subcommand(
      "mrc-compare", "Run a scenario with MRC off and on; writes both traces and comparison.json");
  compare_cmd->add_option("--config", config, "Scenario YAML file")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("--out", out, "Output directory")->required();
  compare_cmd->add_option("--seed", seed, "Override the scenario seed");

  auto* depth_cmd = app.add_subcommand(
      "depth-eval", "Depth sweep over tool-depth bands; writes depth_report.txt/json");
  depth_cmd->add_option("--config", config, "Depth evaluation YAML file")->required()->check(CLI::ExistingFile);
  depth_cmd->add_option("--out", out, "Output directory")->required();

  auto* heatmap_cmd = app.add_subcommand(
      "heatmap-build", "Build a heatmap from a points file; writes heatmap.hmap and heatmap.pgm");
  heatmap_cmd->add_option("--points", points, "Text file with one \"u v\" pixel per line")
      ->required()->check(CLI::ExistingFile);
  heatmap_cmd->add_option("--size", size, "Image size WxH")->capture_default_str();
  heatmap_cmd->add_option("--sigma", sigma, "Gaussian blur sigma in pixels")
      ->capture_default_str()->check(CLI::NonNegativeNumber);
  heatmap_cmd->add_option("--out", out, "Output directory")->required();

  auto* serve_cmd = app.add_subcommand("serve", "Start the live session service (WebSocket, /v1)");
  serve_cmd->add_option("--config", config, "Scenario YAML file")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--seed", seed, "Override the scenario seed");
  serve_cmd->add_option("--address", service.address, "Bind address")->capture_default_str();
  serve_cmd->add_option("--port", service.port, "TCP port (0 picks a free one)")->capture_default_str();
  serve_cmd->add_option("--time-scale", service.time_scale, "Simulated seconds per wall second")
      ->capture_default_str()->check(CLI::PositiveNumber);
  serve_cmd->add_option("--duration", duration, "Stop after this many wall seconds (0: until Ctrl-C)")
      ->capture_default_str()->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run_cmd) return cmd_run(config, out, seed, mrc);
    if (*compare_cmd) return cmd_mrc_compare(config, out, seed);
    if (*depth_cmd) return cmd_depth_eval(config, out);
    if (*heatmap_cmd) return cmd_heatmap_build(points, size, sigma, out);
    if (*serve_cmd) return cmd_serve(config, seed, service, duration);
  } catch (const Error& e) {
    std::fprintf(stderr, "lapfov: %s\n", e.what());
    return e.code() == ErrorCode::kInvariantViolation ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "lapfov: %s\n", e.what());
    return 1;
  }
  return 1;
}
