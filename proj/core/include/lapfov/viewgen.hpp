#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lapfov/geometry.hpp"
#include "lapfov/image.hpp"

namespace lapfov {

struct ViewGenConfig {
  double w1 = 1.0;
  /// Moving-cost weight; negative so that distant pixels are penalised.
  /// The default is -1/diagonal for a 320x240 image.
  double w2 = -1.0 / 400.0;
  double percentile = 0.95;
  double depth_lo = 8.0;
  double depth_hi = 12.0;

  void validate() const;

  /// Defaults with w2 = -1 / image diagonal.
  static ViewGenConfig ForImage(int width, int height);
};

struct DepthTarget {
  double d_target = 0.0;
  double e_d = 0.0;
};

struct ViewTarget {
  Vec2 target_px = Vec2::Zero();
  double d_target = 0.0;
  double e_d = 0.0;
};

/// Histogram of rounded points convolved with a Gaussian truncated at 3 sigma
/// (zero padding), scaled so the peak is 1. sigma = 0 skips the blur.
Heatmap build_heatmap(std::span<const Vec2> points, int width, int height,
                      double sigma);

/// r(p) = w1 * DM(p) + w2 * |p - p_t|.
ScalarField reward_map(const Heatmap& dm, const Vec2& p_t, const ViewGenConfig& cfg);

/// Nearest-rank percentile: the ceil(q N)-th smallest value.
double nearest_rank_percentile(std::span<const double> values, double q);

/// Pixel of r > Q_q(r) closest to p_t, ties to the smallest row-major index.
/// When the pixel under p_t is itself a candidate, p_t is returned unchanged
/// so that a tool already in a preferred region commands no motion. A
/// constant field also returns p_t.
Vec2 select_target(const ScalarField& reward, const Vec2& p_t, const ViewGenConfig& cfg);

DepthTarget target_depth(double d_tool, const ViewGenConfig& cfg);

ViewTarget generate_view_target(const Heatmap& dm, const Vec2& p_t, double d_tool,
                                const ViewGenConfig& cfg);

/// One "u v" pair per line; blank lines and lines starting with '#' skipped.
std::vector<Vec2> read_points(const std::filesystem::path& path);

/// Tool-tip positions an expert would keep: an isotropic cluster around
/// `centre`. Used when no tracked-point file is configured.
std::vector<Vec2> synthesize_points(const Vec2& centre, double spread_px, int count,
                                    std::uint64_t seed);

void write_heatmap(const std::filesystem::path& path, const Heatmap& heatmap);
Heatmap read_heatmap(const std::filesystem::path& path);

/// Grey-scale visualisation scaled by the maximum value.
ImageBuffer heatmap_image(const Heatmap& heatmap);

}  // namespace lapfov
