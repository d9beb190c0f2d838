#include "lapfov/viewgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>

#include "lapfov/error.hpp"

namespace lapfov {

void ViewGenConfig::validate() const {
  if (!(w1 > 0.0)) fail(ErrorCode::kInvalidConfig, "w1 must be positive");
  if (!(w2 < 0.0)) fail(ErrorCode::kInvalidConfig, "w2 must be negative (moving cost)");
  if (!(percentile > 0.0 && percentile < 1.0)) {
    fail(ErrorCode::kInvalidConfig, "percentile must lie in (0, 1)");
  }
  if (!(depth_lo > 0.0 && depth_lo < depth_hi)) {
    fail(ErrorCode::kInvalidConfig, "depth interval must satisfy 0 < lo < hi");
  }
}

ViewGenConfig ViewGenConfig::ForImage(int width, int height) {
  ViewGenConfig cfg;
  cfg.w2 = -1.0 / std::hypot(static_cast<double>(width), static_cast<double>(height));
  return cfg;
}

Heatmap build_heatmap(std::span<const Vec2> points, int width, int height, double sigma) {
  if (width <= 0 || height <= 0) fail(ErrorCode::kInvalidArgument, "heatmap size must be positive");
  if (!(sigma >= 0.0)) fail(ErrorCode::kInvalidArgument, "sigma must be nonnegative");
  Heatmap counts(width, height);
  std::size_t inside = 0;
  for (const Vec2& p : points) {
    const long x = std::lround(p.x()), y = std::lround(p.y());
    if (x < 0 || y < 0 || x >= width || y >= height) continue;
    counts.at(static_cast<int>(x), static_cast<int>(y)) += 1.0;
    ++inside;
  }
  if (inside == 0) fail(ErrorCode::kNoPointsInBounds, "no point falls inside the image");

  Heatmap out = counts;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  if (sigma > 0.0 && radius > 0) {
    std::vector<double> kernel(2 * radius + 1);
    for (int i = -radius; i <= radius; ++i) {
      kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    }
    Heatmap tmp(width, height);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xs = x + i;
          if (xs >= 0 && xs < width) acc += kernel[i + radius] * counts.at(xs, y);
        }
        tmp.at(x, y) = acc;
      }
    }
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int ys = y + i;
          if (ys >= 0 && ys < height) acc += kernel[i + radius] * tmp.at(x, ys);
        }
        out.at(x, y) = acc;
      }
    }
  }
  const double peak = *std::max_element(out.values().begin(), out.values().end());
  for (double& v : out.values()) v /= peak;
  return out;
}

ScalarField reward_map(const Heatmap& dm, const Vec2& p_t, const ViewGenConfig& cfg) {
  ScalarField r(dm.width(), dm.height());
  for (int y = 0; y < dm.height(); ++y) {
    for (int x = 0; x < dm.width(); ++x) {
      const double dist = std::hypot(x - p_t.x(), y - p_t.y());
      r.at(x, y) = cfg.w1 * dm.at(x, y) + cfg.w2 * dist;
    }
  }
  return r;
}

double nearest_rank_percentile(std::span<const double> values, double q) {
  if (values.empty()) fail(ErrorCode::kEmptyInput, "percentile of an empty set");
  std::vector<double> sorted(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(sorted.size())));
  const std::size_t index = std::clamp<std::size_t>(rank, 1, sorted.size()) - 1;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(index),
                   sorted.end());
  return sorted[index];
}

Vec2 select_target(const ScalarField& reward, const Vec2& p_t, const ViewGenConfig& cfg) {
  if (reward.empty()) fail(ErrorCode::kEmptyInput, "reward field is empty");
  const double threshold = nearest_rank_percentile(reward.values(), cfg.percentile);

  const long ux = std::lround(p_t.x()), uy = std::lround(p_t.y());
  if (ux >= 0 && uy >= 0 && ux < reward.width() && uy < reward.height() &&
      reward.at(static_cast<int>(ux), static_cast<int>(uy)) > threshold) {
    return p_t;
  }

  double best = std::numeric_limits<double>::infinity();
  Vec2 target = p_t;
  bool found = false;
  for (int y = 0; y < reward.height(); ++y) {
    for (int x = 0; x < reward.width(); ++x) {
      if (!(reward.at(x, y) > threshold)) continue;
      const double d2 = (x - p_t.x()) * (x - p_t.x()) + (y - p_t.y()) * (y - p_t.y());
      if (d2 < best) {
        best = d2;
        target = Vec2(x, y);
        found = true;
      }
    }
  }
  // Only a constant field leaves nothing strictly above its percentile.
  return found ? target : p_t;
}

DepthTarget target_depth(double d_tool, const ViewGenConfig& cfg) {
  const double d_target = std::clamp(d_tool, cfg.depth_lo, cfg.depth_hi);
  return {d_target, d_tool - d_target};
}

ViewTarget generate_view_target(const Heatmap& dm, const Vec2& p_t, double d_tool,
                                const ViewGenConfig& cfg) {
  const ScalarField r = reward_map(dm, p_t, cfg);
  const DepthTarget depth = target_depth(d_tool, cfg);
  return {select_target(r, p_t, cfg), depth.d_target, depth.e_d};
}

std::vector<Vec2> read_points(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open points file " + path.string());
  std::vector<Vec2> points;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    double u = 0.0, v = 0.0;
    std::string rest;
    if (!(fields >> u >> v) || (fields >> rest) || !std::isfinite(u) || !std::isfinite(v)) {
      fail(ErrorCode::kInvalidConfig,
           path.string() + ":" + std::to_string(line_no) + ": expected \"u v\"");
    }
    points.emplace_back(u, v);
  }
  return points;
}

std::vector<Vec2> synthesize_points(const Vec2& centre, double spread_px, int count,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spread_px);
  std::vector<Vec2> points;
  points.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    const double dx = noise(rng);
    const double dy = noise(rng);
    points.emplace_back(centre.x() + dx, centre.y() + dy);
  }
  return points;
}

void write_heatmap(const std::filesystem::path& path, const Heatmap& heatmap) {
  write_float_grid(path, kHeatmapMagic, heatmap.width(), heatmap.height(), heatmap.values());
}

Heatmap read_heatmap(const std::filesystem::path& path) {
  FloatGrid grid = read_float_grid(path, kHeatmapMagic);
  Heatmap heatmap(grid.width, grid.height);
  heatmap.values() = std::move(grid.values);
  return heatmap;
}

ImageBuffer heatmap_image(const Heatmap& heatmap) {
  ImageBuffer image(heatmap.width(), heatmap.height(), 1);
  double peak = 0.0;
  for (double v : heatmap.values()) peak = std::max(peak, v);
  for (std::size_t i = 0; i < heatmap.size(); ++i) {
    image.data()[i] = peak > 0.0 ? std::clamp(heatmap[i] / peak, 0.0, 1.0) : 0.0;
  }
  return image;
}

}  // namespace lapfov
