#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "lapfov/geometry.hpp"
#include "lapfov/image.hpp"

namespace lapfov {

/// Tool tip as seen by the camera: centroid pixel of the tip mask and the
/// median depth over that mask.
struct ToolObservation {
  Vec2 tip_px = Vec2::Zero();
  double d_tool = 0.0;
  double timestamp = 0.0;
};

/// Weights of the photometric depth objective.
struct LossConfig {
  double alpha = 0.85;   // SSIM vs L1 balance
  double mu = 0.8;       // reconstruction weight
  double lambda = 0.2;   // edge-aware smoothness weight
  std::vector<double> scales = {1.0, 0.5, 0.25, 0.125};
  DepthRange range{1.0, 100.0};

  void validate() const;
  /// Pyramid levels (0 = full resolution) matching `scales`.
  std::vector<int> levels() const;
};

Vec2 mask_centroid(const ImageBuffer& mask);

/// Lower-middle median for even counts.
double median_depth_in_mask(const DepthMap& depth, const ImageBuffer& mask);

ToolObservation observe_tool(const DepthMap& depth, const ImageBuffer& mask,
                             double timestamp = 0.0);

DepthMap disparity_to_depth(const DisparityMap& disparity, const LossConfig& cfg);
double disparity_to_depth(double disparity, const DepthRange& range);
double depth_to_disparity(double depth, const DepthRange& range);

struct WarpResult {
  ImageBuffer warped;
  std::vector<std::uint8_t> valid;
  std::size_t valid_count = 0;
};

/// Synthesises the target view by sampling `source`: every target pixel is
/// lifted with its depth, moved by `target_to_source` and projected. Pixels
/// landing outside the source image or behind its camera are invalid.
WarpResult warp_image(const ImageBuffer& source, const DepthMap& target_depth,
                      const Pose& target_to_source, const CameraIntrinsics& k);

/// SSIM map using 3x3 average pooling (reflect-padded borders).
ScalarField ssim(const ImageBuffer& a, const ImageBuffer& b);

/// Mean over valid pixels of alpha/2 (1 - SSIM) + (1 - alpha) |I - I'|.
double photometric_loss(const ImageBuffer& image, const ImageBuffer& warped,
                        std::span<const std::uint8_t> valid, const LossConfig& cfg);

/// Siamese reconstruction loss: both views are synthesised from each other.
/// Poses map camera to world.
double reconstruction_loss(const ImageBuffer& image_m, const ImageBuffer& image_n,
                           const DepthMap& depth_m, const DepthMap& depth_n,
                           const Pose& pose_m, const Pose& pose_n,
                           const CameraIntrinsics& k, const LossConfig& cfg);

/// Edge-aware smoothness with forward differences:
///   mean|dx D| exp(-|dx I|) + mean|dy D| exp(-|dy I|).
double smoothness_loss(std::span<const double> values, int width, int height,
                       const ImageBuffer& image);

template <typename Tag>
double smoothness_loss(const ScalarMap<Tag>& map, const ImageBuffer& image) {
  return smoothness_loss(map.values(), map.width(), map.height(), image);
}

struct ViewPair {
  ImageBuffer image_m;
  ImageBuffer image_n;
  Pose pose_m;
  Pose pose_n;
};

struct LossWithGradient {
  double loss = 0.0;
  DisparityMap grad_m;
  DisparityMap grad_n;
};

/// Multi-scale objective: sum over scales of mu * L_re + lambda * (L_s,m + L_s,n),
/// with images and disparities reduced by 2x2 averaging per level.
double total_loss(const ViewPair& pair, const DisparityMap& disp_m,
                  const DisparityMap& disp_n, const CameraIntrinsics& k,
                  const LossConfig& cfg);

LossWithGradient total_loss_with_gradient(const ViewPair& pair,
                                          const DisparityMap& disp_m,
                                          const DisparityMap& disp_n,
                                          const CameraIntrinsics& k,
                                          const LossConfig& cfg);

/// Bilinear upsampling of a coarse grid (pixel-centre aligned) and its adjoint.
DisparityMap upsample_bilinear(const DisparityMap& coarse, int width, int height);
DisparityMap upsample_adjoint(const DisparityMap& fine_gradient, int coarse_width,
                              int coarse_height);

/// Hierarchical frame-pair sampling: gaps 2^l, left index a multiple of
/// 2^(l-1), for l up to floor(log2(N-1)). Returned as sorted pairs m < n.
std::vector<std::pair<int, int>> hierarchical_pairs(int n);

struct DepthOptimizerOptions {
  int grid_width = 40;
  int grid_height = 30;
  int iterations = 400;
  double learning_rate = 0.05;
  double momentum = 0.9;
  /// Constant initial depth of both disparity grids.
  double init_depth_mm = 50.0;
  /// Optional explicit initial grids; override `init_depth_mm` when set.
  std::vector<double> init_disparity_m;
  std::vector<double> init_disparity_n;
  bool record_history = false;
};

struct DepthEstimate {
  DepthMap depth_m;
  DepthMap depth_n;
  DisparityMap grid_m;
  DisparityMap grid_n;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> loss_history;
};

inline constexpr double kMinBaselineMm = 0.5;
inline constexpr double kMinGradientEnergy = 1e-4;

/// Direct minimisation of `total_loss` over coarse disparity grids of both
/// views by projected gradient descent with momentum.
DepthEstimate estimate_depth_map(const ImageBuffer& image_m,
                                 const ImageBuffer& image_n, const Pose& pose_m,
                                 const Pose& pose_n, const CameraIntrinsics& k,
                                 const LossConfig& cfg,
                                 const DepthOptimizerOptions& options = {});

/// Mean squared forward-difference gradient.
double gradient_energy(const ImageBuffer& image);

struct DepthMetrics {
  double abs_rel_percent = 0.0;
  double rmse_mm = 0.0;
};

DepthMetrics depth_metrics(std::span<const double> estimated,
                           std::span<const double> truth);

}  // namespace lapfov
