#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include <gtest/gtest.h>

#include "lapfov/error.hpp"
#include "lapfov/perception.hpp"
#include "lapfov/scene.hpp"
#include "oracles.hpp"
#include "rendered_pair.hpp"

namespace lapfov {
namespace {

using lapfov::testing::exhaustive_pairs;
using lapfov::testing::make_rendered_pair;

template <typename F>
void expect_error(ErrorCode code, F&& f) {
  try {
    f();
    ADD_FAILURE() << "expected error " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

double median_of(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

TEST(MaskCentroid, Examples) {
  ImageBuffer one(32, 32);
  one.at(10, 20) = 1.0;
  EXPECT_EQ(mask_centroid(one), Vec2(10, 20));

  ImageBuffer corners(3, 3);
  corners.at(0, 0) = corners.at(2, 0) = corners.at(0, 2) = corners.at(2, 2) = 1.0;
  EXPECT_EQ(mask_centroid(corners), Vec2(1, 1));

  expect_error(ErrorCode::kEmptyMask, [] { mask_centroid(ImageBuffer(4, 4)); });
}

TEST(MaskCentroid, RandomBlobMatchesBruteForce) {
  std::mt19937_64 rng(21);
  std::bernoulli_distribution on(0.3);
  for (int trial = 0; trial < 20; ++trial) {
    ImageBuffer mask(41, 29);
    double sx = 0.0, sy = 0.0, n = 0.0;
    for (int y = 0; y < mask.height(); ++y) {
      for (int x = 0; x < mask.width(); ++x) {
        if ((x - 20) * (x - 20) + (y - 14) * (y - 14) < 120 && on(rng)) {
          mask.at(x, y) = 1.0;
          sx += x;
          sy += y;
          n += 1.0;
        }
      }
    }
    ASSERT_GT(n, 0.0);
    EXPECT_LT((mask_centroid(mask) - Vec2(sx / n, sy / n)).norm(), 1e-9);
  }
}

TEST(MedianDepth, OddAndEvenCounts) {
  DepthMap depth(3, 1);
  depth.at(0, 0) = 5.0;
  depth.at(1, 0) = 100.0;
  depth.at(2, 0) = 7.0;
  ImageBuffer mask(3, 1, 1, 1.0);
  EXPECT_EQ(median_depth_in_mask(depth, mask), 7.0);

  DepthMap two(2, 1);
  two.at(0, 0) = 8.0;
  two.at(1, 0) = 4.0;
  EXPECT_EQ(median_depth_in_mask(two, ImageBuffer(2, 1, 1, 1.0)), 4.0);

  expect_error(ErrorCode::kEmptyMask, [&] { median_depth_in_mask(depth, ImageBuffer(3, 1)); });
}

TEST(MedianDepth, RandomMasksMatchSortOracle) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> d(1.0, 100.0);
  std::bernoulli_distribution on(0.4);
  for (int trial = 0; trial < 50; ++trial) {
    DepthMap depth(16, 12);
    ImageBuffer mask(16, 12);
    std::vector<double> picked;
    for (int y = 0; y < 12; ++y) {
      for (int x = 0; x < 16; ++x) {
        depth.at(x, y) = d(rng);
        if (on(rng)) {
          mask.at(x, y) = 1.0;
          picked.push_back(depth.at(x, y));
        }
      }
    }
    if (picked.empty()) continue;
    std::sort(picked.begin(), picked.end());
    EXPECT_EQ(median_depth_in_mask(depth, mask), picked[(picked.size() - 1) / 2]);
  }
}

TEST(DisparityToDepth, EndpointsAndMidpoint) {
  const DepthRange r{1.0, 100.0};
  EXPECT_DOUBLE_EQ(disparity_to_depth(0.0, r), 100.0);
  EXPECT_DOUBLE_EQ(disparity_to_depth(1.0, r), 1.0);
  EXPECT_NEAR(disparity_to_depth(0.5, r), 100.0 / 50.5, 1e-12);
  expect_error(ErrorCode::kDisparityOutOfRange, [&] { disparity_to_depth(1.01, r); });
  expect_error(ErrorCode::kDisparityOutOfRange, [&] { disparity_to_depth(-0.1, r); });
}

TEST(DisparityToDepth, StrictlyDecreasingAndInvertible) {
  const DepthRange r{1.0, 100.0};
  double prev = disparity_to_depth(0.0, r);
  for (int i = 1; i <= 1000; ++i) {
    const double disp = i / 1000.0;
    const double depth = disparity_to_depth(disp, r);
    EXPECT_LT(depth, prev);
    EXPECT_GE(depth, r.min);
    EXPECT_NEAR(depth_to_disparity(depth, r), disp, 1e-12);
    prev = depth;
  }
  LossConfig cfg;
  DisparityMap map(2, 1);
  map[0] = 0.0;
  map[1] = 1.0;
  const DepthMap depth = disparity_to_depth(map, cfg);
  EXPECT_DOUBLE_EQ(depth[0], 100.0);
  EXPECT_DOUBLE_EQ(depth[1], 1.0);
}

TEST(Warp, IdentityPoseReproducesSource) {
  const auto rp = make_rendered_pair(50.0, 2.0);
  const WarpResult w = warp_image(rp.view_m.image, rp.view_m.depth, Pose::Identity(), rp.k);
  EXPECT_EQ(w.valid_count, rp.view_m.image.pixel_count());
  double worst = 0.0;
  for (std::size_t i = 0; i < w.warped.data().size(); ++i) {
    worst = std::max(worst, std::abs(w.warped.data()[i] - rp.view_m.image.data()[i]));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Warp, PrincipalPointIsFixedUnderAxialTranslation) {
  CameraIntrinsics k;
  k.width = 9;
  k.height = 7;
  k.cx = 4.0;
  k.cy = 3.0;
  ImageBuffer src(9, 7);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 9; ++x) src.at(x, y) = (x * 7 + y * 3) % 11 / 10.0;
  DepthMap depth(9, 7, 40.0);
  const WarpResult w = warp_image(src, depth, Pose(Mat3::Identity(), Vec3(0, 0, 5.0)), k);
  EXPECT_TRUE(w.valid[depth.index(4, 3)]);
  EXPECT_NEAR(w.warped.at(4, 3), src.at(4, 3), 1e-12);
}

double bilinear(const ImageBuffer& img, double u, double v) {
  const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
  const double fx = u - x0, fy = v - y0;
  auto at = [&](int x, int y) { return img.at(x, y); };
  return (1 - fx) * (1 - fy) * at(x0, y0) + fx * (1 - fy) * at(x0 + 1, y0) +
         (1 - fx) * fy * at(x0, y0 + 1) + fx * fy * at(x0 + 1, y0 + 1);
}

TEST(Warp, LateralTranslationIsUniformShift) {
  // View n sits 2 mm to the right of view m over a plane 50 mm away. A pixel
  // of n maps into m shifted by fx * 2 / 50 = 10.4 px.
  const auto rp = make_rendered_pair(50.0, 2.0);
  const Pose n_to_m = rp.pair.pose_m.inverse() * rp.pair.pose_n;
  const WarpResult w = warp_image(rp.view_m.image, rp.view_n.depth, n_to_m, rp.k);
  const double shift = rp.k.fx * 2.0 / 50.0;
  double worst = 0.0;
  int checked = 0;
  for (int y = 0; y < rp.k.height - 1; ++y) {
    for (int x = 0; x < rp.k.width; ++x) {
      const double u = x + shift;
      if (u > rp.k.width - 2) continue;
      ASSERT_TRUE(w.valid[rp.view_n.depth.index(x, y)]);
      worst = std::max(worst, std::abs(w.warped.at(x, y) - bilinear(rp.view_m.image, u, y)));
      ++checked;
    }
  }
  EXPECT_GT(checked, 60000);
  EXPECT_LT(worst, 1e-9);
}

TEST(Ssim, SelfSimilarityAndConstants) {
  const auto rp = make_rendered_pair(50.0, 2.0);
  const ScalarField self = ssim(rp.view_m.image, rp.view_m.image);
  for (double v : self.values()) ASSERT_NEAR(v, 1.0, 1e-12);

  const ScalarField half = ssim(ImageBuffer(8, 8, 1, 0.5), ImageBuffer(8, 8, 1, 0.5));
  for (double v : half.values()) ASSERT_NEAR(v, 1.0, 1e-12);

  const double c1 = 0.01 * 0.01;
  const double expected = (2 * 0.2 * 0.8 + c1) / (0.04 + 0.64 + c1);
  const ScalarField diff = ssim(ImageBuffer(8, 8, 1, 0.2), ImageBuffer(8, 8, 1, 0.8));
  for (double v : diff.values()) ASSERT_NEAR(v, expected, 1e-12);
  EXPECT_NEAR(expected, 0.4707, 1e-4);

  expect_error(ErrorCode::kDimensionMismatch,
               [] { ssim(ImageBuffer(8, 8), ImageBuffer(8, 9)); });
}

TEST(Ssim, MatchesDirectWindowFormulaInTheInterior) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageBuffer a(12, 10), b(12, 10);
  for (double& v : a.data()) v = u(rng);
  for (double& v : b.data()) v = u(rng);
  const ScalarField map = ssim(a, b);
  const double c1 = 1e-4, c2 = 9e-4;
  for (int y = 1; y < 9; ++y) {
    for (int x = 1; x < 11; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const double va = a.at(x + dx, y + dy), vb = b.at(x + dx, y + dy);
          ma += va / 9;
          mb += vb / 9;
          saa += va * va / 9;
          sbb += vb * vb / 9;
          sab += va * vb / 9;
        }
      }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      const double s = (2 * ma * mb + c1) * (2 * cov + c2) /
                       ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ASSERT_NEAR(map.at(x, y), s, 1e-12);
    }
  }
}

TEST(PhotometricLoss, ZeroResidualAndWeightEndpoints) {
  const auto rp = make_rendered_pair(50.0, 2.0);
  const std::vector<std::uint8_t> all(rp.view_m.image.pixel_count(), 1);
  LossConfig cfg;
  EXPECT_NEAR(photometric_loss(rp.view_m.image, rp.view_m.image, all, cfg), 0.0, 1e-12);

  cfg.alpha = 0.0;
  double mad = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    mad += std::abs(rp.view_m.image.data()[i] - rp.view_n.image.data()[i]);
  }
  mad /= static_cast<double>(all.size());
  EXPECT_NEAR(photometric_loss(rp.view_m.image, rp.view_n.image, all, cfg), mad, 1e-12);

  cfg.alpha = 1.0;
  const std::vector<std::uint8_t> small(64, 1);
  EXPECT_NEAR(photometric_loss(ImageBuffer(8, 8, 1, 0.2), ImageBuffer(8, 8, 1, 0.8), small, cfg),
              0.5 * (1.0 - (2 * 0.16 + 1e-4) / (0.68 + 1e-4)), 1e-12);

  const std::vector<std::uint8_t> none(64, 0);
  expect_error(ErrorCode::kNoValidPixels, [&] {
    photometric_loss(ImageBuffer(8, 8, 1, 0.2), ImageBuffer(8, 8, 1, 0.8), none, cfg);
  });
}

TEST(ReconstructionLoss, IdentityPairIsZero) {
  const auto rp = make_rendered_pair(50.0, 2.0);
  const LossConfig cfg;
  const double loss = reconstruction_loss(rp.view_m.image, rp.view_m.image, rp.view_m.depth,
                                          rp.view_m.depth, rp.pair.pose_m, rp.pair.pose_m, rp.k,
                                          cfg);
  EXPECT_LT(loss, 1e-5);
}

TEST(ReconstructionLoss, GroundTruthBeatsScaledDepthAndIsSymmetric) {
  const auto rp = make_rendered_pair(55.0, 2.0, 30.0);
  const LossConfig cfg;
  const double truth = reconstruction_loss(rp.view_m.image, rp.view_n.image, rp.view_m.depth,
                                           rp.view_n.depth, rp.pair.pose_m, rp.pair.pose_n, rp.k,
                                           cfg);
  EXPECT_LT(truth, 0.02);

  DepthMap far_m = rp.view_m.depth, far_n = rp.view_n.depth;
  for (double& d : far_m.values()) d = std::min(d * 1.2, 100.0);
  for (double& d : far_n.values()) d = std::min(d * 1.2, 100.0);
  const double perturbed = reconstruction_loss(rp.view_m.image, rp.view_n.image, far_m, far_n,
                                               rp.pair.pose_m, rp.pair.pose_n, rp.k, cfg);
  EXPECT_GT(perturbed, truth);

  const double swapped = reconstruction_loss(rp.view_n.image, rp.view_m.image, rp.view_n.depth,
                                             rp.view_m.depth, rp.pair.pose_n, rp.pair.pose_m,
                                             rp.k, cfg);
  EXPECT_NEAR(swapped, truth, 1e-12);
}

TEST(ReconstructionLoss, GroundTruthWarpStaysBelowThresholdUpToFiveMillimetres) {
  const LossConfig cfg;
  for (double baseline : {1.0, 3.0, 5.0}) {
    const auto rp = make_rendered_pair(60.0, baseline, 35.0);
    const Pose n_to_m = rp.pair.pose_m.inverse() * rp.pair.pose_n;
    const WarpResult w = warp_image(rp.view_m.image, rp.view_n.depth, n_to_m, rp.k);
    EXPECT_LT(photometric_loss(rp.view_n.image, w.warped, w.valid, cfg), 0.02) << baseline;
  }
}

TEST(SmoothnessLoss, ConstantStepAndEdgeAttenuation) {
  const int w = 6, h = 4;
  EXPECT_EQ(smoothness_loss(DisparityMap(w, h, 0.3), ImageBuffer(w, h, 1, 0.5)), 0.0);

  DisparityMap step(w, h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 3; x < w; ++x) step.at(x, y) = 1.0;
  // One unit jump per row, averaged over the (w - 1) * h horizontal differences.
  EXPECT_NEAR(smoothness_loss(step, ImageBuffer(w, h, 1, 0.5)), 1.0 / (w - 1), 1e-12);

  ImageBuffer edge(w, h, 1, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 3; x < w; ++x) edge.at(x, y) = 5.0;
  EXPECT_NEAR(smoothness_loss(step, edge), std::exp(-5.0) / (w - 1), 1e-12);

  expect_error(ErrorCode::kDimensionMismatch,
               [&] { smoothness_loss(step, ImageBuffer(w + 1, h)); });
}

TEST(TotalLoss, SingleScaleWithoutSmoothnessEqualsReconstruction) {
  const auto rp = make_rendered_pair(50.0, 2.0, 30.0);
  LossConfig cfg;
  cfg.scales = {1.0};
  cfg.mu = 1.0;
  cfg.lambda = 0.0;
  DisparityMap dm = rp.truth_m, dn = rp.truth_n;
  for (std::size_t i = 0; i < dm.size(); ++i) {
    dm[i] = std::min(1.0, dm[i] * (1.0 + 0.03 * std::sin(0.01 * i)));
  }
  const double total = total_loss(rp.pair, dm, dn, rp.k, cfg);
  const double recon =
      reconstruction_loss(rp.pair.image_m, rp.pair.image_n, disparity_to_depth(dm, cfg),
                          disparity_to_depth(dn, cfg), rp.pair.pose_m, rp.pair.pose_n, rp.k, cfg);
  EXPECT_NEAR(total, recon, 1e-12);
}

TEST(TotalLoss, IdenticalViewsLeaveOnlyTheSmoothnessFloor) {
  const auto rp = make_rendered_pair(50.0, 2.0);
  LossConfig cfg;
  ViewPair same{rp.pair.image_m, rp.pair.image_m, rp.pair.pose_m, rp.pair.pose_m};
  const double total = total_loss(same, rp.truth_m, rp.truth_m, rp.k, cfg);
  LossConfig smooth_only = cfg;
  smooth_only.mu = 0.0;
  const double floor = total_loss(same, rp.truth_m, rp.truth_m, rp.k, smooth_only);
  EXPECT_LE(total, floor + 1e-6);
}

TEST(TotalLoss, GradientMatchesCentralDifferences) {
  const LossConfig cfg;
  const auto rp = make_rendered_pair(55.0, 2.0, 30.0, cfg);
  const auto check = lapfov::testing::check_loss_gradient(rp, cfg, 10, 24);
  EXPECT_EQ(check.samples, 20);
  EXPECT_LT(check.worst_relative, 1e-3);
}

TEST(TotalLoss, GradientMatchesCentralDifferencesAtEachScale) {
  for (double scale : {1.0, 0.5, 0.25, 0.125}) {
    LossConfig cfg;
    cfg.scales = {scale};
    const auto rp = make_rendered_pair(50.0, 2.0, 0.0, cfg);
    const auto check = lapfov::testing::check_loss_gradient(rp, cfg, 5, 25);
    EXPECT_LT(check.worst_relative, 1e-3) << "scale " << scale;
  }
}

TEST(TotalLoss, GroundTruthIsMinimalAmongScaledDisparities) {
  const LossConfig cfg;
  const auto rp = make_rendered_pair(55.0, 2.0, 30.0, cfg);
  const double truth = total_loss(rp.pair, rp.truth_m, rp.truth_n, rp.k, cfg);
  for (double f : {0.8, 0.95, 1.05, 1.2}) {
    DisparityMap dm = rp.truth_m, dn = rp.truth_n;
    for (std::size_t i = 0; i < dm.size(); ++i) {
      dm[i] = std::min(1.0, dm[i] * f);
      dn[i] = std::min(1.0, dn[i] * f);
    }
    EXPECT_GT(total_loss(rp.pair, dm, dn, rp.k, cfg), truth) << "factor " << f;
  }
}

std::set<std::pair<int, int>> as_set(const std::vector<std::pair<int, int>>& v) {
  return {v.begin(), v.end()};
}

TEST(HierarchicalPairs, HandEnumeratedCases) {
  using P = std::set<std::pair<int, int>>;
  EXPECT_EQ(as_set(hierarchical_pairs(2)), (P{{0, 1}}));
  EXPECT_EQ(as_set(hierarchical_pairs(3)), (P{{0, 1}, {1, 2}, {0, 2}}));
  EXPECT_EQ(as_set(hierarchical_pairs(5)),
            (P{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 2}, {1, 3}, {2, 4}, {0, 4}}));
  expect_error(ErrorCode::kSequenceTooShort, [] { hierarchical_pairs(1); });
}

TEST(HierarchicalPairs, MatchesPredicateEnumerationUpTo64) {
  for (int n = 2; n <= 64; ++n) {
    const auto pairs = hierarchical_pairs(n);
    EXPECT_EQ(as_set(pairs).size(), pairs.size()) << "duplicates at N=" << n;
    EXPECT_TRUE(std::is_sorted(pairs.begin(), pairs.end()));
    EXPECT_EQ(as_set(pairs), exhaustive_pairs(n)) << "N=" << n;
  }
}

TEST(EstimateDepth, FrontoParallelPlaneWithinFivePercent) {
  const LossConfig cfg;
  const auto rp = make_rendered_pair(50.0, 2.0, 0.0, cfg);
  const DepthEstimate est = estimate_depth_map(rp.pair.image_m, rp.pair.image_n, rp.pair.pose_m,
                                               rp.pair.pose_n, rp.k, cfg);
  EXPECT_NEAR(median_of(est.depth_m.values()), 50.0, 2.5);
  EXPECT_LT(est.final_loss, est.initial_loss);
}

TEST(EstimateDepth, ToolDepthOverPlaneWithinTenPercent) {
  const LossConfig cfg;
  const auto rp = make_rendered_pair(60.0, 2.0, 30.0, cfg);
  DepthOptimizerOptions opt;
  opt.init_depth_mm = 45.0;
  const DepthEstimate est = estimate_depth_map(rp.pair.image_m, rp.pair.image_n, rp.pair.pose_m,
                                               rp.pair.pose_n, rp.k, cfg, opt);
  ASSERT_GT(mask_count(rp.view_m.mask), 0u);
  const double tool = median_depth_in_mask(est.depth_m, rp.view_m.mask);
  const double truth = median_depth_in_mask(rp.view_m.depth, rp.view_m.mask);
  EXPECT_NEAR(tool, truth, 0.1 * truth);
}

TEST(EstimateDepth, StartingAtTruthNeverIncreasesTheLoss) {
  const LossConfig cfg;
  const auto rp = make_rendered_pair(50.0, 2.0, 0.0, cfg);
  DepthOptimizerOptions opt;
  opt.iterations = 60;
  opt.record_history = true;
  // Coarse grid samples of the (constant) true disparity.
  opt.init_disparity_m.assign(opt.grid_width * opt.grid_height, rp.truth_m[0]);
  opt.init_disparity_n.assign(opt.grid_width * opt.grid_height, rp.truth_n[0]);
  const DepthEstimate est = estimate_depth_map(rp.pair.image_m, rp.pair.image_n, rp.pair.pose_m,
                                               rp.pair.pose_n, rp.k, cfg, opt);
  ASSERT_GE(est.loss_history.size(), 2u);
  EXPECT_LE(est.final_loss, est.initial_loss + 1e-12);
  EXPECT_LE(*std::max_element(est.loss_history.begin(), est.loss_history.end()),
            est.loss_history.front() + 1e-12);
}

TEST(EstimateDepth, RejectsDegenerateInputs) {
  const LossConfig cfg;
  const auto rp = make_rendered_pair(50.0, 0.2, 0.0, cfg);
  expect_error(ErrorCode::kDegenerateBaseline, [&] {
    estimate_depth_map(rp.pair.image_m, rp.pair.image_n, rp.pair.pose_m, rp.pair.pose_n, rp.k,
                       cfg);
  });
  const ImageBuffer flat(rp.k.width, rp.k.height, 1, 0.5);
  const Pose far(Mat3::Identity(), Vec3(2.0, 0.0, 20.0));
  expect_error(ErrorCode::kTexturelessInput, [&] {
    estimate_depth_map(flat, flat, rp.pair.pose_m, far, rp.k, cfg);
  });
}

TEST(DepthMetrics, Examples) {
  const std::vector<double> gt{10.0, 20.0};
  const DepthMetrics same = depth_metrics(gt, gt);
  EXPECT_EQ(same.abs_rel_percent, 0.0);
  EXPECT_EQ(same.rmse_mm, 0.0);

  const std::vector<double> scaled{11.0, 22.0};
  EXPECT_NEAR(depth_metrics(scaled, gt).abs_rel_percent, 10.0, 1e-12);

  const std::vector<double> est{11.0, 18.0};
  const DepthMetrics m = depth_metrics(est, gt);
  EXPECT_NEAR(m.abs_rel_percent, 10.0, 1e-12);
  EXPECT_NEAR(m.rmse_mm, std::sqrt(2.5), 1e-12);

  expect_error(ErrorCode::kEmptyInput, [] { depth_metrics({}, {}); });
  const std::vector<double> bad{0.0, 1.0};
  expect_error(ErrorCode::kNonPositiveTruth, [&] { depth_metrics(bad, bad); });
}

}  // namespace
}  // namespace lapfov
