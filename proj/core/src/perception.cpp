#include "lapfov/perception.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "lapfov/error.hpp"

namespace lapfov {

namespace {

constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;
constexpr double kEdgeTolerancePx = 1e-6;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

int reflect(int i, int n) {
  if (n == 1) return 0;
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

// 3x3 mean filter with reflect padding, separable.
void box3(const std::vector<double>& in, int w, int h, std::vector<double>& tmp,
          std::vector<double>& out) {
  tmp.resize(in.size());
  out.resize(in.size());
  for (int y = 0; y < h; ++y) {
    const double* row = &in[static_cast<std::size_t>(y) * w];
    double* dst = &tmp[static_cast<std::size_t>(y) * w];
    for (int x = 0; x < w; ++x) {
      dst[x] = row[reflect(x - 1, w)] + row[x] + row[reflect(x + 1, w)];
    }
  }
  for (int y = 0; y < h; ++y) {
    const double* up = &tmp[static_cast<std::size_t>(reflect(y - 1, h)) * w];
    const double* mid = &tmp[static_cast<std::size_t>(y) * w];
    const double* down = &tmp[static_cast<std::size_t>(reflect(y + 1, h)) * w];
    double* dst = &out[static_cast<std::size_t>(y) * w];
    for (int x = 0; x < w; ++x) dst[x] = (up[x] + mid[x] + down[x]) * (1.0 / 9.0);
  }
}

// Adjoint of box3: scatters each input sample onto its reflected footprint.
void box3_adjoint(const std::vector<double>& in, int w, int h,
                  std::vector<double>& tmp, std::vector<double>& out) {
  tmp.assign(in.size(), 0.0);
  out.assign(in.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    const double* src = &in[static_cast<std::size_t>(y) * w];
    for (const int dy : {-1, 0, 1}) {
      double* dst = &tmp[static_cast<std::size_t>(reflect(y + dy, h)) * w];
      for (int x = 0; x < w; ++x) dst[x] += src[x] * (1.0 / 9.0);
    }
  }
  for (int y = 0; y < h; ++y) {
    const double* src = &tmp[static_cast<std::size_t>(y) * w];
    double* dst = &out[static_cast<std::size_t>(y) * w];
    for (int x = 0; x < w; ++x) {
      dst[reflect(x - 1, w)] += src[x];
      dst[x] += src[x];
      dst[reflect(x + 1, w)] += src[x];
    }
  }
}

std::vector<double> downsample2(const std::vector<double>& in, int w, int h) {
  const int cw = w / 2, ch = h / 2;
  std::vector<double> out(static_cast<std::size_t>(cw) * ch);
  for (int y = 0; y < ch; ++y) {
    for (int x = 0; x < cw; ++x) {
      const std::size_t i0 = static_cast<std::size_t>(2 * y) * w + 2 * x;
      out[static_cast<std::size_t>(y) * cw + x] =
          0.25 * (in[i0] + in[i0 + 1] + in[i0 + w] + in[i0 + w + 1]);
    }
  }
  return out;
}

void downsample2_adjoint(const std::vector<double>& coarse, int w, int h,
                         std::vector<double>& fine) {
  const int cw = w / 2, ch = h / 2;
  for (int y = 0; y < ch; ++y) {
    for (int x = 0; x < cw; ++x) {
      const double g = 0.25 * coarse[static_cast<std::size_t>(y) * cw + x];
      const std::size_t i0 = static_cast<std::size_t>(2 * y) * w + 2 * x;
      fine[i0] += g;
      fine[i0 + 1] += g;
      fine[i0 + w] += g;
      fine[i0 + w + 1] += g;
    }
  }
}

std::vector<double> gray_values(const ImageBuffer& image) {
  if (image.channels() == 1) return image.data();
  return image.to_gray().data();
}

void check_same_size(int w1, int h1, int w2, int h2, const char* what) {
  if (w1 != w2 || h1 != h2) {
    fail(ErrorCode::kDimensionMismatch, std::string(what) + ": " +
                                            std::to_string(w1) + "x" + std::to_string(h1) +
                                            " vs " + std::to_string(w2) + "x" +
                                            std::to_string(h2));
  }
}

// Per-pixel warp with optional derivative of the warped sample w.r.t. depth.
struct WarpBuffers {
  std::vector<double> warped;
  std::vector<std::uint8_t> valid;
  std::vector<double> d_warped_d_depth;
  std::size_t valid_count = 0;
};

void warp_core(const std::vector<double>& source, const std::vector<double>& depth,
               int w, int h, const CameraIntrinsics& k, const Mat3& r, const Vec3& t,
               bool with_derivative, WarpBuffers& out) {
  const std::size_t n = static_cast<std::size_t>(w) * h;
  out.warped.assign(n, 0.0);
  out.valid.assign(n, 0);
  if (with_derivative) out.d_warped_d_depth.assign(n, 0.0);
  out.valid_count = 0;
  const double max_x = w - 1.0, max_y = h - 1.0;
  const int last_x0 = std::max(0, w - 2), last_y0 = std::max(0, h - 2);

  for (int y = 0; y < h; ++y) {
    const double ny = (y - k.cy) / k.fy;
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double nx = (x - k.cx) / k.fx;
      const double qx = r(0, 0) * nx + r(0, 1) * ny + r(0, 2);
      const double qy = r(1, 0) * nx + r(1, 1) * ny + r(1, 2);
      const double qz = r(2, 0) * nx + r(2, 1) * ny + r(2, 2);
      const double d = depth[i];
      const double yx = d * qx + t.x(), yy = d * qy + t.y(), yz = d * qz + t.z();
      if (!(yz > 1e-9)) continue;
      const double inv_z = 1.0 / yz;
      const double a = k.fx * yx * inv_z + k.cx;
      const double b = k.fy * yy * inv_z + k.cy;
      const bool inside_x = a >= -kEdgeTolerancePx && a <= max_x + kEdgeTolerancePx;
      const bool inside_y = b >= -kEdgeTolerancePx && b <= max_y + kEdgeTolerancePx;
      // Out-of-bounds samples are clamped to the border so that the SSIM
      // window of neighbouring valid pixels stays continuous in depth.
      const double ac = std::clamp(a, 0.0, max_x);
      const double bc = std::clamp(b, 0.0, max_y);

      const int x0 = std::min(static_cast<int>(ac), last_x0);
      const int y0 = std::min(static_cast<int>(bc), last_y0);
      const double fx = ac - x0, fy = bc - y0;
      const std::size_t s0 = static_cast<std::size_t>(y0) * w + x0;
      const double i00 = source[s0];
      const double i10 = w > 1 ? source[s0 + 1] : i00;
      const double i01 = h > 1 ? source[s0 + w] : i00;
      const double i11 = (w > 1 && h > 1) ? source[s0 + w + 1] : i00;
      const double top = i00 + fx * (i10 - i00);
      const double bottom = i01 + fx * (i11 - i01);
      out.warped[i] = top + fy * (bottom - top);
      if (inside_x && inside_y) {
        out.valid[i] = 1;
        ++out.valid_count;
      }
      if (with_derivative) {
        const double ga = (a > 0.0 && a < max_x) ? (1.0 - fy) * (i10 - i00) + fy * (i11 - i01) : 0.0;
        const double gb = (b > 0.0 && b < max_y) ? bottom - top : 0.0;
        const double da = k.fx * (qx * yz - yx * qz) * inv_z * inv_z;
        const double db = k.fy * (qy * yz - yy * qz) * inv_z * inv_z;
        out.d_warped_d_depth[i] = ga * da + gb * db;
      }
    }
  }
}

// Photometric term for one synthesised view, with optional gradient w.r.t.
// the warped samples.
struct PhotometricWork {
  std::vector<double> tmp, mu_y, e_yy, e_xy, prod, sq;
  std::vector<double> a1, a2, a3, b1, b2, b3;
};

double photometric_core(const std::vector<double>& target, const std::vector<double>& mu_x,
                        const std::vector<double>& var_x, const WarpBuffers& warp,
                        int w, int h, const LossConfig& cfg, PhotometricWork& work,
                        std::vector<double>* grad_warped) {
  if (warp.valid_count == 0) {
    fail(ErrorCode::kNoValidPixels, "no pixel of the synthesised view is valid");
  }
  const std::size_t n = target.size();
  const auto& wv = warp.warped;
  work.sq.resize(n);
  work.prod.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    work.sq[i] = wv[i] * wv[i];
    work.prod[i] = wv[i] * target[i];
  }
  box3(wv, w, h, work.tmp, work.mu_y);
  box3(work.sq, w, h, work.tmp, work.e_yy);
  box3(work.prod, w, h, work.tmp, work.e_xy);

  const double inv_valid = 1.0 / static_cast<double>(warp.valid_count);
  const double half_alpha = 0.5 * cfg.alpha;
  const double l1_weight = 1.0 - cfg.alpha;
  double total = 0.0;
  if (grad_warped) {
    work.a1.assign(n, 0.0);
    work.a2.assign(n, 0.0);
    work.a3.assign(n, 0.0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!warp.valid[i]) continue;
    const double mx = mu_x[i], my = work.mu_y[i];
    const double vx = var_x[i];
    const double vy = work.e_yy[i] - my * my;
    const double cxy = work.e_xy[i] - mx * my;
    const double a_1 = 2.0 * mx * my + kSsimC1;
    const double a_2 = 2.0 * cxy + kSsimC2;
    const double b_1 = mx * mx + my * my + kSsimC1;
    const double b_2 = vx + vy + kSsimC2;
    const double s = (a_1 * a_2) / (b_1 * b_2);
    total += half_alpha * (1.0 - s) + l1_weight * std::abs(target[i] - wv[i]);
    if (grad_warped) {
      const double up = -half_alpha * inv_valid;
      const double inv_b = 1.0 / (b_1 * b_2);
      const double ds_dmy_direct = 2.0 * mx * a_2 * inv_b - s * 2.0 * my / b_1;
      const double ds_dcxy = 2.0 * a_1 * inv_b;
      const double ds_dvy = -s / b_2;
      work.a1[i] = up * (ds_dmy_direct - 2.0 * my * ds_dvy - mx * ds_dcxy);
      work.a2[i] = up * ds_dvy;
      work.a3[i] = up * ds_dcxy;
    }
  }
  if (grad_warped) {
    box3_adjoint(work.a1, w, h, work.tmp, work.b1);
    box3_adjoint(work.a2, w, h, work.tmp, work.b2);
    box3_adjoint(work.a3, w, h, work.tmp, work.b3);
    grad_warped->resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double g = work.b1[i] + 2.0 * wv[i] * work.b2[i] + target[i] * work.b3[i];
      if (warp.valid[i]) g += l1_weight * inv_valid * sign(wv[i] - target[i]);
      (*grad_warped)[i] = g;
    }
  }
  return total * inv_valid;
}

struct EdgeWeights {
  std::vector<double> wx, wy;
};

EdgeWeights edge_weights(const std::vector<double>& image, int w, int h) {
  EdgeWeights e;
  e.wx.assign(static_cast<std::size_t>(w) * h, 0.0);
  e.wy.assign(static_cast<std::size_t>(w) * h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (x + 1 < w) e.wx[i] = std::exp(-std::abs(image[i + 1] - image[i]));
      if (y + 1 < h) e.wy[i] = std::exp(-std::abs(image[i + w] - image[i]));
    }
  }
  return e;
}

double smoothness_core(const std::vector<double>& d, int w, int h, const EdgeWeights& e,
                       std::vector<double>* grad, double weight) {
  double sx = 0.0, sy = 0.0;
  const double nx = static_cast<double>(w - 1) * h;
  const double ny = static_cast<double>(w) * (h - 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (x + 1 < w) {
        const double diff = d[i + 1] - d[i];
        sx += std::abs(diff) * e.wx[i];
        if (grad) {
          const double g = weight * sign(diff) * e.wx[i] / nx;
          (*grad)[i + 1] += g;
          (*grad)[i] -= g;
        }
      }
      if (y + 1 < h) {
        const double diff = d[i + w] - d[i];
        sy += std::abs(diff) * e.wy[i];
        if (grad) {
          const double g = weight * sign(diff) * e.wy[i] / ny;
          (*grad)[i + w] += g;
          (*grad)[i] -= g;
        }
      }
    }
  }
  return (nx > 0 ? sx / nx : 0.0) + (ny > 0 ? sy / ny : 0.0);
}

// Precomputed pyramids for one image pair; evaluates the multi-scale
// objective and its gradient w.r.t. the full-resolution disparities.
class PyramidObjective {
 public:
  PyramidObjective(const ViewPair& pair, const CameraIntrinsics& k, const LossConfig& cfg)
      : cfg_(cfg), levels_(cfg.levels()) {
    cfg.validate();
    k.validate();
    check_same_size(pair.image_m.width(), pair.image_m.height(), k.width, k.height,
                    "image m vs intrinsics");
    check_same_size(pair.image_n.width(), pair.image_n.height(), k.width, k.height,
                    "image n vs intrinsics");
    max_level_ = *std::max_element(levels_.begin(), levels_.end());
    const Pose m_to_n = pair.pose_n.inverse() * pair.pose_m;
    const Pose n_to_m = pair.pose_m.inverse() * pair.pose_n;
    r_mn_ = m_to_n.rotation();
    t_mn_ = m_to_n.translation();
    r_nm_ = n_to_m.rotation();
    t_nm_ = n_to_m.translation();

    std::vector<double> img_m = gray_values(pair.image_m);
    std::vector<double> img_n = gray_values(pair.image_n);
    int w = k.width, h = k.height;
    std::vector<double> tmp;
    for (int level = 0; level <= max_level_; ++level) {
      if (w < 2 || h < 2) {
        fail(ErrorCode::kInvalidArgument, "image too small for the requested scales");
      }
      Level lv;
      lv.w = w;
      lv.h = h;
      lv.k = k.downsampled(level);
      lv.img_m = img_m;
      lv.img_n = img_n;
      stats(lv.img_m, w, h, tmp, lv.mu_m, lv.var_m);
      stats(lv.img_n, w, h, tmp, lv.mu_n, lv.var_n);
      lv.edges_m = edge_weights(lv.img_m, w, h);
      lv.edges_n = edge_weights(lv.img_n, w, h);
      pyramid_.push_back(std::move(lv));
      img_m = downsample2(img_m, w, h);
      img_n = downsample2(img_n, w, h);
      w /= 2;
      h /= 2;
    }
  }

  double evaluate(const std::vector<double>& disp_m, const std::vector<double>& disp_n,
                  std::vector<double>* grad_m, std::vector<double>* grad_n) {
    const bool with_grad = grad_m != nullptr;
    disp_pyr_m_.resize(max_level_ + 1);
    disp_pyr_n_.resize(max_level_ + 1);
    disp_pyr_m_[0] = disp_m;
    disp_pyr_n_[0] = disp_n;
    for (int l = 1; l <= max_level_; ++l) {
      disp_pyr_m_[l] = downsample2(disp_pyr_m_[l - 1], pyramid_[l - 1].w, pyramid_[l - 1].h);
      disp_pyr_n_[l] = downsample2(disp_pyr_n_[l - 1], pyramid_[l - 1].w, pyramid_[l - 1].h);
    }
    if (with_grad) {
      grad_pyr_m_.resize(max_level_ + 1);
      grad_pyr_n_.resize(max_level_ + 1);
      for (int l = 0; l <= max_level_; ++l) {
        grad_pyr_m_[l].assign(disp_pyr_m_[l].size(), 0.0);
        grad_pyr_n_[l].assign(disp_pyr_n_[l].size(), 0.0);
      }
    }

    double total = 0.0;
    for (const int l : levels_) {
      const Level& lv = pyramid_[l];
      total += cfg_.mu * direction(lv, lv.img_m, lv.mu_m, lv.var_m, lv.img_n,
                                   disp_pyr_m_[l], r_mn_, t_mn_,
                                   with_grad ? &grad_pyr_m_[l] : nullptr);
      total += cfg_.mu * direction(lv, lv.img_n, lv.mu_n, lv.var_n, lv.img_m,
                                   disp_pyr_n_[l], r_nm_, t_nm_,
                                   with_grad ? &grad_pyr_n_[l] : nullptr);
      total += cfg_.lambda * smoothness_core(disp_pyr_m_[l], lv.w, lv.h, lv.edges_m,
                                             with_grad ? &grad_pyr_m_[l] : nullptr,
                                             cfg_.lambda);
      total += cfg_.lambda * smoothness_core(disp_pyr_n_[l], lv.w, lv.h, lv.edges_n,
                                             with_grad ? &grad_pyr_n_[l] : nullptr,
                                             cfg_.lambda);
    }
    if (with_grad) {
      for (int l = max_level_; l >= 1; --l) {
        downsample2_adjoint(grad_pyr_m_[l], pyramid_[l - 1].w, pyramid_[l - 1].h,
                            grad_pyr_m_[l - 1]);
        downsample2_adjoint(grad_pyr_n_[l], pyramid_[l - 1].w, pyramid_[l - 1].h,
                            grad_pyr_n_[l - 1]);
      }
      *grad_m = grad_pyr_m_[0];
      *grad_n = grad_pyr_n_[0];
    }
    return total;
  }

 private:
  struct Level {
    int w = 0, h = 0;
    CameraIntrinsics k;
    std::vector<double> img_m, img_n, mu_m, var_m, mu_n, var_n;
    EdgeWeights edges_m, edges_n;
  };

  static void stats(const std::vector<double>& img, int w, int h, std::vector<double>& tmp,
                    std::vector<double>& mu, std::vector<double>& var) {
    std::vector<double> sq(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) sq[i] = img[i] * img[i];
    std::vector<double> e_xx;
    box3(img, w, h, tmp, mu);
    box3(sq, w, h, tmp, e_xx);
    var.resize(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) var[i] = e_xx[i] - mu[i] * mu[i];
  }

  double direction(const Level& lv, const std::vector<double>& target,
                   const std::vector<double>& mu_t, const std::vector<double>& var_t,
                   const std::vector<double>& source, const std::vector<double>& disp,
                   const Mat3& r, const Vec3& t, std::vector<double>* grad_disp) {
    const std::size_t n = disp.size();
    depth_.resize(n);
    const DepthRange& range = cfg_.range;
    const double span = range.max - range.min;
    for (std::size_t i = 0; i < n; ++i) {
      depth_[i] = range.min * range.max / (range.min + span * disp[i]);
    }
    warp_core(source, depth_, lv.w, lv.h, lv.k, r, t, grad_disp != nullptr, warp_);
    const double loss = photometric_core(target, mu_t, var_t, warp_, lv.w, lv.h, cfg_,
                                         work_, grad_disp ? &grad_warped_ : nullptr);
    if (grad_disp) {
      const double scale = cfg_.mu;
      const double k_dd = span / (range.min * range.max);
      for (std::size_t i = 0; i < n; ++i) {
        // dD/ddisp = -D^2 (Dmax - Dmin) / (Dmin Dmax)
        const double dd = -depth_[i] * depth_[i] * k_dd;
        (*grad_disp)[i] += scale * grad_warped_[i] * warp_.d_warped_d_depth[i] * dd;
      }
    }
    return loss;
  }

  LossConfig cfg_;
  std::vector<int> levels_;
  int max_level_ = 0;
  Mat3 r_mn_, r_nm_;
  Vec3 t_mn_, t_nm_;
  std::vector<Level> pyramid_;
  std::vector<std::vector<double>> disp_pyr_m_, disp_pyr_n_, grad_pyr_m_, grad_pyr_n_;
  std::vector<double> depth_, grad_warped_;
  WarpBuffers warp_;
  PhotometricWork work_;
};

struct UpsampleAxis {
  std::vector<int> i0;
  std::vector<double> frac;
};

UpsampleAxis upsample_axis(int coarse, int fine) {
  UpsampleAxis axis;
  axis.i0.resize(fine);
  axis.frac.resize(fine);
  for (int x = 0; x < fine; ++x) {
    double g = (x + 0.5) * static_cast<double>(coarse) / fine - 0.5;
    g = std::clamp(g, 0.0, static_cast<double>(coarse - 1));
    int i = std::min(static_cast<int>(g), std::max(0, coarse - 2));
    axis.i0[x] = i;
    axis.frac[x] = coarse > 1 ? g - i : 0.0;
  }
  return axis;
}

}  // namespace

void LossConfig::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(alpha) || !unit(mu) || !unit(lambda)) {
    fail(ErrorCode::kInvalidArgument, "alpha, mu and lambda must lie in [0, 1]");
  }
  if (!(range.min > 0.0 && range.min < range.max)) {
    fail(ErrorCode::kInvalidArgument, "depth range must satisfy 0 < d_min < d_max");
  }
  if (scales.empty()) fail(ErrorCode::kInvalidArgument, "at least one scale is required");
  levels();
}

std::vector<int> LossConfig::levels() const {
  std::vector<int> out;
  for (const double s : scales) {
    if (!(s > 0.0 && s <= 1.0)) {
      fail(ErrorCode::kInvalidArgument, "scales must lie in (0, 1]");
    }
    const double level = -std::log2(s);
    const int rounded = static_cast<int>(std::lround(level));
    if (std::abs(level - rounded) > 1e-9) {
      fail(ErrorCode::kInvalidArgument, "scales must be powers of 1/2");
    }
    out.push_back(rounded);
  }
  return out;
}

Vec2 mask_centroid(const ImageBuffer& mask) {
  double sx = 0.0, sy = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask_set(mask, x, y)) continue;
      sx += x;
      sy += y;
      ++count;
    }
  }
  if (count == 0) fail(ErrorCode::kEmptyMask, "mask has no set pixel");
  return {sx / static_cast<double>(count), sy / static_cast<double>(count)};
}

double median_depth_in_mask(const DepthMap& depth, const ImageBuffer& mask) {
  check_same_size(depth.width(), depth.height(), mask.width(), mask.height(),
                  "depth vs mask");
  std::vector<double> values;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (mask_set(mask, x, y)) values.push_back(depth.at(x, y));
    }
  }
  if (values.empty()) fail(ErrorCode::kEmptyMask, "mask has no set pixel");
  const std::size_t mid = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid),
                   values.end());
  return values[mid];
}

ToolObservation observe_tool(const DepthMap& depth, const ImageBuffer& mask,
                             double timestamp) {
  return {mask_centroid(mask), median_depth_in_mask(depth, mask), timestamp};
}

double disparity_to_depth(double disparity, const DepthRange& range) {
  if (!(disparity >= 0.0 && disparity <= 1.0)) {
    fail(ErrorCode::kDisparityOutOfRange,
         "disparity " + std::to_string(disparity) + " outside [0, 1]");
  }
  return range.min * range.max / (range.min + (range.max - range.min) * disparity);
}

double depth_to_disparity(double depth, const DepthRange& range) {
  const double d = std::clamp(depth, range.min, range.max);
  return (range.min * range.max / d - range.min) / (range.max - range.min);
}

DepthMap disparity_to_depth(const DisparityMap& disparity, const LossConfig& cfg) {
  DepthMap depth(disparity.width(), disparity.height());
  for (std::size_t i = 0; i < disparity.size(); ++i) {
    depth[i] = disparity_to_depth(disparity[i], cfg.range);
  }
  return depth;
}

WarpResult warp_image(const ImageBuffer& source, const DepthMap& target_depth,
                      const Pose& target_to_source, const CameraIntrinsics& k) {
  check_same_size(source.width(), source.height(), target_depth.width(),
                  target_depth.height(), "source vs depth");
  check_same_size(source.width(), source.height(), k.width, k.height,
                  "source vs intrinsics");
  WarpResult result;
  result.warped = ImageBuffer(source.width(), source.height(), source.channels());
  WarpBuffers buffers;
  for (int c = 0; c < source.channels(); ++c) {
    std::vector<double> plane(source.pixel_count());
    for (std::size_t i = 0; i < plane.size(); ++i) {
      plane[i] = source.data()[i * source.channels() + c];
    }
    warp_core(plane, target_depth.values(), source.width(), source.height(), k,
              target_to_source.rotation(), target_to_source.translation(), false,
              buffers);
    for (std::size_t i = 0; i < plane.size(); ++i) {
      result.warped.data()[i * source.channels() + c] = buffers.warped[i];
    }
  }
  result.valid = std::move(buffers.valid);
  result.valid_count = buffers.valid_count;
  return result;
}

ScalarField ssim(const ImageBuffer& a, const ImageBuffer& b) {
  check_same_size(a.width(), a.height(), b.width(), b.height(), "ssim inputs");
  if (a.channels() != b.channels()) {
    fail(ErrorCode::kDimensionMismatch, "ssim inputs differ in channel count");
  }
  const int w = a.width(), h = a.height();
  const std::vector<double> x = gray_values(a), y = gray_values(b);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  std::vector<double> tmp, mx, my, exx, eyy, exy;
  box3(x, w, h, tmp, mx);
  box3(y, w, h, tmp, my);
  box3(xx, w, h, tmp, exx);
  box3(yy, w, h, tmp, eyy);
  box3(xy, w, h, tmp, exy);
  ScalarField out(w, h);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double vx = exx[i] - mx[i] * mx[i];
    const double vy = eyy[i] - my[i] * my[i];
    const double cxy = exy[i] - mx[i] * my[i];
    out[i] = ((2.0 * mx[i] * my[i] + kSsimC1) * (2.0 * cxy + kSsimC2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + kSsimC1) * (vx + vy + kSsimC2));
  }
  return out;
}

double photometric_loss(const ImageBuffer& image, const ImageBuffer& warped,
                        std::span<const std::uint8_t> valid, const LossConfig& cfg) {
  check_same_size(image.width(), image.height(), warped.width(), warped.height(),
                  "photometric inputs");
  if (valid.size() != image.pixel_count()) {
    fail(ErrorCode::kDimensionMismatch, "validity mask size does not match image");
  }
  const int w = image.width(), h = image.height();
  const std::vector<double> target = gray_values(image);
  WarpBuffers warp;
  warp.warped = gray_values(warped);
  warp.valid.assign(valid.begin(), valid.end());
  warp.valid_count = static_cast<std::size_t>(
      std::count_if(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; }));
  std::vector<double> tmp, mu, e_xx, sq(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) sq[i] = target[i] * target[i];
  box3(target, w, h, tmp, mu);
  box3(sq, w, h, tmp, e_xx);
  std::vector<double> var(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) var[i] = e_xx[i] - mu[i] * mu[i];
  PhotometricWork work;
  return photometric_core(target, mu, var, warp, w, h, cfg, work, nullptr);
}

double reconstruction_loss(const ImageBuffer& image_m, const ImageBuffer& image_n,
                           const DepthMap& depth_m, const DepthMap& depth_n,
                           const Pose& pose_m, const Pose& pose_n,
                           const CameraIntrinsics& k, const LossConfig& cfg) {
  const WarpResult synth_m = warp_image(image_n, depth_m, pose_n.inverse() * pose_m, k);
  const WarpResult synth_n = warp_image(image_m, depth_n, pose_m.inverse() * pose_n, k);
  return photometric_loss(image_m, synth_m.warped, synth_m.valid, cfg) +
         photometric_loss(image_n, synth_n.warped, synth_n.valid, cfg);
}

double smoothness_loss(std::span<const double> values, int width, int height,
                       const ImageBuffer& image) {
  check_same_size(width, height, image.width(), image.height(), "smoothness inputs");
  const std::vector<double> gray = gray_values(image);
  const EdgeWeights e = edge_weights(gray, width, height);
  const std::vector<double> d(values.begin(), values.end());
  return smoothness_core(d, width, height, e, nullptr, 0.0);
}

double total_loss(const ViewPair& pair, const DisparityMap& disp_m,
                  const DisparityMap& disp_n, const CameraIntrinsics& k,
                  const LossConfig& cfg) {
  check_same_size(disp_m.width(), disp_m.height(), k.width, k.height, "disparity m");
  check_same_size(disp_n.width(), disp_n.height(), k.width, k.height, "disparity n");
  PyramidObjective objective(pair, k, cfg);
  return objective.evaluate(disp_m.values(), disp_n.values(), nullptr, nullptr);
}

LossWithGradient total_loss_with_gradient(const ViewPair& pair,
                                          const DisparityMap& disp_m,
                                          const DisparityMap& disp_n,
                                          const CameraIntrinsics& k,
                                          const LossConfig& cfg) {
  check_same_size(disp_m.width(), disp_m.height(), k.width, k.height, "disparity m");
  check_same_size(disp_n.width(), disp_n.height(), k.width, k.height, "disparity n");
  PyramidObjective objective(pair, k, cfg);
  LossWithGradient out{0.0, DisparityMap(k.width, k.height), DisparityMap(k.width, k.height)};
  out.loss = objective.evaluate(disp_m.values(), disp_n.values(), &out.grad_m.values(),
                                &out.grad_n.values());
  return out;
}

DisparityMap upsample_bilinear(const DisparityMap& coarse, int width, int height) {
  const UpsampleAxis ax = upsample_axis(coarse.width(), width);
  const UpsampleAxis ay = upsample_axis(coarse.height(), height);
  const int cw = coarse.width();
  DisparityMap fine(width, height);
  for (int y = 0; y < height; ++y) {
    const int y0 = ay.i0[y];
    const int y1 = std::min(y0 + 1, coarse.height() - 1);
    const double fy = ay.frac[y];
    for (int x = 0; x < width; ++x) {
      const int x0 = ax.i0[x];
      const int x1 = std::min(x0 + 1, cw - 1);
      const double fx = ax.frac[x];
      const double top = coarse.at(x0, y0) + fx * (coarse.at(x1, y0) - coarse.at(x0, y0));
      const double bottom = coarse.at(x0, y1) + fx * (coarse.at(x1, y1) - coarse.at(x0, y1));
      fine.at(x, y) = top + fy * (bottom - top);
    }
  }
  return fine;
}

DisparityMap upsample_adjoint(const DisparityMap& fine_gradient, int coarse_width,
                              int coarse_height) {
  const UpsampleAxis ax = upsample_axis(coarse_width, fine_gradient.width());
  const UpsampleAxis ay = upsample_axis(coarse_height, fine_gradient.height());
  DisparityMap coarse(coarse_width, coarse_height);
  for (int y = 0; y < fine_gradient.height(); ++y) {
    const int y0 = ay.i0[y];
    const int y1 = std::min(y0 + 1, coarse_height - 1);
    const double fy = ay.frac[y];
    for (int x = 0; x < fine_gradient.width(); ++x) {
      const int x0 = ax.i0[x];
      const int x1 = std::min(x0 + 1, coarse_width - 1);
      const double fx = ax.frac[x];
      const double g = fine_gradient.at(x, y);
      coarse.at(x0, y0) += g * (1.0 - fx) * (1.0 - fy);
      coarse.at(x1, y0) += g * fx * (1.0 - fy);
      coarse.at(x0, y1) += g * (1.0 - fx) * fy;
      coarse.at(x1, y1) += g * fx * fy;
    }
  }
  return coarse;
}

std::vector<std::pair<int, int>> hierarchical_pairs(int n) {
  if (n < 2) fail(ErrorCode::kSequenceTooShort, "need at least two frames");
  std::set<std::pair<int, int>> pairs;
  const int max_level = static_cast<int>(std::floor(std::log2(static_cast<double>(n - 1))));
  for (int level = 0; level <= max_level; ++level) {
    const int gap = 1 << level;
    // Both members of a pair share residue modulo 2^(l-1), so filtering the
    // smaller index is enough. Level 0 has no modulus constraint.
    const int stride = level == 0 ? 1 : 1 << (level - 1);
    for (int m = 0; m + gap < n; m += stride) pairs.emplace(m, m + gap);
  }
  return {pairs.begin(), pairs.end()};
}

double gradient_energy(const ImageBuffer& image) {
  const std::vector<double> g = gray_values(image);
  const int w = image.width(), h = image.height();
  double sum = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (x + 1 < w) {
        sum += (g[i + 1] - g[i]) * (g[i + 1] - g[i]);
        ++count;
      }
      if (y + 1 < h) {
        sum += (g[i + w] - g[i]) * (g[i + w] - g[i]);
        ++count;
      }
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

DepthEstimate estimate_depth_map(const ImageBuffer& image_m, const ImageBuffer& image_n,
                                 const Pose& pose_m, const Pose& pose_n,
                                 const CameraIntrinsics& k, const LossConfig& cfg,
                                 const DepthOptimizerOptions& options) {
  const double baseline = (pose_m.translation() - pose_n.translation()).norm();
  if (!(baseline > kMinBaselineMm)) {
    fail(ErrorCode::kDegenerateBaseline,
         "camera baseline " + std::to_string(baseline) + " mm is too small");
  }
  if (gradient_energy(image_m) < kMinGradientEnergy ||
      gradient_energy(image_n) < kMinGradientEnergy) {
    fail(ErrorCode::kTexturelessInput, "image gradient energy below threshold");
  }
  if (options.grid_width < 2 || options.grid_height < 2 || options.iterations < 0) {
    fail(ErrorCode::kInvalidArgument, "invalid optimizer options");
  }

  const int gw = options.grid_width, gh = options.grid_height;
  const std::size_t cells = static_cast<std::size_t>(gw) * gh;
  ViewPair pair{image_m, image_n, pose_m, pose_n};
  PyramidObjective objective(pair, k, cfg);

  DepthEstimate est;
  est.grid_m = DisparityMap(gw, gh, depth_to_disparity(options.init_depth_mm, cfg.range));
  est.grid_n = est.grid_m;
  if (!options.init_disparity_m.empty()) {
    if (options.init_disparity_m.size() != cells || options.init_disparity_n.size() != cells) {
      fail(ErrorCode::kDimensionMismatch, "initial disparity grids do not match grid size");
    }
    est.grid_m.values() = options.init_disparity_m;
    est.grid_n.values() = options.init_disparity_n;
  }

  std::vector<double> vel_m(cells, 0.0), vel_n(cells, 0.0);
  std::vector<double> fine_grad_m, fine_grad_n;
  auto evaluate = [&](bool with_grad) {
    const DisparityMap fine_m = upsample_bilinear(est.grid_m, k.width, k.height);
    const DisparityMap fine_n = upsample_bilinear(est.grid_n, k.width, k.height);
    return objective.evaluate(fine_m.values(), fine_n.values(),
                              with_grad ? &fine_grad_m : nullptr,
                              with_grad ? &fine_grad_n : nullptr);
  };

  for (int it = 0; it < options.iterations; ++it) {
    const double loss = evaluate(true);
    if (it == 0) est.initial_loss = loss;
    if (options.record_history) est.loss_history.push_back(loss);
    DisparityMap gm(k.width, k.height), gn(k.width, k.height);
    gm.values() = fine_grad_m;
    gn.values() = fine_grad_n;
    const DisparityMap cgm = upsample_adjoint(gm, gw, gh);
    const DisparityMap cgn = upsample_adjoint(gn, gw, gh);
    for (std::size_t i = 0; i < cells; ++i) {
      vel_m[i] = options.momentum * vel_m[i] - options.learning_rate * cgm[i];
      vel_n[i] = options.momentum * vel_n[i] - options.learning_rate * cgn[i];
      est.grid_m[i] = std::clamp(est.grid_m[i] + vel_m[i], 0.0, 1.0);
      est.grid_n[i] = std::clamp(est.grid_n[i] + vel_n[i], 0.0, 1.0);
    }
  }
  est.final_loss = evaluate(false);
  if (options.iterations == 0) est.initial_loss = est.final_loss;
  if (options.record_history) est.loss_history.push_back(est.final_loss);

  est.depth_m = disparity_to_depth(upsample_bilinear(est.grid_m, k.width, k.height), cfg);
  est.depth_n = disparity_to_depth(upsample_bilinear(est.grid_n, k.width, k.height), cfg);
  return est;
}

DepthMetrics depth_metrics(std::span<const double> estimated, std::span<const double> truth) {
  if (estimated.empty() || truth.empty()) fail(ErrorCode::kEmptyInput, "no depth samples");
  if (estimated.size() != truth.size()) {
    fail(ErrorCode::kDimensionMismatch, "estimate and truth differ in length");
  }
  double rel = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!(truth[i] > 0.0)) fail(ErrorCode::kNonPositiveTruth, "ground-truth depth must be positive");
    const double diff = estimated[i] - truth[i];
    rel += std::abs(diff) / truth[i];
    sq += diff * diff;
  }
  const double n = static_cast<double>(truth.size());
  return {100.0 * rel / n, std::sqrt(sq / n)};
}

}  // namespace lapfov
