#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

namespace lapfov {

/// Dense row-major grid of doubles. The tag parameter keeps depth maps,
/// disparity maps and heatmaps from being mixed up at call sites.
template <typename Tag>
class ScalarMap {
 public:
  ScalarMap() = default;
  ScalarMap(int width, int height, double fill = 0.0)
      : width_(width), height_(height),
        values_(static_cast<std::size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& at(int x, int y) { return values_[index(x, y)]; }
  double at(int x, int y) const { return values_[index(x, y)]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

struct DepthTag {};
struct DisparityTag {};
struct HeatTag {};
struct FieldTag {};

using DepthMap = ScalarMap<DepthTag>;
using DisparityMap = ScalarMap<DisparityTag>;
using Heatmap = ScalarMap<HeatTag>;
/// Generic per-pixel scalar field (rewards, SSIM maps, ...).
using ScalarField = ScalarMap<FieldTag>;

/// Interleaved image with 1 or 3 channels, samples in [0, 1]. Binary masks are
/// single-channel images holding exactly 0 or 1.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int width, int height, int channels = 1, double fill = 0.0);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width_) * height_;
  }

  double& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  bool same_shape(const ImageBuffer& other) const {
    return width_ == other.width_ && height_ == other.height_ &&
           channels_ == other.channels_;
  }

  /// True when every sample is finite and inside [0, 1].
  bool valid_range() const;

  /// Luma for 3-channel images, copy otherwise.
  ImageBuffer to_gray() const;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<double> data_;
};

bool mask_set(const ImageBuffer& mask, int x, int y);
std::size_t mask_count(const ImageBuffer& mask);

// File formats. PNM is written binary (P5/P6) by default; both ASCII and
// binary variants are read. Float grids are little-endian:
//   magic[4] | u32 width | u32 height | width*height float32, row-major.

void write_pnm(const std::filesystem::path& path, const ImageBuffer& image,
               bool binary = true);
ImageBuffer read_pnm(const std::filesystem::path& path);

/// Mask export with values {0, 255}.
void write_mask_pgm(const std::filesystem::path& path, const ImageBuffer& mask);

std::vector<std::uint8_t> encode_pnm(const ImageBuffer& image);

inline constexpr std::string_view kDepthMagic = "DPTH";
inline constexpr std::string_view kHeatmapMagic = "HMAP";

void write_float_grid(const std::filesystem::path& path, std::string_view magic,
                      int width, int height, const std::vector<double>& values);

struct FloatGrid {
  int width = 0;
  int height = 0;
  std::vector<double> values;
};

FloatGrid read_float_grid(const std::filesystem::path& path,
                          std::string_view magic);

void write_depth(const std::filesystem::path& path, const DepthMap& depth);
DepthMap read_depth(const std::filesystem::path& path);

}  // namespace lapfov
