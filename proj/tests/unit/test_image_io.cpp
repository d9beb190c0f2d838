#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "lapfov/error.hpp"
#include "lapfov/image.hpp"

namespace lapfov {
namespace {

namespace fs = std::filesystem;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("lapfov_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

ImageBuffer random_image(int w, int h, int channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> level(0, 255);
  ImageBuffer img(w, h, channels);
  for (double& v : img.data()) v = level(rng) / 255.0;
  return img;
}

using PnmIo = TempDir;

TEST_F(PnmIo, BinaryAndAsciiRoundTripAtEightBits) {
  for (int channels : {1, 3}) {
    for (bool binary : {true, false}) {
      const ImageBuffer img = random_image(17, 9, channels, 3 + channels);
      const fs::path path = dir_ / (channels == 1 ? "a.pgm" : "a.ppm");
      write_pnm(path, img, binary);
      const ImageBuffer back = read_pnm(path);
      ASSERT_TRUE(back.same_shape(img));
      for (std::size_t i = 0; i < img.data().size(); ++i) {
        ASSERT_NEAR(back.data()[i], img.data()[i], 1e-12);
      }
    }
  }
}

TEST_F(PnmIo, MaskExportUsesFullScale) {
  ImageBuffer mask(4, 2);
  mask.at(1, 0) = 1.0;
  mask.at(3, 1) = 1.0;
  write_mask_pgm(dir_ / "m.pgm", mask);
  std::ifstream in(dir_ / "m.pgm", std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  std::vector<unsigned char> bytes(8);
  in.read(reinterpret_cast<char*>(bytes.data()), 8);
  EXPECT_EQ(magic, "P5");
  EXPECT_EQ(maxval, 255);
  EXPECT_EQ(bytes, (std::vector<unsigned char>{0, 255, 0, 0, 0, 0, 0, 255}));
}

TEST_F(PnmIo, MissingFileIsAnIoError) {
  try {
    read_pnm(dir_ / "nope.pgm");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
}

using FloatGridIo = TempDir;

TEST_F(FloatGridIo, DepthRoundTripAndLayout) {
  DepthMap depth(5, 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x) depth.at(x, y) = 10.0 + x + 0.25 * y;
  write_depth(dir_ / "d.bin", depth);
  EXPECT_EQ(fs::file_size(dir_ / "d.bin"), 12u + 15u * 4u);

  std::ifstream in(dir_ / "d.bin", std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  EXPECT_EQ(std::string(magic, 4), "DPTH");

  const DepthMap back = read_depth(dir_ / "d.bin");
  ASSERT_EQ(back.width(), 5);
  ASSERT_EQ(back.height(), 3);
  for (std::size_t i = 0; i < depth.size(); ++i) EXPECT_FLOAT_EQ(back[i], depth[i]);
}

TEST_F(FloatGridIo, WrongMagicIsRejected) {
  write_float_grid(dir_ / "h.bin", kHeatmapMagic, 2, 2, {1, 2, 3, 4});
  EXPECT_THROW(read_float_grid(dir_ / "h.bin", kDepthMagic), Error);
  const FloatGrid g = read_float_grid(dir_ / "h.bin", kHeatmapMagic);
  EXPECT_EQ(g.values, (std::vector<double>{1, 2, 3, 4}));
}

TEST(ImageBuffer, RangeCheckAndGray) {
  ImageBuffer rgb(2, 1, 3, 0.5);
  EXPECT_TRUE(rgb.valid_range());
  rgb.at(1, 0, 2) = 1.5;
  EXPECT_FALSE(rgb.valid_range());
  ImageBuffer flat(2, 1, 3, 0.25);
  const ImageBuffer gray = flat.to_gray();
  EXPECT_EQ(gray.channels(), 1);
  EXPECT_NEAR(gray.at(0, 0), 0.25, 1e-12);
}

}  // namespace
}  // namespace lapfov
