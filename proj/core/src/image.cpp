#include "lapfov/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "lapfov/error.hpp"

namespace lapfov {

ImageBuffer::ImageBuffer(int width, int height, int channels, double fill)
    : width_(width), height_(height), channels_(channels) {
  if (channels != 1 && channels != 3) {
    fail(ErrorCode::kInvalidArgument, "images have 1 or 3 channels");
  }
  if (width < 0 || height < 0) {
    fail(ErrorCode::kInvalidArgument, "negative image size");
  }
  data_.assign(pixel_count() * channels, fill);
}

bool ImageBuffer::valid_range() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) {
    return std::isfinite(v) && v >= 0.0 && v <= 1.0;
  });
}

ImageBuffer ImageBuffer::to_gray() const {
  if (channels_ == 1) return *this;
  ImageBuffer out(width_, height_, 1);
  for (std::size_t i = 0; i < pixel_count(); ++i) {
    out.data_[i] = 0.299 * data_[3 * i] + 0.587 * data_[3 * i + 1] +
                   0.114 * data_[3 * i + 2];
  }
  return out;
}

bool mask_set(const ImageBuffer& mask, int x, int y) {
  return mask.at(x, y) > 0.5;
}

std::size_t mask_count(const ImageBuffer& mask) {
  return static_cast<std::size_t>(std::count_if(
      mask.data().begin(), mask.data().end(), [](double v) { return v > 0.5; }));
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(
      std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  return out;
}

// Skips whitespace and '#' comments in a PNM header.
void skip_header_space(std::istream& in) {
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

int read_header_int(std::istream& in, const std::string& what) {
  skip_header_space(in);
  int v = 0;
  if (!(in >> v)) fail(ErrorCode::kIo, "malformed PNM header (" + what + ")");
  return v;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xFF),
                         static_cast<char>((v >> 8) & 0xFF),
                         static_cast<char>((v >> 16) & 0xFF),
                         static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
    fail(ErrorCode::kIo, "truncated float grid header");
  }
  return static_cast<std::uint32_t>(bytes[0]) |
         (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> encode_pnm(const ImageBuffer& image) {
  const std::string header = (image.channels() == 1 ? "P5\n" : "P6\n") +
                             std::to_string(image.width()) + " " +
                             std::to_string(image.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.data().size());
  for (double v : image.data()) out.push_back(to_byte(v));
  return out;
}

void write_pnm(const std::filesystem::path& path, const ImageBuffer& image,
               bool binary) {
  auto out = open_out(path);
  if (binary) {
    const auto bytes = encode_pnm(image);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    return;
  }
  out << (image.channels() == 1 ? "P2\n" : "P3\n") << image.width() << ' '
      << image.height() << "\n255\n";
  const std::size_t row = static_cast<std::size_t>(image.width()) * image.channels();
  for (std::size_t i = 0; i < image.data().size(); ++i) {
    out << static_cast<int>(to_byte(image.data()[i]))
        << ((i + 1) % row == 0 ? '\n' : ' ');
  }
}

ImageBuffer read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  int channels = 0;
  bool binary = false;
  if (magic == "P2") channels = 1;
  else if (magic == "P5") channels = 1, binary = true;
  else if (magic == "P3") channels = 3;
  else if (magic == "P6") channels = 3, binary = true;
  else fail(ErrorCode::kIo, path.string() + " is not a PGM/PPM file");

  const int width = read_header_int(in, "width");
  const int height = read_header_int(in, "height");
  const int max_value = read_header_int(in, "max value");
  if (width <= 0 || height <= 0 || max_value <= 0 || max_value > 255) {
    fail(ErrorCode::kIo, "unsupported PNM geometry or depth in " + path.string());
  }
  ImageBuffer image(width, height, channels);
  const double scale = 1.0 / max_value;
  if (binary) {
    in.get();  // single whitespace byte after the header
    std::vector<unsigned char> bytes(image.data().size());
    if (!in.read(reinterpret_cast<char*>(bytes.data()),
                 static_cast<std::streamsize>(bytes.size()))) {
      fail(ErrorCode::kIo, "truncated pixel data in " + path.string());
    }
    for (std::size_t i = 0; i < bytes.size(); ++i) image.data()[i] = bytes[i] * scale;
  } else {
    for (double& v : image.data()) {
      int sample = 0;
      if (!(in >> sample)) fail(ErrorCode::kIo, "truncated pixel data in " + path.string());
      v = std::clamp(sample, 0, max_value) * scale;
    }
  }
  return image;
}

void write_mask_pgm(const std::filesystem::path& path, const ImageBuffer& mask) {
  ImageBuffer out(mask.width(), mask.height(), 1);
  for (std::size_t i = 0; i < out.data().size(); ++i) {
    out.data()[i] = mask.data()[i] > 0.5 ? 1.0 : 0.0;
  }
  write_pnm(path, out, true);
}

void write_float_grid(const std::filesystem::path& path, std::string_view magic,
                      int width, int height, const std::vector<double>& values) {
  if (magic.size() != 4) fail(ErrorCode::kInvalidArgument, "magic must be 4 bytes");
  if (values.size() != static_cast<std::size_t>(width) * height) {
    fail(ErrorCode::kDimensionMismatch, "grid size does not match values");
  }
  auto out = open_out(path);
  out.write(magic.data(), 4);
  put_u32(out, static_cast<std::uint32_t>(width));
  put_u32(out, static_cast<std::uint32_t>(height));
  for (double v : values) {
    const float f = static_cast<float>(v);
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, sizeof(bits));
    put_u32(out, bits);
  }
}

FloatGrid read_float_grid(const std::filesystem::path& path,
                          std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  char got[4];
  if (!in.read(got, 4) || std::string_view(got, 4) != magic) {
    fail(ErrorCode::kIo, path.string() + " does not start with " + std::string(magic));
  }
  FloatGrid grid;
  grid.width = static_cast<int>(get_u32(in));
  grid.height = static_cast<int>(get_u32(in));
  grid.values.resize(static_cast<std::size_t>(grid.width) * grid.height);
  for (double& v : grid.values) {
    const std::uint32_t bits = get_u32(in);
    float f = 0.0f;
    std::memcpy(&f, &bits, sizeof(f));
    v = f;
  }
  return grid;
}

void write_depth(const std::filesystem::path& path, const DepthMap& depth) {
  write_float_grid(path, kDepthMagic, depth.width(), depth.height(), depth.values());
}

DepthMap read_depth(const std::filesystem::path& path) {
  FloatGrid grid = read_float_grid(path, kDepthMagic);
  DepthMap depth(grid.width, grid.height);
  depth.values() = std::move(grid.values);
  return depth;
}

}  // namespace lapfov
