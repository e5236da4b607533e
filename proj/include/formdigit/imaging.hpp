#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace formdigit {

// Row-major grayscale raster. Luminance lives in [0,1] with 1.0 = white paper.
// Coordinates are (x right, y down); pixel (x,y) has its center at (x,y).
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, float fill = 1.0f);
  GrayImage(int width, int height, std::vector<float> data);

  static GrayImage from_bytes(int width, int height, std::span<const std::uint8_t> bytes);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  float at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<const float> pixels() const { return data_; }
  std::span<float> pixels() { return data_; }

  // Clamps every value into [0,1]; used after additive noise.
  void clamp();
  std::vector<std::uint8_t> to_bytes() const;

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

// Axis-aligned box in pixel coordinates, x0 < x1 and y0 < y1.
struct BoundingBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  bool valid() const { return x0 < x1 && y0 < y1; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// Bilinear interpolation of the four lattice neighbours. Anything that
// falls outside the raster reads as paper white.
float bilinear_sample(const GrayImage& img, double x, double y);

double iou(const BoundingBox& a, const BoundingBox& b);

// Bilinear resampling with pixel-center alignment.
GrayImage resize_to(const GrayImage& img, int width, int height);

// Copies the integer-aligned region [x0,x0+w) x [y0,y0+h); outside reads white.
GrayImage crop(const GrayImage& img, int x0, int y0, int w, int h);

GrayImage invert(const GrayImage& img);

// Nearest-neighbour integer upscale, used for operator-facing crops.
GrayImage upscale_nearest(const GrayImage& img, int factor);

// 8-bit grayscale codecs. PNG input may be gray, gray+alpha, RGB or RGBA (color
// is reduced to luma); output is always 8-bit gray.
GrayImage read_png(const std::filesystem::path& path);
void write_png(const GrayImage& img, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const GrayImage& img);
GrayImage decode_png(std::span<const std::uint8_t> bytes);

// Binary PGM (P5), maxval <= 255.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const GrayImage& img, const std::filesystem::path& path);

// Dispatches on the file signature.
GrayImage read_image(const std::filesystem::path& path);

}  // namespace formdigit
