#include "formdigit/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

namespace formdigit {

GrayImage::GrayImage(int width, int height, float fill)
    : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {
  if (width < 0 || height < 0) throw std::invalid_argument("negative image size");
}

GrayImage::GrayImage(int width, int height, std::vector<float> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (data_.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("image data length does not match width*height");
}

GrayImage GrayImage::from_bytes(int width, int height, std::span<const std::uint8_t> bytes) {
  if (bytes.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("byte buffer does not match width*height");
  std::vector<float> data(bytes.size());
  std::transform(bytes.begin(), bytes.end(), data.begin(),
                 [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
  return GrayImage(width, height, std::move(data));
}

void GrayImage::clamp() {
  for (float& v : data_) v = std::clamp(v, 0.0f, 1.0f);
}

std::vector<std::uint8_t> GrayImage::to_bytes() const {
  std::vector<std::uint8_t> out(data_.size());
  std::transform(data_.begin(), data_.end(), out.begin(), [](float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  });
  return out;
}

namespace {

inline float pixel_or_white(const GrayImage& img, int x, int y) {
  if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return 1.0f;
  return img.at(x, y);
}

}  // namespace

float bilinear_sample(const GrayImage& img, double x, double y) {
  if (!(x > -1.0 && y > -1.0 && x < img.width() && y < img.height())) return 1.0f;
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const int ix = static_cast<int>(fx);
  const int iy = static_cast<int>(fy);
  const double tx = x - fx;
  const double ty = y - fy;
  const double top = (1.0 - tx) * pixel_or_white(img, ix, iy) + tx * pixel_or_white(img, ix + 1, iy);
  const double bottom =
      (1.0 - tx) * pixel_or_white(img, ix, iy + 1) + tx * pixel_or_white(img, ix + 1, iy + 1);
  return static_cast<float>((1.0 - ty) * top + ty * bottom);
}

double iou(const BoundingBox& first, const BoundingBox& second) {
  // Fixed operand order keeps iou(a,b) == iou(b,a) bit for bit even when the
  // compiler fuses multiply-adds.
  const bool swap = std::tie(second.x0, second.y0, second.x1, second.y1) < std::tie(first.x0, first.y0, first.x1, first.y1);
  const BoundingBox& a = swap ? second : first;
  const BoundingBox& b = swap ? first : second;
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::min(1.0, inter / uni) : 0.0;
}

GrayImage resize_to(const GrayImage& img, int width, int height) {
  if (width < 1 || height < 1) throw std::invalid_argument("resize target must be at least 1x1");
  if (width == img.width() && height == img.height()) return img;
  GrayImage out(width, height);
  const double sx = static_cast<double>(img.width()) / width;
  const double sy = static_cast<double>(img.height()) / height;
  for (int y = 0; y < height; ++y) {
    // Clamp keeps edge pixels from blending with the white exterior.
    const double src_y = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
    for (int x = 0; x < width; ++x) {
      const double src_x = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      out.at(x, y) = bilinear_sample(img, src_x, src_y);
    }
  }
  return out;
}

GrayImage crop(const GrayImage& img, int x0, int y0, int w, int h) {
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(x, y) = pixel_or_white(img, x0 + x, y0 + y);
  return out;
}

GrayImage invert(const GrayImage& img) {
  GrayImage out = img;
  for (float& v : out.pixels()) v = 1.0f - v;
  return out;
}

GrayImage upscale_nearest(const GrayImage& img, int factor) {
  if (factor < 1) throw std::invalid_argument("upscale factor must be >= 1");
  GrayImage out(img.width() * factor, img.height() * factor);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) out.at(x, y) = img.at(x / factor, y / factor);
  return out;
}

}  // namespace formdigit
