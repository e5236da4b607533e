#include <png.h>

#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "formdigit/errors.hpp"
#include "formdigit/imaging.hpp"

namespace formdigit {

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spill(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageIoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageIoError("short write to " + path.string());
}

}  // namespace

GrayImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw ImageIoError(std::string("png: ") + image.message);
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ImageIoError(std::string("png: ") + image.message);
  }
  return GrayImage::from_bytes(static_cast<int>(image.width), static_cast<int>(image.height), buffer);
}

std::vector<std::uint8_t> encode_png(const GrayImage& img) {
  const std::vector<std::uint8_t> pixels = img.to_bytes();
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr))
    throw ImageIoError(std::string("png: ") + image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw ImageIoError(std::string("png: ") + image.message);
  out.resize(size);
  return out;
}

GrayImage read_png(const std::filesystem::path& path) { return decode_png(slurp(path)); }

void write_png(const GrayImage& img, const std::filesystem::path& path) {
  spill(path, encode_png(img));
}

GrayImage read_pgm(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = slurp(path);
  std::size_t pos = 0;
  auto skip_space_and_comments = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> int {
    skip_space_and_comments();
    int v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
    }
    if (!any) throw ImageIoError("pgm: malformed header in " + path.string());
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw ImageIoError("pgm: not a binary P5 file: " + path.string());
  pos = 2;
  const int w = read_int();
  const int h = read_int();
  const int maxval = read_int();
  if (maxval <= 0 || maxval > 255) throw ImageIoError("pgm: only 8-bit maxval supported");
  ++pos;  // single whitespace before raster
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() < pos + n) throw ImageIoError("pgm: truncated raster in " + path.string());
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<float>(bytes[pos + i]) / maxval;
  return GrayImage(w, h, std::move(data));
}

void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ostringstream header;
  header << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  const std::vector<std::uint8_t> pixels = img.to_bytes();
  out.insert(out.end(), pixels.begin(), pixels.end());
  spill(path, out);
}

GrayImage read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open " + path.string());
  char sig[2] = {0, 0};
  in.read(sig, 2);
  if (sig[0] == 'P' && sig[1] == '5') return read_pgm(path);
  return read_png(path);
}

}  // namespace formdigit
