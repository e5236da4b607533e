#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>
#include <numeric>

#include "formdigit/datasets.hpp"
#include "formdigit/errors.hpp"

namespace formdigit {

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TruncatedFile("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t offset,
                        const std::filesystem::path& path) {
  if (b.size() < offset + 4) throw TruncatedFile(path.string() + ": header cut short");
  return (std::uint32_t(b[offset]) << 24) | (std::uint32_t(b[offset + 1]) << 16) |
         (std::uint32_t(b[offset + 2]) << 8) | std::uint32_t(b[offset + 3]);
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> bytes = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes.data(), 4);
}

}  // namespace

void LabeledDigitSet::check() const {
  if (images.size() != labels.size())
    throw CountMismatch(std::to_string(images.size()) + " images vs " + std::to_string(labels.size()) + " labels");
  for (int l : labels)
    if (l < 0 || l >= num_classes) throw std::out_of_range("label " + std::to_string(l) + " out of range");
}

LabeledDigitSet LabeledDigitSet::subset(const std::vector<std::size_t>& indices) const {
  LabeledDigitSet out;
  out.source = source;
  out.num_classes = num_classes;
  out.images.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    out.images.push_back(images.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

LabeledDigitSet LabeledDigitSet::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  std::iota(idx.begin(), idx.end(), 0);
  return subset(idx);
}

LabeledDigitSet read_idx(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path, bool transpose) {
  const std::vector<std::uint8_t> img = slurp(images_path);
  const std::vector<std::uint8_t> lab = slurp(labels_path);
  if (read_be32(img, 0, images_path) != kIdxImagesMagic)
    throw BadMagic(images_path.string() + " is not an IDX image file");
  if (read_be32(lab, 0, labels_path) != kIdxLabelsMagic)
    throw BadMagic(labels_path.string() + " is not an IDX label file");
  const std::uint32_t count = read_be32(img, 4, images_path);
  const std::uint32_t rows = read_be32(img, 8, images_path);
  const std::uint32_t cols = read_be32(img, 12, images_path);
  const std::uint32_t label_count = read_be32(lab, 4, labels_path);
  if (count != label_count)
    throw CountMismatch(std::to_string(count) + " images vs " + std::to_string(label_count) + " labels");
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  if (img.size() < 16 + pixels * count) throw TruncatedFile(images_path.string() + ": pixel data cut short");
  if (lab.size() < 8 + static_cast<std::size_t>(count)) throw TruncatedFile(labels_path.string() + ": labels cut short");

  LabeledDigitSet set;
  set.images.reserve(count);
  set.labels.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint8_t* p = img.data() + 16 + pixels * i;
    // Transposed files hold the image column by column, so the header's rows
    // are really the image width.
    const std::uint32_t width = transpose ? rows : cols, height = transpose ? cols : rows;
    std::vector<float> data(pixels);
    for (std::uint32_t y = 0; y < height; ++y)
      for (std::uint32_t x = 0; x < width; ++x) {
        const std::uint8_t v = transpose ? p[x * cols + y] : p[y * cols + x];
        data[y * width + x] = static_cast<float>(v) / 255.0f;
      }
    set.images.emplace_back(static_cast<int>(width), static_cast<int>(height), std::move(data));
    set.labels.push_back(lab[8 + i]);
  }
  set.check();
  return set;
}

void write_idx(const LabeledDigitSet& set, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  set.check();
  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
  if (!img || !lab) throw TruncatedFile("cannot write IDX output");
  const int w = set.images.empty() ? 0 : set.images.front().width();
  const int h = set.images.empty() ? 0 : set.images.front().height();
  put_be32(img, kIdxImagesMagic);
  put_be32(img, static_cast<std::uint32_t>(set.size()));
  put_be32(img, static_cast<std::uint32_t>(h));
  put_be32(img, static_cast<std::uint32_t>(w));
  put_be32(lab, kIdxLabelsMagic);
  put_be32(lab, static_cast<std::uint32_t>(set.size()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.images[i].width() != w || set.images[i].height() != h)
      throw std::invalid_argument("IDX requires uniform image dimensions");
    const std::vector<std::uint8_t> bytes = set.images[i].to_bytes();
    img.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    const char l = static_cast<char>(set.labels[i]);
    lab.write(&l, 1);
  }
}

DatasetFiles mnist_files(const std::filesystem::path& dir) {
  return {dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte",
          dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte"};
}

DatasetFiles emnist_digit_files(const std::filesystem::path& dir) {
  return {dir / "emnist-digits-train-images-idx3-ubyte", dir / "emnist-digits-train-labels-idx1-ubyte",
          dir / "emnist-digits-test-images-idx3-ubyte", dir / "emnist-digits-test-labels-idx1-ubyte"};
}

}  // namespace formdigit
