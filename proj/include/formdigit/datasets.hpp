#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "formdigit/form_template.hpp"
#include "formdigit/imaging.hpp"

namespace formdigit {

enum class DatasetSource { Mnist, EmnistDigits, Synthetic, Crops };

// Images keep the polarity they were loaded with; IDX digit sets are ink-high
// (background 0), which is also the network input convention.
struct LabeledDigitSet {
  std::vector<GrayImage> images;
  std::vector<int> labels;
  DatasetSource source = DatasetSource::Mnist;
  int num_classes = 10;

  std::size_t size() const { return images.size(); }
  void check() const;  // throws CountMismatch / std::out_of_range on broken invariants
  LabeledDigitSet subset(const std::vector<std::size_t>& indices) const;
  LabeledDigitSet head(std::size_t n) const;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Big-endian IDX image/label pair. EMNIST stores images transposed; pass
// transpose=true to bring them upright.
LabeledDigitSet read_idx(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path, bool transpose = false);

void write_idx(const LabeledDigitSet& set, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

// Conventional file names inside a dataset directory.
struct DatasetFiles {
  std::filesystem::path train_images, train_labels, test_images, test_labels;
};
DatasetFiles mnist_files(const std::filesystem::path& dir);
DatasetFiles emnist_digit_files(const std::filesystem::path& dir);

struct Split {
  LabeledDigitSet train, val, test;
};

// Seeded shuffle then contiguous partition; fractions must sum to 1.
Split split(const LabeledDigitSet& set, double train_fraction, double val_fraction,
            double test_fraction, std::uint64_t seed);

// Permutation used by split(); exposed for tests.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

// 28x28 glyphs from an ink-high digit set, sampled uniformly per class.
class DatasetGlyphSource : public GlyphSource {
 public:
  explicit DatasetGlyphSource(const LabeledDigitSet& set);
  GrayImage glyph(int digit, std::mt19937_64& rng) const override;

 private:
  const LabeledDigitSet& set_;
  std::vector<std::vector<std::size_t>> by_class_;
};

// Pads an ink-high 28x28 image with background to 32x32 (2 px per side).
GrayImage pad_to_32(const GrayImage& img);

// MNIST-style set turned into 32x32 network inputs.
LabeledDigitSet to_network_inputs(const LabeledDigitSet& set);

// Balanced blank (label 0) / digit (label 1) cell crops in network polarity,
// produced the way the pipeline produces them: cell rendered with its grid
// lines, slightly misregistered, noised, resampled to 32x32 and inverted.
LabeledDigitSet synthesize_blank_crops(const FormTemplate& t, const RenderSpec& style,
                                       const GlyphSource& glyphs, std::size_t count,
                                       std::uint64_t seed);

}  // namespace formdigit
