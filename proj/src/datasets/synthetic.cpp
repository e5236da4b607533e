#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "formdigit/datasets.hpp"

namespace formdigit {

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

Split split(const LabeledDigitSet& set, double train_fraction, double val_fraction,
            double test_fraction, std::uint64_t seed) {
  if (train_fraction < 0 || val_fraction < 0 || test_fraction < 0 ||
      std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions must be non-negative and sum to 1");
  const std::vector<std::size_t> idx = shuffled_indices(set.size(), seed);
  const auto n = static_cast<double>(set.size());
  const std::size_t n_train = static_cast<std::size_t>(std::llround(n * train_fraction));
  const std::size_t n_val = std::min(set.size() - n_train, static_cast<std::size_t>(std::llround(n * val_fraction)));
  Split out;
  out.train = set.subset({idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train)});
  out.val = set.subset({idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                        idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val)});
  out.test = set.subset({idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end()});
  return out;
}

DatasetGlyphSource::DatasetGlyphSource(const LabeledDigitSet& set) : set_(set), by_class_(10) {
  for (std::size_t i = 0; i < set.size(); ++i)
    if (set.labels[i] >= 0 && set.labels[i] < 10) by_class_[set.labels[i]].push_back(i);
}

GrayImage DatasetGlyphSource::glyph(int digit, std::mt19937_64& rng) const {
  const auto& pool = by_class_.at(static_cast<std::size_t>(digit));
  if (pool.empty()) throw std::invalid_argument("glyph source has no samples of digit " + std::to_string(digit));
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  return set_.images[pool[pick(rng)]];
}

GrayImage pad_to_32(const GrayImage& img) {
  if (img.width() == 32 && img.height() == 32) return img;
  const int ox = (32 - img.width()) / 2, oy = (32 - img.height()) / 2;
  GrayImage out(32, 32, 0.0f);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.at(x + ox, y + oy) = img.at(x, y);
  return out;
}

LabeledDigitSet to_network_inputs(const LabeledDigitSet& set) {
  LabeledDigitSet out = set;
  for (GrayImage& im : out.images) im = pad_to_32(im);
  return out;
}

LabeledDigitSet synthesize_blank_crops(const FormTemplate& t, const RenderSpec& style,
                                       const GlyphSource& glyphs, std::size_t count,
                                       std::uint64_t seed) {
  const GrayImage page = render_blank_template(t, style);
  const std::vector<BoundingBox> cells = t.all_cells();
  if (cells.empty()) throw std::invalid_argument("template has no cells");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::normal_distribution<float> gauss(0.0f, 1.0f);

  LabeledDigitSet out;
  out.source = DatasetSource::Crops;
  out.num_classes = 2;
  const int margin = 12;
  for (std::size_t i = 0; i < count; ++i) {
    const BoundingBox& cell = cells[static_cast<std::size_t>(unit(rng) * cells.size()) % cells.size()];
    const bool digit = i % 2 == 1;
    const int rx0 = static_cast<int>(cell.x0) - margin, ry0 = static_cast<int>(cell.y0) - margin;
    const int rw = static_cast<int>(cell.width()) + 2 * margin, rh = static_cast<int>(cell.height()) + 2 * margin;
    GrayImage region = crop(page, rx0, ry0, rw, rh);
    const BoundingBox local{cell.x0 - rx0, cell.y0 - ry0, cell.x1 - rx0, cell.y1 - ry0};
    if (digit) {
      const int d = static_cast<int>(unit(rng) * 10) % 10;
      composite_glyph(region, glyphs.glyph(d, rng), local, uniform(-2, 2), uniform(-2, 2));
    }
    if (unit(rng) < style.border_bleed) {
      // Same stray-stroke model as the page renderer.
      const bool horizontal = unit(rng) < 0.5;
      const double inset = uniform(2.0, 5.0);
      const double from = uniform(0.0, 0.5), to = uniform(0.6, 1.0);
      const int thick = unit(rng) < 0.5 ? 1 : 2;
      for (int k = 0; k < thick; ++k) {
        if (horizontal) {
          const int y = static_cast<int>(local.y0 + inset) + k;
          for (int x = static_cast<int>(local.x0 + from * local.width()); x < local.x0 + to * local.width(); ++x)
            region.at(x, y) = std::min(region.at(x, y), 0.25f);
        } else {
          const int x = static_cast<int>(local.x1 - inset) - k;
          for (int y = static_cast<int>(local.y0 + from * local.height()); y < local.y0 + to * local.height(); ++y)
            region.at(x, y) = std::min(region.at(x, y), 0.25f);
        }
      }
    }
    const float sigma = static_cast<float>(uniform(0.0, std::max(0.05, style.noise_sigma)));
    for (float& v : region.pixels()) v += sigma * gauss(rng);
    region.clamp();

    // Small misregistration: shift, scale and rotation about the cell centre.
    const double shift_x = uniform(-1.5, 1.5), shift_y = uniform(-1.5, 1.5);
    const double scale = uniform(0.98, 1.02), angle = uniform(-0.01, 0.01);
    const double cx = 0.5 * (local.x0 + local.x1), cy = 0.5 * (local.y0 + local.y1);
    const double ca = std::cos(angle) * scale, sa = std::sin(angle) * scale;
    GrayImage sample(32, 32);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const double u = local.x0 + (x + 0.5) * local.width() / 32 - cx;
        const double v = local.y0 + (y + 0.5) * local.height() / 32 - cy;
        sample.at(x, y) = bilinear_sample(region, cx + ca * u - sa * v + shift_x, cy + sa * u + ca * v + shift_y);
      }
    out.images.push_back(invert(sample));
    out.labels.push_back(digit ? 1 : 0);
  }
  return out;
}

}  // namespace formdigit
