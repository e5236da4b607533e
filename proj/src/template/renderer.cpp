#include <algorithm>
#include <cmath>
#include <functional>

#include "formdigit/errors.hpp"
#include "formdigit/form_template.hpp"

namespace formdigit {

namespace {

constexpr float kInk = 0.08f;

void fill_rect(GrayImage& img, int x0, int y0, int x1, int y1, float lum) {
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, img.width());
  y1 = std::min(y1, img.height());
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) img.at(x, y) = std::min(img.at(x, y), lum);
}

// Outline of a box with the stroke centred on its edges.
void stroke_box(GrayImage& img, const BoundingBox& b, int width, float lum) {
  const int h0 = width / 2, h1 = width - width / 2;
  const int x0 = static_cast<int>(std::lround(b.x0)), x1 = static_cast<int>(std::lround(b.x1));
  const int y0 = static_cast<int>(std::lround(b.y0)), y1 = static_cast<int>(std::lround(b.y1));
  fill_rect(img, x0 - h0, y0 - h0, x1 + h1, y0 + h1, lum);
  fill_rect(img, x0 - h0, y1 - h0, x1 + h1, y1 + h1, lum);
  fill_rect(img, x0 - h0, y0 - h0, x0 + h1, y1 + h1, lum);
  fill_rect(img, x1 - h0, y0 - h0, x1 + h1, y1 + h1, lum);
}

void stroke_segment(GrayImage& img, Point2 a, Point2 b, double half_width, float lum) {
  const int x0 = static_cast<int>(std::floor(std::min(a.x, b.x) - half_width - 1));
  const int x1 = static_cast<int>(std::ceil(std::max(a.x, b.x) + half_width + 1));
  const int y0 = static_cast<int>(std::floor(std::min(a.y, b.y) - half_width - 1));
  const int y1 = static_cast<int>(std::ceil(std::max(a.y, b.y) + half_width + 1));
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  for (int y = std::max(y0, 0); y <= std::min(y1, img.height() - 1); ++y)
    for (int x = std::max(x0, 0); x <= std::min(x1, img.width() - 1); ++x) {
      const double t = len2 > 0 ? std::clamp(((x - a.x) * dx + (y - a.y) * dy) / len2, 0.0, 1.0) : 0.0;
      const double ex = x - (a.x + t * dx), ey = y - (a.y + t * dy);
      if (ex * ex + ey * ey <= half_width * half_width) img.at(x, y) = std::min(img.at(x, y), lum);
    }
}

// 5x7 bitmap digits, one row per byte, MSB-first in the low five bits.
constexpr unsigned char kFont[10][7] = {
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}, {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}, {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}, {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}, {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}, {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}};

void draw_number(GrayImage& img, int value, int x, int y, int scale) {
  const std::string text = std::to_string(value);
  for (char ch : text) {
    const auto& glyph = kFont[ch - '0'];
    for (int r = 0; r < 7; ++r)
      for (int c = 0; c < 5; ++c)
        if (glyph[r] & (0x10 >> c))
          fill_rect(img, x + c * scale, y + r * scale, x + (c + 1) * scale, y + (r + 1) * scale, kInk);
    x += 6 * scale;
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

struct LabelPatch {
  int x0, y0, x1, y1;
};

// Region holding a row's printed index, to the left of its first cell.
LabelPatch row_label_region(const PhoneRow& row) {
  const BoundingBox& first = row.cells.front();
  const int x1 = static_cast<int>(first.x0) - 24;
  const int y0 = static_cast<int>(first.y0);
  return {x1 - 120, y0, x1, y0 + static_cast<int>(first.height())};
}

void draw_fiducials(GrayImage& img) {
  const int s = 48, inset = 60, w = img.width(), h = img.height();
  const int xs[4] = {inset, w - inset - s, inset, w - inset - s};
  const int ys[4] = {inset, inset, h - inset - s, h - inset - s};
  for (int i = 0; i < 4; ++i) {
    fill_rect(img, xs[i], ys[i], xs[i] + s, ys[i] + s, kInk);
    // Distinct white cut-outs so each corner has its own signature.
    switch (i) {
      case 0: fill_rect(img, xs[i] + 14, ys[i] + 14, xs[i] + 34, ys[i] + 34, 1.0f); break;
      case 1: fill_rect(img, xs[i] + 20, ys[i] + 8, xs[i] + 28, ys[i] + 40, 1.0f); break;
      case 2: fill_rect(img, xs[i] + 8, ys[i] + 20, xs[i] + 40, ys[i] + 28, 1.0f); break;
      default: fill_rect(img, xs[i] + 8, ys[i] + 8, xs[i] + 22, ys[i] + 22, 1.0f); break;
    }
  }
}

void draw_header(GrayImage& img, const FormTemplate& t) {
  const int x0 = 200, x1 = img.width() - 200, y0 = 140, y1 = 300;
  stroke_box(img, {double(x0), double(y0), double(x1), double(y1)}, 4, kInk);
  // Pseudo-barcode seeded by the template id.
  std::uint64_t h = fnv1a(t.id);
  int x = x0 + 30;
  while (x < x0 + 700) {
    const int bar = 4 + static_cast<int>(h % 4) * 4;
    const int gap = 6 + static_cast<int>((h >> 2) % 3) * 5;
    const int top = y0 + 30 + static_cast<int>((h >> 4) % 3) * 10;
    fill_rect(img, x, top, x + bar, y1 - 30, kInk);
    x += bar + gap;
    h = h * 6364136223846793005ull + 1442695040888963407ull;
  }
  // Two title blocks on the right of the header.
  fill_rect(img, x1 - 420, y0 + 30, x1 - 260, y0 + 70, kInk);
  fill_rect(img, x1 - 230, y0 + 30, x1 - 40, y0 + 56, kInk);
  fill_rect(img, x1 - 420, y0 + 95, x1 - 120, y0 + 115, kInk);
  draw_number(img, static_cast<int>(fnv1a(t.id) % 9000 + 1000), x1 - 400, y0 + 122, 3);
}

// Printed corner marks vary slightly in size, weight and angle from mark to
// mark; the variation is a fixed function of the mark's position on the form.
void draw_corner_mark(GrayImage& img, Point2 c, bool cross, std::uint64_t variant) {
  const double arm = 10.0 + static_cast<double>(variant % 7);
  const double half = 1.0 + 0.25 * static_cast<double>((variant >> 3) % 4);
  const double angle = (static_cast<double>((variant >> 6) % 7) - 3.0) * 0.09 + (cross ? 0.785398 : 0.0);
  const double ca = std::cos(angle) * arm, sa = std::sin(angle) * arm;
  stroke_segment(img, {c.x - ca, c.y - sa}, {c.x + ca, c.y + sa}, half, 0.2f);
  stroke_segment(img, {c.x + sa, c.y - ca}, {c.x - sa, c.y + ca}, half, 0.2f);
  // A dot in one of the four quadrants.
  const int q = static_cast<int>((variant >> 10) % 4);
  const double r = 5.0 + static_cast<double>((variant >> 12) % 4);
  const int dx = static_cast<int>(std::lround(c.x + (q % 2 ? r : -r)));
  const int dy = static_cast<int>(std::lround(c.y + (q / 2 ? r : -r)));
  fill_rect(img, dx - 1, dy - 1, dx + 2, dy + 2, 0.2f);
  const int q2 = (q + 1 + static_cast<int>((variant >> 14) % 3)) % 4;
  const double r2 = 9.0 + static_cast<double>((variant >> 16) % 5);
  const int ex = static_cast<int>(std::lround(c.x + (q2 % 2 ? r2 : -r2)));
  const int ey = static_cast<int>(std::lround(c.y + (q2 / 2 ? r2 : -r2)));
  fill_rect(img, ex - 1, ey - 1, ex + 2, ey + 2, 0.2f);
}

std::uint64_t mark_variant(int row, int col, int corner) {
  std::uint64_t h = 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(row * 64 + col * 2 + corner + 1);
  h ^= h >> 29;
  h *= 0xBF58476D1CE4E5B9ull;
  return h ^ (h >> 32);
}

std::vector<Point2> corner_mark_positions(const PhoneRow& row, bool joined) {
  const double off = joined ? 0.0 : -5.0;
  std::vector<Point2> out;
  for (const BoundingBox& c : row.cells) {
    out.push_back({c.x0 + off, c.y0 + off});
    out.push_back({c.x1 - off, c.y1 - off});
  }
  return out;
}

GrayImage warp_page(const GrayImage& page, const Matrix3& scan_from_template) {
  const Matrix3 back = inverse(scan_from_template);
  GrayImage out(page.width(), page.height());
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) {
      const Point2 p = apply(back, {double(x), double(y)});
      out.at(x, y) = bilinear_sample(page, p.x, p.y);
    }
  return out;
}

}  // namespace

GrayImage render_blank_template(const FormTemplate& t, const RenderSpec& style) {
  GrayImage page(t.page_width, t.page_height, 1.0f);
  if (t.rows.empty()) return page;
  draw_fiducials(page);
  draw_header(page, t);
  const bool joined = style.border_style == BorderStyle::DarkJoined;
  const int line = joined ? 4 : 2;
  const float lum = joined ? kInk : 0.55f;
  for (const PhoneRow& row : t.rows) {
    const LabelPatch lp = row_label_region(row);
    draw_number(page, row.row_index + 1, lp.x0 + 30, lp.y0 + 15, 6);
    for (const BoundingBox& cell : row.cells) stroke_box(page, cell, line, lum);
    if (joined) {
      // Heavier outer frame around the joined strip.
      const BoundingBox strip{row.cells.front().x0, row.cells.front().y0, row.cells.back().x1,
                              row.cells.back().y1};
      stroke_box(page, strip, 6, kInk);
    }
    if (style.corner_marks) {
      const bool cross = row.row_index % 2 == 1;
      const std::vector<Point2> marks = corner_mark_positions(row, joined);
      for (std::size_t m = 0; m < marks.size(); ++m)
        draw_corner_mark(page, marks[m], cross,
                         mark_variant(row.row_index, static_cast<int>(m / 2), static_cast<int>(m % 2)));
    }
  }
  return page;
}

void composite_glyph(GrayImage& page, const GrayImage& glyph, const BoundingBox& box, double dx,
                     double dy) {
  const GrayImage dark = invert(glyph);
  const double frame_w = box.width() * 28.0 / 32.0;
  const double frame_h = box.height() * 28.0 / 32.0;
  const double fx0 = box.x0 + (box.width() - frame_w) / 2.0 + dx;
  const double fy0 = box.y0 + (box.height() - frame_h) / 2.0 + dy;
  const double sx = frame_w / glyph.width();
  const double sy = frame_h / glyph.height();
  const int px0 = std::max(0, static_cast<int>(std::floor(fx0)));
  const int py0 = std::max(0, static_cast<int>(std::floor(fy0)));
  const int px1 = std::min(page.width(), static_cast<int>(std::ceil(fx0 + frame_w)) + 1);
  const int py1 = std::min(page.height(), static_cast<int>(std::ceil(fy0 + frame_h)) + 1);
  for (int y = py0; y < py1; ++y)
    for (int x = px0; x < px1; ++x) {
      // Pixel centres sit on integer coordinates; glyph pixel i is centred at
      // fx0 + (i + 0.5) * sx.
      const double gx = (x - fx0) / sx - 0.5;
      const double gy = (y - fy0) / sy - 0.5;
      page.at(x, y) *= bilinear_sample(dark, gx, gy);
    }
}

RenderedScan render_filled_scan(const FormTemplate& t,
                                const std::vector<std::optional<std::string>>& digits,
                                const GlyphSource& glyphs, const RenderSpec& spec,
                                const std::string& form_id) {
  spec.validate();
  for (const auto& d : digits)
    if (d) check_phone_digits(*d);
  if (digits.size() > t.rows.size()) throw MalformedDigits("more digit rows than template rows");

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  GrayImage page = render_blank_template(t, spec);

  GroundTruth truth;
  truth.form = form_id;
  truth.digits.assign(t.rows.size(), std::nullopt);
  for (std::size_t r = 0; r < digits.size(); ++r) truth.digits[r] = digits[r];

  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const PhoneRow& row = t.rows[r];
    for (std::size_t c = 0; c < row.cells.size(); ++c) {
      const BoundingBox& cell = row.cells[c];
      if (truth.digits[r]) {
        const GrayImage g = glyphs.glyph((*truth.digits[r])[c] - '0', rng);
        composite_glyph(page, g, cell, uniform(-spec.digit_jitter, spec.digit_jitter),
                        uniform(-spec.digit_jitter, spec.digit_jitter));
      }
      if (unit(rng) < spec.border_bleed) {
        // A stray stroke hugging one cell edge, as when a pen slips on the grid line.
        const int edge = static_cast<int>(unit(rng) * 4);
        const double inset = uniform(2.0, 5.0);
        const double from = uniform(0.0, 0.5), to = uniform(0.6, 1.0);
        const double half = uniform(0.6, 1.2);
        Point2 a, b;
        switch (edge) {
          case 0: a = {cell.x0 + from * cell.width(), cell.y0 + inset}; b = {cell.x0 + to * cell.width(), cell.y0 + inset}; break;
          case 1: a = {cell.x0 + from * cell.width(), cell.y1 - inset}; b = {cell.x0 + to * cell.width(), cell.y1 - inset}; break;
          case 2: a = {cell.x0 + inset, cell.y0 + from * cell.height()}; b = {cell.x0 + inset, cell.y0 + to * cell.height()}; break;
          default: a = {cell.x1 - inset, cell.y0 + from * cell.height()}; b = {cell.x1 - inset, cell.y0 + to * cell.height()}; break;
        }
        stroke_segment(page, a, b, half, 0.25f);
      }
    }
  }

  // Decoys: the row label and corner-mark neighbourhoods of the row two above
  // (or below) pasted over a row's own, the same offset for the whole form.
  // Each decoy's best template match sits on a different row, and together
  // they agree on a vertically shifted transform, the way a periodic grid
  // can lock onto its neighbour.
  if (spec.decoys > 0 && t.rows.size() >= 4) {
    const GrayImage clean = page;
    const bool joined = spec.border_style == BorderStyle::DarkJoined;
    const int n_rows = static_cast<int>(t.rows.size());
    const int offset = unit(rng) < 0.5 ? -2 : 2;
    std::vector<int> targets;
    for (int r = 0; r < n_rows; ++r)
      if (r - offset >= 0 && r - offset < n_rows) targets.push_back(r);
    std::shuffle(targets.begin(), targets.end(), rng);
    if (static_cast<int>(targets.size()) > spec.decoys) targets.resize(static_cast<std::size_t>(spec.decoys));
    auto paste = [&](int x0, int y0, int x1, int y1, int dy) {
      for (int y = std::max(y0, 0); y < std::min(y1, page.height()); ++y)
        for (int x = std::max(x0, 0); x < std::min(x1, page.width()); ++x)
          if (y + dy >= 0 && y + dy < page.height()) page.at(x, y + dy) = clean.at(x, y);
    };
    for (int dst : targets) {
      const PhoneRow& from = t.rows[static_cast<std::size_t>(dst - offset)];
      const int dy = static_cast<int>(std::lround(t.rows[static_cast<std::size_t>(dst)].cells.front().y0 -
                                                  from.cells.front().y0));
      const LabelPatch label = row_label_region(from);
      paste(label.x0, label.y0, label.x1, label.y1, dy);
      for (const Point2& m : corner_mark_positions(from, joined)) {
        const int mx = static_cast<int>(std::lround(m.x)), my = static_cast<int>(std::lround(m.y));
        paste(mx - 20, my - 20, mx + 21, my + 21, dy);
      }
    }
  }

  Matrix3 distortion = kIdentity3;
  const double jx = spec.corner_jitter * t.page_width;
  const double jy = spec.corner_jitter * t.page_height;
  const double sx = spec.crop_shift > 0 ? uniform(-spec.crop_shift, spec.crop_shift) : 0.0;
  const double sy = spec.crop_shift > 0 ? uniform(-spec.crop_shift, spec.crop_shift) : 0.0;
  if (jx > 0 || jy > 0 || sx != 0 || sy != 0) {
    const double w = t.page_width, h = t.page_height;
    const std::array<Point2, 4> src = {Point2{0, 0}, Point2{w, 0}, Point2{w, h}, Point2{0, h}};
    std::array<Point2, 4> dst{};
    for (int i = 0; i < 4; ++i)
      dst[i] = {src[i].x + sx + uniform(-jx, jx), src[i].y + sy + uniform(-jy, jy)};
    distortion = homography_from_4(src, dst);
  }

  RenderedScan out;
  out.image = distortion == kIdentity3 ? page : warp_page(page, distortion);
  if (spec.noise_sigma > 0) {
    std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.noise_sigma));
    for (float& v : out.image.pixels()) v += noise(rng);
    out.image.clamp();
  }
  for (const BoundingBox& b : t.all_cells())
    truth.true_boxes.push_back(distortion == kIdentity3 ? b : map_box(distortion, b));
  out.truth = std::move(truth);
  out.scan_from_template = distortion;
  return out;
}

}  // namespace formdigit
