#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "formdigit/geometry.hpp"
#include "formdigit/imaging.hpp"

namespace formdigit {

inline constexpr int kDigitsPerRow = 10;

struct PhoneRow {
  int row_index = 0;
  std::vector<BoundingBox> cells;  // left-to-right by x0
};

enum class BorderStyle { DarkJoined, LightSeparated };

struct FormTemplate {
  std::string id;
  int page_width = 1654;
  int page_height = 2339;
  std::vector<PhoneRow> rows;
  std::string reference_image_path;

  std::size_t cell_count() const;
  // Cells in row-major order, matching the ground-truth true_boxes layout.
  std::vector<BoundingBox> all_cells() const;
};

// Throws InvalidTemplate when a row has the wrong cell count, cells are out of
// order, leave the page, or overlap with positive area.
void validate(const FormTemplate& t, int digits_per_row = kDigitsPerRow);

// A 16-row phone-number form at A4 / 200 dpi. Dark-joined rows share cell edges;
// light-separated rows leave a gap between cells.
FormTemplate make_default_template(const std::string& id, BorderStyle style, int rows = 16);

FormTemplate template_from_json(const nlohmann::json& j);
nlohmann::json template_to_json(const FormTemplate& t);
FormTemplate load_template(const std::filesystem::path& path);
void save_template(const FormTemplate& t, const std::filesystem::path& path);

struct RenderSpec {
  double corner_jitter = 0.01;  // fraction of page dimension, [0, 0.05]
  double noise_sigma = 0.03;    // luminance, [0, 0.2]
  BorderStyle border_style = BorderStyle::DarkJoined;
  bool corner_marks = false;
  int crop_shift = 0;  // max scanner crop offset, pixels
  std::uint64_t seed = 42;
  double digit_jitter = 2.0;        // +- pixels of glyph placement
  double border_bleed = 0.15;       // probability a cell gets an extra stroke along one edge
  int decoys = 0;                   // cross-row duplicated landmark patches (registration stress)

  void validate() const;
};

// Supplies 28x28 digit glyphs with MNIST polarity (ink = 1, background = 0).
class GlyphSource {
 public:
  virtual ~GlyphSource() = default;
  virtual GrayImage glyph(int digit, std::mt19937_64& rng) const = 0;
};

struct GroundTruth {
  std::string form;
  // One entry per template row; nullopt means the row was left blank.
  std::vector<std::optional<std::string>> digits;
  std::vector<BoundingBox> true_boxes;  // scan coordinates, row-major

  // Per-cell label: 0-9, or -1 for blank.
  int cell_label(std::size_t row, std::size_t cell) const;
};

nlohmann::json ground_truth_to_json(const GroundTruth& gt, const FormTemplate& t);
GroundTruth ground_truth_from_json(const nlohmann::json& j);

struct RenderedScan {
  GrayImage image;
  GroundTruth truth;
  Matrix3 scan_from_template;  // the distortion that was applied
};

GrayImage render_blank_template(const FormTemplate& t, const RenderSpec& style);

RenderedScan render_filled_scan(const FormTemplate& t,
                                const std::vector<std::optional<std::string>>& digits,
                                const GlyphSource& glyphs, const RenderSpec& spec,
                                const std::string& form_id = "form");

// Throws MalformedDigits unless s is exactly ten characters 0-9.
void check_phone_digits(const std::string& s);

// Composites an ink-high glyph dark-on-light into box (template coordinates),
// scaled so the 28-px glyph frame spans 28/32 of the box.
void composite_glyph(GrayImage& page, const GrayImage& glyph, const BoundingBox& box, double dx,
                     double dy);

}  // namespace formdigit
