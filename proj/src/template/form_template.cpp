#include <fstream>
#include <json.hpp>

#include "formdigit/errors.hpp"
#include "formdigit/form_template.hpp"

namespace formdigit {

using nlohmann::json;

std::size_t FormTemplate::cell_count() const {
  std::size_t n = 0;
  for (const PhoneRow& r : rows) n += r.cells.size();
  return n;
}

std::vector<BoundingBox> FormTemplate::all_cells() const {
  std::vector<BoundingBox> out;
  out.reserve(cell_count());
  for (const PhoneRow& r : rows) out.insert(out.end(), r.cells.begin(), r.cells.end());
  return out;
}

void validate(const FormTemplate& t, int digits_per_row) {
  if (t.page_width <= 0 || t.page_height <= 0) throw InvalidTemplate("page size must be positive");
  const std::vector<BoundingBox> cells = t.all_cells();
  for (const PhoneRow& row : t.rows) {
    if (static_cast<int>(row.cells.size()) != digits_per_row)
      throw InvalidTemplate("row " + std::to_string(row.row_index) + " has " +
                            std::to_string(row.cells.size()) + " cells");
    for (std::size_t i = 0; i < row.cells.size(); ++i) {
      const BoundingBox& b = row.cells[i];
      if (!b.valid()) throw InvalidTemplate("degenerate cell box");
      if (b.x0 < 0 || b.y0 < 0 || b.x1 > t.page_width || b.y1 > t.page_height)
        throw InvalidTemplate("cell box outside page");
      if (i > 0 && row.cells[i - 1].x0 >= b.x0) throw InvalidTemplate("cells not ordered by x0");
    }
  }
  for (std::size_t i = 0; i < cells.size(); ++i)
    for (std::size_t j = i + 1; j < cells.size(); ++j) {
      const double ix = std::min(cells[i].x1, cells[j].x1) - std::max(cells[i].x0, cells[j].x0);
      const double iy = std::min(cells[i].y1, cells[j].y1) - std::max(cells[i].y0, cells[j].y0);
      if (ix > 0 && iy > 0) throw InvalidTemplate("cell boxes overlap");
    }
}

FormTemplate make_default_template(const std::string& id, BorderStyle style, int rows) {
  FormTemplate t;
  t.id = id;
  t.page_width = 1654;
  t.page_height = 2339;
  const bool joined = style == BorderStyle::DarkJoined;
  const int cell = joined ? 72 : 66;
  const int pitch = joined ? 72 : 76;
  const int row_pitch = 120;
  const int x_start = 560;
  const int y_start = 380;
  for (int r = 0; r < rows; ++r) {
    PhoneRow row;
    row.row_index = r;
    const int y0 = y_start + r * row_pitch;
    for (int c = 0; c < kDigitsPerRow; ++c) {
      const int x0 = x_start + c * pitch;
      row.cells.push_back({double(x0), double(y0), double(x0 + cell), double(y0 + cell)});
    }
    t.rows.push_back(std::move(row));
  }
  t.reference_image_path = "reference.png";
  return t;
}

namespace {

json box_to_json(const BoundingBox& b, bool integral) {
  if (integral)
    return {{"x0", std::lround(b.x0)}, {"y0", std::lround(b.y0)}, {"x1", std::lround(b.x1)},
            {"y1", std::lround(b.y1)}};
  return {{"x0", b.x0}, {"y0", b.y0}, {"x1", b.x1}, {"y1", b.y1}};
}

BoundingBox box_from_json(const json& j) {
  return {j.at("x0").get<double>(), j.at("y0").get<double>(), j.at("x1").get<double>(),
          j.at("y1").get<double>()};
}

}  // namespace

FormTemplate template_from_json(const json& j) {
  FormTemplate t;
  t.id = j.at("id").get<std::string>();
  t.page_width = j.at("page_width").get<int>();
  t.page_height = j.at("page_height").get<int>();
  for (const json& r : j.at("rows")) {
    PhoneRow row;
    row.row_index = r.at("row_index").get<int>();
    for (const json& c : r.at("cells")) row.cells.push_back(box_from_json(c));
    t.rows.push_back(std::move(row));
  }
  t.reference_image_path = j.value("reference_image", std::string());
  return t;
}

json template_to_json(const FormTemplate& t) {
  json rows = json::array();
  for (const PhoneRow& r : t.rows) {
    json cells = json::array();
    for (const BoundingBox& b : r.cells) cells.push_back(box_to_json(b, true));
    rows.push_back({{"row_index", r.row_index}, {"cells", cells}});
  }
  return {{"id", t.id},
          {"page_width", t.page_width},
          {"page_height", t.page_height},
          {"rows", rows},
          {"reference_image", t.reference_image_path}};
}

FormTemplate load_template(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidTemplate("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidTemplate(path.string() + ": " + e.what());
  }
  FormTemplate t = template_from_json(j);
  validate(t);
  // Relative reference paths resolve against the template file's directory.
  if (!t.reference_image_path.empty() && std::filesystem::path(t.reference_image_path).is_relative())
    t.reference_image_path = (path.parent_path() / t.reference_image_path).string();
  return t;
}

void save_template(const FormTemplate& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InvalidTemplate("cannot write " + path.string());
  out << template_to_json(t).dump(2) << '\n';
}

int GroundTruth::cell_label(std::size_t row, std::size_t cell) const {
  if (row >= digits.size() || !digits[row]) return -1;
  return (*digits[row])[cell] - '0';
}

json ground_truth_to_json(const GroundTruth& gt, const FormTemplate& t) {
  json rows = json::array();
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    json digits = nullptr;
    if (r < gt.digits.size() && gt.digits[r]) digits = *gt.digits[r];
    rows.push_back({{"row_index", t.rows[r].row_index}, {"digits", digits}});
  }
  json boxes = json::array();
  for (const BoundingBox& b : gt.true_boxes) boxes.push_back(box_to_json(b, false));
  return {{"form", gt.form}, {"rows", rows}, {"true_boxes", boxes}};
}

GroundTruth ground_truth_from_json(const json& j) {
  GroundTruth gt;
  gt.form = j.at("form").get<std::string>();
  for (const json& r : j.at("rows")) {
    if (r.at("digits").is_null())
      gt.digits.emplace_back(std::nullopt);
    else
      gt.digits.emplace_back(r.at("digits").get<std::string>());
  }
  for (const json& b : j.at("true_boxes")) gt.true_boxes.push_back(box_from_json(b));
  return gt;
}

void check_phone_digits(const std::string& s) {
  if (s.size() != static_cast<std::size_t>(kDigitsPerRow))
    throw MalformedDigits("expected 10 digits, got \"" + s + "\"");
  for (char c : s)
    if (c < '0' || c > '9') throw MalformedDigits("non-digit character in \"" + s + "\"");
}

void RenderSpec::validate() const {
  if (corner_jitter < 0 || corner_jitter > 0.05)
    throw std::invalid_argument("corner_jitter must lie in [0, 0.05]");
  if (noise_sigma < 0 || noise_sigma > 0.2) throw std::invalid_argument("noise_sigma must lie in [0, 0.2]");
  if (crop_shift < 0 || decoys < 0) throw std::invalid_argument("crop_shift and decoys must be >= 0");
}

}  // namespace formdigit
