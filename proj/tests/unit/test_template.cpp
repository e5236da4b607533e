#include <doctest.h>

#include "formdigit/errors.hpp"
#include "formdigit/form_template.hpp"
#include "support.hpp"

using namespace formdigit;

namespace {

RenderSpec clean_spec() {
  RenderSpec s;
  s.corner_jitter = 0;
  s.noise_sigma = 0;
  return s;
}

std::vector<std::optional<std::string>> some_rows(std::size_t n) {
  std::vector<std::optional<std::string>> rows(n);
  rows[0] = "0123456789";
  if (n > 3) rows[3] = "9876501234";
  return rows;
}

}  // namespace

TEST_SUITE("template") {
  TEST_CASE("default template is valid for both styles") {
    for (BorderStyle style : {BorderStyle::DarkJoined, BorderStyle::LightSeparated}) {
      const FormTemplate t = make_default_template("f", style);
      CHECK_NOTHROW(validate(t));
      CHECK(t.rows.size() == 16);
      CHECK(t.cell_count() == 160);
      for (const PhoneRow& r : t.rows)
        for (std::size_t c = 1; c < r.cells.size(); ++c) CHECK(r.cells[c - 1].x0 < r.cells[c].x0);
    }
  }

  TEST_CASE("dark rows share cell edges, light rows leave gaps") {
    const PhoneRow dark = make_default_template("f", BorderStyle::DarkJoined).rows[0];
    const PhoneRow light = make_default_template("f", BorderStyle::LightSeparated).rows[0];
    CHECK(dark.cells[0].x1 == dark.cells[1].x0);
    CHECK(light.cells[0].x1 < light.cells[1].x0);
  }

  TEST_CASE("validation rejects broken templates") {
    FormTemplate t = make_default_template("f", BorderStyle::DarkJoined, 2);
    FormTemplate short_row = t;
    short_row.rows[0].cells.pop_back();
    CHECK_THROWS_AS(validate(short_row), InvalidTemplate);
    FormTemplate off_page = t;
    off_page.rows[1].cells.back().x1 = t.page_width + 5;
    CHECK_THROWS_AS(validate(off_page), InvalidTemplate);
    FormTemplate overlap = t;
    overlap.rows[1].cells = overlap.rows[0].cells;
    CHECK_THROWS_AS(validate(overlap), InvalidTemplate);
    FormTemplate unordered = t;
    std::swap(unordered.rows[0].cells[2], unordered.rows[0].cells[3]);
    CHECK_THROWS_AS(validate(unordered), InvalidTemplate);
  }

  TEST_CASE("template JSON round trip") {
    TempDir dir;
    const FormTemplate t = make_default_template("form-2", BorderStyle::LightSeparated, 4);
    save_template(t, dir / "t.json");
    const FormTemplate back = load_template(dir / "t.json");
    CHECK(back.id == "form-2");
    CHECK(back.all_cells() == t.all_cells());
    CHECK(back.page_width == t.page_width);
  }

  TEST_CASE("zero rows render a white page") {
    FormTemplate t = make_default_template("f", BorderStyle::DarkJoined, 1);
    t.rows.clear();
    const GrayImage page = render_blank_template(t, clean_spec());
    CHECK(page.width() == t.page_width);
    for (float v : page.pixels()) REQUIRE(v == 1.0f);
  }

  TEST_CASE("dark style draws a shared edge line between cells") {
    const FormTemplate t = make_default_template("f", BorderStyle::DarkJoined, 1);
    const GrayImage page = render_blank_template(t, clean_spec());
    const BoundingBox& c = t.rows[0].cells[4];
    const int x = static_cast<int>(c.x1), y = static_cast<int>((c.y0 + c.y1) / 2);
    CHECK(page.at(x, y) < 0.3f);
    // cell interiors stay white
    CHECK(page.at(static_cast<int>((c.x0 + c.x1) / 2), y) == 1.0f);
  }

  TEST_CASE("corner marks put ink where plain pages have none") {
    const FormTemplate t = make_default_template("f", BorderStyle::DarkJoined, 2);
    RenderSpec with = clean_spec(), without = clean_spec();
    with.corner_marks = true;
    const GrayImage a = render_blank_template(t, with), b = render_blank_template(t, without);
    std::size_t extra = 0;
    for (std::size_t i = 0; i < a.pixels().size(); ++i) extra += a.pixels()[i] < 0.5f && b.pixels()[i] >= 0.5f;
    CHECK(extra > 100);
  }

  TEST_CASE("identity distortion keeps true boxes on the template") {
    const FormTemplate t = make_default_template("f", BorderStyle::DarkJoined, 4);
    StrokeGlyphs glyphs;
    const RenderedScan s = render_filled_scan(t, some_rows(4), glyphs, clean_spec());
    const auto cells = t.all_cells();
    REQUIRE(s.truth.true_boxes.size() == cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) CHECK(iou(s.truth.true_boxes[i], cells[i]) == doctest::Approx(1.0));
  }

  TEST_CASE("jitter moves at least one box") {
    const FormTemplate t = make_default_template("f", BorderStyle::DarkJoined, 4);
    StrokeGlyphs glyphs;
    RenderSpec spec = clean_spec();
    spec.corner_jitter = 0.01;
    const RenderedScan s = render_filled_scan(t, some_rows(4), glyphs, spec);
    const auto cells = t.all_cells();
    bool moved = false;
    for (std::size_t i = 0; i < cells.size(); ++i) moved |= !(s.truth.true_boxes[i] == cells[i]);
    CHECK(moved);
  }

  TEST_CASE("rendering is deterministic per seed") {
    const FormTemplate t = make_default_template("f", BorderStyle::DarkJoined, 4);
    StrokeGlyphs glyphs;
    RenderSpec spec;
    spec.corner_marks = true;
    spec.decoys = 4;
    const RenderedScan a = render_filled_scan(t, some_rows(4), glyphs, spec);
    const RenderedScan b = render_filled_scan(t, some_rows(4), glyphs, spec);
    CHECK(a.image == b.image);
    spec.seed = 43;
    CHECK_FALSE(render_filled_scan(t, some_rows(4), glyphs, spec).image == a.image);
  }

  TEST_CASE("ground truth labels") {
    const FormTemplate t = make_default_template("f", BorderStyle::DarkJoined, 4);
    StrokeGlyphs glyphs;
    const RenderedScan empty = render_filled_scan(t, std::vector<std::optional<std::string>>(4), glyphs, clean_spec());
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 10; ++c) CHECK(empty.truth.cell_label(r, c) == -1);
    const RenderedScan s = render_filled_scan(t, some_rows(4), glyphs, clean_spec());
    CHECK(s.truth.cell_label(0, 7) == 7);
    CHECK(s.truth.cell_label(3, 0) == 9);
    CHECK(s.truth.cell_label(1, 0) == -1);
    const GroundTruth back = ground_truth_from_json(ground_truth_to_json(s.truth, t));
    CHECK(back.digits == s.truth.digits);
    CHECK(back.true_boxes.size() == s.truth.true_boxes.size());
  }

  TEST_CASE("malformed digit strings") {
    const FormTemplate t = make_default_template("f", BorderStyle::DarkJoined, 2);
    StrokeGlyphs glyphs;
    for (const char* bad : {"12345", "12345678901", "12345a7890", "-123456789"}) {
      std::vector<std::optional<std::string>> rows(2);
      rows[1] = bad;
      CHECK_THROWS_AS(render_filled_scan(t, rows, glyphs, clean_spec()), MalformedDigits);
    }
    CHECK_NOTHROW(check_phone_digits("0000000000"));
  }

  TEST_CASE("render spec ranges") {
    RenderSpec s;
    s.corner_jitter = 0.06;
    CHECK_THROWS(s.validate());
    s.corner_jitter = 0.05;
    s.noise_sigma = 0.25;
    CHECK_THROWS(s.validate());
    s.noise_sigma = 0.2;
    CHECK_NOTHROW(s.validate());
  }
}
