#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "formdigit/errors.hpp"
#include "formdigit/pipeline.hpp"
#include "support.hpp"

using namespace formdigit;

namespace {

DigitizedRow row_of(int index, const std::string& digits, double conf) {
  DigitizedRow r;
  r.row_index = index;
  for (char c : digits) r.digits.push_back({c == '_' ? kBlankDigit : c - '0', conf, std::nullopt});
  r.all_blank = std::all_of(digits.begin(), digits.end(), [](char c) { return c == '_'; });
  r.phone_confidence = conf;
  return r;
}

// A corpus of `phones` single-row forms whose predictions are right with
// probability `d`, independently per digit. Wrong digits get low confidence.
void iid_corpus(int phones, double d, std::uint64_t seed, std::vector<DigitizedForm>& forms,
                std::vector<GroundTruth>& truth) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < phones; ++i) {
    std::string want, got;
    for (int c = 0; c < 10; ++c) {
      const int digit = static_cast<int>(rng() % 10);
      want.push_back(static_cast<char>('0' + digit));
      got.push_back(static_cast<char>('0' + (u(rng) < d ? digit : (digit + 1) % 10)));
    }
    DigitizedForm f;
    f.form_id = "f" + std::to_string(i);
    DigitizedRow r = row_of(0, got, 1.0);
    for (int c = 0; c < 10; ++c) r.digits[c].confidence = got[c] == want[c] ? 0.5 + 0.5 * u(rng) : 0.4 + 0.5 * u(rng);
    f.rows.push_back(r);
    forms.push_back(f);
    GroundTruth gt;
    gt.form = f.form_id;
    gt.digits = {want};
    truth.push_back(gt);
  }
}

struct Fixture {
  FormTemplate form = make_default_template("t", BorderStyle::DarkJoined, 6);
  RenderSpec style;
  PreparedTemplate prepared;
  StrokeGlyphs glyphs;

  Fixture() {
    style.corner_jitter = 0.005;
    style.border_bleed = 0;
    prepared = prepare_template(form, style);
  }
  RenderedScan scan(const std::vector<std::optional<std::string>>& rows, std::uint64_t seed) const {
    RenderSpec s = style;
    s.seed = seed;
    return render_filled_scan(form, rows, glyphs, s);
  }
};

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("segregation is a strict-inequality partition") {
    const std::vector<double> c = {0.95, 0.9, 0.3, 0.89999, 1.0, 0.0};
    const Segregation s = segregate(c, {0.9});
    CHECK(s.low == std::vector<std::size_t>{2, 3, 5});
    CHECK(s.high == std::vector<std::size_t>{0, 1, 4});
    CHECK(segregate(c, {0.0}).low.empty());
    std::vector<std::size_t> prev;
    for (double th : {0.1, 0.5, 0.9, 0.95, 0.999}) {
      const Segregation g = segregate(c, {th});
      CHECK(g.low.size() + g.high.size() == c.size());
      CHECK(std::includes(g.low.begin(), g.low.end(), prev.begin(), prev.end()));
      prev = g.low;
    }
  }

  TEST_CASE("digit strings") {
    CHECK(row_of(0, "0123456789", 1).digit_string() == "0123456789");
    CHECK(row_of(0, "__________", 1).digit_string() == "BLANK");
    CHECK(row_of(0, "01234_6789", 1).digit_string() == "01234_6789");
  }

  TEST_CASE("corrections") {
    DigitizedForm f;
    f.form_id = "x";
    f.rows = {row_of(0, "5551234567", 0.99), row_of(1, "__________", 1.0)};
    f.rows[0].digits[3].digit = 9;
    f.rows[0].digits[3].confidence = 0.4;
    CHECK(apply_corrections(f, {}).rows[0].digit_string() == "5559234567");

    ReviewItem fix;
    fix.id = review_item_id("x", 0, 3);
    fix.form_id = "x";
    fix.row_index = 0;
    fix.cell_index = 3;
    fix.operator_label = 1;
    const DigitizedForm once = apply_corrections(f, {fix});
    CHECK(once.rows[0].digit_string() == "5551234567");
    CHECK(once.rows[0].digits[3].confidence == 1.0);
    CHECK(once.rows[0].phone_confidence == doctest::Approx(0.99));
    const DigitizedForm twice = apply_corrections(once, {fix});
    CHECK(twice.rows[0].digit_string() == once.rows[0].digit_string());
    CHECK(twice.rows[1].digit_string() == "BLANK");

    ReviewItem bad = fix;
    bad.row_index = 7;
    CHECK_THROWS_AS(apply_corrections(f, {bad}), UnknownCell);
    bad = fix;
    bad.cell_index = 10;
    CHECK_THROWS_AS(apply_corrections(f, {bad}), UnknownCell);
    bad = fix;
    bad.form_id = "y";
    CHECK_THROWS_AS(apply_corrections(f, {bad}), UnknownCell);
  }

  TEST_CASE("a perfect predictor scores 100 percent everywhere") {
    std::vector<DigitizedForm> forms;
    std::vector<GroundTruth> truth;
    iid_corpus(50, 1.0, 1, forms, truth);
    const CorpusMetrics m = evaluate_corpus(forms, truth, {0.6, 0.9});
    CHECK(m.digit_accuracy == 1.0);
    CHECK(m.phone_accuracy == 1.0);
    for (const ThresholdRow& r : m.sweep) CHECK(r.overall_phone == 1.0);
  }

  TEST_CASE("independent digit errors give phone accuracy near d^10") {
    std::vector<DigitizedForm> forms;
    std::vector<GroundTruth> truth;
    iid_corpus(10000, 0.97, 2, forms, truth);
    const CorpusMetrics m = evaluate_corpus(forms, truth, {});
    CHECK(std::abs(m.phone_accuracy - std::pow(m.digit_accuracy, 10)) < 0.02);
  }

  TEST_CASE("oracle-corrected accuracy grows with the threshold") {
    std::vector<DigitizedForm> forms;
    std::vector<GroundTruth> truth;
    iid_corpus(2000, 0.95, 3, forms, truth);
    const CorpusMetrics m = evaluate_corpus(forms, truth, {0.5, 0.6, 0.7, 0.8, 0.9, 0.95});
    for (std::size_t i = 0; i < m.sweep.size(); ++i) {
      const ThresholdRow& r = m.sweep[i];
      CHECK(r.overall_digit >= m.digit_accuracy);
      CHECK(r.overall_digit == doctest::Approx(r.low_fraction + (1 - r.low_fraction) * r.high_accuracy));
      if (i) {
        CHECK(r.overall_digit >= m.sweep[i - 1].overall_digit);
        CHECK(r.overall_phone >= m.sweep[i - 1].overall_phone);
        CHECK(r.low_fraction >= m.sweep[i - 1].low_fraction);
      }
    }
    const std::string table = sweep_table(m);
    CHECK(table.rfind("threshold,percent_data,low_group_accuracy,high_group_accuracy,overall_digit,overall_phone\n", 0) == 0);
    CHECK(std::count(table.begin(), table.end(), '\n') == 7);
  }

  TEST_CASE("records CSV and details round trip") {
    TempDir dir;
    DigitizedForm a;
    a.form_id = "a";
    a.rows = {row_of(0, "0123456789", 0.97), row_of(1, "__________", 0.99), row_of(2, "01_3456789", 0.5)};
    DigitizedForm b;
    b.form_id = "b";
    b.status = FormStatus::Unprocessed;
    write_records_csv({a, b}, {0.9}, dir / "r.csv");
    std::ifstream in(dir / "r.csv");
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    REQUIRE(lines.size() == 5);
    CHECK(lines[0] == "form_id,row_index,digits,min_confidence,needs_review");
    CHECK(lines[1] == "a,0,0123456789,0.970000,false");
    CHECK(lines[2] == "a,1,BLANK,0.990000,false");
    CHECK(lines[3] == "a,2,01_3456789,0.500000,true");
    CHECK(lines[4] == "b,-1,UNPROCESSED,0.000000,true");
    const auto back = read_records_csv(dir / "r.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].rows[2].digit_string() == "01_3456789");
    CHECK(back[1].status == FormStatus::Unprocessed);

    write_details_jsonl({a, b}, dir / "d.jsonl");
    const auto det = read_details_jsonl(dir / "d.jsonl");
    CHECK(det[0].rows[0].digits[4].confidence == 0.97);
    CHECK(det[0].rows[1].all_blank);
    CHECK(det[1].status == FormStatus::Unprocessed);
  }

  TEST_CASE("blank form: every row blank, nothing to review") {
    Fixture fx;
    ModelSet models{ink_blank_classifier(), constant_digit_classifier(4, 0.5)};
    const RenderedScan s = fx.scan(std::vector<std::optional<std::string>>(6), 3);
    const DigitizeResult r = digitize_form(s.image, "blank", fx.prepared, models, {0.9});
    REQUIRE(r.form.status == FormStatus::Ok);
    REQUIRE(r.form.rows.size() == 6);
    for (const DigitizedRow& row : r.form.rows) CHECK(row.digit_string() == "BLANK");
    CHECK(r.review.empty());
  }

  TEST_CASE("filled rows are found and low-confidence digits routed to review") {
    Fixture fx;
    ModelSet models{ink_blank_classifier(), constant_digit_classifier(4, 0.5)};
    std::vector<std::optional<std::string>> rows(6);
    rows[1] = "0123456789";
    rows[4] = "9999999999";
    const RenderedScan s = fx.scan(rows, 4);
    const DigitizeResult r = digitize_form(s.image, "f", fx.prepared, models, {0.9});
    REQUIRE(r.form.status == FormStatus::Ok);
    CHECK(r.form.rows[1].digit_string() == "4444444444");
    CHECK(r.form.rows[4].digit_string() == "4444444444");
    CHECK(r.form.rows[0].all_blank);
    CHECK(r.form.rows[1].phone_confidence == doctest::Approx(0.5).epsilon(1e-5));
    REQUIRE(r.review.size() == 20);
    CHECK(r.review[0].id == "f:r1:c0");
    CHECK(r.review[0].crop.width() == 32);
    CHECK(r.review[0].confidence == doctest::Approx(0.5).epsilon(1e-5));
    // a confident model leaves nothing for review
    ModelSet sure{ink_blank_classifier(), constant_digit_classifier(4, 0.99)};
    CHECK(digitize_form(s.image, "f", fx.prepared, sure, {0.9}).review.empty());
  }

  TEST_CASE("unregistrable scans become whole-form review items") {
    Fixture fx;
    ModelSet models{ink_blank_classifier(), constant_digit_classifier(4, 0.5)};
    const DigitizeResult r = digitize_form(GrayImage(800, 1100, 1.0f), "white", fx.prepared, models, {0.9});
    CHECK(r.form.status == FormStatus::Unprocessed);
    CHECK_FALSE(r.form.error.empty());
    REQUIRE(r.review.size() == 1);
    CHECK(r.review[0].whole_form());
    CHECK(r.review[0].id == "white:form");
    CHECK(r.review[0].crop.width() == 32);
  }

  TEST_CASE("batch results do not depend on the worker count") {
    Fixture fx;
    TempDir dir;
    ModelSet models{ink_blank_classifier(), constant_digit_classifier(2, 0.7)};
    std::vector<ScanJob> jobs;
    for (int i = 0; i < 4; ++i) {
      std::vector<std::optional<std::string>> rows(6);
      rows[static_cast<std::size_t>(i)] = "1212121212";
      write_png(fx.scan(rows, 10 + i).image, dir / ("s" + std::to_string(i) + ".png"));
      jobs.push_back({"s" + std::to_string(i), dir / ("s" + std::to_string(i) + ".png")});
    }
    jobs.push_back({"missing", dir / "missing.png"});
    const auto one = digitize_batch(jobs, fx.prepared, models, {0.9}, 1);
    const auto three = digitize_batch(jobs, fx.prepared, models, {0.9}, 3);
    std::vector<DigitizedForm> a, b;
    for (const auto& r : one) a.push_back(r.form);
    for (const auto& r : three) b.push_back(r.form);
    write_records_csv(a, {0.9}, dir / "a.csv");
    write_records_csv(b, {0.9}, dir / "b.csv");
    std::ifstream fa(dir / "a.csv"), fb(dir / "b.csv");
    const std::string ta((std::istreambuf_iterator<char>(fa)), {}), tb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(ta == tb);
    CHECK(one[2].form.rows[2].digit_string() == "2222222222");
    CHECK(one[4].form.status == FormStatus::Unprocessed);
    CHECK(one[4].review.size() == 1);
  }

  TEST_CASE("corpus rendering round trips through disk") {
    TempDir dir;
    StrokeGlyphs glyphs;
    CorpusSpec spec;
    spec.forms = 3;
    const FormTemplate t = make_default_template("t", BorderStyle::DarkJoined, 4);
    const auto entries = render_corpus(t, glyphs, spec, dir.path());
    const auto back = load_corpus(dir.path());
    REQUIRE(back.size() == 3);
    CHECK(back[1].form_id == entries[1].form_id);
    CHECK(back[1].truth.digits == entries[1].truth.digits);
    CHECK(std::filesystem::exists(back[2].scan));
    CHECK(std::filesystem::exists(dir / "reference.png"));
    const FormTemplate loaded = load_template(dir / "template.json");
    CHECK(std::filesystem::exists(loaded.reference_image_path));
  }
}
