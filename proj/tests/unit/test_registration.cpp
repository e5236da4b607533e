#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "formdigit/errors.hpp"
#include "formdigit/registration.hpp"
#include "support.hpp"

using namespace formdigit;

namespace {

Matrix3 random_homography(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  return normalized({1 + 0.05 * u(rng), 0.04 * u(rng), 20 * u(rng), 0.04 * u(rng), 1 + 0.05 * u(rng), 20 * u(rng),
                     2e-5 * u(rng), 2e-5 * u(rng), 1});
}

double max_rel_diff(const Matrix3& a, const Matrix3& b) {
  double worst = 0;
  for (int i = 0; i < 9; ++i) worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  return worst;
}

const GrayImage& blank_page() {
  static const GrayImage page = [] {
    RenderSpec s;
    s.noise_sigma = 0;
    return render_blank_template(make_default_template("f", BorderStyle::DarkJoined), s);
  }();
  return page;
}

}  // namespace

TEST_SUITE("registration") {
  TEST_CASE("uniform image has no features") {
    CHECK_THROWS_AS(detect_features(GrayImage(200, 200, 1.0f)), NoFeatures);
  }

  TEST_CASE("blank template yields plenty of deterministic keypoints") {
    const auto a = detect_features(blank_page());
    const auto b = detect_features(GrayImage(blank_page()));
    CHECK(a.size() >= 50);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].x == b[i].x);
      CHECK(a[i].descriptor == b[i].descriptor);
    }
    const std::size_t len = a.front().descriptor.size();
    for (const Keypoint& k : a) {
      REQUIRE(k.descriptor.size() == len);
      double n = 0;
      for (float v : k.descriptor) n += v * v;
      CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-4));
    }
  }

  TEST_CASE("self-match keeps every pair level") {
    const auto k = detect_features(blank_page());
    const auto m = match_features(k, blank_page().height(), k, blank_page().height());
    CHECK(m.size() >= 8);
    for (const Match& x : m) CHECK(x.scan_point.y == x.template_point.y);
  }

  TEST_CASE("vertical filter rejects a 300 px jump and scales with resolution") {
    // Two identical descriptors far apart vertically, plus a distinct decoy to
    // keep the ratio test satisfied.
    auto point = [](double y, int hot) {
      Keypoint k;
      k.x = 50;
      k.y = y;
      k.descriptor.assign(128, 0.0f);
      k.descriptor[hot] = 1.0f;
      return k;
    };
    const std::vector<Keypoint> scan = {point(100, 0)}, tmpl = {point(400, 0), point(100, 5)};
    MatchFilterConfig cfg;
    cfg.reference_height = 1000;  // same resolution as the images below
    CHECK(match_features_unchecked(scan, 1000, tmpl, 1000, cfg).empty());
    cfg.vertical_filter = false;
    CHECK(match_features_unchecked(scan, 1000, tmpl, 1000, cfg).size() == 1);
    // At a tenth of the reference height a 20 px gap is worth 200 px.
    cfg.vertical_filter = true;
    cfg.vertical_threshold = 150;
    const std::vector<Keypoint> near_tmpl = {point(120, 0), point(100, 5)};
    CHECK(match_features_unchecked(scan, 100, near_tmpl, 100, cfg).empty());
    cfg.reference_height = 100;
    CHECK(match_features_unchecked(scan, 100, near_tmpl, 100, cfg).size() == 1);
  }

  TEST_CASE("filtered matches are a subset of unfiltered ones") {
    FormTemplate t = make_default_template("f", BorderStyle::DarkJoined);
    RenderSpec s;
    s.corner_marks = true;
    s.decoys = 16;
    StrokeGlyphs glyphs;
    const RenderedScan scan = render_filled_scan(t, std::vector<std::optional<std::string>>(16), glyphs, s);
    const auto tk = detect_features(render_blank_template(t, s));
    const auto sk = detect_features(scan.image);
    MatchFilterConfig on, off;
    off.vertical_filter = false;
    const auto f = match_features_unchecked(sk, scan.image.height(), tk, t.page_height, on);
    const auto u = match_features_unchecked(sk, scan.image.height(), tk, t.page_height, off);
    std::set<std::tuple<double, double, double, double>> all;
    for (const Match& m : u) all.insert({m.scan_point.x, m.scan_point.y, m.template_point.x, m.template_point.y});
    CHECK(f.size() < u.size());
    for (const Match& m : f) CHECK(all.count({m.scan_point.x, m.scan_point.y, m.template_point.x, m.template_point.y}) == 1);
  }

  TEST_CASE("identity correspondences give the identity") {
    std::vector<Point2> pts;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 1000);
    for (int i = 0; i < 40; ++i) pts.push_back({u(rng), u(rng)});
    const HomographyEstimate e = estimate_homography(pts, pts);
    for (int i = 0; i < 9; ++i) CHECK(std::abs(e.homography.h[i] - kIdentity3[i]) < 1e-3);
    CHECK(e.inlier_count == 40);
  }

  TEST_CASE("noiseless correspondences recover a known homography") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1500);
    for (int trial = 0; trial < 5; ++trial) {
      const Matrix3 truth = random_homography(rng);
      std::vector<Point2> src, dst;
      for (int i = 0; i < 30; ++i) {
        src.push_back({u(rng), u(rng)});
        dst.push_back(apply(truth, src.back()));
      }
      const HomographyEstimate e = estimate_homography(src, dst);
      CHECK(max_rel_diff(e.homography.h, truth) < 1e-6);
      CHECK(e.inlier_count == 30);
      CHECK(max_rel_diff(fit_homography_dlt(src, dst), truth) < 1e-6);

      // Pre-composing the scan points with a similarity S gives H * S^-1.
      const double c = std::cos(0.1) * 1.2, s = std::sin(0.1) * 1.2;
      const Matrix3 sim = {c, -s, 15, s, c, -7, 0, 0, 1};
      std::vector<Point2> moved;
      for (const Point2& p : src) moved.push_back(apply(sim, p));
      const HomographyEstimate e2 = estimate_homography(moved, dst);
      CHECK(max_rel_diff(e2.homography.h, normalized(multiply(truth, inverse(sim)))) < 1e-6);
    }
  }

  TEST_CASE("RANSAC flags the true half of a contaminated set") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1500);
    const Matrix3 truth = random_homography(rng);
    std::vector<Point2> src, dst;
    for (int i = 0; i < 50; ++i) {
      src.push_back({u(rng), u(rng)});
      dst.push_back(apply(truth, src.back()));
    }
    for (int i = 0; i < 50; ++i) {
      src.push_back({u(rng), u(rng)});
      dst.push_back({u(rng), u(rng)});
    }
    const HomographyEstimate e = estimate_homography(src, dst);
    CHECK(std::count(e.inliers.begin(), e.inliers.begin() + 50, true) >= 48);
  }

  TEST_CASE("degenerate inputs") {
    std::vector<Point2> line;
    for (int i = 0; i < 20; ++i) line.push_back({i * 10.0, i * 5.0});
    CHECK_THROWS_AS(estimate_homography(line, line), DegenerateConfiguration);
    std::vector<Point2> few = {{0, 0}, {100, 0}, {100, 100}, {0, 100}, {50, 20}};
    CHECK_THROWS_AS(estimate_homography(few, few), DegenerateConfiguration);
  }

  TEST_CASE("warping with identity and a translation") {
    FormTemplate t = make_default_template("f", BorderStyle::DarkJoined, 1);
    t.page_width = 60;
    t.page_height = 40;
    t.rows.clear();
    GrayImage scan(60, 40);
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 60; ++x) scan.at(x, y) = static_cast<float>((x * 13 + y * 7) % 17) / 17.0f;
    CHECK(warp_to_template(scan, Homography{}, t) == scan);
    // scan -> template is x' = x + 3, y' = y - 2
    const GrayImage moved = warp_to_template(scan, Homography{{1, 0, 3, 0, 1, -2, 0, 0, 1}}, t);
    for (int y = 0; y < 30; ++y)
      for (int x = 5; x < 55; ++x) CHECK(moved.at(x, y) == doctest::Approx(scan.at(x - 3, y + 2)));
    CHECK_THROWS_AS(warp_to_template(scan, Homography{{1, 2, 0, 2, 4, 0, 0, 0, 1}}, t), DegenerateConfiguration);
  }

  TEST_CASE("alignment score") {
    const std::vector<BoundingBox> boxes = {{0, 0, 10, 10}, {20, 0, 30, 10}};
    CHECK(evaluate_alignment(boxes, boxes, Homography{}) == 1.0);
    // Each box shifted right by 5 overlaps its target by half its width.
    const double v = evaluate_alignment(boxes, boxes, Homography{{1, 0, 5, 0, 1, 0, 0, 0, 1}});
    CHECK(v == doctest::Approx(50.0 / 150.0));
  }

  TEST_CASE("registration of a distorted scan beats 0.85 mean IoU") {
    const FormTemplate t = make_default_template("f", BorderStyle::DarkJoined);
    RenderSpec s;
    s.corner_jitter = 0.015;
    s.seed = 5;
    StrokeGlyphs glyphs;
    std::vector<std::optional<std::string>> rows(16);
    rows[2] = "5551234567";
    rows[9] = "0987654321";
    const RenderedScan scan = render_filled_scan(t, rows, glyphs, s);
    const auto tk = detect_features(render_blank_template(t, s));
    const Registration r = register_scan(scan.image, tk, t.page_height);
    CHECK(evaluate_alignment(scan.truth.true_boxes, t.all_cells(), r.homography) >= 0.85);
    const GrayImage warped = warp_to_template(scan.image, r.homography, t);
    CHECK(warped.width() == t.page_width);
    // warp_region samples the same page as the full warp
    const BoundingBox& cell = t.rows[2].cells[3];
    const int w = static_cast<int>(cell.width()), h = static_cast<int>(cell.height());
    const GrayImage region = warp_region(scan.image, r.homography, cell, w, h);
    const GrayImage window = crop(warped, static_cast<int>(cell.x0), static_cast<int>(cell.y0), w, h);
    double a = 0, b = 0;
    for (float v : region.pixels()) a += v;
    for (float v : window.pixels()) b += v;
    CHECK(a / (w * h) == doctest::Approx(b / (w * h)).epsilon(0.02));
  }
}
