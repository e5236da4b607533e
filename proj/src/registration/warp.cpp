#include <stdexcept>

#include "formdigit/errors.hpp"
#include "formdigit/registration.hpp"

namespace formdigit {

namespace {

Matrix3 invert_or_throw(const Homography& h) {
  try {
    return inverse(h.h);
  } catch (const std::domain_error&) {
    throw DegenerateConfiguration("homography is not invertible");
  }
}

}  // namespace

GrayImage warp_to_template(const GrayImage& scan, const Homography& h, const FormTemplate& t) {
  const Matrix3 back = invert_or_throw(h);
  GrayImage out(t.page_width, t.page_height);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) {
      const Point2 p = apply(back, {double(x), double(y)});
      out.at(x, y) = bilinear_sample(scan, p.x, p.y);
    }
  return out;
}

GrayImage warp_region(const GrayImage& scan, const Homography& h, const BoundingBox& box, int w, int h_px) {
  const Matrix3 back = invert_or_throw(h);
  GrayImage out(w, h_px);
  const double sx = box.width() / w, sy = box.height() / h_px;
  for (int y = 0; y < h_px; ++y)
    for (int x = 0; x < w; ++x) {
      const Point2 p = apply(back, {box.x0 + (x + 0.5) * sx, box.y0 + (y + 0.5) * sy});
      out.at(x, y) = bilinear_sample(scan, p.x, p.y);
    }
  return out;
}

double evaluate_alignment(const std::vector<BoundingBox>& true_boxes,
                          const std::vector<BoundingBox>& template_boxes, const Homography& h) {
  if (true_boxes.size() != template_boxes.size())
    throw std::invalid_argument("box lists differ in length");
  if (true_boxes.empty()) return 0.0;
  double sum = 0;
  for (std::size_t i = 0; i < true_boxes.size(); ++i)
    sum += iou(map_box(h.h, true_boxes[i]), template_boxes[i]);
  return sum / static_cast<double>(true_boxes.size());
}

Registration register_scan(const GrayImage& scan, const std::vector<Keypoint>& template_features,
                           int template_height, const RegistrationConfig& cfg) {
  const std::vector<Keypoint> kps = detect_features(scan, cfg.features);
  Registration out;
  out.matches = match_features(kps, scan.height(), template_features, template_height, cfg.matching);
  HomographyEstimate est = estimate_homography(out.matches, cfg.ransac);
  out.homography = est.homography;
  out.inliers = std::move(est.inliers);
  return out;
}

}  // namespace formdigit
