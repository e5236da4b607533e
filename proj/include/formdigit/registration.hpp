#pragma once

#include <cstdint>
#include <vector>

#include "formdigit/form_template.hpp"
#include "formdigit/geometry.hpp"
#include "formdigit/imaging.hpp"

namespace formdigit {

struct Keypoint {
  double x = 0, y = 0;  // full-resolution image coordinates
  double scale = 0;     // blob sigma in pixels
  float response = 0;   // signed DoG value at the extremum
  std::vector<float> descriptor;  // 128 values, unit L2 norm
};

struct FeatureConfig {
  // The detector works on a box-averaged copy no larger than this, which keeps
  // A4 pages at 200 dpi near 1200 px tall.
  int max_dimension = 1200;
  int octaves = 3;
  int scales_per_octave = 3;
  double base_sigma = 1.6;
  double contrast_threshold = 0.012;
  double edge_ratio = 10.0;
  int max_keypoints = 4000;
};

// Difference-of-Gaussians blob detector with upright 4x4x8 gradient-histogram
// descriptors. Throws NoFeatures when fewer than 8 keypoints survive.
std::vector<Keypoint> detect_features(const GrayImage& img, const FeatureConfig& cfg = {});

struct MatchFilterConfig {
  double vertical_threshold = 150.0;  // pixels at reference_height
  double reference_height = 5846.0;
  double ratio_test = 0.75;
  bool vertical_filter = true;
};

struct Match {
  Keypoint scan_point;
  Keypoint template_point;
  double distance = 0;  // Euclidean descriptor distance
};

// Nearest-neighbour matching scan -> template with Lowe's ratio test and, when
// enabled, the vertical consistency filter evaluated in reference-resolution
// units. Throws TooFewMatches when fewer than 8 survive.
std::vector<Match> match_features(const std::vector<Keypoint>& scan, int scan_height,
                                  const std::vector<Keypoint>& tmpl, int template_height,
                                  const MatchFilterConfig& cfg = {});

// Same as above but returns whatever survives without the minimum-count check.
std::vector<Match> match_features_unchecked(const std::vector<Keypoint>& scan, int scan_height,
                                            const std::vector<Keypoint>& tmpl, int template_height,
                                            const MatchFilterConfig& cfg);

// Projective map from scan coordinates to template coordinates.
struct Homography {
  Matrix3 h = kIdentity3;

  Point2 map(Point2 p) const { return apply(h, p); }
  Homography inverse() const;
};

struct RansacConfig {
  int iterations = 2000;
  double inlier_threshold = 3.0;  // template pixels
  int min_inliers = 10;
  std::uint64_t seed = 42;
};

struct HomographyEstimate {
  Homography homography;
  std::vector<bool> inliers;
  int inlier_count = 0;
};

// Hartley-normalised DLT over all correspondences (least squares for n > 4).
Matrix3 fit_homography_dlt(const std::vector<Point2>& src, const std::vector<Point2>& dst);

// RANSAC over 4-point samples, then a least-squares refit on the inliers.
// Throws DegenerateConfiguration with fewer than min_inliers support or when
// every sample was collinear.
HomographyEstimate estimate_homography(const std::vector<Match>& matches, const RansacConfig& cfg = {});

// Lower-level entry point used by estimate_homography and tests.
HomographyEstimate estimate_homography(const std::vector<Point2>& scan_points,
                                       const std::vector<Point2>& template_points,
                                       const RansacConfig& cfg = {});

// Template-sized image; output pixel p samples the scan at H^-1 p.
GrayImage warp_to_template(const GrayImage& scan, const Homography& h, const FormTemplate& t);

// Resamples the template-space box straight from the scan into a w x h raster,
// equivalent to cropping warp_to_template's output but without the full page.
GrayImage warp_region(const GrayImage& scan, const Homography& h, const BoundingBox& box, int w,
                      int h_px);

// Mean IoU between each true (scan-space) box mapped through H and its template box.
double evaluate_alignment(const std::vector<BoundingBox>& true_boxes,
                          const std::vector<BoundingBox>& template_boxes, const Homography& h);

struct RegistrationConfig {
  FeatureConfig features;
  MatchFilterConfig matching;
  RansacConfig ransac;
};

struct Registration {
  Homography homography;
  std::vector<Match> matches;
  std::vector<bool> inliers;
};

// detect -> match -> estimate against precomputed template features.
Registration register_scan(const GrayImage& scan, const std::vector<Keypoint>& template_features,
                           int template_height, const RegistrationConfig& cfg = {});

}  // namespace formdigit
