#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "formdigit/errors.hpp"
#include "formdigit/registration.hpp"

namespace formdigit {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMat stack_descriptors(const std::vector<Keypoint>& kps) {
  const int dim = kps.empty() ? 0 : static_cast<int>(kps.front().descriptor.size());
  RowMat m(static_cast<Eigen::Index>(kps.size()), dim);
  for (std::size_t i = 0; i < kps.size(); ++i) {
    if (static_cast<int>(kps[i].descriptor.size()) != dim)
      throw std::invalid_argument("descriptor length differs between keypoints");
    for (int d = 0; d < dim; ++d) m(static_cast<Eigen::Index>(i), d) = kps[i].descriptor[d];
  }
  return m;
}

}  // namespace

std::vector<Match> match_features_unchecked(const std::vector<Keypoint>& scan, int scan_height,
                                            const std::vector<Keypoint>& tmpl, int template_height,
                                            const MatchFilterConfig& cfg) {
  if (scan.empty() || tmpl.empty()) return {};
  const RowMat a = stack_descriptors(scan);
  const RowMat b = stack_descriptors(tmpl);
  if (a.cols() != b.cols()) throw std::invalid_argument("descriptor length differs between images");
  // Unit-norm descriptors: |a-b|^2 = 2 - 2 a.b
  const RowMat dots = a * b.transpose();

  const double scan_to_ref = cfg.reference_height / scan_height;
  const double tmpl_to_ref = cfg.reference_height / template_height;
  std::vector<Match> out;
  for (Eigen::Index i = 0; i < dots.rows(); ++i) {
    float best = -2, second = -2;
    Eigen::Index best_j = -1;
    for (Eigen::Index j = 0; j < dots.cols(); ++j) {
      const float d = dots(i, j);
      if (d > best) {
        second = best;
        best = d;
        best_j = j;
      } else if (d > second) {
        second = d;
      }
    }
    if (best_j < 0) continue;
    const double d1 = std::sqrt(std::max(0.0, 2.0 - 2.0 * best));
    const double d2 = dots.cols() > 1 ? std::sqrt(std::max(0.0, 2.0 - 2.0 * second))
                                      : std::numeric_limits<double>::infinity();
    if (!(d1 < cfg.ratio_test * d2)) continue;
    const Keypoint& s = scan[static_cast<std::size_t>(i)];
    const Keypoint& t = tmpl[static_cast<std::size_t>(best_j)];
    if (cfg.vertical_filter && std::abs(t.y * tmpl_to_ref - s.y * scan_to_ref) > cfg.vertical_threshold)
      continue;
    out.push_back({s, t, d1});
  }
  return out;
}

std::vector<Match> match_features(const std::vector<Keypoint>& scan, int scan_height,
                                  const std::vector<Keypoint>& tmpl, int template_height,
                                  const MatchFilterConfig& cfg) {
  if (scan.empty() || tmpl.empty()) throw TooFewMatches("empty keypoint list");
  if (!(cfg.vertical_threshold > 0) || !(cfg.ratio_test > 0 && cfg.ratio_test < 1))
    throw std::invalid_argument("invalid match filter configuration");
  std::vector<Match> out = match_features_unchecked(scan, scan_height, tmpl, template_height, cfg);
  if (out.size() < 8) throw TooFewMatches(std::to_string(out.size()) + " matches survived filtering");
  return out;
}

}  // namespace formdigit
