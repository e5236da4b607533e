#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>

#include "formdigit/errors.hpp"
#include "formdigit/registration.hpp"

namespace formdigit {

namespace {

// Hartley normalisation: centroid to origin, mean distance sqrt(2).
Matrix3 normalising_transform(const std::vector<Point2>& pts) {
  double cx = 0, cy = 0;
  for (const Point2& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= pts.size();
  cy /= pts.size();
  double mean = 0;
  for (const Point2& p : pts) mean += std::hypot(p.x - cx, p.y - cy);
  mean /= pts.size();
  const double s = mean > 0 ? std::sqrt(2.0) / mean : 1.0;
  return {s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1};
}

double cross(Point2 a, Point2 b, Point2 c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

// True when any three of the four points are nearly collinear.
bool degenerate_sample(const std::array<Point2, 4>& p) {
  static constexpr int kTriples[4][3] = {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
  for (const auto& t : kTriples) {
    const Point2 a = p[t[0]], b = p[t[1]], c = p[t[2]];
    const double area = std::abs(cross(a, b, c));
    const double scale = std::max({std::hypot(b.x - a.x, b.y - a.y), std::hypot(c.x - a.x, c.y - a.y),
                                   std::hypot(c.x - b.x, c.y - b.y)});
    if (area <= 1e-3 * scale * scale) return true;
  }
  return false;
}

double reprojection_error(const Matrix3& h, Point2 src, Point2 dst) {
  const double w = h[6] * src.x + h[7] * src.y + h[8];
  if (std::abs(w) < 1e-12) return std::numeric_limits<double>::infinity();
  const double u = (h[0] * src.x + h[1] * src.y + h[2]) / w;
  const double v = (h[3] * src.x + h[4] * src.y + h[5]) / w;
  return std::hypot(u - dst.x, v - dst.y);
}

struct Score {
  int inliers = 0;
  double error = std::numeric_limits<double>::infinity();

  bool better_than(const Score& o) const {
    return inliers > o.inliers || (inliers == o.inliers && error < o.error);
  }
};

Score score_model(const Matrix3& h, const std::vector<Point2>& src, const std::vector<Point2>& dst,
                  double threshold, std::vector<bool>* flags) {
  Score s{0, 0.0};
  if (flags) flags->assign(src.size(), false);
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double e = reprojection_error(h, src[i], dst[i]);
    if (e <= threshold) {
      ++s.inliers;
      s.error += e;
      if (flags) (*flags)[i] = true;
    }
  }
  return s;
}

}  // namespace

Homography Homography::inverse() const { return {normalized(formdigit::inverse(h))}; }

Matrix3 fit_homography_dlt(const std::vector<Point2>& src, const std::vector<Point2>& dst) {
  if (src.size() != dst.size() || src.size() < 4)
    throw DegenerateConfiguration("DLT needs at least 4 correspondences");
  const Matrix3 ts = normalising_transform(src);
  const Matrix3 td = normalising_transform(dst);
  const Eigen::Index n = static_cast<Eigen::Index>(src.size());
  Eigen::MatrixXd a(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Point2 p = apply(ts, src[static_cast<std::size_t>(i)]);
    const Point2 q = apply(td, dst[static_cast<std::size_t>(i)]);
    a.row(2 * i) << -p.x, -p.y, -1, 0, 0, 0, q.x * p.x, q.x * p.y, q.x;
    a.row(2 * i + 1) << 0, 0, 0, -p.x, -p.y, -1, q.y * p.x, q.y * p.y, q.y;
  }
  Eigen::Matrix<double, 9, 1> h;
  if (n == 4) {
    // Square-ish system: the null vector of the 8x9 matrix.
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    const Eigen::MatrixXd ker = lu.kernel();
    if (ker.cols() != 1) throw DegenerateConfiguration("minimal sample has no unique solution");
    h = ker.col(0);
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    h = svd.matrixV().col(8);
  }
  const Matrix3 hn = {h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8)};
  const Matrix3 full = multiply(formdigit::inverse(td), multiply(hn, ts));
  if (std::abs(full[8]) < 1e-15) throw DegenerateConfiguration("homography maps origin to infinity");
  const Matrix3 out = normalized(full);
  if (!(std::abs(determinant(out)) > 1e-12)) throw DegenerateConfiguration("singular homography");
  return out;
}

HomographyEstimate estimate_homography(const std::vector<Point2>& src, const std::vector<Point2>& dst,
                                       const RansacConfig& cfg) {
  if (src.size() != dst.size()) throw std::invalid_argument("correspondence lists differ in length");
  if (src.size() < 4) throw DegenerateConfiguration("fewer than 4 correspondences");
  const int n = static_cast<int>(src.size());

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> pick(0, n - 1);
  Matrix3 best_model = kIdentity3;
  Score best;
  bool any_model = false;
  for (int it = 0; it < cfg.iterations; ++it) {
    std::array<int, 4> idx{};
    for (int k = 0; k < 4; ++k) {
      bool fresh;
      do {
        idx[k] = pick(rng);
        fresh = std::find(idx.begin(), idx.begin() + k, idx[k]) == idx.begin() + k;
      } while (!fresh);
    }
    std::array<Point2, 4> s{}, d{};
    for (int k = 0; k < 4; ++k) {
      s[k] = src[idx[k]];
      d[k] = dst[idx[k]];
    }
    if (degenerate_sample(s) || degenerate_sample(d)) continue;
    Matrix3 model;
    try {
      model = fit_homography_dlt({s.begin(), s.end()}, {d.begin(), d.end()});
    } catch (const DegenerateConfiguration&) {
      continue;
    }
    any_model = true;
    const Score sc = score_model(model, src, dst, cfg.inlier_threshold, nullptr);
    if (sc.better_than(best)) {
      best = sc;
      best_model = model;
    }
  }
  if (!any_model) throw DegenerateConfiguration("every RANSAC sample was collinear");
  if (best.inliers < cfg.min_inliers)
    throw DegenerateConfiguration("best model has only " + std::to_string(best.inliers) + " inliers");

  // Least-squares refit on the consensus set; repeat while the set grows.
  std::vector<bool> flags;
  score_model(best_model, src, dst, cfg.inlier_threshold, &flags);
  Matrix3 model = best_model;
  for (int round = 0; round < 5; ++round) {
    std::vector<Point2> s, d;
    for (int i = 0; i < n; ++i)
      if (flags[i]) {
        s.push_back(src[i]);
        d.push_back(dst[i]);
      }
    model = fit_homography_dlt(s, d);
    std::vector<bool> refit_flags;
    const Score sc = score_model(model, src, dst, cfg.inlier_threshold, &refit_flags);
    const bool grew = sc.inliers > static_cast<int>(s.size());
    flags = std::move(refit_flags);
    if (!grew) break;
  }

  HomographyEstimate out;
  out.homography.h = model;
  out.inliers = flags;
  out.inlier_count = static_cast<int>(std::count(flags.begin(), flags.end(), true));
  if (out.inlier_count < cfg.min_inliers)
    throw DegenerateConfiguration("refit left only " + std::to_string(out.inlier_count) + " inliers");
  return out;
}

HomographyEstimate estimate_homography(const std::vector<Match>& matches, const RansacConfig& cfg) {
  std::vector<Point2> src, dst;
  src.reserve(matches.size());
  dst.reserve(matches.size());
  for (const Match& m : matches) {
    src.push_back({m.scan_point.x, m.scan_point.y});
    dst.push_back({m.template_point.x, m.template_point.y});
  }
  return estimate_homography(src, dst, cfg);
}

}  // namespace formdigit
