#pragma once

#include <array>
#include <span>

#include "formdigit/imaging.hpp"

namespace formdigit {

struct Point2 {
  double x = 0, y = 0;
};

// Row-major 3x3 matrix acting on homogeneous column vectors.
using Matrix3 = std::array<double, 9>;

inline constexpr Matrix3 kIdentity3 = {1, 0, 0, 0, 1, 0, 0, 0, 1};

Matrix3 multiply(const Matrix3& a, const Matrix3& b);
double determinant(const Matrix3& m);
// Throws std::domain_error when |det| <= 1e-12.
Matrix3 inverse(const Matrix3& m);
// Scales so m[8] == 1 (no-op when m[8] is ~0).
Matrix3 normalized(const Matrix3& m);
Point2 apply(const Matrix3& m, Point2 p);

// Exact projective map taking src[i] -> dst[i] for four points in general position.
Matrix3 homography_from_4(std::span<const Point2, 4> src, std::span<const Point2, 4> dst);

// Axis-aligned bounds of the four mapped corners of box.
BoundingBox map_box(const Matrix3& m, const BoundingBox& box);

}  // namespace formdigit
