#include <algorithm>
#include <cmath>
#include <numbers>

#include "formdigit/errors.hpp"
#include "formdigit/registration.hpp"

namespace formdigit {

namespace {

// Unbounded float raster for scale-space work.
struct Plane {
  int w = 0, h = 0;
  std::vector<float> v;

  Plane() = default;
  Plane(int w_, int h_) : w(w_), h(h_), v(static_cast<std::size_t>(w_) * h_, 0.0f) {}
  float at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
  float& at(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
  float clamped(int x, int y) const {
    return at(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1));
  }
};

Plane box_downsample(const GrayImage& img, int factor) {
  Plane out(img.width() / factor, img.height() / factor);
  const float norm = 1.0f / static_cast<float>(factor * factor);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      float s = 0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) s += img.at(x * factor + dx, y * factor + dy);
      out.at(x, y) = s * norm;
    }
  return out;
}

Plane gaussian_blur(const Plane& in, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(2 * radius + 1);
  float sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = static_cast<float>(std::exp(-(i * i) / (2.0 * sigma * sigma)));
    sum += k[i + radius];
  }
  for (float& c : k) c /= sum;
  Plane tmp(in.w, in.h), out(in.w, in.h);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      float s = 0;
      if (x >= radius && x < in.w - radius) {
        const float* row = &in.v[static_cast<std::size_t>(y) * in.w + x - radius];
        for (int i = 0; i <= 2 * radius; ++i) s += k[i] * row[i];
      } else {
        for (int i = -radius; i <= radius; ++i) s += k[i + radius] * in.clamped(x + i, y);
      }
      tmp.at(x, y) = s;
    }
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      float s = 0;
      if (y >= radius && y < in.h - radius) {
        for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp.at(x, y + i);
      } else {
        for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp.clamped(x, y + i);
      }
      out.at(x, y) = s;
    }
  return out;
}

Plane decimate(const Plane& in) {
  Plane out(in.w / 2, in.h / 2);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) out.at(x, y) = in.at(2 * x, 2 * y);
  return out;
}

struct Candidate {
  int octave;
  double layer;      // fractional DoG layer
  double x, y;       // octave coordinates
  float response;
  double sigma_oct;  // blob sigma in octave pixels
};

// Quadratic refinement of a DoG extremum; false when it drifts or fails the
// contrast / edge tests.
bool refine(const std::vector<Plane>& dog, int s, int x, int y, const FeatureConfig& cfg,
            Candidate& out) {
  const int layers = static_cast<int>(dog.size());
  double ox = 0, oy = 0, os = 0;
  for (int iter = 0; iter < 5; ++iter) {
    const Plane& c = dog[s];
    const Plane& up = dog[s + 1];
    const Plane& dn = dog[s - 1];
    const double dx = 0.5 * (c.at(x + 1, y) - c.at(x - 1, y));
    const double dy = 0.5 * (c.at(x, y + 1) - c.at(x, y - 1));
    const double ds = 0.5 * (up.at(x, y) - dn.at(x, y));
    const double v2 = 2.0 * c.at(x, y);
    const double dxx = c.at(x + 1, y) + c.at(x - 1, y) - v2;
    const double dyy = c.at(x, y + 1) + c.at(x, y - 1) - v2;
    const double dss = up.at(x, y) + dn.at(x, y) - v2;
    const double dxy = 0.25 * (c.at(x + 1, y + 1) - c.at(x - 1, y + 1) - c.at(x + 1, y - 1) + c.at(x - 1, y - 1));
    const double dxs = 0.25 * (up.at(x + 1, y) - up.at(x - 1, y) - dn.at(x + 1, y) + dn.at(x - 1, y));
    const double dys = 0.25 * (up.at(x, y + 1) - up.at(x, y - 1) - dn.at(x, y + 1) + dn.at(x, y - 1));
    // Solve the 3x3 Hessian system by Cramer's rule.
    const double a[3][3] = {{dxx, dxy, dxs}, {dxy, dyy, dys}, {dxs, dys, dss}};
    const double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
                       a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                       a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if (std::abs(det) < 1e-12) return false;
    const double b[3] = {-dx, -dy, -ds};
    auto solve_col = [&](int col) {
      double m[3][3];
      for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) m[r][k] = k == col ? b[r] : a[r][k];
      return (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
              m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
              m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])) /
             det;
    };
    ox = solve_col(0);
    oy = solve_col(1);
    os = solve_col(2);
    if (std::abs(ox) < 0.5 && std::abs(oy) < 0.5 && std::abs(os) < 0.5) {
      const double value = c.at(x, y) + 0.5 * (dx * ox + dy * oy + ds * os);
      if (std::abs(value) < cfg.contrast_threshold) return false;
      const double tr = dxx + dyy;
      const double det2 = dxx * dyy - dxy * dxy;
      const double r = cfg.edge_ratio;
      if (det2 <= 0 || tr * tr * r >= (r + 1) * (r + 1) * det2) return false;
      out.x = x + ox;
      out.y = y + oy;
      out.layer = s + os;
      out.response = static_cast<float>(value);
      return true;
    }
    x += static_cast<int>(std::lround(ox));
    y += static_cast<int>(std::lround(oy));
    s += static_cast<int>(std::lround(os));
    if (s < 1 || s > layers - 2 || x < 1 || y < 1 || x >= c.w - 1 || y >= c.h - 1) return false;
  }
  return false;
}

// Upright 4x4 spatial x 8 orientation histogram with trilinear binning,
// clipped at 0.2 and renormalised.
std::vector<float> describe(const Plane& g, double x, double y, double sigma) {
  constexpr int kCells = 4, kBins = 8;
  const double cell = 3.0 * sigma;
  const int radius = static_cast<int>(std::lround(cell * std::sqrt(2.0) * (kCells + 1) * 0.5));
  std::vector<float> hist(kCells * kCells * kBins, 0.0f);
  const double weight_sigma2 = 2.0 * (0.5 * kCells) * (0.5 * kCells);
  const int cx = static_cast<int>(std::lround(x)), cy = static_cast<int>(std::lround(y));
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      const int px = cx + dx, py = cy + dy;
      if (px < 1 || py < 1 || px >= g.w - 1 || py >= g.h - 1) continue;
      // Position in cell units relative to the descriptor centre.
      const double rx = (px - x) / cell, ry = (py - y) / cell;
      const double bx = rx + kCells / 2.0 - 0.5, by = ry + kCells / 2.0 - 0.5;
      if (bx <= -1 || bx >= kCells || by <= -1 || by >= kCells) continue;
      const double gx = g.at(px + 1, py) - g.at(px - 1, py);
      const double gy = g.at(px, py + 1) - g.at(px, py - 1);
      const double mag = std::sqrt(gx * gx + gy * gy);
      if (mag == 0) continue;
      double angle = std::atan2(gy, gx);
      if (angle < 0) angle += 2 * std::numbers::pi;
      const double bo = angle * kBins / (2 * std::numbers::pi);
      const double w = mag * std::exp(-(rx * rx + ry * ry) / weight_sigma2);
      const int x0 = static_cast<int>(std::floor(bx)), y0 = static_cast<int>(std::floor(by));
      const int o0 = static_cast<int>(std::floor(bo));
      const double fx = bx - x0, fy = by - y0, fo = bo - o0;
      for (int iy = 0; iy < 2; ++iy) {
        const int yy = y0 + iy;
        if (yy < 0 || yy >= kCells) continue;
        const double wy = iy ? fy : 1 - fy;
        for (int ix = 0; ix < 2; ++ix) {
          const int xx = x0 + ix;
          if (xx < 0 || xx >= kCells) continue;
          const double wx = ix ? fx : 1 - fx;
          for (int io = 0; io < 2; ++io) {
            const int oo = (o0 + io) % kBins;
            const double wo = io ? fo : 1 - fo;
            hist[(yy * kCells + xx) * kBins + oo] += static_cast<float>(w * wx * wy * wo);
          }
        }
      }
    }
  auto normalise = [&] {
    double n = 0;
    for (float v : hist) n += double(v) * v;
    n = std::sqrt(n);
    if (n > 0)
      for (float& v : hist) v = static_cast<float>(v / n);
    return n > 0;
  };
  if (!normalise()) return {};
  for (float& v : hist) v = std::min(v, 0.2f);
  normalise();
  return hist;
}

}  // namespace

std::vector<Keypoint> detect_features(const GrayImage& img, const FeatureConfig& cfg) {
  if (img.width() < 64 || img.height() < 64) throw NoFeatures("image smaller than 64x64");
  int factor = 1;
  while (std::max(img.width(), img.height()) / factor > cfg.max_dimension) ++factor;
  Plane base = box_downsample(img, factor);

  const int s = cfg.scales_per_octave;
  const double k = std::pow(2.0, 1.0 / s);
  // Assume the (downsampled) input carries sigma 0.5 of blur already.
  base = gaussian_blur(base, std::sqrt(std::max(0.01, cfg.base_sigma * cfg.base_sigma - 0.25)));

  std::vector<Candidate> candidates;
  std::vector<std::vector<Plane>> gauss_pyr;
  for (int o = 0; o < cfg.octaves; ++o) {
    if (base.w < 16 || base.h < 16) break;
    std::vector<Plane> gauss{base};
    for (int i = 1; i < s + 3; ++i) {
      const double prev = cfg.base_sigma * std::pow(k, i - 1);
      const double cur = prev * k;
      gauss.push_back(gaussian_blur(gauss.back(), std::sqrt(cur * cur - prev * prev)));
    }
    std::vector<Plane> dog;
    for (int i = 0; i + 1 < static_cast<int>(gauss.size()); ++i) {
      Plane d(base.w, base.h);
      for (std::size_t p = 0; p < d.v.size(); ++p) d.v[p] = gauss[i + 1].v[p] - gauss[i].v[p];
      dog.push_back(std::move(d));
    }
    const float prefilter = static_cast<float>(0.5 * cfg.contrast_threshold);
    for (int layer = 1; layer + 1 < static_cast<int>(dog.size()); ++layer) {
      const Plane& c = dog[layer];
      for (int y = 5; y < c.h - 5; ++y)
        for (int x = 5; x < c.w - 5; ++x) {
          const float v = c.at(x, y);
          if (std::abs(v) <= prefilter) continue;
          bool is_max = true, is_min = true;
          for (int dl = -1; dl <= 1 && (is_max || is_min); ++dl) {
            const Plane& p = dog[layer + dl];
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                if (dl == 0 && dx == 0 && dy == 0) continue;
                const float q = p.at(x + dx, y + dy);
                if (q >= v) is_max = false;
                if (q <= v) is_min = false;
              }
          }
          if (!is_max && !is_min) continue;
          Candidate cand{};
          cand.octave = o;
          if (!refine(dog, layer, x, y, cfg, cand)) continue;
          cand.sigma_oct = cfg.base_sigma * std::pow(k, cand.layer);
          candidates.push_back(cand);
        }
    }
    gauss_pyr.push_back(gauss);
    base = decimate(gauss[s]);
  }

  // Strongest responses first; ties resolved by position for determinism.
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    const float ra = std::abs(a.response), rb = std::abs(b.response);
    if (ra != rb) return ra > rb;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });
  if (static_cast<int>(candidates.size()) > cfg.max_keypoints) candidates.resize(cfg.max_keypoints);

  std::vector<Keypoint> out;
  out.reserve(candidates.size());
  for (const Candidate& c : candidates) {
    const auto& gauss = gauss_pyr[c.octave];
    const int level = std::clamp(static_cast<int>(std::lround(c.layer)), 0, static_cast<int>(gauss.size()) - 1);
    std::vector<float> desc = describe(gauss[level], c.x, c.y, c.sigma_oct);
    if (desc.empty()) continue;
    const double octave_scale = std::ldexp(1.0, c.octave);
    Keypoint kp;
    kp.x = factor * (c.x * octave_scale) + (factor - 1) * 0.5;
    kp.y = factor * (c.y * octave_scale) + (factor - 1) * 0.5;
    kp.scale = c.sigma_oct * octave_scale * factor;
    kp.response = c.response;
    kp.descriptor = std::move(desc);
    out.push_back(std::move(kp));
  }
  if (out.size() < 8) throw NoFeatures("only " + std::to_string(out.size()) + " keypoints found");
  return out;
}

}  // namespace formdigit
