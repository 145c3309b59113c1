#include "core/rasterizer.hpp"

#include <cmath>
#include <limits>

namespace hand3r {

namespace {

constexpr double kNear = 1e-3;

struct ScreenTri {
  double x[3], y[3], inv_z[3];
  Vec3 color;
  int tag;
};

// Projects and culls triangles with any vertex at or behind the near plane.
std::vector<ScreenTri> project_tris(const std::vector<RenderTriangle>& tris,
                                    const CameraIntrinsics& K) {
  std::vector<ScreenTri> out;
  out.reserve(tris.size());
  for (const auto& t : tris) {
    const Vec3* v[3] = {&t.v0, &t.v1, &t.v2};
    bool ok = true;
    ScreenTri s;
    for (int i = 0; i < 3; ++i) {
      const double z = (*v[i]).z();
      if (z < kNear) {
        ok = false;
        break;
      }
      s.x[i] = K.fx * (*v[i]).x() / z + K.cx;
      s.y[i] = K.fy * (*v[i]).y() / z + K.cy;
      s.inv_z[i] = 1.0 / z;
    }
    if (!ok) continue;
    s.color = t.color;
    s.tag = t.tag;
    out.push_back(s);
  }
  return out;
}

template <typename PixelFn>
void raster_tri(const ScreenTri& s, int x_lo, int y_lo, int x_hi, int y_hi, PixelFn&& fn) {
  const double area = (s.x[1] - s.x[0]) * (s.y[2] - s.y[0]) -
                      (s.x[2] - s.x[0]) * (s.y[1] - s.y[0]);
  if (std::abs(area) < 1e-12) return;
  int bx0 = std::max(x_lo, static_cast<int>(std::floor(std::min({s.x[0], s.x[1], s.x[2]}))));
  int bx1 = std::min(x_hi, static_cast<int>(std::ceil(std::max({s.x[0], s.x[1], s.x[2]}))));
  int by0 = std::max(y_lo, static_cast<int>(std::floor(std::min({s.y[0], s.y[1], s.y[2]}))));
  int by1 = std::min(y_hi, static_cast<int>(std::ceil(std::max({s.y[0], s.y[1], s.y[2]}))));
  for (int y = by0; y <= by1; ++y) {
    for (int x = bx0; x <= bx1; ++x) {
      const double w0 = ((s.x[1] - x) * (s.y[2] - y) - (s.x[2] - x) * (s.y[1] - y)) / area;
      const double w1 = ((s.x[2] - x) * (s.y[0] - y) - (s.x[0] - x) * (s.y[2] - y)) / area;
      const double w2 = 1.0 - w0 - w1;
      if (w0 < 0 || w1 < 0 || w2 < 0) continue;
      const double inv_z = w0 * s.inv_z[0] + w1 * s.inv_z[1] + w2 * s.inv_z[2];
      fn(x, y, 1.0 / inv_z);
    }
  }
}

}  // namespace

RenderResult rasterize(const std::vector<RenderTriangle>& tris, const CameraIntrinsics& K,
                       int width, int height, const Vec3& background) {
  RenderResult res;
  res.image = Image(width, height);
  res.depth = Mat::Constant(height, width, std::numeric_limits<double>::infinity());
  res.owner.assign(static_cast<size_t>(width) * height, -1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) res.image.at(x, y, c) = background(c);

  for (const auto& s : project_tris(tris, K)) {
    raster_tri(s, 0, 0, width - 1, height - 1, [&](int x, int y, double z) {
      if (z >= res.depth(y, x)) return;
      res.depth(y, x) = z;
      res.owner[static_cast<size_t>(y) * width + x] = s.tag;
      for (int c = 0; c < 3; ++c) res.image.at(x, y, c) = s.color(c);
    });
  }
  return res;
}

CoverageResult rasterize_coverage(const std::vector<RenderTriangle>& tris,
                                  const CameraIntrinsics& K, int width, int height,
                                  int margin) {
  CoverageResult out;
  const int x_lo = -margin, y_lo = -margin;
  const int x_hi = width - 1 + margin, y_hi = height - 1 + margin;
  const int w = x_hi - x_lo + 1, h = y_hi - y_lo + 1;
  std::vector<uint8_t> hit(static_cast<size_t>(w) * h, 0);

  for (const auto& s : project_tris(tris, K)) {
    raster_tri(s, x_lo, y_lo, x_hi, y_hi, [&](int x, int y, double) {
      hit[static_cast<size_t>(y - y_lo) * w + (x - x_lo)] = 1;
    });
  }
  double mnx = 1e18, mny = 1e18, mxx = -1e18, mxy = -1e18;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (hit[static_cast<size_t>(y) * w + x]) {
        ++out.pixels;
        mnx = std::min(mnx, double(x + x_lo));
        mxx = std::max(mxx, double(x + x_lo));
        mny = std::min(mny, double(y + y_lo));
        mxy = std::max(mxy, double(y + y_lo));
      }
  out.any = out.pixels > 0;
  if (out.any) {
    out.min_x = mnx;
    out.max_x = mxx;
    out.min_y = mny;
    out.max_y = mxy;
  }
  return out;
}

}  // namespace hand3r
