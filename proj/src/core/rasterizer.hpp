#pragma once

#include "core/geometry.hpp"

namespace hand3r {

// Camera-frame triangle with a flat color and an integer tag identifying its
// source object (0 = scene, 1+h = hand h).
struct RenderTriangle {
  Vec3 v0, v1, v2;
  Vec3 color;
  int tag = 0;
};

struct RenderResult {
  Image image;
  Mat depth;                   // h x w, +inf where empty
  std::vector<int32_t> owner;  // h x w row-major, -1 where empty
};

// Z-buffered flat-shaded rasterization at pixel centers (u,v) = (x,y).
// Depth is perspective-correct, so hit points lie on the triangle planes.
RenderResult rasterize(const std::vector<RenderTriangle>& tris, const CameraIntrinsics& K,
                       int width, int height, const Vec3& background);

// Coverage of a triangle set on an unbounded canvas (extended by `margin`
// pixels on each side): pixel count and the tight projected bounding box in
// full-image coordinates. Used for unoccluded-hand footprints.
struct CoverageResult {
  long pixels = 0;
  double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
  bool any = false;
};

CoverageResult rasterize_coverage(const std::vector<RenderTriangle>& tris,
                                  const CameraIntrinsics& K, int width, int height, int margin);

}  // namespace hand3r
