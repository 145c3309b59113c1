#pragma once

#include "core/common.hpp"

namespace hand3r {

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  // Applies to each row of an N x 3 matrix.
  Mat apply_rows(const Mat& pts) const;
};

RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform inverse(const RigidTransform& a);

struct SimilarityTransform {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
  Mat apply_rows(const Mat& pts) const;
};

struct BBox {
  double cx = 0, cy = 0;  // center, pixels
  double w = 0, h = 0;    // size, pixels
};

struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
};

struct PointMap {
  int width = 0;
  int height = 0;
  std::vector<Vec3> points;        // row-major, camera-frame meters
  std::vector<uint8_t> valid;      // 1 where a point exists

  PointMap() = default;
  PointMap(int w, int h)
      : width(w), height(h), points(static_cast<size_t>(w) * h, Vec3::Zero()),
        valid(static_cast<size_t>(w) * h, 0) {}
  size_t idx(int x, int y) const { return static_cast<size_t>(y) * width + x; }
};

// Spatial grid of feature tokens over an image. tokens is (grid*grid) x dim,
// row-major over cells (cell (gx,gy) at row gy*grid + gx). pixels_per_token
// maps token coordinates back to image pixels.
struct TokenGrid {
  int grid = 0;
  double pixels_per_token = 0;
  Mat tokens;
};

// Closed-form least-squares similarity (or rigid, with_scale=false) alignment
// of source onto target, correspondences by row index. Rotation is
// sign-corrected to a proper rotation.
SimilarityTransform umeyama_align(const Mat& source, const Mat& target, bool with_scale);

// Pinhole projection of camera-frame points (N x 3) to pixels (N x 2).
// Throws InvalidInputError listing indices with z <= 0.
Mat project_points(const CameraIntrinsics& K, const Mat& pts_cam);

struct CropResult {
  Image crop;
  // Affine crop-to-full pixel mapping: full = scale * crop + offset, per axis.
  double scale = 1.0;
  double offset_x = 0.0;
  double offset_y = 0.0;

  double to_full_x(double crop_x) const { return scale * crop_x + offset_x; }
  double to_full_y(double crop_y) const { return scale * crop_y + offset_y; }
};

// Square crop centered on the box, side 1.5*max(w,h) clamped to the image's
// larger dimension, bilinearly resampled to out_res x out_res. Regions outside
// the image are zero.
CropResult crop_transform(const Image& image, const BBox& box, int out_res);

// Token rows whose cell centers fall inside the box; falls back to the single
// nearest token when none do. Never empty.
std::vector<int> region_pool_indices(int grid, double pixels_per_token, const BBox& box);

// Mean of tokens whose cell centers fall inside the box; nearest token to the
// box center when none do.
Vec region_pool(const TokenGrid& grid, const BBox& box);

Mat3 axis_angle_to_matrix(const Vec3& aa);
Vec3 matrix_to_axis_angle(const Mat3& R);

}  // namespace hand3r
