#include "core/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace hand3r {

Mat RigidTransform::apply_rows(const Mat& pts) const {
  Mat out = pts * rotation.transpose();
  out.rowwise() += translation.transpose();
  return out;
}

Mat SimilarityTransform::apply_rows(const Mat& pts) const {
  Mat out = scale * (pts * rotation.transpose());
  out.rowwise() += translation.transpose();
  return out;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

RigidTransform inverse(const RigidTransform& a) {
  RigidTransform out;
  out.rotation = a.rotation.transpose();
  out.translation = -(a.rotation.transpose() * a.translation);
  return out;
}

SimilarityTransform umeyama_align(const Mat& source, const Mat& target, bool with_scale) {
  const Eigen::Index n = source.rows();
  if (n != target.rows() || source.cols() != 3 || target.cols() != 3) {
    throw InvalidInputError("umeyama_align: point sets must be N x 3 with equal N");
  }
  if (n < 3) {
    throw DegenerateInputError("umeyama_align: need at least 3 points");
  }

  const Eigen::RowVector3d mu_s = source.colwise().mean();
  const Eigen::RowVector3d mu_t = target.colwise().mean();
  const Mat cs = source.rowwise() - mu_s;
  const Mat ct = target.rowwise() - mu_t;

  const double var_s = cs.squaredNorm() / static_cast<double>(n);
  const Mat3 sigma = (ct.transpose() * cs) / static_cast<double>(n);

  Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.rank() < 2 || var_s <= 0.0) {
    throw DegenerateInputError("umeyama_align: degenerate (rank < 2) configuration");
  }

  Vec3 d = Vec3::Ones();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2) = -1.0;

  SimilarityTransform out;
  out.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  out.scale = with_scale ? (svd.singularValues().dot(d) / var_s) : 1.0;
  out.translation = mu_t.transpose() - out.scale * (out.rotation * mu_s.transpose());
  return out;
}

Mat project_points(const CameraIntrinsics& K, const Mat& pts_cam) {
  if (pts_cam.cols() != 3) throw InvalidInputError("project_points: points must be N x 3");
  std::vector<Eigen::Index> bad;
  for (Eigen::Index i = 0; i < pts_cam.rows(); ++i) {
    if (!(pts_cam(i, 2) > 0.0)) bad.push_back(i);
  }
  if (!bad.empty()) {
    std::ostringstream oss;
    oss << "project_points: points behind camera at indices";
    for (auto i : bad) oss << " " << i;
    throw InvalidInputError(oss.str());
  }
  Mat uv(pts_cam.rows(), 2);
  for (Eigen::Index i = 0; i < pts_cam.rows(); ++i) {
    const double z = pts_cam(i, 2);
    uv(i, 0) = K.fx * pts_cam(i, 0) / z + K.cx;
    uv(i, 1) = K.fy * pts_cam(i, 1) / z + K.cy;
  }
  return uv;
}

static double sample_bilinear(const Image& img, double x, double y, int c) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  double acc = 0.0;
  for (int dy = 0; dy <= 1; ++dy) {
    for (int dx = 0; dx <= 1; ++dx) {
      const int xi = x0 + dx, yi = y0 + dy;
      if (xi < 0 || yi < 0 || xi >= img.width || yi >= img.height) continue;
      const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
      acc += w * img.at(xi, yi, c);
    }
  }
  return acc;
}

CropResult crop_transform(const Image& image, const BBox& box, int out_res) {
  if (!(box.w > 0.0) || !(box.h > 0.0)) {
    throw DegenerateInputError("crop_transform: zero-area box");
  }
  if (box.cx + box.w / 2 < 0 || box.cx - box.w / 2 > image.width ||
      box.cy + box.h / 2 < 0 || box.cy - box.h / 2 > image.height) {
    throw InvalidInputError("crop_transform: box does not intersect the image");
  }
  double side = 1.5 * std::max(box.w, box.h);
  side = std::min(side, static_cast<double>(std::max(image.width, image.height)));

  CropResult res;
  res.scale = side / out_res;
  res.offset_x = box.cx - side / 2.0 + 0.5 * res.scale - 0.5;
  res.offset_y = box.cy - side / 2.0 + 0.5 * res.scale - 0.5;
  res.crop = Image(out_res, out_res);
  for (int y = 0; y < out_res; ++y) {
    for (int x = 0; x < out_res; ++x) {
      const double sx = res.to_full_x(x);
      const double sy = res.to_full_y(y);
      for (int c = 0; c < 3; ++c) res.crop.at(x, y, c) = sample_bilinear(image, sx, sy, c);
    }
  }
  return res;
}

std::vector<int> region_pool_indices(int grid, double pixels_per_token, const BBox& box) {
  if (grid <= 0) throw InvalidInputError("region_pool: empty grid");
  std::vector<int> inside;
  double best = std::numeric_limits<double>::infinity();
  int best_row = 0;
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const double px = (gx + 0.5) * pixels_per_token;
      const double py = (gy + 0.5) * pixels_per_token;
      if (std::abs(px - box.cx) <= box.w / 2.0 && std::abs(py - box.cy) <= box.h / 2.0) {
        inside.push_back(gy * grid + gx);
      }
      const double d2 = (px - box.cx) * (px - box.cx) + (py - box.cy) * (py - box.cy);
      if (d2 < best) {
        best = d2;
        best_row = gy * grid + gx;
      }
    }
  }
  if (inside.empty()) inside.push_back(best_row);
  return inside;
}

Vec region_pool(const TokenGrid& grid, const BBox& box) {
  if (grid.grid <= 0 || grid.tokens.rows() != grid.grid * grid.grid) {
    throw InvalidInputError("region_pool: empty or inconsistent grid");
  }
  const auto idx = region_pool_indices(grid.grid, grid.pixels_per_token, box);
  Vec acc = Vec::Zero(grid.tokens.cols());
  for (int i : idx) acc += grid.tokens.row(i).transpose();
  return acc / static_cast<double>(idx.size());
}

Mat3 axis_angle_to_matrix(const Vec3& aa) {
  const double angle = aa.norm();
  if (angle < 1e-12) {
    Mat3 K;
    K << 0, -aa.z(), aa.y(), aa.z(), 0, -aa.x(), -aa.y(), aa.x(), 0;
    return Mat3::Identity() + K;  // first-order series near identity
  }
  return Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
}

Vec3 matrix_to_axis_angle(const Mat3& R) {
  Eigen::AngleAxisd aa(R);
  return aa.angle() * aa.axis();
}

}  // namespace hand3r
