#pragma once

#include "core/common.hpp"

#include <Eigen/Core>

namespace hand3r {

void write_obj(const Mat& vertices, const std::vector<Eigen::Vector3i>& faces,
               const std::string& path);

struct PlyPoint {
  Vec3 pos;
  Vec3 color = Vec3(0.7, 0.7, 0.7);  // [0,1]
};

void write_ply(const std::vector<PlyPoint>& points, const std::string& path);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

}  // namespace hand3r
