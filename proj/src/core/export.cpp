#include "core/export.hpp"

#include <cmath>
#include <fstream>

namespace hand3r {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  return f;
}

}  // namespace

void write_obj(const Mat& vertices, const std::vector<Eigen::Vector3i>& faces,
               const std::string& path) {
  if (vertices.cols() != 3) throw InvalidInputError("write_obj: vertices must be N x 3");
  auto f = open_out(path);
  f.precision(9);
  for (long i = 0; i < vertices.rows(); ++i)
    f << "v " << vertices(i, 0) << " " << vertices(i, 1) << " " << vertices(i, 2) << "\n";
  for (const auto& face : faces)
    f << "f " << face(0) + 1 << " " << face(1) + 1 << " " << face(2) + 1 << "\n";
  if (!f) throw IoError("write failed: " + path);
}

void write_ply(const std::vector<PlyPoint>& points, const std::string& path) {
  auto f = open_out(path);
  f << "ply\nformat ascii 1.0\n";
  f << "element vertex " << points.size() << "\n";
  f << "property float x\nproperty float y\nproperty float z\n";
  f << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  f << "end_header\n";
  f.precision(7);
  for (const auto& p : points) {
    f << p.pos.x() << " " << p.pos.y() << " " << p.pos.z();
    for (int c = 0; c < 3; ++c)
      f << " " << static_cast<int>(std::lround(std::clamp(p.color(c), 0.0, 1.0) * 255.0));
    f << "\n";
  }
  if (!f) throw IoError("write failed: " + path);
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  auto f = open_out(path);
  f.precision(12);
  for (size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
  f << "\n";
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw InvalidInputError("write_csv: row width does not match header");
    for (size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << row[i];
    f << "\n";
  }
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace hand3r
