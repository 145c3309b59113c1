#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hand3r {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Error categories surfaced through the C API as status codes.
struct InvalidInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// RGB image, row-major, values in [0,1]. Pixel (x,y) channel c at
// data[(y*width + x)*3 + c].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, 0.0) {}

  double& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
};

// Round to the nearest float32 value. The volatile temporary keeps the
// optimizer from folding the narrowing conversion away and then assuming the
// input was already representable.
inline double quantize_f32(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

// FNV-1a, used for file checksums and config hashes in run manifests.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace hand3r
