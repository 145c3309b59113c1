#pragma once

#include <array>

#include "core/geometry.hpp"

namespace hand3r {

inline constexpr int kNumJoints = 16;       // wrist + 3 per finger
inline constexpr int kNumFingers = 5;
inline constexpr int kNumKeypoints = 21;    // 16 tree joints + 5 tips
inline constexpr int kNumArticulated = 15;  // all joints except the wrist
inline constexpr int kShapeDims = 10;

enum class Handedness { Right = 0, Left = 1 };

// Keypoint order: 0 wrist; fingers thumb, index, middle, ring, pinky, each as
// (mcp, pip, dip) -> joints 1..15; fingertips appended 16..20 in the same
// finger order.
struct HandTemplate {
  Handedness handedness = Handedness::Right;
  Mat rest_joints;                     // 16 x 3, wrist at the origin
  Mat tip_offsets;                     // 5 x 3, local offset from the distal joint
  std::array<int, kNumJoints> parent_index{};  // -1 for the wrist
  std::array<int, kNumFingers> tip_parent{};   // distal joint per finger
  Mat template_vertices;               // V x 3
  Mat skinning_weights;                // V x 16, rows sum to 1
  Mat joint_shape_basis;               // 48 x 10, row j*3+c
  Mat vertex_shape_basis;              // 3V x 10, row v*3+c
  std::vector<Eigen::Vector3i> faces;

  int num_vertices() const { return static_cast<int>(template_vertices.rows()); }
  // Joint/vertex rest positions displaced by the linear shape basis.
  Mat shaped_joints(const Eigen::Matrix<double, kShapeDims, 1>& beta) const;
  Mat shaped_vertices(const Eigen::Matrix<double, kShapeDims, 1>& beta) const;
};

struct HandParams {
  Eigen::Matrix<double, kShapeDims, 1> beta = Eigen::Matrix<double, kShapeDims, 1>::Zero();
  Mat theta = Mat::Zero(kNumArticulated, 3);  // axis-angle per articulated joint
  Vec3 global_orient = Vec3::Zero();          // axis-angle about the wrist
  Vec3 transl = Vec3::Zero();                 // meters
  Handedness handedness = Handedness::Right;
};

struct HandMesh {
  Mat vertices;  // V x 3
  Mat joints;    // 21 x 3
};

HandTemplate build_template(uint64_t seed);
HandTemplate mirror_template(const HandTemplate& t);

// Axis-angle params mirrored across the x=0 plane (left <-> right).
HandParams mirror_params(const HandParams& p);

HandMesh forward_kinematics(const HandTemplate& t, const HandParams& p);
HandMesh root_relative(const HandMesh& mesh);

// Rotation-matrix FK used on the training path. local_rots[0] is the global
// orientation; local_rots[1..15] the articulated joints. The workspace keeps
// the intermediates needed by fk_backward.
struct FkWorkspace {
  std::array<Mat3, kNumJoints> world_rot;
  std::array<Vec3, kNumJoints> world_pos;
  std::array<Mat3, kNumJoints> local_rot;
  Mat shaped_joints;   // 16 x 3
  Mat shaped_verts;    // V x 3
};

HandMesh fk_rotmats(const HandTemplate& t, const std::array<Mat3, kNumJoints>& local_rots,
                    const Eigen::Matrix<double, kShapeDims, 1>& beta, const Vec3& transl,
                    FkWorkspace* ws = nullptr);

// Reverse-mode gradients of fk_rotmats outputs. d_joints is 21 x 3, d_verts
// V x 3 (either may be empty for zero).
void fk_backward(const HandTemplate& t, const FkWorkspace& ws, const Mat& d_joints,
                 const Mat& d_verts, std::array<Mat3, kNumJoints>& d_rots,
                 Eigen::Matrix<double, kShapeDims, 1>& d_beta, Vec3& d_transl);

void save_template(const HandTemplate& t, const std::string& path);
HandTemplate load_template(const std::string& path);

}  // namespace hand3r
