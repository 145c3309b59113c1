#pragma once

#include <random>

#include "core/handmodel.hpp"
#include "core/rasterizer.hpp"

namespace hand3r {

// Static scene: a ground plane plus axis-aligned boxes, z-up world.
struct ScenePrimitive {
  Vec3 lo, hi;  // axis-aligned extents, meters
  Vec3 color;
};

struct SceneSpec {
  double ground_extent = 2.0;
  Vec3 ground_color = Vec3(0.45, 0.42, 0.38);
  std::vector<ScenePrimitive> boxes;
};

struct HandGt {
  HandParams params_world;   // transl/orient in world frame
  Mat keypoints_2d;          // 21 x 2 pixels (camera projection of FK joints)
  BBox box;                  // tight around the unoccluded projection
  double occlusion_ratio = 0.0;
  bool visible = true;
};

struct FrameRecord {
  Image image;
  CameraIntrinsics intrinsics;
  RigidTransform cam_pose;   // camera-to-world
  PointMap gt_pointmap;      // camera frame, scene geometry only
  std::vector<HandGt> hands;
};

struct SequenceSample {
  std::string id;
  uint64_t seed = 0;
  int fps = 30;
  int n_hands = 1;
  int image_res = 128;
  std::vector<FrameRecord> frames;
};

SceneSpec make_scene(std::mt19937_64& rng);

std::vector<RenderTriangle> scene_triangles(const SceneSpec& scene, const RigidTransform& cam_pose);
std::vector<RenderTriangle> hand_triangles(const HandTemplate& tpl, const HandMesh& mesh_world,
                                           const RigidTransform& cam_pose, int tag);

FrameRecord rasterize_frame(const SceneSpec& scene,
                            const std::vector<std::pair<HandParams, const HandTemplate*>>& hands,
                            const RigidTransform& cam_pose, const CameraIntrinsics& K, int res);

SequenceSample generate_sequence(uint64_t seed, int n_frames, int n_hands, int image_res,
                                 uint64_t template_seed = 0);

}  // namespace hand3r
