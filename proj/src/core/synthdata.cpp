#include "core/synthdata.hpp"

#include <cmath>
#include <random>

namespace hand3r {

namespace {

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}
double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}
double gauss(std::mt19937_64& rng) {
  const double u1 = std::max(uniform01(rng), 1e-300);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

const Vec3 kLightDir = Vec3(0.3, -0.4, 0.85).normalized();
const Vec3 kBackground = Vec3(0.74, 0.80, 0.88);

Vec3 shade(const Vec3& base, const Vec3& n_world) {
  const double lum = 0.55 + 0.45 * std::abs(n_world.dot(kLightDir));
  return (base * lum).cwiseMin(1.0);
}

// One sinusoid channel: value(t) = base + amp * sin(2*pi*freq*t + phase).
struct Wave {
  double base = 0, amp = 0, freq = 0, phase = 0;
  double at(double t) const { return base + amp * std::sin(2.0 * M_PI * freq * t + phase); }
};

Wave make_wave(std::mt19937_64& rng, double base_lo, double base_hi, double amp_lo,
               double amp_hi, double freq_lo, double freq_hi) {
  Wave w;
  w.base = uniform(rng, base_lo, base_hi);
  w.amp = uniform(rng, amp_lo, amp_hi);
  w.freq = uniform(rng, freq_lo, freq_hi);
  w.phase = uniform(rng, 0.0, 2.0 * M_PI);
  return w;
}

// Fixed 4-dim pose synergy basis mapping latent coordinates to per-joint
// axis-angles. Row order matches HandParams::theta (finger-major, mcp/pip/dip).
// 0: whole-hand curl, 1: finger spread, 2: thumb curl+opposition,
// 3: index/middle vs ring/pinky differential curl.
Mat synergy_basis() {
  static const Mat basis = [] {
    Mat b = Mat::Zero(4, kNumArticulated * 3);
    const Vec3 dirs[kNumFingers] = {
        Vec3(0.60, 0.72, -0.35).normalized(), Vec3(0.05, 1.0, 0.0).normalized(),
        Vec3(0.0, 1.0, 0.0), Vec3(-0.05, 1.0, 0.0).normalized(),
        Vec3(-0.12, 1.0, 0.0).normalized()};
    auto curl_axis = [&](int f) {
      const Vec3 toward = f == 0 ? Vec3(-0.45, -0.10, -0.89).normalized() : Vec3(0, 0, -1);
      return Vec3(dirs[f].cross(toward).normalized());
    };
    auto put = [&](int s, int finger, int bone, const Vec3& aa) {
      b.block<1, 3>(s, (finger * 3 + bone) * 3) += aa.transpose();
    };
    const double bone_w[3] = {1.0, 1.1, 0.8};
    for (int f = 0; f < kNumFingers; ++f)
      for (int bb = 0; bb < 3; ++bb) put(0, f, bb, bone_w[bb] * curl_axis(f));
    const double spread[kNumFingers] = {1.2, 0.8, 0.15, -0.5, -1.0};
    for (int f = 0; f < kNumFingers; ++f) put(1, f, 0, Vec3(0, 0, -0.4 * spread[f]));
    const double thumb_w[3] = {1.2, 1.0, 0.8};
    for (int bb = 0; bb < 3; ++bb) put(2, 0, bb, thumb_w[bb] * curl_axis(0));
    put(2, 0, 0, Vec3(0, 0, 0.5));
    const double diff_w[3] = {0.8, 0.9, 0.6};
    for (int f = 1; f <= 2; ++f)
      for (int bb = 0; bb < 3; ++bb) put(3, f, bb, diff_w[bb] * curl_axis(f));
    for (int f = 3; f <= 4; ++f)
      for (int bb = 0; bb < 3; ++bb) put(3, f, bb, -diff_w[bb] * curl_axis(f));
    return b;
  }();
  return basis;
}

Mat theta_from_synergies(const Eigen::Vector4d& c) {
  Vec flat = synergy_basis().transpose() * c;
  Mat theta(kNumArticulated, 3);
  for (int j = 0; j < kNumArticulated; ++j) {
    Vec3 aa = flat.segment<3>(j * 3);
    const double a = aa.norm();
    if (a > 1.5) aa *= 1.5 / a;  // keep joints out of self-intersection range
    theta.row(j) = aa.transpose();
  }
  return theta;
}

// Smoothly wandering trajectory of one hand (right-hand convention; left hands
// are produced by mirroring afterwards).
struct HandMotion {
  Eigen::Matrix<double, kShapeDims, 1> beta;
  std::array<Wave, 4> synergy;
  std::array<Wave, 3> euler;   // slow z-y-x orientation wander
  std::array<Wave, 3> transl;  // around a fixed center

  static HandMotion sample(std::mt19937_64& rng, const Vec3& center) {
    HandMotion m;
    for (int i = 0; i < kShapeDims; ++i)
      m.beta(i) = std::clamp(0.4 * gauss(rng), -1.2, 1.2);
    m.synergy[0] = make_wave(rng, 0.15, 0.45, 0.25, 0.55, 0.15, 0.40);
    for (int i = 1; i < 4; ++i) m.synergy[i] = make_wave(rng, -0.15, 0.15, 0.25, 0.55, 0.15, 0.40);
    m.euler[0] = make_wave(rng, -M_PI, M_PI, 0.15, 0.40, 0.08, 0.25);
    m.euler[1] = make_wave(rng, -0.6, 0.6, 0.15, 0.40, 0.08, 0.25);
    m.euler[2] = make_wave(rng, -0.6, 0.6, 0.15, 0.40, 0.08, 0.25);
    for (int i = 0; i < 3; ++i) {
      m.transl[i] = make_wave(rng, 0.0, 0.0, 0.06, 0.13, 0.10, 0.30);
      m.transl[i].base = center(i);
    }
    return m;
  }

  HandParams at(double t) const {
    HandParams p;
    p.beta = beta;
    Eigen::Vector4d c;
    for (int i = 0; i < 4; ++i) c(i) = synergy[i].at(t);
    p.theta = theta_from_synergies(c);
    const Mat3 R = (Eigen::AngleAxisd(euler[0].at(t), Vec3::UnitZ()) *
                    Eigen::AngleAxisd(euler[1].at(t), Vec3::UnitY()) *
                    Eigen::AngleAxisd(euler[2].at(t), Vec3::UnitX()))
                       .toRotationMatrix();
    p.global_orient = matrix_to_axis_angle(R);
    for (int i = 0; i < 3; ++i) p.transl(i) = transl[i].at(t);
    return p;
  }
};

struct CameraMotion {
  double radius, height, az0, az_rate;
  Wave bob;
  Vec3 target;

  static CameraMotion sample(std::mt19937_64& rng, const Vec3& target) {
    CameraMotion c;
    c.radius = uniform(rng, 0.85, 1.10);
    c.height = uniform(rng, 0.55, 0.85);
    c.az0 = uniform(rng, 0.0, 2.0 * M_PI);
    c.az_rate = uniform(rng, 0.010, 0.024) * (uniform01(rng) < 0.5 ? -1.0 : 1.0);  // rad/frame
    c.bob = make_wave(rng, 0.0, 0.0, 0.02, 0.05, 0.05, 0.15);
    c.target = target;
    return c;
  }

  RigidTransform at(int frame, double t) const {
    const double az = az0 + az_rate * frame;
    const Vec3 eye(radius * std::cos(az), radius * std::sin(az), height + bob.at(t));
    const Vec3 z = (target - eye).normalized();
    const Vec3 x = z.cross(Vec3::UnitZ()).normalized();
    const Vec3 y = z.cross(x);
    RigidTransform pose;
    pose.rotation.col(0) = x;
    pose.rotation.col(1) = y;
    pose.rotation.col(2) = z;
    pose.translation = eye;
    return pose;
  }
};

void box_triangles(const Vec3& lo, const Vec3& hi, const Vec3& color,
                   const RigidTransform& world_to_cam, int tag,
                   std::vector<RenderTriangle>& out) {
  const Vec3 c[8] = {{lo.x(), lo.y(), lo.z()}, {hi.x(), lo.y(), lo.z()},
                     {hi.x(), hi.y(), lo.z()}, {lo.x(), hi.y(), lo.z()},
                     {lo.x(), lo.y(), hi.z()}, {hi.x(), lo.y(), hi.z()},
                     {hi.x(), hi.y(), hi.z()}, {lo.x(), hi.y(), hi.z()}};
  static const int faces[6][4] = {{0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4},
                                  {2, 3, 7, 6}, {1, 2, 6, 5}, {3, 0, 4, 7}};
  for (const auto& f : faces) {
    const Vec3 n = (c[f[1]] - c[f[0]]).cross(c[f[2]] - c[f[0]]).normalized();
    const Vec3 col = shade(color, n);
    out.push_back({world_to_cam.apply(c[f[0]]), world_to_cam.apply(c[f[1]]),
                   world_to_cam.apply(c[f[2]]), col, tag});
    out.push_back({world_to_cam.apply(c[f[0]]), world_to_cam.apply(c[f[2]]),
                   world_to_cam.apply(c[f[3]]), col, tag});
  }
}

// Base color per template vertex from its dominant skinning joint: distinct
// finger hues, darker toward the fingertips, palm skin-tone.
Vec3 vertex_base_color(const HandTemplate& tpl, int v) {
  int joint = 0;
  tpl.skinning_weights.row(v).maxCoeff(&joint);
  if (joint == 0) return Vec3(0.82, 0.64, 0.54);
  const int finger = (joint - 1) / 3, bone = (joint - 1) % 3;
  static const Vec3 hues[kNumFingers] = {{0.90, 0.35, 0.30}, {0.95, 0.75, 0.25},
                                         {0.35, 0.80, 0.35}, {0.30, 0.50, 0.90},
                                         {0.75, 0.40, 0.85}};
  const double fade[3] = {1.0, 0.85, 0.70};
  return hues[finger] * fade[bone];
}

}  // namespace

SceneSpec make_scene(std::mt19937_64& rng) {
  SceneSpec scene;
  scene.ground_color = Vec3(uniform(rng, 0.35, 0.5), uniform(rng, 0.32, 0.48),
                            uniform(rng, 0.30, 0.45));
  const int n_boxes = 3 + static_cast<int>(uniform01(rng) * 3.0);
  for (int i = 0; i < n_boxes; ++i) {
    const double az = uniform(rng, 0.0, 2.0 * M_PI);
    const double r = uniform(rng, 0.35, 0.62);
    const Vec3 center(r * std::cos(az), r * std::sin(az), 0.0);
    const Vec3 half(uniform(rng, 0.04, 0.12), uniform(rng, 0.04, 0.12), 0.0);
    const double h = uniform(rng, 0.08, 0.40);
    ScenePrimitive p;
    p.lo = Vec3(center.x() - half.x(), center.y() - half.y(), 0.0);
    p.hi = Vec3(center.x() + half.x(), center.y() + half.y(), h);
    p.color = Vec3(uniform(rng, 0.2, 0.95), uniform(rng, 0.2, 0.95), uniform(rng, 0.2, 0.95));
    scene.boxes.push_back(p);
  }
  // Tall thin pillar placed inside the camera orbit; as the camera circles it
  // sweeps across the hand's line of sight and produces heavy occlusion.
  if (uniform01(rng) < 0.7) {
    const double az = uniform(rng, 0.0, 2.0 * M_PI);
    const double r = uniform(rng, 0.48, 0.62);
    const double hw = uniform(rng, 0.04, 0.10);
    ScenePrimitive p;
    p.lo = Vec3(r * std::cos(az) - hw, r * std::sin(az) - hw, 0.0);
    p.hi = Vec3(r * std::cos(az) + hw, r * std::sin(az) + hw, uniform(rng, 0.55, 0.85));
    p.color = Vec3(uniform(rng, 0.3, 0.8), uniform(rng, 0.3, 0.8), uniform(rng, 0.3, 0.8));
    scene.boxes.push_back(p);
  }
  return scene;
}

std::vector<RenderTriangle> scene_triangles(const SceneSpec& scene,
                                            const RigidTransform& cam_pose) {
  const RigidTransform w2c = inverse(cam_pose);
  std::vector<RenderTriangle> tris;
  const double e = scene.ground_extent;
  const Vec3 g[4] = {{-e, -e, 0}, {e, -e, 0}, {e, e, 0}, {-e, e, 0}};
  const Vec3 gcol = shade(scene.ground_color, Vec3::UnitZ());
  tris.push_back({w2c.apply(g[0]), w2c.apply(g[1]), w2c.apply(g[2]), gcol, 0});
  tris.push_back({w2c.apply(g[0]), w2c.apply(g[2]), w2c.apply(g[3]), gcol, 0});
  for (const auto& b : scene.boxes) box_triangles(b.lo, b.hi, b.color, w2c, 0, tris);
  return tris;
}

std::vector<RenderTriangle> hand_triangles(const HandTemplate& tpl, const HandMesh& mesh_world,
                                           const RigidTransform& cam_pose, int tag) {
  const RigidTransform w2c = inverse(cam_pose);
  std::vector<RenderTriangle> tris;
  tris.reserve(tpl.faces.size());
  for (const auto& f : tpl.faces) {
    const Vec3 a = mesh_world.vertices.row(f(0)).transpose();
    const Vec3 b = mesh_world.vertices.row(f(1)).transpose();
    const Vec3 c = mesh_world.vertices.row(f(2)).transpose();
    Vec3 n = (b - a).cross(c - a);
    const double nn = n.norm();
    if (nn > 1e-12) n /= nn;
    const Vec3 base = (vertex_base_color(tpl, f(0)) + vertex_base_color(tpl, f(1)) +
                       vertex_base_color(tpl, f(2))) /
                      3.0;
    tris.push_back({w2c.apply(a), w2c.apply(b), w2c.apply(c), shade(base, n), tag});
  }
  return tris;
}

FrameRecord rasterize_frame(const SceneSpec& scene,
                            const std::vector<std::pair<HandParams, const HandTemplate*>>& hands,
                            const RigidTransform& cam_pose, const CameraIntrinsics& K, int res) {
  FrameRecord rec;
  rec.intrinsics = K;
  rec.cam_pose = cam_pose;
  const RigidTransform w2c = inverse(cam_pose);

  const std::vector<RenderTriangle> scene_tris = scene_triangles(scene, cam_pose);
  std::vector<std::vector<RenderTriangle>> hand_tris;
  std::vector<HandMesh> meshes_world;
  for (size_t h = 0; h < hands.size(); ++h) {
    meshes_world.push_back(forward_kinematics(*hands[h].second, hands[h].first));
    hand_tris.push_back(
        hand_triangles(*hands[h].second, meshes_world.back(), cam_pose, 1 + static_cast<int>(h)));
  }

  // Composite image with every object present.
  std::vector<RenderTriangle> all = scene_tris;
  for (const auto& ht : hand_tris) all.insert(all.end(), ht.begin(), ht.end());
  RenderResult composite = rasterize(all, K, res, res, kBackground);
  rec.image = composite.image;
  for (double& v : rec.image.data) v = std::round(v * 255.0) / 255.0;

  // Scene-only pass: depth defines the ground-truth pointmap so stored points
  // lie on the primitives, never on a hand.
  RenderResult scene_only = rasterize(scene_tris, K, res, res, kBackground);
  rec.gt_pointmap = PointMap(res, res);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const double z = scene_only.depth(y, x);
      if (!std::isfinite(z)) continue;
      Vec3 p((x - K.cx) / K.fx * z, (y - K.cy) / K.fy * z, z);
      for (int c = 0; c < 3; ++c) p(c) = quantize_f32(p(c));
      rec.gt_pointmap.points[rec.gt_pointmap.idx(x, y)] = p;
      rec.gt_pointmap.valid[rec.gt_pointmap.idx(x, y)] = 1;
    }

  for (size_t h = 0; h < hands.size(); ++h) {
    HandGt gt;
    gt.params_world = hands[h].first;
    const Mat joints_cam = w2c.apply_rows(meshes_world[h].joints);
    gt.keypoints_2d = project_points(K, joints_cam);

    // Unoccluded footprint on an extended canvas: total pixel count and the
    // tight projected box (visible + hidden parts both included).
    const CoverageResult cov = rasterize_coverage(hand_tris[h], K, res, res, res);
    gt.visible = cov.any;
    if (cov.any) {
      gt.box.cx = 0.5 * (cov.min_x + cov.max_x);
      gt.box.cy = 0.5 * (cov.min_y + cov.max_y);
      gt.box.w = cov.max_x - cov.min_x + 1.0;
      gt.box.h = cov.max_y - cov.min_y + 1.0;
    } else {
      gt.box = {K.cx, K.cy, 1.0, 1.0};
    }

    // Occlusion counts only scene geometry and the image border, so it is
    // monotone under added primitives and independent of the other hand.
    std::vector<RenderTriangle> vs_scene = scene_tris;
    vs_scene.insert(vs_scene.end(), hand_tris[h].begin(), hand_tris[h].end());
    RenderResult solo = rasterize(vs_scene, K, res, res, kBackground);
    long vis_px = 0;
    const int tag = 1 + static_cast<int>(h);
    for (int32_t o : solo.owner) vis_px += (o == tag);
    gt.occlusion_ratio =
        cov.pixels > 0 ? static_cast<double>(cov.pixels - vis_px) / cov.pixels : 1.0;
    rec.hands.push_back(std::move(gt));
  }
  return rec;
}

SequenceSample generate_sequence(uint64_t seed, int n_frames, int n_hands, int image_res,
                                 uint64_t template_seed) {
  if (n_frames < 1) throw InvalidInputError("generate_sequence: n_frames must be >= 1");
  if (n_hands < 1 || n_hands > 2)
    throw InvalidInputError("generate_sequence: n_hands must be 1 or 2");
  if (image_res < 64) throw InvalidInputError("generate_sequence: image_res must be >= 64");

  SequenceSample seq;
  seq.id = "seq-" + std::to_string(seed);
  seq.seed = seed;
  seq.n_hands = n_hands;
  seq.image_res = image_res;

  std::mt19937_64 rng(seed ^ 0xa5c3b7d91e2f4680ull);
  const SceneSpec scene = make_scene(rng);
  const Vec3 hand_center(0.0, 0.0, 0.32);
  const CameraMotion cam = CameraMotion::sample(rng, Vec3(0.0, 0.0, 0.30));

  const HandTemplate tpl_right = build_template(template_seed);
  const HandTemplate tpl_left = mirror_template(tpl_right);

  // Right hand offset one way, the (mirrored) left hand the other; a lone hand
  // stays centered.
  std::vector<HandMotion> motions;
  std::vector<Handedness> sides;
  for (int h = 0; h < n_hands; ++h) {
    const double off = n_hands == 1 ? 0.0 : 0.12;
    motions.push_back(HandMotion::sample(rng, hand_center + Vec3(off, 0, 0)));
    sides.push_back(h == 0 ? Handedness::Right : Handedness::Left);
  }

  CameraIntrinsics K;
  K.fx = K.fy = 1.25 * image_res;
  K.cx = K.cy = (image_res - 1) / 2.0;

  seq.frames.reserve(n_frames);
  for (int k = 0; k < n_frames; ++k) {
    const double t = static_cast<double>(k) / seq.fps;
    std::vector<std::pair<HandParams, const HandTemplate*>> hands;
    for (int h = 0; h < n_hands; ++h) {
      HandParams p = motions[h].at(t);
      if (sides[h] == Handedness::Left) p = mirror_params(p);
      hands.emplace_back(p, sides[h] == Handedness::Right ? &tpl_right : &tpl_left);
    }
    seq.frames.push_back(rasterize_frame(scene, hands, cam.at(k, t), K, image_res));
  }
  return seq;
}

}  // namespace hand3r
