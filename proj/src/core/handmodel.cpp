#include "core/handmodel.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace hand3r {

namespace {

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}
double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

struct FingerSpec {
  Vec3 mcp;
  Vec3 dir;
  double len[3];   // proximal, middle, distal bone lengths
  double radius;
};

}  // namespace

Mat HandTemplate::shaped_joints(const Eigen::Matrix<double, kShapeDims, 1>& beta) const {
  Vec off = joint_shape_basis * beta;
  Mat j = rest_joints;
  for (int i = 0; i < kNumJoints; ++i)
    for (int c = 0; c < 3; ++c) j(i, c) += off(i * 3 + c);
  return j;
}

Mat HandTemplate::shaped_vertices(const Eigen::Matrix<double, kShapeDims, 1>& beta) const {
  Vec off = vertex_shape_basis * beta;
  Mat v = template_vertices;
  for (int i = 0; i < v.rows(); ++i)
    for (int c = 0; c < 3; ++c) v(i, c) += off(i * 3 + c);
  return v;
}

HandTemplate build_template(uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);

  // Base finger layout for a right hand: palm in the x-y plane, fingers
  // pointing +y, thumb toward +x, dorsal side +z.
  std::array<FingerSpec, kNumFingers> fingers = {{
      {{0.030, 0.020, -0.006}, Vec3(0.60, 0.72, -0.35).normalized(), {0.036, 0.030, 0.024}, 0.0110},
      {{0.024, 0.086, 0.0}, Vec3(0.05, 1.0, 0.0).normalized(), {0.040, 0.024, 0.018}, 0.0085},
      {{0.000, 0.090, 0.0}, Vec3(0.0, 1.0, 0.0).normalized(), {0.044, 0.027, 0.020}, 0.0090},
      {{-0.021, 0.086, 0.0}, Vec3(-0.05, 1.0, 0.0).normalized(), {0.040, 0.025, 0.018}, 0.0085},
      {{-0.039, 0.076, 0.0}, Vec3(-0.12, 1.0, 0.0).normalized(), {0.032, 0.020, 0.015}, 0.0075},
  }};
  // Small tip pads keep each chain's segment lengths strictly decreasing
  // proximal -> distal for any jitter draw.
  const double tip_len[kNumFingers] = {0.004, 0.004, 0.005, 0.005, 0.003};

  // Mild per-seed variation; small enough to keep chain lengths ordered.
  for (auto& f : fingers) {
    for (int c = 0; c < 3; ++c) f.mcp(c) += uniform(rng, -0.002, 0.002);
    for (double& l : f.len) l *= uniform(rng, 0.97, 1.03);
    f.radius *= uniform(rng, 0.95, 1.05);
  }

  HandTemplate t;
  t.handedness = Handedness::Right;
  t.rest_joints = Mat::Zero(kNumJoints, 3);
  t.tip_offsets = Mat::Zero(kNumFingers, 3);
  t.parent_index[0] = -1;

  for (int f = 0; f < kNumFingers; ++f) {
    const int mcp = 1 + 3 * f, pip = 2 + 3 * f, dip = 3 + 3 * f;
    t.parent_index[mcp] = 0;
    t.parent_index[pip] = mcp;
    t.parent_index[dip] = pip;
    t.tip_parent[f] = dip;
    t.rest_joints.row(mcp) = fingers[f].mcp.transpose();
    t.rest_joints.row(pip) = (fingers[f].mcp + fingers[f].len[0] * fingers[f].dir).transpose();
    t.rest_joints.row(dip) =
        (fingers[f].mcp + (fingers[f].len[0] + fingers[f].len[1]) * fingers[f].dir).transpose();
    t.tip_offsets.row(f) = ((fingers[f].len[2] + tip_len[f]) * fingers[f].dir).transpose();
  }

  // Vertices: two 6-vertex rings per finger bone plus a 14-vertex palm slab.
  const int kRing = 6;
  std::vector<Vec3> verts;
  std::vector<std::array<std::pair<int, double>, 2>> vweights;  // (joint, weight) pairs
  std::vector<Eigen::Vector3i> faces;

  auto ring_frame = [](const Vec3& d, Vec3& u, Vec3& v) {
    Vec3 ref = std::abs(d.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(1, 0, 0);
    u = d.cross(ref).normalized();
    v = d.cross(u).normalized();
  };

  for (int f = 0; f < kNumFingers; ++f) {
    for (int b = 0; b < 3; ++b) {
      const int joint = 1 + 3 * f + b;
      const Vec3 start = t.rest_joints.row(joint).transpose();
      const Vec3 end = (b < 2) ? Vec3(t.rest_joints.row(joint + 1).transpose())
                               : Vec3(start + t.tip_offsets.row(f).transpose());
      const Vec3 d = (end - start).normalized();
      Vec3 u, v;
      ring_frame(d, u, v);
      const double radius = fingers[f].radius * std::pow(0.85, b);
      const double stations[2] = {0.30, 0.75};
      const int base = static_cast<int>(verts.size());
      for (int s = 0; s < 2; ++s) {
        const Vec3 center = start + stations[s] * (end - start);
        for (int k = 0; k < kRing; ++k) {
          const double a = 2.0 * M_PI * k / kRing;
          verts.push_back(center + radius * (std::cos(a) * u + std::sin(a) * v));
          if (s == 0 || b == 2) {
            vweights.push_back({{{joint, 1.0}, {joint, 0.0}}});
          } else {
            vweights.push_back({{{joint, 0.75}, {joint + 1, 0.25}}});
          }
        }
      }
      for (int k = 0; k < kRing; ++k) {
        const int k1 = (k + 1) % kRing;
        faces.emplace_back(base + k, base + k1, base + kRing + k);
        faces.emplace_back(base + k1, base + kRing + k1, base + kRing + k);
      }
    }
  }

  // Palm slab: 7-point outline, two layers.
  const double px[7] = {0.030, 0.040, 0.026, 0.000, -0.023, -0.042, -0.028};
  const double py[7] = {0.004, 0.045, 0.074, 0.078, 0.074, 0.062, 0.002};
  const double thick = 0.012;
  const int palm_base = static_cast<int>(verts.size());
  for (int layer = 0; layer < 2; ++layer) {
    const double z = layer == 0 ? -thick : thick;
    for (int k = 0; k < 7; ++k) {
      verts.push_back(Vec3(px[k], py[k], z));
      vweights.push_back({{{0, 1.0}, {0, 0.0}}});
    }
  }
  for (int i = 1; i < 6; ++i) {  // top and bottom fans
    faces.emplace_back(palm_base + 7, palm_base + 7 + i, palm_base + 7 + i + 1);
    faces.emplace_back(palm_base, palm_base + i + 1, palm_base + i);
  }
  for (int k = 0; k < 7; ++k) {  // side wall
    const int k1 = (k + 1) % 7;
    faces.emplace_back(palm_base + k, palm_base + k1, palm_base + 7 + k);
    faces.emplace_back(palm_base + k1, palm_base + 7 + k1, palm_base + 7 + k);
  }

  const int V = static_cast<int>(verts.size());
  t.template_vertices = Mat::Zero(V, 3);
  t.skinning_weights = Mat::Zero(V, kNumJoints);
  for (int i = 0; i < V; ++i) {
    t.template_vertices.row(i) = verts[i].transpose();
    for (const auto& [j, w] : vweights[i]) t.skinning_weights(i, j) += w;
    t.skinning_weights.row(i) /= t.skinning_weights.row(i).sum();
  }
  t.faces = std::move(faces);

  // Linear shape basis. Directions are defined on joints; vertices inherit the
  // skinning-weighted joint displacement plus radial terms.
  t.joint_shape_basis = Mat::Zero(kNumJoints * 3, kShapeDims);
  auto set_joint = [&](int joint, int dim, const Vec3& d) {
    if (joint == 0) return;  // wrist stays pinned at the origin
    for (int c = 0; c < 3; ++c) t.joint_shape_basis(joint * 3 + c, dim) = d(c);
  };
  for (int j = 1; j < kNumJoints; ++j) {
    const Vec3 pj = t.rest_joints.row(j).transpose();
    set_joint(j, 0, 0.05 * pj);                      // overall size
    set_joint(j, 1, Vec3(0, 0.05 * pj.y(), 0));      // finger elongation
    set_joint(j, 2, Vec3(0.05 * pj.x(), 0, 0));      // palm width
  }
  for (int f = 0; f < kNumFingers; ++f) {
    if (3 + f >= kShapeDims) break;
    const Vec3 mcp = t.rest_joints.row(1 + 3 * f).transpose();
    for (int b = 1; b < 3; ++b) {
      const int j = 1 + 3 * f + b;
      const Vec3 pj = t.rest_joints.row(j).transpose();
      set_joint(j, 3 + f, 0.5 * (pj - mcp));  // per-finger length
    }
  }
  for (int b = 0; b < 3; ++b) {  // thumb spread
    const int j = 1 + b;
    set_joint(j, 8, Vec3(0.004 * (b + 1), 0, 0));
  }
  // dim 9 affects only vertex thickness below.

  t.vertex_shape_basis = Mat::Zero(V * 3, kShapeDims);
  for (int i = 0; i < V; ++i) {
    for (int j = 0; j < kNumJoints; ++j) {
      const double w = t.skinning_weights(i, j);
      if (w <= 0) continue;
      for (int c = 0; c < 3; ++c)
        t.vertex_shape_basis.row(i * 3 + c) += w * t.joint_shape_basis.row(j * 3 + c);
    }
    const Vec3 p = t.template_vertices.row(i).transpose();
    t.vertex_shape_basis(i * 3 + 0, 0) += 0.0;  // joint term already scales x,y
    t.vertex_shape_basis(i * 3 + 2, 9) += 0.05 * p.z();  // thickness
  }

  return t;
}

HandTemplate mirror_template(const HandTemplate& t) {
  HandTemplate m = t;
  m.handedness = t.handedness == Handedness::Right ? Handedness::Left : Handedness::Right;
  m.rest_joints.col(0) *= -1.0;
  m.tip_offsets.col(0) *= -1.0;
  m.template_vertices.col(0) *= -1.0;
  for (int r = 0; r < m.joint_shape_basis.rows(); ++r)
    if (r % 3 == 0) m.joint_shape_basis.row(r) *= -1.0;
  for (int r = 0; r < m.vertex_shape_basis.rows(); ++r)
    if (r % 3 == 0) m.vertex_shape_basis.row(r) *= -1.0;
  for (auto& f : m.faces) std::swap(f(1), f(2));  // keep outward winding
  return m;
}

HandParams mirror_params(const HandParams& p) {
  HandParams m = p;
  m.handedness = p.handedness == Handedness::Right ? Handedness::Left : Handedness::Right;
  auto flip = [](Vec3 aa) { return Vec3(aa.x(), -aa.y(), -aa.z()); };
  for (int i = 0; i < kNumArticulated; ++i)
    m.theta.row(i) = flip(p.theta.row(i).transpose()).transpose();
  m.global_orient = flip(p.global_orient);
  m.transl = Vec3(-p.transl.x(), p.transl.y(), p.transl.z());
  return m;
}

HandMesh fk_rotmats(const HandTemplate& t, const std::array<Mat3, kNumJoints>& local_rots,
                    const Eigen::Matrix<double, kShapeDims, 1>& beta, const Vec3& transl,
                    FkWorkspace* ws) {
  FkWorkspace local_ws;
  FkWorkspace& w = ws ? *ws : local_ws;
  w.local_rot = local_rots;
  w.shaped_joints = t.shaped_joints(beta);
  w.shaped_verts = t.shaped_vertices(beta);

  w.world_rot[0] = local_rots[0];
  w.world_pos[0] = w.shaped_joints.row(0).transpose() + transl;
  for (int i = 1; i < kNumJoints; ++i) {
    const int pa = t.parent_index[i];
    w.world_rot[i] = w.world_rot[pa] * local_rots[i];
    const Vec3 d = (w.shaped_joints.row(i) - w.shaped_joints.row(pa)).transpose();
    w.world_pos[i] = w.world_pos[pa] + w.world_rot[pa] * d;
  }

  HandMesh mesh;
  mesh.joints = Mat::Zero(kNumKeypoints, 3);
  for (int i = 0; i < kNumJoints; ++i) mesh.joints.row(i) = w.world_pos[i].transpose();
  for (int f = 0; f < kNumFingers; ++f) {
    const int dip = t.tip_parent[f];
    mesh.joints.row(kNumJoints + f) =
        (w.world_pos[dip] + w.world_rot[dip] * t.tip_offsets.row(f).transpose()).transpose();
  }

  const int V = t.num_vertices();
  mesh.vertices = Mat::Zero(V, 3);
  for (int v = 0; v < V; ++v) {
    Vec3 acc = Vec3::Zero();
    const Vec3 vb = w.shaped_verts.row(v).transpose();
    for (int j = 0; j < kNumJoints; ++j) {
      const double wt = t.skinning_weights(v, j);
      if (wt <= 0) continue;
      const Vec3 jb = w.shaped_joints.row(j).transpose();
      acc += wt * (w.world_rot[j] * (vb - jb) + w.world_pos[j]);
    }
    mesh.vertices.row(v) = acc.transpose();
  }
  return mesh;
}

void fk_backward(const HandTemplate& t, const FkWorkspace& w, const Mat& d_joints,
                 const Mat& d_verts, std::array<Mat3, kNumJoints>& d_rots,
                 Eigen::Matrix<double, kShapeDims, 1>& d_beta, Vec3& d_transl) {
  std::array<Mat3, kNumJoints> g_rw;
  std::array<Vec3, kNumJoints> g_p;
  g_rw.fill(Mat3::Zero());
  g_p.fill(Vec3::Zero());
  Mat g_shaped_j = Mat::Zero(kNumJoints, 3);
  Mat g_shaped_v = Mat::Zero(t.num_vertices(), 3);

  if (d_joints.size() > 0) {
    for (int i = 0; i < kNumJoints; ++i) g_p[i] += d_joints.row(i).transpose();
    for (int f = 0; f < kNumFingers; ++f) {
      const int dip = t.tip_parent[f];
      const Vec3 g = d_joints.row(kNumJoints + f).transpose();
      g_p[dip] += g;
      g_rw[dip] += g * t.tip_offsets.row(f);
    }
  }
  if (d_verts.size() > 0) {
    for (int v = 0; v < t.num_vertices(); ++v) {
      const Vec3 g = d_verts.row(v).transpose();
      if (g.isZero(0.0)) continue;
      const Vec3 vb = w.shaped_verts.row(v).transpose();
      for (int j = 0; j < kNumJoints; ++j) {
        const double wt = t.skinning_weights(v, j);
        if (wt <= 0) continue;
        const Vec3 jb = w.shaped_joints.row(j).transpose();
        g_rw[j] += wt * g * (vb - jb).transpose();
        g_p[j] += wt * g;
        const Vec3 back = wt * (w.world_rot[j].transpose() * g);
        g_shaped_v.row(v) += back.transpose();
        g_shaped_j.row(j) -= back.transpose();
      }
    }
  }

  for (auto& r : d_rots) r = Mat3::Zero();
  for (int i = kNumJoints - 1; i >= 1; --i) {
    const int pa = t.parent_index[i];
    const Vec3 d = (w.shaped_joints.row(i) - w.shaped_joints.row(pa)).transpose();
    g_p[pa] += g_p[i];
    g_rw[pa] += g_p[i] * d.transpose();
    const Vec3 gd = w.world_rot[pa].transpose() * g_p[i];
    g_shaped_j.row(i) += gd.transpose();
    g_shaped_j.row(pa) -= gd.transpose();
    g_rw[pa] += g_rw[i] * w.local_rot[i].transpose();
    d_rots[i] = w.world_rot[pa].transpose() * g_rw[i];
  }
  d_rots[0] = g_rw[0];
  d_transl = g_p[0];
  g_shaped_j.row(0) += g_p[0].transpose();  // unused when the wrist is pinned

  d_beta.setZero();
  Vec gj(kNumJoints * 3), gv(t.num_vertices() * 3);
  for (int i = 0; i < kNumJoints; ++i)
    for (int c = 0; c < 3; ++c) gj(i * 3 + c) = g_shaped_j(i, c);
  for (int v = 0; v < t.num_vertices(); ++v)
    for (int c = 0; c < 3; ++c) gv(v * 3 + c) = g_shaped_v(v, c);
  d_beta = t.joint_shape_basis.transpose() * gj + t.vertex_shape_basis.transpose() * gv;
}

HandMesh forward_kinematics(const HandTemplate& t, const HandParams& p) {
  if (p.handedness != t.handedness) {
    throw InvalidInputError("forward_kinematics: params/template handedness mismatch");
  }
  if (!p.beta.allFinite() || !p.theta.allFinite() || !p.global_orient.allFinite() ||
      !p.transl.allFinite()) {
    throw InvalidInputError("forward_kinematics: non-finite parameters");
  }
  std::array<Mat3, kNumJoints> rots;
  rots[0] = axis_angle_to_matrix(p.global_orient);
  for (int i = 0; i < kNumArticulated; ++i)
    rots[i + 1] = axis_angle_to_matrix(p.theta.row(i).transpose());
  return fk_rotmats(t, rots, p.beta, p.transl);
}

HandMesh root_relative(const HandMesh& mesh) {
  HandMesh out = mesh;
  const Eigen::RowVector3d root = mesh.joints.row(0);
  out.joints.rowwise() -= root;
  out.vertices.rowwise() -= root;
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: little-endian binary, stable across runs.

namespace {
constexpr char kMagic[8] = {'H', '3', 'R', 'T', 'P', 'L', '0', '1'};

void write_mat(std::ostream& os, const Mat& m) {
  const int64_t r = m.rows(), c = m.cols();
  os.write(reinterpret_cast<const char*>(&r), 8);
  os.write(reinterpret_cast<const char*>(&c), 8);
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) {
      const double v = m(i, j);
      os.write(reinterpret_cast<const char*>(&v), 8);
    }
}

Mat read_mat(std::istream& is) {
  int64_t r = 0, c = 0;
  is.read(reinterpret_cast<char*>(&r), 8);
  is.read(reinterpret_cast<char*>(&c), 8);
  if (!is || r < 0 || c < 0 || r > (1 << 24) || c > (1 << 24)) {
    throw IoError("template file: corrupt matrix header");
  }
  Mat m(r, c);
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) {
      double v;
      is.read(reinterpret_cast<char*>(&v), 8);
      m(i, j) = v;
    }
  if (!is) throw IoError("template file: truncated matrix data");
  return m;
}
}  // namespace

void save_template(const HandTemplate& t, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_template: cannot open " + path);
  os.write(kMagic, 8);
  const int32_t hand = static_cast<int32_t>(t.handedness);
  os.write(reinterpret_cast<const char*>(&hand), 4);
  write_mat(os, t.rest_joints);
  write_mat(os, t.tip_offsets);
  for (int v : t.parent_index) {
    const int32_t x = v;
    os.write(reinterpret_cast<const char*>(&x), 4);
  }
  for (int v : t.tip_parent) {
    const int32_t x = v;
    os.write(reinterpret_cast<const char*>(&x), 4);
  }
  write_mat(os, t.template_vertices);
  write_mat(os, t.skinning_weights);
  write_mat(os, t.joint_shape_basis);
  write_mat(os, t.vertex_shape_basis);
  const int64_t nf = static_cast<int64_t>(t.faces.size());
  os.write(reinterpret_cast<const char*>(&nf), 8);
  for (const auto& f : t.faces) {
    const int32_t a = f(0), b = f(1), c = f(2);
    os.write(reinterpret_cast<const char*>(&a), 4);
    os.write(reinterpret_cast<const char*>(&b), 4);
    os.write(reinterpret_cast<const char*>(&c), 4);
  }
  if (!os) throw IoError("save_template: write failed for " + path);
}

HandTemplate load_template(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_template: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("load_template: bad magic in " + path);
  }
  HandTemplate t;
  int32_t hand = 0;
  is.read(reinterpret_cast<char*>(&hand), 4);
  t.handedness = static_cast<Handedness>(hand);
  t.rest_joints = read_mat(is);
  t.tip_offsets = read_mat(is);
  for (auto& v : t.parent_index) {
    int32_t x;
    is.read(reinterpret_cast<char*>(&x), 4);
    v = x;
  }
  for (auto& v : t.tip_parent) {
    int32_t x;
    is.read(reinterpret_cast<char*>(&x), 4);
    v = x;
  }
  t.template_vertices = read_mat(is);
  t.skinning_weights = read_mat(is);
  t.joint_shape_basis = read_mat(is);
  t.vertex_shape_basis = read_mat(is);
  int64_t nf = 0;
  is.read(reinterpret_cast<char*>(&nf), 8);
  if (!is || nf < 0 || nf > (1 << 24)) throw IoError("load_template: corrupt face count");
  t.faces.resize(nf);
  for (auto& f : t.faces) {
    int32_t a, b, c;
    is.read(reinterpret_cast<char*>(&a), 4);
    is.read(reinterpret_cast<char*>(&b), 4);
    is.read(reinterpret_cast<char*>(&c), 4);
    f = Eigen::Vector3i(a, b, c);
  }
  if (!is) throw IoError("load_template: truncated file " + path);
  return t;
}

}  // namespace hand3r
