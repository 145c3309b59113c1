#include "core/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"

namespace hand3r {

using Id = ad::Tape::Id;
using nlohmann::json;

namespace {

constexpr int kManoRawDim = kNumJoints * 6 + kShapeDims;

// Elementwise sign pattern of R -> M R M with M = diag(-1, 1, 1).
const Mat& mirror_sign_mask() {
  static const Mat mask = [] {
    Mat m = Mat::Ones(3, 3);
    for (int i = 1; i < 3; ++i) {
      m(0, i) = -1;
      m(i, 0) = -1;
    }
    return m;
  }();
  return mask;
}

double sq(double v) { return v * v; }

double geodesic_angle_sq(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return sq(std::acos(c));
}

std::vector<size_t> sorted_hand_order(const std::vector<HandGt>& hands) {
  std::vector<size_t> order(hands.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const HandGt& ha = hands[a];
    const HandGt& hb = hands[b];
    if (ha.params_world.handedness != hb.params_world.handedness)
      return ha.params_world.handedness < hb.params_world.handedness;
    return ha.box.cx < hb.box.cx;
  });
  return order;
}

Vec3 gt_transl_cam(const HandGt& hand, const RigidTransform& w2c) {
  return w2c.apply(hand.params_world.transl);
}

void check_finite_loss(const LossBreakdown& l, long step) {
  const std::pair<const char*, double> terms[] = {
      {"joint", l.joint}, {"vert", l.vert}, {"trans", l.trans}, {"abs", l.abs},
      {"2d", l.px2d},     {"pts", l.pts},   {"cam", l.cam},     {"total", l.total}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v))
      throw NumericError("non-finite loss at step " + std::to_string(step) + " in term " +
                         name);
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw InvalidInputError("TrainConfig: stage must be 1 or 2");
  if (lambda_joint < 0 || lambda_vert < 0 || gamma < 0 || conf_reg < 0)
    throw InvalidInputError("TrainConfig: loss weights must be >= 0");
  if (lr <= 0 || steps < 1 || batch < 1 || bptt < 1)
    throw InvalidInputError("TrainConfig: lr, steps, batch, bptt must be positive");
  if (train_fraction <= 0 || train_fraction > 1)
    throw InvalidInputError("TrainConfig: train_fraction must be in (0, 1]");
}

std::string TrainConfig::to_json() const {
  json j;
  j["stage"] = stage;
  j["lambda_joint"] = lambda_joint;
  j["lambda_vert"] = lambda_vert;
  j["gamma"] = gamma;
  j["conf_reg"] = conf_reg;
  j["lr"] = lr;
  j["steps"] = steps;
  j["batch"] = batch;
  j["bptt"] = bptt;
  j["seed"] = seed;
  j["scene_enc_lr_scale"] = scene_enc_lr_scale;
  j["stage2_train_mano"] = stage2_train_mano;
  j["train_fraction"] = train_fraction;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidInputError(std::string("TrainConfig: bad JSON: ") + e.what());
  }
  TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  get("stage", c.stage);
  get("lambda_joint", c.lambda_joint);
  get("lambda_vert", c.lambda_vert);
  get("gamma", c.gamma);
  get("conf_reg", c.conf_reg);
  get("lr", c.lr);
  get("steps", c.steps);
  get("batch", c.batch);
  get("bptt", c.bptt);
  get("seed", c.seed);
  get("scene_enc_lr_scale", c.scene_enc_lr_scale);
  get("stage2_train_mano", c.stage2_train_mano);
  get("train_fraction", c.train_fraction);
  c.validate();
  return c;
}

std::pair<std::vector<int>, std::vector<int>> train_holdout_split(int n, double fraction) {
  if (n < 1) throw InvalidInputError("train_holdout_split: empty dataset");
  int n_train = static_cast<int>(std::ceil(n * fraction));
  n_train = std::clamp(n_train, 1, n);
  std::vector<int> train, holdout;
  for (int i = 0; i < n; ++i) (i < n_train ? train : holdout).push_back(i);
  return {train, holdout};
}

TokenTargets token_targets(const PointMap& pm, int grid) {
  if (pm.width <= 0 || pm.width != pm.height || pm.width % grid != 0)
    throw InvalidInputError("token_targets: pointmap not divisible into the token grid");
  const int ppt = pm.width / grid;
  TokenTargets t;
  t.points = Mat::Zero(grid * grid, 3);
  t.valid.assign(static_cast<size_t>(grid) * grid, 0);
  std::vector<long> counts(static_cast<size_t>(grid) * grid, 0);
  for (int y = 0; y < pm.height; ++y)
    for (int x = 0; x < pm.width; ++x) {
      if (!pm.valid[pm.idx(x, y)]) continue;
      const int tok = (y / ppt) * grid + (x / ppt);
      t.points.row(tok) += pm.points[pm.idx(x, y)].transpose();
      ++counts[tok];
    }
  for (int i = 0; i < grid * grid; ++i)
    if (counts[i] > 0) {
      t.points.row(i) /= static_cast<double>(counts[i]);
      t.valid[i] = 1;
    }
  return t;
}

Id fk_mano_node(ad::Tape& t, Id raw, const HandTemplate& tpl, Handedness handedness) {
  if (t.val(raw).rows() != 1 || t.val(raw).cols() != kManoRawDim)
    throw InvalidInputError("fk_mano_node: raw output must be 1 x " +
                            std::to_string(kManoRawDim));
  auto rot_ids = std::make_shared<std::vector<Id>>();
  for (int j = 0; j < kNumJoints; ++j) {
    Id R = t.rot6d_to_matrix(t.slice_cols(raw, j * 6, 6));
    if (handedness == Handedness::Left) R = t.mul_const(R, mirror_sign_mask());
    rot_ids->push_back(R);
  }
  const Id beta_id = t.slice_cols(raw, kNumJoints * 6, kShapeDims);

  std::array<Mat3, kNumJoints> rots;
  for (int j = 0; j < kNumJoints; ++j) rots[j] = t.val((*rot_ids)[j]);
  Eigen::Matrix<double, kShapeDims, 1> beta = t.val(beta_id).row(0).transpose();

  auto ws = std::make_shared<FkWorkspace>();
  HandMesh mesh = fk_rotmats(tpl, rots, beta, Vec3::Zero(), ws.get());
  const long V = mesh.vertices.rows();
  Mat out(kNumKeypoints + V, 3);
  out.topRows(kNumKeypoints) = mesh.joints;
  out.bottomRows(V) = mesh.vertices;

  const HandTemplate* tpl_ptr = &tpl;
  return t.custom(std::move(out), t.needs_grad(raw),
                  [rot_ids, beta_id, ws, tpl_ptr, V](ad::Tape& tt, const Mat& g) {
                    std::array<Mat3, kNumJoints> d_rots;
                    Eigen::Matrix<double, kShapeDims, 1> d_beta;
                    Vec3 d_transl;
                    fk_backward(*tpl_ptr, *ws, g.topRows(kNumKeypoints), g.bottomRows(V),
                                d_rots, d_beta, d_transl);
                    for (int j = 0; j < kNumJoints; ++j)
                      if (tt.needs_grad((*rot_ids)[j])) tt.grad((*rot_ids)[j]) += d_rots[j];
                    if (tt.needs_grad(beta_id)) tt.grad(beta_id) += d_beta.transpose();
                  });
}

LossBreakdown loss_stage1(const HandPrediction& pred, const HandParams& gt,
                          const HandTemplate& tpl, const TrainConfig& cfg) {
  if (pred.handedness != gt.handedness || tpl.handedness != gt.handedness)
    throw InvalidInputError("loss_stage1: handedness convention mismatch");
  const HandMesh pred_mesh = fk_rotmats(tpl, pred.rotations, pred.beta, Vec3::Zero());
  const HandMesh gt_mesh = root_relative(forward_kinematics(tpl, gt));
  LossBreakdown l;
  l.joint = (pred_mesh.joints - gt_mesh.joints).squaredNorm() / kNumKeypoints;
  l.vert = (pred_mesh.vertices - gt_mesh.vertices).squaredNorm() / gt_mesh.vertices.rows();
  l.total = cfg.lambda_joint * l.joint + cfg.lambda_vert * l.vert;
  return l;
}

LossBreakdown loss_stage2(const std::vector<HandPrediction>& hands,
                          const ScenePrediction& scene, const FrameRecord& gt,
                          const HandTemplate& tpl_right, const HandTemplate& tpl_left,
                          const TrainConfig& cfg) {
  if (hands.size() != gt.hands.size())
    throw InvalidInputError("loss_stage2: prediction/ground-truth hand count mismatch");
  if (gt.gt_pointmap.width <= 0)
    throw InvalidInputError("loss_stage2: missing ground-truth field gt_pointmap");
  const RigidTransform w2c = inverse(gt.cam_pose);
  const double diag_sq = 2.0 * sq(static_cast<double>(gt.image.width));

  LossBreakdown l;
  for (size_t h = 0; h < hands.size(); ++h) {
    const HandPrediction& p = hands[h];
    const HandGt& g = gt.hands[h];
    if (p.handedness != g.params_world.handedness)
      throw InvalidInputError("loss_stage2: handedness mismatch at hand " + std::to_string(h));
    if (g.keypoints_2d.rows() != kNumKeypoints)
      throw InvalidInputError("loss_stage2: missing ground-truth field keypoints_2d");
    const HandTemplate& tpl = p.handedness == Handedness::Right ? tpl_right : tpl_left;
    const Mat gt_cam =
        w2c.apply_rows(forward_kinematics(tpl, g.params_world).joints);
    const Mat pred_cam = fk_rotmats(tpl, p.rotations, p.beta, p.transl_cam).joints;

    l.trans += (p.transl_cam - gt_transl_cam(g, w2c)).squaredNorm();
    l.abs += (pred_cam - gt_cam).squaredNorm() / kNumKeypoints;
    double px = 0;
    for (int j = 0; j < kNumKeypoints; ++j) {
      const double z = std::max(pred_cam(j, 2), 0.1);
      const double u = gt.intrinsics.fx * pred_cam(j, 0) / z + gt.intrinsics.cx;
      const double v = gt.intrinsics.fy * pred_cam(j, 1) / z + gt.intrinsics.cy;
      px += sq(u - g.keypoints_2d(j, 0)) + sq(v - g.keypoints_2d(j, 1));
    }
    l.px2d += px / kNumKeypoints / diag_sq;
  }
  if (!hands.empty()) {
    l.trans /= hands.size();
    l.abs /= hands.size();
    l.px2d /= hands.size();
  }

  const int grid = static_cast<int>(std::lround(std::sqrt(double(scene.token_points.rows()))));
  const TokenTargets tt = token_targets(gt.gt_pointmap, grid);
  long n_valid = 0;
  for (int i = 0; i < grid * grid; ++i) {
    if (!tt.valid[i]) continue;
    const double c = scene.token_conf(i);
    const double d2 = (scene.token_points.row(i) - tt.points.row(i)).squaredNorm();
    l.pts += c * d2 + cfg.conf_reg * (c - std::log(c) - 1.0);
    ++n_valid;
  }
  if (n_valid > 0) l.pts /= n_valid;

  l.cam = geodesic_angle_sq(scene.cam_pose.rotation, gt.cam_pose.rotation) +
          (scene.cam_pose.translation - gt.cam_pose.translation).squaredNorm();

  l.total = l.trans + l.abs + l.px2d + cfg.gamma * (l.pts + l.cam);
  return l;
}

namespace {

void apply_stage_freeze(Model& model, const TrainConfig& cfg) {
  for (ad::Param* p : model.params().all()) {
    const std::string& n = p->name;
    auto starts = [&](const char* pre) { return n.rfind(pre, 0) == 0; };
    bool trainable = false;
    double lrs = 1.0;
    if (cfg.stage == 1) {
      trainable = starts("head_mano.");
    } else {
      trainable = starts("prompt.") || starts("decoder.") || starts("state0") ||
                  starts("head_transl.") || starts("head_scene.") || starts("head_cam.");
      if (starts("scene_enc.")) {
        trainable = true;
        lrs = cfg.scene_enc_lr_scale;
      }
      if (starts("head_mano.")) trainable = cfg.stage2_train_mano;
    }
    if (starts("hand_enc.")) trainable = false;  // frozen in both stages
    p->trainable = trainable;
    p->lr_scale = lrs;
  }
}

void check_template_seed(const Model& model, const Dataset& data) {
  if (model.config().template_seed != data.template_seed())
    throw InvalidInputError("model/dataset hand template seed mismatch (" +
                            std::to_string(model.config().template_seed) + " vs " +
                            std::to_string(data.template_seed()) + ")");
}

Image hand_crop(const Image& image, const HandGt& hand, int crop_res) {
  CropResult crop = crop_transform(image, hand.box, crop_res);
  return hand.params_world.handedness == Handedness::Left ? flip_horizontal(crop.crop)
                                                          : crop.crop;
}

struct Stage1Instance {
  Vec f_h;
  Mat gt_stack;  // (21 + V) x 3, root-relative joints then vertices
  Handedness handedness = Handedness::Right;
};

TrainResult train_stage1(Model& model, Dataset& data, const TrainConfig& cfg) {
  TrainResult result;
  std::tie(result.train_sequences, result.holdout_sequences) =
      train_holdout_split(data.num_sequences(), cfg.train_fraction);

  std::vector<Stage1Instance> instances;
  for (int si : result.train_sequences) {
    const SequenceSample& seq = data.sequence(si);
    for (const FrameRecord& fr : seq.frames)
      for (const HandGt& hand : fr.hands) {
        if (!hand.visible || hand.occlusion_ratio > 0.8) continue;  // crop carries no signal
        Stage1Instance inst;
        inst.handedness = hand.params_world.handedness;
        inst.f_h = model.encode_hand(hand_crop(fr.image, hand, model.config().hand_crop_res));
        const HandTemplate& tpl = model.hand_template(inst.handedness);
        const HandMesh gt_mesh = root_relative(forward_kinematics(tpl, hand.params_world));
        inst.gt_stack.resize(kNumKeypoints + gt_mesh.vertices.rows(), 3);
        inst.gt_stack.topRows(kNumKeypoints) = gt_mesh.joints;
        inst.gt_stack.bottomRows(gt_mesh.vertices.rows()) = gt_mesh.vertices;
        instances.push_back(std::move(inst));
      }
  }
  if (instances.empty()) throw InvalidInputError("train: no usable hand instances");

  std::mt19937_64 rng(cfg.seed ^ 0x51a6e1ull);
  ad::Adam adam({cfg.lr});
  auto all_params = model.params().all();

  for (int step = 0; step < cfg.steps; ++step) {
    model.params().zero_grads();
    ad::Tape t;
    LossBreakdown l;
    Id batch_total = -1;
    for (int b = 0; b < cfg.batch; ++b) {
      const Stage1Instance& inst = instances[rng() % instances.size()];
      const HandTemplate& tpl = model.hand_template(inst.handedness);
      Id raw = model.head_mano_t(t, t.input(inst.f_h.transpose()));
      Id fk = fk_mano_node(t, raw, tpl, inst.handedness);
      const long V = inst.gt_stack.rows() - kNumKeypoints;
      Id gt = t.input(inst.gt_stack);
      Id joint = t.scale(
          t.mean_all(t.square(t.sub(t.slice_rows(fk, 0, kNumKeypoints),
                                    t.slice_rows(gt, 0, kNumKeypoints)))),
          3.0);
      Id vert = t.scale(
          t.mean_all(t.square(t.sub(t.slice_rows(fk, kNumKeypoints, static_cast<int>(V)),
                                    t.slice_rows(gt, kNumKeypoints, static_cast<int>(V))))),
          3.0);
      l.joint += t.val(joint)(0, 0);
      l.vert += t.val(vert)(0, 0);
      Id inst_total = t.add(t.scale(joint, cfg.lambda_joint), t.scale(vert, cfg.lambda_vert));
      batch_total = b == 0 ? inst_total : t.add(batch_total, inst_total);
    }
    batch_total = t.scale(batch_total, 1.0 / cfg.batch);
    l.joint /= cfg.batch;
    l.vert /= cfg.batch;
    l.total = cfg.lambda_joint * l.joint + cfg.lambda_vert * l.vert;
    check_finite_loss(l, step);
    t.backward(batch_total);
    t.collect_param_grads();
    adam.step(all_params);
    result.trace.push_back(l);
  }
  return result;
}

// Tape-side stage-2 loss for one frame; mirrors loss_stage2 term by term.
struct FrameGraph {
  Id total;
  LossBreakdown values;
  Id next_state;
};

FrameGraph stage2_frame_graph(Model& model, ad::Tape& t, const FrameRecord& fr, Id state_id,
                              const TrainConfig& cfg) {
  const ModelConfig& mc = model.config();
  const RigidTransform w2c = inverse(fr.cam_pose);
  const double diag_sq = 2.0 * sq(static_cast<double>(fr.image.width));

  Id img = t.input(image_to_rows(fr.image));
  Id Fs = model.encode_scene_t(t, img);

  const std::vector<size_t> order = sorted_hand_order(fr.hands);
  std::vector<Id> prompts, f_hs;
  for (size_t oi : order) {
    const HandGt& hand = fr.hands[oi];
    Id f_h = t.input(image_to_rows(hand_crop(fr.image, hand, mc.hand_crop_res)));
    f_h = model.encode_hand_t(t, f_h);
    Id f_s = model.region_pool_t(t, Fs, hand.box);
    prompts.push_back(model.build_prompt_t(t, f_h, f_s));
    f_hs.push_back(f_h);
  }

  Model::DecodeOut dec = model.decode_step_t(t, prompts, Fs, state_id);
  Id scene_raw = model.head_scene_t(t, dec.grid);
  Id cam_raw = model.head_camera_t(t, dec.state);

  FrameGraph out;
  out.next_state = dec.state;
  LossBreakdown& l = out.values;

  Id trans_id = -1, abs_id = -1, px_id = -1;
  for (size_t i = 0; i < order.size(); ++i) {
    const HandGt& hand = fr.hands[order[i]];
    const HandTemplate& tpl = model.hand_template(hand.params_world.handedness);
    Id raw = model.head_mano_t(t, f_hs[i]);
    Id fk = fk_mano_node(t, raw, tpl, hand.params_world.handedness);
    Id j_rel = t.slice_rows(fk, 0, kNumKeypoints);
    Id transl = model.head_transl_t(t, dec.fused[i]);
    Id j_abs = t.add_row_broadcast(j_rel, transl);

    const Mat gt_cam = w2c.apply_rows(forward_kinematics(tpl, hand.params_world).joints);
    Id trans_i =
        t.sum_all(t.square(t.sub(transl, t.input(gt_transl_cam(hand, w2c).transpose()))));
    Id abs_i = t.scale(t.mean_all(t.square(t.sub(j_abs, t.input(gt_cam)))), 3.0);

    Id iz = t.reciprocal(t.clamp_min(t.slice_cols(j_abs, 2, 1), 0.1));
    Id u = t.add_const(t.scale(t.mul(t.slice_cols(j_abs, 0, 1), iz), fr.intrinsics.fx),
                       fr.intrinsics.cx);
    Id v = t.add_const(t.scale(t.mul(t.slice_cols(j_abs, 1, 1), iz), fr.intrinsics.fy),
                       fr.intrinsics.cy);
    Id du = t.sub(u, t.input(hand.keypoints_2d.col(0)));
    Id dv = t.sub(v, t.input(hand.keypoints_2d.col(1)));
    Id px_i = t.scale(t.add(t.mean_all(t.square(du)), t.mean_all(t.square(dv))), 1.0 / diag_sq);

    trans_id = i == 0 ? trans_i : t.add(trans_id, trans_i);
    abs_id = i == 0 ? abs_i : t.add(abs_id, abs_i);
    px_id = i == 0 ? px_i : t.add(px_id, px_i);
  }
  if (!order.empty()) {
    const double inv_h = 1.0 / order.size();
    trans_id = t.scale(trans_id, inv_h);
    abs_id = t.scale(abs_id, inv_h);
    px_id = t.scale(px_id, inv_h);
  } else {
    trans_id = t.input(Mat::Zero(1, 1));
    abs_id = t.input(Mat::Zero(1, 1));
    px_id = t.input(Mat::Zero(1, 1));
  }

  const TokenTargets tt = token_targets(fr.gt_pointmap, mc.grid_size);
  std::vector<int> vidx;
  for (int i = 0; i < mc.grid_size * mc.grid_size; ++i)
    if (tt.valid[i]) vidx.push_back(i);
  Id pts_id;
  if (vidx.empty()) {
    pts_id = t.input(Mat::Zero(1, 1));
  } else {
    Mat gt_pts(static_cast<long>(vidx.size()), 3);
    for (size_t i = 0; i < vidx.size(); ++i) gt_pts.row(i) = tt.points.row(vidx[i]);
    Id P = t.gather_rows(t.slice_cols(scene_raw, 0, 3), vidx);
    Id C = t.gather_rows(t.slice_cols(scene_raw, 3, 1), vidx);
    Id d2 = t.matmul(t.square(t.sub(P, t.input(gt_pts))), t.input(Mat::Ones(3, 1)));
    Id conf_term = t.scale(t.add_const(t.sub(C, t.log(C)), -1.0), cfg.conf_reg);
    pts_id = t.mean_all(t.add(t.mul(C, d2), conf_term));
  }

  Id R_cam = t.rot6d_to_matrix(t.slice_cols(cam_raw, 0, 6));
  Id geo = t.geodesic_sq(R_cam, fr.cam_pose.rotation);
  Id dt = t.sub(t.slice_cols(cam_raw, 6, 3), t.input(fr.cam_pose.translation.transpose()));
  Id cam_id = t.add(geo, t.sum_all(t.square(dt)));

  out.total = t.add(t.add(trans_id, t.add(abs_id, px_id)),
                    t.scale(t.add(pts_id, cam_id), cfg.gamma));

  l.trans = t.val(trans_id)(0, 0);
  l.abs = t.val(abs_id)(0, 0);
  l.px2d = t.val(px_id)(0, 0);
  l.pts = t.val(pts_id)(0, 0);
  l.cam = t.val(cam_id)(0, 0);
  l.total = t.val(out.total)(0, 0);
  return out;
}

FrameInput frame_input_from_record(const FrameRecord& fr) {
  FrameInput in;
  in.image = fr.image;
  in.intrinsics = fr.intrinsics;
  for (const HandGt& h : fr.hands)
    in.hands.push_back({h.box, h.params_world.handedness});
  return in;
}

TrainResult train_stage2(Model& model, Dataset& data, const TrainConfig& cfg) {
  TrainResult result;
  std::tie(result.train_sequences, result.holdout_sequences) =
      train_holdout_split(data.num_sequences(), cfg.train_fraction);

  std::mt19937_64 rng(cfg.seed ^ 0x52a6e2ull);
  ad::Adam adam({cfg.lr});
  auto all_params = model.params().all();

  for (int step = 0; step < cfg.steps; ++step) {
    const int si =
        result.train_sequences[rng() % result.train_sequences.size()];
    const SequenceSample& seq = data.sequence(si);
    const int n = static_cast<int>(seq.frames.size());
    const int window = std::min(cfg.bptt, n);
    const int start = n > window ? static_cast<int>(rng() % (n - window + 1)) : 0;

    // Value-only prefix keeps the recurrence faithful; gradients flow only
    // through the window (truncated BPTT).
    SceneState state = model.initial_state();
    for (int f = 0; f < start; ++f)
      model.forward_frame(frame_input_from_record(seq.frames[f]), state);

    model.params().zero_grads();
    ad::Tape t;
    Id state_id = t.input(state.tokens);
    Id total = -1;
    LossBreakdown l;
    for (int f = start; f < start + window; ++f) {
      FrameGraph fg = stage2_frame_graph(model, t, seq.frames[f], state_id, cfg);
      total = f == start ? fg.total : t.add(total, fg.total);
      state_id = fg.next_state;
      l.trans += fg.values.trans;
      l.abs += fg.values.abs;
      l.px2d += fg.values.px2d;
      l.pts += fg.values.pts;
      l.cam += fg.values.cam;
    }
    total = t.scale(total, 1.0 / window);
    l.trans /= window;
    l.abs /= window;
    l.px2d /= window;
    l.pts /= window;
    l.cam /= window;
    l.total = l.trans + l.abs + l.px2d + cfg.gamma * (l.pts + l.cam);
    check_finite_loss(l, step);
    t.backward(total);
    t.collect_param_grads();
    adam.step(all_params);
    result.trace.push_back(l);
  }
  return result;
}

}  // namespace

TrainResult train(Model& model, Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  check_template_seed(model, data);
  if (data.num_sequences() > 0 && data.info(0).image_res != model.config().image_res)
    throw InvalidInputError("train: dataset image_res " +
                            std::to_string(data.info(0).image_res) +
                            " does not match model image_res " +
                            std::to_string(model.config().image_res));
  apply_stage_freeze(model, cfg);
  return cfg.stage == 1 ? train_stage1(model, data, cfg) : train_stage2(model, data, cfg);
}

void write_loss_trace_csv(const std::vector<LossBreakdown>& trace, int stage,
                          const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.precision(12);
  if (stage == 1) {
    f << "step,joint,vert,total\n";
    for (size_t i = 0; i < trace.size(); ++i)
      f << i << "," << trace[i].joint << "," << trace[i].vert << "," << trace[i].total << "\n";
  } else {
    f << "step,trans,abs,2d,pts,cam,total\n";
    for (size_t i = 0; i < trace.size(); ++i)
      f << i << "," << trace[i].trans << "," << trace[i].abs << "," << trace[i].px2d << ","
        << trace[i].pts << "," << trace[i].cam << "," << trace[i].total << "\n";
  }
  if (!f) throw IoError("write failed: " + path);
}

double eval_stage1_mpjpe_mm(Model& model, Dataset& data, const std::vector<int>& seqs) {
  check_template_seed(model, data);
  double sum = 0;
  long count = 0;
  for (int si : seqs) {
    const SequenceSample& seq = data.sequence(si);
    for (const FrameRecord& fr : seq.frames)
      for (const HandGt& hand : fr.hands) {
        const Vec f_h =
            model.encode_hand(hand_crop(fr.image, hand, model.config().hand_crop_res));
        ad::Tape t(false);
        const Mat raw = t.val(model.head_mano_t(t, t.input(f_h.transpose())));
        HandPrediction pred = model.decode_mano(raw.row(0), hand.params_world.handedness);
        const HandTemplate& tpl = model.hand_template(pred.handedness);
        const Mat pred_joints =
            fk_rotmats(tpl, pred.rotations, pred.beta, Vec3::Zero()).joints;
        const Mat gt_joints =
            root_relative(forward_kinematics(tpl, hand.params_world)).joints;
        sum += (pred_joints - gt_joints).rowwise().norm().mean() * 1000.0;
        ++count;
      }
  }
  if (count == 0) throw InvalidInputError("eval_stage1: no hand instances");
  return sum / count;
}

double zero_pose_baseline_mpjpe_mm(Dataset& data, const std::vector<int>& seqs,
                                   uint64_t template_seed) {
  const HandTemplate tpl_right = build_template(template_seed);
  const HandTemplate tpl_left = mirror_template(tpl_right);
  double sum = 0;
  long count = 0;
  for (int si : seqs) {
    const SequenceSample& seq = data.sequence(si);
    for (const FrameRecord& fr : seq.frames)
      for (const HandGt& hand : fr.hands) {
        const HandTemplate& tpl =
            hand.params_world.handedness == Handedness::Right ? tpl_right : tpl_left;
        const Mat pred_joints =
            forward_kinematics(tpl, HandParams{.handedness = tpl.handedness}).joints;
        const Mat gt_joints =
            root_relative(forward_kinematics(tpl, hand.params_world)).joints;
        sum += (pred_joints - gt_joints).rowwise().norm().mean() * 1000.0;
        ++count;
      }
  }
  if (count == 0) throw InvalidInputError("baseline: no hand instances");
  return sum / count;
}

Stage2Eval eval_stage2(Model& model, Dataset& data, const std::vector<int>& seqs,
                       const TrainConfig& cfg) {
  check_template_seed(model, data);
  Stage2Eval out;
  double c_sum = 0, base_sum = 0, pts_sum = 0;
  long inst = 0, frames = 0;
  for (int si : seqs) {
    const SequenceSample& seq = data.sequence(si);
    std::vector<FrameInput> inputs;
    inputs.reserve(seq.frames.size());
    for (const FrameRecord& fr : seq.frames) inputs.push_back(frame_input_from_record(fr));
    const std::vector<FrameOutput> outs = model.forward_online(inputs);

    // Scene centroid in world coordinates, for the constant-translation baseline.
    Vec3 centroid = Vec3::Zero();
    long n_pts = 0;
    for (const FrameRecord& fr : seq.frames)
      for (size_t i = 0; i < fr.gt_pointmap.points.size(); ++i)
        if (fr.gt_pointmap.valid[i]) {
          centroid += fr.cam_pose.apply(fr.gt_pointmap.points[i]);
          ++n_pts;
        }
    if (n_pts > 0) centroid /= static_cast<double>(n_pts);

    for (size_t f = 0; f < seq.frames.size(); ++f) {
      const FrameRecord& fr = seq.frames[f];
      const RigidTransform w2c = inverse(fr.cam_pose);
      const std::vector<size_t> order = sorted_hand_order(fr.hands);
      for (size_t i = 0; i < order.size(); ++i) {
        const HandGt& hand = fr.hands[order[i]];
        const HandTemplate& tpl = model.hand_template(hand.params_world.handedness);
        const Mat gt_cam = w2c.apply_rows(forward_kinematics(tpl, hand.params_world).joints);
        c_sum += (outs[f].hand_meshes_cam[i].joints - gt_cam).rowwise().norm().mean() * 1000.0;
        Mat base = forward_kinematics(tpl, HandParams{.handedness = tpl.handedness}).joints;
        base.rowwise() += w2c.apply(centroid).transpose();
        base_sum += (base - gt_cam).rowwise().norm().mean() * 1000.0;
        ++inst;
      }
      const TokenTargets tt = token_targets(fr.gt_pointmap, model.config().grid_size);
      double pts = 0;
      long n_valid = 0;
      for (int i = 0; i < model.config().grid_size * model.config().grid_size; ++i) {
        if (!tt.valid[i]) continue;
        const double c = outs[f].scene.token_conf(i);
        const double d2 = (outs[f].scene.token_points.row(i) - tt.points.row(i)).squaredNorm();
        pts += c * d2 + cfg.conf_reg * (c - std::log(c) - 1.0);
        ++n_valid;
      }
      if (n_valid > 0) pts /= n_valid;
      pts_sum += pts;
      ++frames;
    }
  }
  if (inst == 0 || frames == 0) throw InvalidInputError("eval_stage2: empty evaluation set");
  out.c_mpjpe_mm = c_sum / inst;
  out.scene_center_baseline_mm = base_sum / inst;
  out.l_pts = pts_sum / frames;
  return out;
}

}  // namespace hand3r
