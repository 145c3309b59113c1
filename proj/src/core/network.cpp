#include "core/network.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace hand3r {

using Id = ad::Tape::Id;
constexpr int kManoOut = kNumJoints * 6 + kShapeDims;

void ModelConfig::validate() const {
  if (token_dim <= 0 || grid_size <= 0 || image_res <= 0 || hand_crop_res <= 0 ||
      hand_grid <= 0 || n_encoder_layers <= 0 || n_decoder_layers <= 0 || n_heads <= 0 ||
      state_len <= 0 || max_hands <= 0) {
    throw InvalidInputError("ModelConfig: all sizes must be positive");
  }
  if (token_dim % n_heads != 0) {
    throw InvalidInputError("ModelConfig: token_dim must be divisible by n_heads");
  }
  if (image_res % grid_size != 0 || hand_crop_res % hand_grid != 0) {
    throw InvalidInputError("ModelConfig: resolutions must be divisible by grid sizes");
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["token_dim"] = token_dim;
  j["grid_size"] = grid_size;
  j["image_res"] = image_res;
  j["hand_crop_res"] = hand_crop_res;
  j["hand_grid"] = hand_grid;
  j["n_encoder_layers"] = n_encoder_layers;
  j["n_decoder_layers"] = n_decoder_layers;
  j["n_heads"] = n_heads;
  j["state_len"] = state_len;
  j["max_hands"] = max_hands;
  j["freeze_hand_encoder"] = freeze_hand_encoder;
  j["template_seed"] = template_seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInputError(std::string("ModelConfig: bad JSON: ") + e.what());
  }
  ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  get("token_dim", c.token_dim);
  get("grid_size", c.grid_size);
  get("image_res", c.image_res);
  get("hand_crop_res", c.hand_crop_res);
  get("hand_grid", c.hand_grid);
  get("n_encoder_layers", c.n_encoder_layers);
  get("n_decoder_layers", c.n_decoder_layers);
  get("n_heads", c.n_heads);
  get("state_len", c.state_len);
  get("max_hands", c.max_hands);
  get("freeze_hand_encoder", c.freeze_hand_encoder);
  get("template_seed", c.template_seed);
  c.validate();
  return c;
}

HandParams HandPrediction::as_params() const {
  HandParams p;
  p.handedness = handedness;
  p.beta = beta;
  p.global_orient = matrix_to_axis_angle(rotations[0]);
  for (int i = 0; i < kNumArticulated; ++i)
    p.theta.row(i) = matrix_to_axis_angle(rotations[i + 1]).transpose();
  p.transl = transl_cam;
  return p;
}

Mat image_to_rows(const Image& img) {
  Mat m(static_cast<Eigen::Index>(img.width) * img.height, 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) m(y * img.width + x, c) = img.at(x, y, c);
  return m;
}

Image flip_horizontal(const Image& img) {
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
  return out;
}

ad::Tape::Id patchify_node(ad::Tape& t, ad::Tape::Id image_node, int res, int patch) {
  const int grid = res / patch;
  const Mat& px = t.val(image_node);
  if (px.rows() != static_cast<Eigen::Index>(res) * res || px.cols() != 3) {
    throw InvalidInputError("patchify: pixel matrix does not match resolution");
  }
  Mat out(grid * grid, patch * patch * 3);
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx)
      for (int py = 0; py < patch; ++py)
        for (int pxi = 0; pxi < patch; ++pxi) {
          const int row = (gy * patch + py) * res + gx * patch + pxi;
          for (int c = 0; c < 3; ++c)
            out(gy * grid + gx, (py * patch + pxi) * 3 + c) = px(row, c);
        }
  return t.custom(std::move(out), t.needs_grad(image_node),
                  [image_node, res, patch, grid](ad::Tape& tt, const Mat& g) {
                    Mat& gi = tt.grad(image_node);
                    for (int gy = 0; gy < grid; ++gy)
                      for (int gx = 0; gx < grid; ++gx)
                        for (int py = 0; py < patch; ++py)
                          for (int pxi = 0; pxi < patch; ++pxi) {
                            const int row = (gy * patch + py) * res + gx * patch + pxi;
                            for (int c = 0; c < 3; ++c)
                              gi(row, c) += g(gy * grid + gx, (py * patch + pxi) * 3 + c);
                          }
                  });
}

Mat3 rot6d_to_matrix_value(const Eigen::RowVectorXd& six) {
  const Vec3 a1 = six.segment(0, 3).transpose();
  const Vec3 a2 = six.segment(3, 3).transpose();
  const Vec3 b1 = a1.normalized();
  const Vec3 u = a2 - b1.dot(a2) * b1;
  const Vec3 b2 = u.normalized();
  Mat3 R;
  R.col(0) = b1;
  R.col(1) = b2;
  R.col(2) = b1.cross(b2);
  return R;
}

// ---------------------------------------------------------------------------

Model::Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  template_right_ = build_template(cfg_.template_seed);
  template_left_ = mirror_template(template_right_);

  std::mt19937_64 rng(seed ^ 0xc0ffee1234abcdefull);
  const int D = cfg_.token_dim;
  const double s = 0.02;

  auto make_block = [&](const std::string& prefix) {
    params_.add(prefix + ".ln1.g", Mat::Ones(1, D));
    params_.add(prefix + ".ln1.b", Mat::Zero(1, D));
    params_.create(prefix + ".attn.wq", D, D, s, rng);
    params_.create(prefix + ".attn.wk", D, D, s, rng);
    params_.create(prefix + ".attn.wv", D, D, s, rng);
    params_.create(prefix + ".attn.wo", D, D, s, rng);
    params_.add(prefix + ".attn.bo", Mat::Zero(1, D));
    params_.add(prefix + ".ln2.g", Mat::Ones(1, D));
    params_.add(prefix + ".ln2.b", Mat::Zero(1, D));
    params_.create(prefix + ".mlp.w1", D, 4 * D, s, rng);
    params_.add(prefix + ".mlp.b1", Mat::Zero(1, 4 * D));
    params_.create(prefix + ".mlp.w2", 4 * D, D, s, rng);
    params_.add(prefix + ".mlp.b2", Mat::Zero(1, D));
  };

  auto make_encoder = [&](const std::string& name, int patch, int grid) {
    params_.create(name + ".embed.w", patch * patch * 3, D, s, rng);
    params_.add(name + ".embed.b", Mat::Zero(1, D));
    params_.create(name + ".pos", grid * grid, D, s, rng);
    for (int i = 0; i < cfg_.n_encoder_layers; ++i)
      make_block(name + ".blk" + std::to_string(i));
    params_.add(name + ".lnf.g", Mat::Ones(1, D));
    params_.add(name + ".lnf.b", Mat::Zero(1, D));
  };

  make_encoder("scene_enc", cfg_.scene_patch(), cfg_.grid_size);
  make_encoder("hand_enc", cfg_.hand_patch(), cfg_.hand_grid);

  params_.create("prompt.w1", 2 * D, D, s, rng);
  params_.add("prompt.b1", Mat::Zero(1, D));
  params_.create("prompt.w2", D, D, s, rng);
  params_.add("prompt.b2", Mat::Zero(1, D));

  params_.create("decoder.type_prompt", 1, D, s, rng);
  params_.create("decoder.type_grid", 1, D, s, rng);
  params_.create("decoder.type_state", 1, D, s, rng);
  for (int i = 0; i < cfg_.n_decoder_layers; ++i) make_block("decoder.blk" + std::to_string(i));
  params_.add("decoder.ln_out.g", Mat::Ones(1, D));
  params_.add("decoder.ln_out.b", Mat::Zero(1, D));
  params_.add("decoder.ln_state.g", Mat::Ones(1, D));
  params_.add("decoder.ln_state.b", Mat::Zero(1, D));

  params_.create("state0", cfg_.state_len, D, s, rng);

  params_.create("head_mano.w", D, kManoOut, s, rng);
  Mat mano_bias = Mat::Zero(1, kManoOut);
  for (int j = 0; j < kNumJoints; ++j) {
    mano_bias(0, j * 6 + 0) = 1.0;  // identity rotation in 6D
    mano_bias(0, j * 6 + 4) = 1.0;
  }
  params_.add("head_mano.b", mano_bias);

  params_.create("head_transl.w", D, 3, s, rng);
  Mat transl_bias = Mat::Zero(1, 3);
  transl_bias(0, 2) = 0.8;  // start hands at a plausible depth, not the camera origin
  params_.add("head_transl.b", transl_bias);
  params_.create("head_scene.w", D, 4, s, rng);
  params_.add("head_scene.b", Mat::Zero(1, 4));
  params_.create("head_cam.w", D, 9, s, rng);
  Mat cam_bias = Mat::Zero(1, 9);
  cam_bias(0, 0) = 1.0;
  cam_bias(0, 4) = 1.0;
  params_.add("head_cam.b", cam_bias);

  sync_freeze_flags();
}

void Model::sync_freeze_flags() {
  for (ad::Param* p : params_.group("hand_enc.")) p->trainable = !cfg_.freeze_hand_encoder;
}

Id Model::pnode(ad::Tape& t, const std::string& name) {
  if (cache_tape_ != &t || cache_serial_ != t.serial()) {
    cache_tape_ = &t;
    cache_serial_ = t.serial();
    cache_.clear();
  }
  auto it = cache_.find(name);
  if (it != cache_.end()) return it->second;
  ad::Param* p = params_.find(name);
  if (!p) throw InvalidInputError("unknown parameter: " + name);
  Id id = t.param(*p);
  cache_[name] = id;
  return id;
}

Id Model::linear(ad::Tape& t, Id x, const std::string& w, const std::string& b) {
  return t.add_row_broadcast(t.matmul(x, pnode(t, w)), pnode(t, b));
}

Id Model::transformer_block(ad::Tape& t, Id x, const std::string& prefix) {
  const int D = cfg_.token_dim;
  const int H = cfg_.n_heads;
  const int dh = D / H;

  Id h = t.layernorm(x, pnode(t, prefix + ".ln1.g"), pnode(t, prefix + ".ln1.b"));
  Id q = t.matmul(h, pnode(t, prefix + ".attn.wq"));
  Id k = t.matmul(h, pnode(t, prefix + ".attn.wk"));
  Id v = t.matmul(h, pnode(t, prefix + ".attn.wv"));
  std::vector<Id> heads;
  for (int i = 0; i < H; ++i) {
    Id qi = t.slice_cols(q, i * dh, dh);
    Id ki = t.slice_cols(k, i * dh, dh);
    Id vi = t.slice_cols(v, i * dh, dh);
    Id scores = t.scale(t.matmul(qi, t.transpose(ki)), 1.0 / std::sqrt(double(dh)));
    heads.push_back(t.matmul(t.softmax_rows(scores), vi));
  }
  Id attn = t.add_row_broadcast(t.matmul(t.concat_cols(heads), pnode(t, prefix + ".attn.wo")),
                                pnode(t, prefix + ".attn.bo"));
  x = t.add(x, attn);

  Id h2 = t.layernorm(x, pnode(t, prefix + ".ln2.g"), pnode(t, prefix + ".ln2.b"));
  Id m1 = t.gelu(t.add_row_broadcast(t.matmul(h2, pnode(t, prefix + ".mlp.w1")),
                 pnode(t, prefix + ".mlp.b1")));
  Id m2 = t.add_row_broadcast(t.matmul(m1, pnode(t, prefix + ".mlp.w2")),
                              pnode(t, prefix + ".mlp.b2"));
  return t.add(x, m2);
}

Id Model::encode_scene_t(ad::Tape& t, Id image_node) {
  const int res = cfg_.image_res;
  if (t.val(image_node).rows() != static_cast<Eigen::Index>(res) * res ||
      t.val(image_node).cols() != 3) {
    throw InvalidInputError("encode_scene: image resolution mismatch");
  }
  Id x = patchify_node(t, image_node, res, cfg_.scene_patch());
  x = t.add_row_broadcast(t.matmul(x, pnode(t, "scene_enc.embed.w")),
                          pnode(t, "scene_enc.embed.b"));
  x = t.add(x, pnode(t, "scene_enc.pos"));
  for (int i = 0; i < cfg_.n_encoder_layers; ++i)
    x = transformer_block(t, x, "scene_enc.blk" + std::to_string(i));
  return t.layernorm(x, pnode(t, "scene_enc.lnf.g"), pnode(t, "scene_enc.lnf.b"));
}

Id Model::encode_hand_t(ad::Tape& t, Id crop_node) {
  const int res = cfg_.hand_crop_res;
  if (t.val(crop_node).rows() != static_cast<Eigen::Index>(res) * res ||
      t.val(crop_node).cols() != 3) {
    throw InvalidInputError("encode_hand: crop resolution mismatch");
  }
  Id x = patchify_node(t, crop_node, res, cfg_.hand_patch());
  x = t.add_row_broadcast(t.matmul(x, pnode(t, "hand_enc.embed.w")),
                          pnode(t, "hand_enc.embed.b"));
  x = t.add(x, pnode(t, "hand_enc.pos"));
  for (int i = 0; i < cfg_.n_encoder_layers; ++i)
    x = transformer_block(t, x, "hand_enc.blk" + std::to_string(i));
  x = t.layernorm(x, pnode(t, "hand_enc.lnf.g"), pnode(t, "hand_enc.lnf.b"));
  return t.mean_rows(x);
}

Id Model::build_prompt_t(ad::Tape& t, Id f_h, Id f_s) {
  if (t.val(f_h).cols() != cfg_.token_dim || t.val(f_s).cols() != cfg_.token_dim ||
      t.val(f_h).rows() != 1 || t.val(f_s).rows() != 1) {
    throw InvalidInputError("build_prompt: inputs must be 1 x token_dim");
  }
  Id x = t.concat_cols({f_h, f_s});
  x = t.gelu(t.add_row_broadcast(t.matmul(x, pnode(t, "prompt.w1")), pnode(t, "prompt.b1")));
  return t.add_row_broadcast(t.matmul(x, pnode(t, "prompt.w2")), pnode(t, "prompt.b2"));
}

Id Model::region_pool_t(ad::Tape& t, Id scene_tokens, const BBox& box) {
  const double ppt = static_cast<double>(cfg_.image_res) / cfg_.grid_size;
  auto idx = region_pool_indices(cfg_.grid_size, ppt, box);
  return t.mean_rows(t.gather_rows(scene_tokens, std::move(idx)));
}

Model::DecodeOut Model::decode_step_t(ad::Tape& t, const std::vector<Id>& prompts,
                                      Id scene_tokens, Id state) {
  if (static_cast<int>(prompts.size()) > cfg_.max_hands) {
    throw CapacityError("decode_step: more prompts than max_hands");
  }
  const int G2 = cfg_.grid_size * cfg_.grid_size;
  std::vector<Id> seq;
  for (Id p : prompts) seq.push_back(t.add(p, pnode(t, "decoder.type_prompt")));
  seq.push_back(t.add_row_broadcast(scene_tokens, pnode(t, "decoder.type_grid")));
  seq.push_back(t.add_row_broadcast(state, pnode(t, "decoder.type_state")));
  Id x = t.concat_rows(seq);
  for (int i = 0; i < cfg_.n_decoder_layers; ++i)
    x = transformer_block(t, x, "decoder.blk" + std::to_string(i));

  const int P = static_cast<int>(prompts.size());
  DecodeOut out;
  for (int i = 0; i < P; ++i) {
    out.fused.push_back(t.layernorm(t.slice_rows(x, i, 1), pnode(t, "decoder.ln_out.g"),
                                    pnode(t, "decoder.ln_out.b")));
  }
  out.grid = t.layernorm(t.slice_rows(x, P, G2), pnode(t, "decoder.ln_out.g"),
                         pnode(t, "decoder.ln_out.b"));
  out.state = t.layernorm(t.slice_rows(x, P + G2, cfg_.state_len),
                          pnode(t, "decoder.ln_state.g"), pnode(t, "decoder.ln_state.b"));
  return out;
}

Id Model::head_mano_t(ad::Tape& t, Id f_h) { return linear(t, f_h, "head_mano.w", "head_mano.b"); }
Id Model::head_transl_t(ad::Tape& t, Id f) {
  return linear(t, f, "head_transl.w", "head_transl.b");
}
Id Model::head_scene_t(ad::Tape& t, Id grid) {
  Id h = linear(t, grid, "head_scene.w", "head_scene.b");
  Id pts = t.slice_cols(h, 0, 3);
  Id conf = t.softplus(t.slice_cols(h, 3, 1));
  return t.concat_cols({pts, conf});
}
Id Model::head_camera_t(ad::Tape& t, Id state) {
  Id s0 = t.slice_rows(state, 0, 1);
  return linear(t, s0, "head_cam.w", "head_cam.b");
}

TokenGrid Model::encode_scene(const Image& image) {
  ad::Tape t(false);
  Id out = encode_scene_t(t, t.input(image_to_rows(image)));
  TokenGrid g;
  g.grid = cfg_.grid_size;
  g.pixels_per_token = static_cast<double>(cfg_.image_res) / cfg_.grid_size;
  g.tokens = t.val(out);
  return g;
}

Vec Model::encode_hand(const Image& crop) {
  ad::Tape t(false);
  Id out = encode_hand_t(t, t.input(image_to_rows(crop)));
  return t.val(out).row(0).transpose();
}

Vec Model::build_prompt(const Vec& f_h, const Vec& f_s) {
  ad::Tape t(false);
  Id out = build_prompt_t(t, t.input(f_h.transpose()), t.input(f_s.transpose()));
  return t.val(out).row(0).transpose();
}

SceneState Model::initial_state() const {
  SceneState s;
  s.tokens = params_.find("state0")->value;
  s.frame = 0;
  return s;
}

HandPrediction Model::decode_mano(const Eigen::RowVectorXd& raw, Handedness handedness) {
  HandPrediction pred;
  pred.handedness = handedness;
  const Mat3 M = Vec3(-1, 1, 1).asDiagonal();
  for (int j = 0; j < kNumJoints; ++j) {
    Mat3 R = rot6d_to_matrix_value(raw.segment(j * 6, 6));
    if (handedness == Handedness::Left) R = M * R * M;  // undo the crop mirror
    pred.rotations[j] = R;
  }
  pred.beta = raw.segment(kNumJoints * 6, kShapeDims).transpose();
  return pred;
}

FrameOutput Model::forward_frame(const FrameInput& frame, SceneState& state) {
  if (frame.image.width != cfg_.image_res || frame.image.height != cfg_.image_res) {
    throw InvalidInputError("forward_frame: image resolution mismatch");
  }
  std::vector<HandObservation> hands = frame.hands;
  if (static_cast<int>(hands.size()) > cfg_.max_hands) {
    throw CapacityError("forward_frame: more hands than max_hands");
  }
  // Stable slot order: handedness (right first), then box-center x.
  std::stable_sort(hands.begin(), hands.end(), [](const auto& a, const auto& b) {
    if (a.handedness != b.handedness) return a.handedness < b.handedness;
    return a.box.cx < b.box.cx;
  });

  ad::Tape t(false);
  Id img = t.input(image_to_rows(frame.image));
  Id Fs = encode_scene_t(t, img);

  std::vector<Id> prompts, f_hs;
  for (const auto& hand : hands) {
    CropResult crop = crop_transform(frame.image, hand.box, cfg_.hand_crop_res);
    Image crop_img = hand.handedness == Handedness::Left ? flip_horizontal(crop.crop) : crop.crop;
    Id f_h = encode_hand_t(t, t.input(image_to_rows(crop_img)));
    Id f_s = region_pool_t(t, Fs, hand.box);
    prompts.push_back(build_prompt_t(t, f_h, f_s));
    f_hs.push_back(f_h);
  }

  DecodeOut dec = decode_step_t(t, prompts, Fs, t.input(state.tokens));

  FrameOutput out;
  Id scene_raw = head_scene_t(t, dec.grid);
  out.scene.token_points = t.val(scene_raw).leftCols(3);
  out.scene.token_conf = t.val(scene_raw).col(3);

  Id cam_raw = head_camera_t(t, dec.state);
  const Eigen::RowVectorXd cam = t.val(cam_raw).row(0);
  out.scene.cam_pose.rotation = rot6d_to_matrix_value(cam.segment(0, 6));
  out.scene.cam_pose.translation = cam.segment(6, 3).transpose();

  // Nearest-token upsampling of the pointmap to the pixel grid.
  out.scene.pointmap = PointMap(cfg_.image_res, cfg_.image_res);
  const int ppt = cfg_.image_res / cfg_.grid_size;
  for (int y = 0; y < cfg_.image_res; ++y)
    for (int x = 0; x < cfg_.image_res; ++x) {
      const int tok = (y / ppt) * cfg_.grid_size + (x / ppt);
      out.scene.pointmap.points[out.scene.pointmap.idx(x, y)] =
          out.scene.token_points.row(tok).transpose();
      out.scene.pointmap.valid[out.scene.pointmap.idx(x, y)] = 1;
    }

  for (size_t i = 0; i < hands.size(); ++i) {
    HandPrediction pred = decode_mano(t.val(head_mano_t(t, f_hs[i])).row(0),
                                      hands[i].handedness);
    pred.transl_cam = t.val(head_transl_t(t, dec.fused[i])).row(0).transpose();
    const HandTemplate& tpl = hand_template(pred.handedness);
    HandMesh mesh_cam = fk_rotmats(tpl, pred.rotations, pred.beta, pred.transl_cam);
    HandMesh mesh_world;
    mesh_world.vertices = out.scene.cam_pose.apply_rows(mesh_cam.vertices);
    mesh_world.joints = out.scene.cam_pose.apply_rows(mesh_cam.joints);
    out.hands.push_back(std::move(pred));
    out.hand_meshes_cam.push_back(std::move(mesh_cam));
    out.hand_meshes_world.push_back(std::move(mesh_world));
  }

  state.tokens = t.val(dec.state);
  state.frame += 1;
  return out;
}

std::vector<FrameOutput> Model::forward_online(const std::vector<FrameInput>& frames) {
  if (frames.empty()) throw InvalidInputError("forward_online: empty sequence");
  SceneState state = initial_state();
  std::vector<FrameOutput> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(forward_frame(f, state));
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, config JSON, named parameter tensors, all doubles.

namespace {
constexpr char kCkptMagic[8] = {'H', '3', 'R', 'C', 'K', 'P', 'T', '1'};
}

void Model::save_checkpoint(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_checkpoint: cannot open " + path);
  os.write(kCkptMagic, 8);
  const std::string cfg_json = cfg_.to_json();
  const uint64_t cfg_len = cfg_json.size();
  os.write(reinterpret_cast<const char*>(&cfg_len), 8);
  os.write(cfg_json.data(), static_cast<std::streamsize>(cfg_len));
  const auto params = params_.all();
  const uint64_t count = params.size();
  os.write(reinterpret_cast<const char*>(&count), 8);
  for (const ad::Param* p : params) {
    const uint64_t nlen = p->name.size();
    os.write(reinterpret_cast<const char*>(&nlen), 8);
    os.write(p->name.data(), static_cast<std::streamsize>(nlen));
    const int64_t r = p->value.rows(), c = p->value.cols();
    os.write(reinterpret_cast<const char*>(&r), 8);
    os.write(reinterpret_cast<const char*>(&c), 8);
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) {
        const double v = p->value(i, j);
        os.write(reinterpret_cast<const char*>(&v), 8);
      }
  }
  if (!os) throw IoError("save_checkpoint: write failed for " + path);
}

Model Model::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCkptMagic, 8) != 0) {
    throw IoError("load_checkpoint: bad magic or version in " + path);
  }
  uint64_t cfg_len = 0;
  is.read(reinterpret_cast<char*>(&cfg_len), 8);
  if (!is || cfg_len > (1u << 20)) throw IoError("load_checkpoint: corrupt config block");
  std::string cfg_json(cfg_len, '\0');
  is.read(cfg_json.data(), static_cast<std::streamsize>(cfg_len));
  Model model(ModelConfig::from_json(cfg_json), 0);

  uint64_t count = 0;
  is.read(reinterpret_cast<char*>(&count), 8);
  for (uint64_t n = 0; n < count; ++n) {
    uint64_t nlen = 0;
    is.read(reinterpret_cast<char*>(&nlen), 8);
    if (!is || nlen > 4096) throw IoError("load_checkpoint: corrupt parameter name");
    std::string name(nlen, '\0');
    is.read(name.data(), static_cast<std::streamsize>(nlen));
    int64_t r = 0, c = 0;
    is.read(reinterpret_cast<char*>(&r), 8);
    is.read(reinterpret_cast<char*>(&c), 8);
    ad::Param* p = model.params_.find(name);
    if (!p) throw IoError("load_checkpoint: unknown parameter " + name);
    if (p->value.rows() != r || p->value.cols() != c) {
      throw IoError("load_checkpoint: shape mismatch for " + name);
    }
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) {
        double v;
        is.read(reinterpret_cast<char*>(&v), 8);
        p->value(i, j) = v;
      }
  }
  if (!is) throw IoError("load_checkpoint: truncated file " + path);
  model.sync_freeze_flags();
  return model;
}

}  // namespace hand3r
