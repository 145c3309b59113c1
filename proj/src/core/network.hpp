#pragma once

#include <optional>

#include "core/autodiff.hpp"
#include "core/geometry.hpp"
#include "core/handmodel.hpp"

namespace hand3r {

struct ModelConfig {
  int token_dim = 64;
  int grid_size = 8;          // scene tokens per side
  int image_res = 128;
  int hand_crop_res = 32;
  int hand_grid = 4;          // hand-encoder tokens per side
  int n_encoder_layers = 2;
  int n_decoder_layers = 2;
  int n_heads = 4;
  int state_len = 16;
  int max_hands = 2;
  bool freeze_hand_encoder = true;
  uint64_t template_seed = 0;  // must match the dataset's hand template

  int scene_patch() const { return image_res / grid_size; }
  int hand_patch() const { return hand_crop_res / hand_grid; }
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& json);
};

// One hand as predicted for a single frame, camera frame. Rotations are kept
// as matrices (decoded from the 6D head output); axis-angle fields mirror them
// for HandParams-style consumers.
struct HandPrediction {
  Handedness handedness = Handedness::Right;
  std::array<Mat3, kNumJoints> rotations;  // [0] = global orient
  Eigen::Matrix<double, kShapeDims, 1> beta;
  Vec3 transl_cam = Vec3::Zero();
  HandParams as_params() const;
};

struct ScenePrediction {
  Mat token_points;   // grid^2 x 3, camera frame
  Vec token_conf;     // grid^2, strictly positive
  PointMap pointmap;  // upsampled to pixel grid
  RigidTransform cam_pose;  // camera-to-world
};

struct SceneState {
  Mat tokens;      // state_len x token_dim
  long frame = 0;  // frames consumed so far
};

struct HandObservation {
  BBox box;
  Handedness handedness = Handedness::Right;
};

struct FrameInput {
  Image image;
  CameraIntrinsics intrinsics;
  std::vector<HandObservation> hands;
};

struct FrameOutput {
  ScenePrediction scene;
  std::vector<HandPrediction> hands;       // in prompt slot order
  std::vector<HandMesh> hand_meshes_cam;   // FK at the predicted params
  std::vector<HandMesh> hand_meshes_world;
};

class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ad::ParamStore& params() { return params_; }
  const HandTemplate& hand_template(Handedness h) const {
    return h == Handedness::Right ? template_right_ : template_left_;
  }

  using Id = ad::Tape::Id;

  // Graph builders. Image/crop nodes are (res*res) x 3 row-major pixel
  // matrices (see image_to_rows).
  Id encode_scene_t(ad::Tape& t, Id image_node);
  Id encode_hand_t(ad::Tape& t, Id crop_node);   // 1 x token_dim
  Id build_prompt_t(ad::Tape& t, Id f_h, Id f_s);
  struct DecodeOut {
    std::vector<Id> fused;  // one 1 x D token per prompt, input order
    Id grid;                // grid^2 x D
    Id state;               // state_len x D
  };
  DecodeOut decode_step_t(ad::Tape& t, const std::vector<Id>& prompts, Id scene_tokens,
                          Id state);
  Id region_pool_t(ad::Tape& t, Id scene_tokens, const BBox& box);
  Id head_mano_t(ad::Tape& t, Id f_h);     // 1 x (16*6 + 10) raw output
  Id head_transl_t(ad::Tape& t, Id f_fused);  // 1 x 3
  Id head_scene_t(ad::Tape& t, Id grid);   // grid^2 x 4: xyz + pre-softplus conf
  Id head_camera_t(ad::Tape& t, Id state); // 1 x 9: rot6d + transl

  // Convenience single-shot evaluation (no gradients).
  TokenGrid encode_scene(const Image& image);
  Vec encode_hand(const Image& crop);
  Vec build_prompt(const Vec& f_h, const Vec& f_s);

  SceneState initial_state() const;

  // One online frame: encode, prompt, decode, heads. Advances the state.
  FrameOutput forward_frame(const FrameInput& frame, SceneState& state);
  std::vector<FrameOutput> forward_online(const std::vector<FrameInput>& frames);

  // Decodes the raw mano head output into rotations/shape for the given
  // handedness (left crops are encoded mirrored; this mirrors back).
  HandPrediction decode_mano(const Eigen::RowVectorXd& raw, Handedness handedness);

  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path);

  // Applies the freeze_hand_encoder flag and returns hand-encoder params.
  void sync_freeze_flags();

 private:
  Id transformer_block(ad::Tape& t, Id x, const std::string& prefix);
  Id linear(ad::Tape& t, Id x, const std::string& w, const std::string& b);
  Id pnode(ad::Tape& t, const std::string& name);

  ModelConfig cfg_;
  ad::ParamStore params_;
  HandTemplate template_right_;
  HandTemplate template_left_;
  // Per-tape param node cache so repeated uses share one node.
  ad::Tape* cache_tape_ = nullptr;
  uint64_t cache_serial_ = 0;
  std::map<std::string, Id> cache_;
};

// Row-major (res*res) x 3 pixel matrix from an image.
Mat image_to_rows(const Image& img);
Image flip_horizontal(const Image& img);

// Differentiable patchify: pixel-rows node -> (grid^2) x (patch^2*3).
ad::Tape::Id patchify_node(ad::Tape& t, ad::Tape::Id image_node, int res, int patch);

// Gram-Schmidt 6D -> rotation, value-only counterpart of Tape::rot6d_to_matrix.
Mat3 rot6d_to_matrix_value(const Eigen::RowVectorXd& six);

}  // namespace hand3r
