#pragma once

#include "core/dataset_io.hpp"
#include "core/network.hpp"

namespace hand3r {

// Config file keys match the field names (JSON, all optional).
struct TrainConfig {
  int stage = 1;
  double lambda_joint = 1.0;  // stage-1 joint-term weight
  double lambda_vert = 1.0;   // stage-1 vertex-term weight
  double gamma = 0.1;         // stage-2 scene-retention weight
  double conf_reg = 0.2;      // pointmap confidence regularizer strength
  double lr = 1e-3;
  int steps = 2000;
  int batch = 8;       // stage 1: hand instances per step
  int bptt = 4;        // stage 2: frames with gradients per step
  uint64_t seed = 0;
  double scene_enc_lr_scale = 0.1;
  bool stage2_train_mano = false;  // off by default: the MANO head stays frozen
  double train_fraction = 0.8;     // leading fraction of sequences used for training

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& json);
};

struct LossBreakdown {
  // Stage 1
  double joint = 0, vert = 0;
  // Stage 2
  double trans = 0, abs = 0, px2d = 0, pts = 0, cam = 0;
  double total = 0;
};

// Stage-1 loss: root-relative joint/vertex MSE under the mean-over-elements
// convention (sum of squared norms divided by the element count). Translation
// never enters.
LossBreakdown loss_stage1(const HandPrediction& pred, const HandParams& gt,
                          const HandTemplate& tpl, const TrainConfig& cfg);

// Stage-2 per-frame loss. Hand predictions are camera-frame and must align
// with gt.hands by index (same handedness). L_2D pixel errors are normalized
// by the image diagonal before squaring.
LossBreakdown loss_stage2(const std::vector<HandPrediction>& hands,
                          const ScenePrediction& scene, const FrameRecord& gt,
                          const HandTemplate& tpl_right, const HandTemplate& tpl_left,
                          const TrainConfig& cfg);

// Per-token ground-truth pointmap aggregates: mean of the valid camera-frame
// points inside each token cell.
struct TokenTargets {
  Mat points;  // grid^2 x 3
  std::vector<uint8_t> valid;
};
TokenTargets token_targets(const PointMap& pm, int grid);

// Differentiable FK of a raw MANO-head output row at zero translation
// (root-anchored). Returns a (21 + V) x 3 node: joints stacked over vertices.
// Left hands are decoded through the crop mirror like decode_mano.
ad::Tape::Id fk_mano_node(ad::Tape& t, ad::Tape::Id raw, const HandTemplate& tpl,
                          Handedness handedness);

// First ceil(n * fraction) sequence indices train, the rest are held out.
std::pair<std::vector<int>, std::vector<int>> train_holdout_split(int n, double fraction);

struct TrainResult {
  std::vector<LossBreakdown> trace;  // one entry per optimizer step
  std::vector<int> train_sequences;
  std::vector<int> holdout_sequences;
};

// Deterministic two-stage training. Applies the stage's freeze mask, runs the
// optimizer, and leaves the model holding the trained weights. Throws
// NumericError naming the step and term on non-finite loss.
TrainResult train(Model& model, Dataset& data, const TrainConfig& cfg);

void write_loss_trace_csv(const std::vector<LossBreakdown>& trace, int stage,
                          const std::string& path);

// Evaluation helpers used for the desk-scale training targets.
// Mean root-relative MPJPE (mm) of the frozen-feature MANO-head pipeline.
double eval_stage1_mpjpe_mm(Model& model, Dataset& data, const std::vector<int>& seqs);
// Baseline that always predicts the zero pose (identity rotations, beta = 0).
double zero_pose_baseline_mpjpe_mm(Dataset& data, const std::vector<int>& seqs,
                                   uint64_t template_seed);

struct Stage2Eval {
  double c_mpjpe_mm = 0;            // full online forward, gt boxes
  double scene_center_baseline_mm = 0;  // zero pose at the scene centroid
  double l_pts = 0;                 // mean held-out pointmap loss term
};
Stage2Eval eval_stage2(Model& model, Dataset& data, const std::vector<int>& seqs,
                       const TrainConfig& cfg);

}  // namespace hand3r
