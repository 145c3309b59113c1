#pragma once

#include "core/dataset_io.hpp"

namespace hand3r {

// All joint sets are N x 3 in meters; metric values are reported in mm.

double mpjpe_mm(const Mat& pred, const Mat& gt);
// Per-set similarity (Procrustes) alignment of pred onto gt, then MPJPE.
double pa_mpjpe_mm(const Mat& pred, const Mat& gt);

// PCK area under the curve over thresholds 0..max_mm in `steps` uniform
// trapezoids, pooled over all per-joint errors (mm), normalized to [0,1].
double auc_from_errors(const std::vector<double>& errors_mm, double max_mm = 50.0,
                       int steps = 100);
// Per-frame Procrustes alignment (same as PA-MPJPE), pooled AUC.
double auc_pck(const std::vector<Mat>& pred_frames, const std::vector<Mat>& gt_frames,
               double max_mm = 50.0, int steps = 100);

// Absolute camera-frame error, no alignment.
double c_mpjpe_mm(const Mat& pred_cam, const Mat& gt_cam);

// Trajectories are per-frame world-frame joint sets. Both metrics split the
// trajectory into non-overlapping windows of `window` frames (trailing partial
// discarded) and rigidly align pred onto gt per window: W fits the transform
// on the first `align_frames` frames only, WA on the whole window.
double w_mpjpe_mm(const std::vector<Mat>& pred_traj, const std::vector<Mat>& gt_traj,
                  int window, int align_frames = 1, bool with_scale = false);
double wa_mpjpe_mm(const std::vector<Mat>& pred_traj, const std::vector<Mat>& gt_traj,
                   int window, bool with_scale = false);

// Per-hand predictions for one sequence, camera frame, aligned frame-by-frame
// with the ground-truth sequence.
struct SequencePrediction {
  std::vector<std::vector<Mat>> joints_cam;  // [frame][hand], 21 x 3
  std::vector<RigidTransform> cam_pose;      // predicted camera-to-world per frame
};

struct EvalOptions {
  double auc_max_mm = 50.0;
  int auc_steps = 100;
  std::vector<int> window_lengths = {30, 100};
  int w_align_frames = 1;
  bool window_with_scale = false;
};

struct BucketMetrics {
  double mpjpe_mm = 0;
  double pa_mpjpe_mm = 0;
  double auc = 0;  // fraction in [0,1]
  long count = 0;  // hand instances
};

struct WindowMetrics {
  int length = 0;
  double w_mpjpe_mm = 0;
  double wa_mpjpe_mm = 0;
  long n_windows = 0;
};

struct MetricsReport {
  BucketMetrics all;       // every hand instance
  BucketMetrics occ_mid;   // occlusion ratio in [0.5, 0.75)
  BucketMetrics occ_high;  // occlusion ratio in [0.75, 1.0]
  double c_mpjpe_mm = 0;
  long n_instances = 0;
  std::vector<WindowMetrics> windows;

  std::string to_json() const;
  std::string table() const;  // paper-style text table
};

MetricsReport evaluate(const std::vector<SequencePrediction>& preds,
                       const std::vector<SequenceSample>& gt, uint64_t template_seed,
                       const EvalOptions& opts = {});

}  // namespace hand3r
