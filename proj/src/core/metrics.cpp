#include "core/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

using nlohmann::json;

namespace hand3r {

namespace {

void check_pair(const Mat& pred, const Mat& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != 3 || gt.cols() != 3)
    throw InvalidInputError("joint sets must both be N x 3 with matching N (got " +
                            std::to_string(pred.rows()) + " vs " + std::to_string(gt.rows()) +
                            ")");
}

Mat stack(const std::vector<Mat>& frames, int begin, int end) {
  const long n = frames[begin].rows();
  Mat out(static_cast<long>(end - begin) * n, 3);
  for (int f = begin; f < end; ++f) out.middleRows(static_cast<long>(f - begin) * n, n) = frames[f];
  return out;
}

// Mean over non-overlapping windows of per-window rigidly-aligned MPJPE.
// align_all fits the transform on the whole window, otherwise on the first
// align_frames frames.
double window_metric(const std::vector<Mat>& pred, const std::vector<Mat>& gt, int window,
                     bool align_all, int align_frames, bool with_scale) {
  if (pred.size() != gt.size())
    throw InvalidInputError("trajectory length mismatch");
  const int n = static_cast<int>(pred.size());
  if (window < 1 || window > n)
    throw InvalidInputError("window length " + std::to_string(window) +
                            " exceeds trajectory length " + std::to_string(n));
  double sum = 0;
  int count = 0;
  for (int s = 0; s + window <= n; s += window) {
    const int fit_end = align_all ? s + window : s + std::min(align_frames, window);
    SimilarityTransform T =
        umeyama_align(stack(pred, s, fit_end), stack(gt, s, fit_end), with_scale);
    sum += mpjpe_mm(T.apply_rows(stack(pred, s, s + window)), stack(gt, s, s + window));
    ++count;
  }
  return sum / count;
}

}  // namespace

double mpjpe_mm(const Mat& pred, const Mat& gt) {
  check_pair(pred, gt);
  return (pred - gt).rowwise().norm().mean() * 1000.0;
}

double pa_mpjpe_mm(const Mat& pred, const Mat& gt) {
  check_pair(pred, gt);
  const SimilarityTransform T = umeyama_align(pred, gt, true);
  return mpjpe_mm(T.apply_rows(pred), gt);
}

double auc_from_errors(const std::vector<double>& errors_mm, double max_mm, int steps) {
  if (errors_mm.empty()) throw InvalidInputError("auc_from_errors: no errors given");
  std::vector<double> sorted = errors_mm;
  std::sort(sorted.begin(), sorted.end());
  // The epsilon absorbs Procrustes-alignment roundoff so exact predictions
  // score 1.0 at threshold zero; it is far below metric resolution.
  auto pck = [&](double thr) {
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), thr + 1e-9);
    return static_cast<double>(it - sorted.begin()) / sorted.size();
  };
  double area = 0;
  double prev = pck(0.0);
  for (int i = 1; i <= steps; ++i) {
    const double cur = pck(max_mm * i / steps);
    area += 0.5 * (prev + cur) * (max_mm / steps);
    prev = cur;
  }
  return area / max_mm;
}

double auc_pck(const std::vector<Mat>& pred_frames, const std::vector<Mat>& gt_frames,
               double max_mm, int steps) {
  if (pred_frames.empty() || pred_frames.size() != gt_frames.size())
    throw InvalidInputError("auc_pck: empty or mismatched frame lists");
  std::vector<double> errors;
  for (size_t f = 0; f < pred_frames.size(); ++f) {
    check_pair(pred_frames[f], gt_frames[f]);
    const SimilarityTransform T = umeyama_align(pred_frames[f], gt_frames[f], true);
    const Mat d = T.apply_rows(pred_frames[f]) - gt_frames[f];
    for (long j = 0; j < d.rows(); ++j) errors.push_back(d.row(j).norm() * 1000.0);
  }
  return auc_from_errors(errors, max_mm, steps);
}

double c_mpjpe_mm(const Mat& pred_cam, const Mat& gt_cam) { return mpjpe_mm(pred_cam, gt_cam); }

double w_mpjpe_mm(const std::vector<Mat>& pred_traj, const std::vector<Mat>& gt_traj, int window,
                  int align_frames, bool with_scale) {
  return window_metric(pred_traj, gt_traj, window, false, align_frames, with_scale);
}

double wa_mpjpe_mm(const std::vector<Mat>& pred_traj, const std::vector<Mat>& gt_traj, int window,
                   bool with_scale) {
  return window_metric(pred_traj, gt_traj, window, true, 0, with_scale);
}

namespace {

struct BucketAccum {
  double mpjpe_sum = 0, pa_sum = 0;
  std::vector<double> aligned_errors_mm;
  long count = 0;

  void add(const Mat& pred_rr, const Mat& gt_rr) {
    mpjpe_sum += mpjpe_mm(pred_rr, gt_rr);
    const SimilarityTransform T = umeyama_align(pred_rr, gt_rr, true);
    const Mat d = T.apply_rows(pred_rr) - gt_rr;
    pa_sum += d.rowwise().norm().mean() * 1000.0;
    for (long j = 0; j < d.rows(); ++j) aligned_errors_mm.push_back(d.row(j).norm() * 1000.0);
    ++count;
  }

  BucketMetrics finish(const EvalOptions& opts) const {
    BucketMetrics b;
    b.count = count;
    if (count > 0) {
      b.mpjpe_mm = mpjpe_sum / count;
      b.pa_mpjpe_mm = pa_sum / count;
      b.auc = auc_from_errors(aligned_errors_mm, opts.auc_max_mm, opts.auc_steps);
    }
    return b;
  }
};

Mat root_relative_rows(const Mat& joints) {
  return joints.rowwise() - joints.row(0);
}

}  // namespace

MetricsReport evaluate(const std::vector<SequencePrediction>& preds,
                       const std::vector<SequenceSample>& gt, uint64_t template_seed,
                       const EvalOptions& opts) {
  if (preds.size() != gt.size())
    throw InvalidInputError("evaluate: " + std::to_string(preds.size()) + " predictions vs " +
                            std::to_string(gt.size()) + " sequences");

  const HandTemplate tpl_right = build_template(template_seed);
  const HandTemplate tpl_left = mirror_template(tpl_right);

  BucketAccum acc_all, acc_mid, acc_high;
  double c_sum = 0;
  long c_count = 0;
  // Per window length: summed window metrics pooled over sequences and hands.
  struct WinAccum {
    double w_sum = 0, wa_sum = 0;
    long n = 0;
  };
  std::vector<WinAccum> wins(opts.window_lengths.size());

  for (size_t s = 0; s < gt.size(); ++s) {
    const SequenceSample& seq = gt[s];
    const SequencePrediction& pred = preds[s];
    if (pred.joints_cam.size() != seq.frames.size() ||
        pred.cam_pose.size() != seq.frames.size())
      throw InvalidInputError("evaluate: frame count mismatch in sequence " + seq.id);

    const int n_hands = seq.frames.empty() ? 0 : static_cast<int>(seq.frames[0].hands.size());
    std::vector<std::vector<Mat>> pred_world(n_hands), gt_world(n_hands);

    for (size_t f = 0; f < seq.frames.size(); ++f) {
      const FrameRecord& fr = seq.frames[f];
      if (pred.joints_cam[f].size() != fr.hands.size())
        throw InvalidInputError("evaluate: hand count mismatch in sequence " + seq.id +
                                " frame " + std::to_string(f));
      const RigidTransform w2c = inverse(fr.cam_pose);
      for (size_t h = 0; h < fr.hands.size(); ++h) {
        const HandGt& hand = fr.hands[h];
        const HandTemplate& tpl =
            hand.params_world.handedness == Handedness::Right ? tpl_right : tpl_left;
        const Mat gt_joints_world = forward_kinematics(tpl, hand.params_world).joints;
        const Mat gt_cam = w2c.apply_rows(gt_joints_world);
        const Mat& pred_cam = pred.joints_cam[f][h];
        check_pair(pred_cam, gt_cam);

        c_sum += c_mpjpe_mm(pred_cam, gt_cam);
        ++c_count;

        const Mat pred_rr = root_relative_rows(pred_cam);
        const Mat gt_rr = root_relative_rows(gt_cam);
        acc_all.add(pred_rr, gt_rr);
        if (hand.occlusion_ratio >= 0.5 && hand.occlusion_ratio < 0.75)
          acc_mid.add(pred_rr, gt_rr);
        else if (hand.occlusion_ratio >= 0.75)
          acc_high.add(pred_rr, gt_rr);

        gt_world[h].push_back(gt_joints_world);
        pred_world[h].push_back(pred.cam_pose[f].apply_rows(pred_cam));
      }
    }

    for (int h = 0; h < n_hands; ++h)
      for (size_t wi = 0; wi < opts.window_lengths.size(); ++wi) {
        const int L = opts.window_lengths[wi];
        const int n = static_cast<int>(gt_world[h].size());
        for (int st = 0; st + L <= n; st += L) {
          std::vector<Mat> pw(pred_world[h].begin() + st, pred_world[h].begin() + st + L);
          std::vector<Mat> gw(gt_world[h].begin() + st, gt_world[h].begin() + st + L);
          wins[wi].w_sum +=
              w_mpjpe_mm(pw, gw, L, opts.w_align_frames, opts.window_with_scale);
          wins[wi].wa_sum += wa_mpjpe_mm(pw, gw, L, opts.window_with_scale);
          ++wins[wi].n;
        }
      }
  }

  MetricsReport rep;
  rep.all = acc_all.finish(opts);
  rep.occ_mid = acc_mid.finish(opts);
  rep.occ_high = acc_high.finish(opts);
  rep.n_instances = c_count;
  rep.c_mpjpe_mm = c_count > 0 ? c_sum / c_count : 0.0;
  for (size_t wi = 0; wi < opts.window_lengths.size(); ++wi) {
    WindowMetrics wm;
    wm.length = opts.window_lengths[wi];
    wm.n_windows = wins[wi].n;
    if (wins[wi].n > 0) {
      wm.w_mpjpe_mm = wins[wi].w_sum / wins[wi].n;
      wm.wa_mpjpe_mm = wins[wi].wa_sum / wins[wi].n;
    }
    rep.windows.push_back(wm);
  }
  return rep;
}

std::string MetricsReport::to_json() const {
  auto bucket = [](const BucketMetrics& b) {
    return json{{"count", b.count},
                {"mpjpe_mm", b.mpjpe_mm},
                {"pa_mpjpe_mm", b.pa_mpjpe_mm},
                {"auc", b.auc}};
  };
  json j;
  j["buckets"] = {{"all", bucket(all)},
                  {"occ_50_75", bucket(occ_mid)},
                  {"occ_75_100", bucket(occ_high)}};
  j["c_mpjpe_mm"] = c_mpjpe_mm;
  j["n_instances"] = n_instances;
  j["windows"] = json::array();
  for (const auto& w : windows)
    j["windows"].push_back({{"length", w.length},
                            {"w_mpjpe_mm", w.w_mpjpe_mm},
                            {"wa_mpjpe_mm", w.wa_mpjpe_mm},
                            {"n_windows", w.n_windows}});
  return j.dump(2);
}

std::string MetricsReport::table() const {
  char line[256];
  std::string out;
  out += "Local hand reconstruction (root-relative)\n";
  out += "  bucket        count    MPJPE    PA-MPJPE   AUC\n";
  auto row = [&](const char* name, const BucketMetrics& b) {
    std::snprintf(line, sizeof(line), "  %-12s %6ld  %7.2f   %7.2f    %5.1f\n", name, b.count,
                  b.mpjpe_mm, b.pa_mpjpe_mm, 100.0 * b.auc);
    out += line;
  };
  row("all", all);
  row("occ 50-75%", occ_mid);
  row("occ 75-100%", occ_high);
  out += "Global hand trajectory\n";
  std::snprintf(line, sizeof(line), "  C-MPJPE %7.2f mm over %ld instances\n", c_mpjpe_mm,
                n_instances);
  out += line;
  for (const auto& w : windows) {
    std::snprintf(line, sizeof(line),
                  "  window %3d: W-MPJPE %8.2f   WA-MPJPE %8.2f   (%ld windows)\n", w.length,
                  w.w_mpjpe_mm, w.wa_mpjpe_mm, w.n_windows);
    out += line;
  }
  return out;
}

}  // namespace hand3r
