#include "hand3r/hand3r.h"

#include <cstring>
#include <filesystem>

#include "json.hpp"

#include "core/dataset_io.hpp"
#include "core/export.hpp"
#include "core/metrics.hpp"
#include "core/network.hpp"
#include "core/training.hpp"

using nlohmann::json;

struct h3r_dataset {
  hand3r::Dataset impl;
};

struct h3r_model {
  hand3r::Model impl;
};

namespace {

thread_local std::string g_last_error;

h3r_status fail(h3r_status code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

// Translates the library's exception taxonomy to status codes.
template <typename Fn>
h3r_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return H3R_OK;
  } catch (const hand3r::InvalidInputError& e) {
    return fail(H3R_EINVAL, e.what());
  } catch (const hand3r::DegenerateInputError& e) {
    return fail(H3R_EINVAL, e.what());
  } catch (const hand3r::CapacityError& e) {
    return fail(H3R_ECAPACITY, e.what());
  } catch (const hand3r::IoError& e) {
    return fail(H3R_EIO, e.what());
  } catch (const hand3r::NumericError& e) {
    return fail(H3R_ENUMERIC, e.what());
  } catch (const std::exception& e) {
    return fail(H3R_EINTERNAL, e.what());
  } catch (...) {
    return fail(H3R_EINTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

hand3r::EvalOptions parse_eval_options(const char* eval_config_json) {
  hand3r::EvalOptions opts;
  if (!eval_config_json || !*eval_config_json) return opts;
  json j;
  try {
    j = json::parse(eval_config_json);
  } catch (const json::exception& e) {
    throw hand3r::InvalidInputError(std::string("eval config: bad JSON: ") + e.what());
  }
  if (j.contains("auc_max_mm")) opts.auc_max_mm = j["auc_max_mm"].get<double>();
  if (j.contains("auc_steps")) opts.auc_steps = j["auc_steps"].get<int>();
  if (j.contains("window_lengths"))
    opts.window_lengths = j["window_lengths"].get<std::vector<int>>();
  if (j.contains("w_align_frames")) opts.w_align_frames = j["w_align_frames"].get<int>();
  if (j.contains("window_with_scale"))
    opts.window_with_scale = j["window_with_scale"].get<bool>();
  return opts;
}

std::vector<hand3r::SequenceSample> load_all(hand3r::Dataset& d) {
  std::vector<hand3r::SequenceSample> out;
  for (int i = 0; i < d.num_sequences(); ++i)
    out.push_back(hand3r::read_sequence(d.root() + "/" + d.info(i).dir));
  return out;
}

// Model predictions for evaluate(): online forward with ground-truth boxes,
// mapped back from slot order to the dataset's per-frame hand order.
hand3r::SequencePrediction predict_sequence(hand3r::Model& model,
                                            const hand3r::SequenceSample& seq) {
  using namespace hand3r;
  std::vector<FrameInput> inputs;
  inputs.reserve(seq.frames.size());
  for (const FrameRecord& fr : seq.frames) {
    FrameInput in;
    in.image = fr.image;
    in.intrinsics = fr.intrinsics;
    for (const HandGt& h : fr.hands) in.hands.push_back({h.box, h.params_world.handedness});
    inputs.push_back(std::move(in));
  }
  const std::vector<FrameOutput> outs = model.forward_online(inputs);

  SequencePrediction pred;
  for (size_t f = 0; f < seq.frames.size(); ++f) {
    const FrameRecord& fr = seq.frames[f];
    // Replicate forward_frame's stable slot ordering to invert it.
    std::vector<size_t> order(fr.hands.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      const HandGt& ha = fr.hands[a];
      const HandGt& hb = fr.hands[b];
      if (ha.params_world.handedness != hb.params_world.handedness)
        return ha.params_world.handedness < hb.params_world.handedness;
      return ha.box.cx < hb.box.cx;
    });
    std::vector<Mat> joints(fr.hands.size());
    for (size_t i = 0; i < order.size(); ++i)
      joints[order[i]] = outs[f].hand_meshes_cam[i].joints;
    pred.joints_cam.push_back(std::move(joints));
    pred.cam_pose.push_back(outs[f].scene.cam_pose);
  }
  return pred;
}

std::vector<hand3r::SequencePrediction> inject_predictions(
    const std::vector<hand3r::SequenceSample>& gt, const char* injection_json,
    uint64_t template_seed) {
  using namespace hand3r;
  if (!injection_json) throw InvalidInputError("oracle evaluation requires injection JSON");
  json j;
  try {
    j = json::parse(injection_json);
  } catch (const json::exception& e) {
    throw InvalidInputError(std::string("injection: bad JSON: ") + e.what());
  }
  const std::string mode = j.value("mode", "");
  Vec3 offset = Vec3::Zero();
  if (mode == "world_offset") {
    const auto off = j.at("offset").get<std::vector<double>>();
    if (off.size() != 3) throw InvalidInputError("injection: offset must have 3 components");
    offset = Vec3(off[0], off[1], off[2]);
  } else if (mode != "perfect") {
    throw InvalidInputError("injection: unknown mode '" + mode +
                            "' (expected perfect|world_offset)");
  }

  const HandTemplate tpl_right = build_template(template_seed);
  const HandTemplate tpl_left = mirror_template(tpl_right);
  std::vector<SequencePrediction> preds;
  for (const SequenceSample& seq : gt) {
    SequencePrediction p;
    for (const FrameRecord& fr : seq.frames) {
      const RigidTransform w2c = inverse(fr.cam_pose);
      std::vector<Mat> joints;
      for (const HandGt& hand : fr.hands) {
        const HandTemplate& tpl =
            hand.params_world.handedness == Handedness::Right ? tpl_right : tpl_left;
        Mat world = forward_kinematics(tpl, hand.params_world).joints;
        world.rowwise() += offset.transpose();
        joints.push_back(w2c.apply_rows(world));
      }
      p.joints_cam.push_back(std::move(joints));
      p.cam_pose.push_back(fr.cam_pose);
    }
    preds.push_back(std::move(p));
  }
  return preds;
}

void emit_report(const hand3r::MetricsReport& rep, char** report_json_out, char** table_out) {
  if (report_json_out) *report_json_out = dup_string(rep.to_json());
  if (table_out) *table_out = dup_string(rep.table());
}

}  // namespace

extern "C" {

const char* h3r_version(void) { return "hand3r 1.0.0"; }

const char* h3r_last_error(void) { return g_last_error.c_str(); }

void h3r_string_free(char* s) { std::free(s); }

h3r_status h3r_generate_dataset(uint64_t seed, int sequences, int frames, int hands,
                                int image_res, uint64_t template_seed, const char* out_dir) {
  return guarded([&] {
    if (!out_dir) throw hand3r::InvalidInputError("out_dir is NULL");
    hand3r::generate_dataset(seed, sequences, frames, hands, image_res, template_seed,
                             out_dir);
  });
}

h3r_status h3r_dataset_open(const char* dir, h3r_dataset** out) {
  return guarded([&] {
    if (!dir || !out) throw hand3r::InvalidInputError("dataset_open: NULL argument");
    *out = new h3r_dataset{hand3r::Dataset(dir)};
  });
}

void h3r_dataset_close(h3r_dataset* d) { delete d; }

int h3r_dataset_num_sequences(const h3r_dataset* d) {
  return d ? d->impl.num_sequences() : 0;
}

uint64_t h3r_dataset_template_seed(const h3r_dataset* d) {
  return d ? d->impl.template_seed() : 0;
}

int h3r_dataset_image_res(const h3r_dataset* d) {
  return d && d->impl.num_sequences() > 0 ? d->impl.info(0).image_res : 0;
}

h3r_status h3r_model_create(const char* config_json, uint64_t seed, h3r_model** out) {
  return guarded([&] {
    if (!out) throw hand3r::InvalidInputError("model_create: NULL output");
    const hand3r::ModelConfig cfg =
        hand3r::ModelConfig::from_json(config_json && *config_json ? config_json : "{}");
    *out = new h3r_model{hand3r::Model(cfg, seed)};
  });
}

h3r_status h3r_model_load(const char* path, h3r_model** out) {
  return guarded([&] {
    if (!path || !out) throw hand3r::InvalidInputError("model_load: NULL argument");
    *out = new h3r_model{hand3r::Model::load_checkpoint(path)};
  });
}

h3r_status h3r_model_save(const h3r_model* m, const char* path) {
  return guarded([&] {
    if (!m || !path) throw hand3r::InvalidInputError("model_save: NULL argument");
    m->impl.save_checkpoint(path);
  });
}

void h3r_model_free(h3r_model* m) { delete m; }

h3r_status h3r_model_config(const h3r_model* m, char** json_out) {
  return guarded([&] {
    if (!m || !json_out) throw hand3r::InvalidInputError("model_config: NULL argument");
    *json_out = dup_string(m->impl.config().to_json());
  });
}

h3r_status h3r_train(h3r_model* m, h3r_dataset* d, const char* train_config_json,
                     const char* trace_csv_path) {
  return guarded([&] {
    if (!m || !d) throw hand3r::InvalidInputError("train: NULL handle");
    const hand3r::TrainConfig cfg = hand3r::TrainConfig::from_json(
        train_config_json && *train_config_json ? train_config_json : "{}");
    const hand3r::TrainResult res = hand3r::train(m->impl, d->impl, cfg);
    if (trace_csv_path) hand3r::write_loss_trace_csv(res.trace, cfg.stage, trace_csv_path);
  });
}

h3r_status h3r_evaluate(h3r_model* m, h3r_dataset* d, const char* eval_config_json,
                        char** report_json_out, char** table_out) {
  return guarded([&] {
    if (!m || !d) throw hand3r::InvalidInputError("evaluate: NULL handle");
    if (m->impl.config().template_seed != d->impl.template_seed())
      throw hand3r::InvalidInputError("evaluate: model/dataset hand template seed mismatch");
    const hand3r::EvalOptions opts = parse_eval_options(eval_config_json);
    const std::vector<hand3r::SequenceSample> gt = load_all(d->impl);
    std::vector<hand3r::SequencePrediction> preds;
    for (const auto& seq : gt) preds.push_back(predict_sequence(m->impl, seq));
    emit_report(hand3r::evaluate(preds, gt, d->impl.template_seed(), opts), report_json_out,
                table_out);
  });
}

h3r_status h3r_evaluate_oracle(h3r_dataset* d, const char* injection_json,
                               const char* eval_config_json, char** report_json_out,
                               char** table_out) {
  return guarded([&] {
    if (!d) throw hand3r::InvalidInputError("evaluate_oracle: NULL dataset");
    const hand3r::EvalOptions opts = parse_eval_options(eval_config_json);
    const std::vector<hand3r::SequenceSample> gt = load_all(d->impl);
    const auto preds = inject_predictions(gt, injection_json, d->impl.template_seed());
    emit_report(hand3r::evaluate(preds, gt, d->impl.template_seed(), opts), report_json_out,
                table_out);
  });
}

h3r_status h3r_reconstruct(h3r_model* m, h3r_dataset* d, int sequence_index,
                           const char* out_dir, int ply_stride) {
  return guarded([&] {
    using namespace hand3r;
    if (!m || !d || !out_dir) throw InvalidInputError("reconstruct: NULL argument");
    if (ply_stride < 1) throw InvalidInputError("reconstruct: ply_stride must be >= 1");
    if (sequence_index < 0 || sequence_index >= d->impl.num_sequences())
      throw InvalidInputError("reconstruct: unknown sequence index " +
                              std::to_string(sequence_index));
    const SequenceSample& seq = d->impl.sequence(sequence_index);
    std::filesystem::create_directories(out_dir);

    std::vector<FrameInput> inputs;
    for (const FrameRecord& fr : seq.frames) {
      FrameInput in;
      in.image = fr.image;
      in.intrinsics = fr.intrinsics;
      for (const HandGt& h : fr.hands) in.hands.push_back({h.box, h.params_world.handedness});
      inputs.push_back(std::move(in));
    }
    const std::vector<FrameOutput> outs = m->impl.forward_online(inputs);

    std::vector<PlyPoint> cloud;
    std::vector<std::vector<double>> traj_rows;
    for (size_t f = 0; f < outs.size(); ++f) {
      const FrameOutput& out = outs[f];
      const PointMap& pm = out.scene.pointmap;
      for (int y = 0; y < pm.height; y += ply_stride)
        for (int x = 0; x < pm.width; x += ply_stride) {
          if (!pm.valid[pm.idx(x, y)]) continue;
          PlyPoint p;
          p.pos = out.scene.cam_pose.apply(pm.points[pm.idx(x, y)]);
          p.color = Vec3(seq.frames[f].image.at(x, y, 0), seq.frames[f].image.at(x, y, 1),
                         seq.frames[f].image.at(x, y, 2));
          cloud.push_back(p);
        }

      std::vector<double> row;
      row.push_back(static_cast<double>(f));
      for (int c = 0; c < 3; ++c) row.push_back(out.scene.cam_pose.translation(c));
      for (int h = 0; h < m->impl.config().max_hands; ++h) {
        if (h < static_cast<int>(out.hand_meshes_world.size())) {
          for (int c = 0; c < 3; ++c) row.push_back(out.hand_meshes_world[h].joints(0, c));
        } else {
          for (int c = 0; c < 3; ++c) row.push_back(std::nan(""));
        }
      }
      traj_rows.push_back(std::move(row));

      for (size_t h = 0; h < out.hand_meshes_world.size(); ++h) {
        char name[64];
        std::snprintf(name, sizeof(name), "hand_%04d_%d.obj", static_cast<int>(f),
                      static_cast<int>(h));
        const HandTemplate& tpl = m->impl.hand_template(out.hands[h].handedness);
        write_obj(out.hand_meshes_world[h].vertices, tpl.faces,
                  std::string(out_dir) + "/" + name);
      }
    }
    write_ply(cloud, std::string(out_dir) + "/scene.ply");

    std::vector<std::string> header = {"frame", "cam_x", "cam_y", "cam_z"};
    for (int h = 0; h < m->impl.config().max_hands; ++h)
      for (const char* c : {"x", "y", "z"})
        header.push_back("hand" + std::to_string(h) + "_root_" + c);
    write_csv(std::string(out_dir) + "/trajectory.csv", header, traj_rows);
  });
}

h3r_status h3r_file_checksum(const char* path, uint64_t* out) {
  return guarded([&] {
    if (!path || !out) throw hand3r::InvalidInputError("file_checksum: NULL argument");
    *out = hand3r::file_checksum(path);
  });
}

}  // extern "C"
