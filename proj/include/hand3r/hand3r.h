#ifndef HAND3R_H
#define HAND3R_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Online 4D hand-scene reconstruction core.
 *
 * All entry points return h3r_status; on failure h3r_last_error() holds a
 * descriptive message for the calling thread. Strings returned through char**
 * out-parameters are heap-allocated and must be released with
 * h3r_string_free(). Handles are opaque and single-owner. */

typedef enum {
  H3R_OK = 0,
  H3R_EINVAL = 1,    /* invalid or degenerate input */
  H3R_EIO = 2,       /* missing/corrupt files, write failures */
  H3R_ENUMERIC = 3,  /* non-finite values during optimization */
  H3R_ECAPACITY = 4, /* fixed capacity exceeded (e.g. hands per frame) */
  H3R_EINTERNAL = 5
} h3r_status;

typedef struct h3r_dataset h3r_dataset;
typedef struct h3r_model h3r_model;

const char* h3r_version(void);
/* Message from the most recent failing call on this thread ("" if none). */
const char* h3r_last_error(void);
void h3r_string_free(char* s);

/* ------------------------------------------------------------------ data */

/* Generates `sequences` synthetic sequences of `frames` frames with `hands`
 * hands (1 or 2) at image_res x image_res and writes the dataset directory. */
h3r_status h3r_generate_dataset(uint64_t seed, int sequences, int frames, int hands,
                                int image_res, uint64_t template_seed, const char* out_dir);

h3r_status h3r_dataset_open(const char* dir, h3r_dataset** out);
void h3r_dataset_close(h3r_dataset* d);
int h3r_dataset_num_sequences(const h3r_dataset* d);
uint64_t h3r_dataset_template_seed(const h3r_dataset* d);
/* Image resolution of the first sequence (0 for an empty dataset). */
int h3r_dataset_image_res(const h3r_dataset* d);

/* ----------------------------------------------------------------- model */

/* config_json: ModelConfig fields (all optional); "{}" for defaults. */
h3r_status h3r_model_create(const char* config_json, uint64_t seed, h3r_model** out);
h3r_status h3r_model_load(const char* path, h3r_model** out);
h3r_status h3r_model_save(const h3r_model* m, const char* path);
void h3r_model_free(h3r_model* m);
h3r_status h3r_model_config(const h3r_model* m, char** json_out);

/* -------------------------------------------------------------- training */

/* train_config_json keys: stage (1|2), lambda_joint, lambda_vert, gamma,
 * conf_reg, lr, steps, batch, bptt, seed, scene_enc_lr_scale,
 * stage2_train_mano, train_fraction. Writes a per-step loss CSV when
 * trace_csv_path is non-NULL. */
h3r_status h3r_train(h3r_model* m, h3r_dataset* d, const char* train_config_json,
                     const char* trace_csv_path);

/* ------------------------------------------------------------ evaluation */

/* eval_config_json (optional, may be NULL): auc_max_mm, auc_steps,
 * window_lengths (array), w_align_frames, window_with_scale.
 * On success *report_json_out gets the structured report and *table_out the
 * paper-style text table (either may be NULL if not wanted). */
h3r_status h3r_evaluate(h3r_model* m, h3r_dataset* d, const char* eval_config_json,
                        char** report_json_out, char** table_out);

/* Protocol-fidelity mode: evaluates injected predictions instead of a model.
 * injection_json: {"mode":"perfect"} or
 * {"mode":"world_offset","offset":[x,y,z]} (meters, world frame, applied to
 * every joint; camera poses stay ground truth). */
h3r_status h3r_evaluate_oracle(h3r_dataset* d, const char* injection_json,
                               const char* eval_config_json, char** report_json_out,
                               char** table_out);

/* ---------------------------------------------------------------- export */

/* Runs the model online over one sequence and writes into out_dir:
 * scene.ply (accumulated world point cloud, every ply_stride-th pixel per
 * axis), hand_FFFF_H.obj per frame and hand, trajectory.csv (camera position
 * and per-hand wrist positions, world frame, one row per frame). */
h3r_status h3r_reconstruct(h3r_model* m, h3r_dataset* d, int sequence_index,
                           const char* out_dir, int ply_stride);

/* FNV-1a over the file bytes; used for run-manifest artifact checksums. */
h3r_status h3r_file_checksum(const char* path, uint64_t* out);

#ifdef __cplusplus
}
#endif

#endif /* HAND3R_H */
