// Command-line front end over the hand3r C API: dataset generation, two-stage
// training, evaluation, and reconstruction export.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hand3r/hand3r.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check(h3r_status st, const std::string& what) {
  if (st == H3R_OK) return;
  std::fprintf(stderr, "error: %s: %s\n", what.c_str(), h3r_last_error());
  std::exit(static_cast<int>(st));
}

std::string take_string(char* s) {
  std::string out = s ? s : "";
  h3r_string_free(s);
  return out;
}

uint64_t fnv1a_str(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string now_iso() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) {
    std::fprintf(stderr, "error: cannot read %s\n", path.c_str());
    std::exit(2);
  }
  return std::string(std::istreambuf_iterator<char>(f), {});
}

// Relative outputs land under $HAND3R_OUT_ROOT when it is set.
std::string resolve_out(const std::string& path) {
  const char* root = std::getenv("HAND3R_OUT_ROOT");
  if (!root || !*root || fs::path(path).is_absolute()) return path;
  return std::string(root) + "/" + path;
}

uint64_t checksum_of(const std::string& path) {
  uint64_t sum = 0;
  check(h3r_file_checksum(path.c_str(), &sum), "checksum " + path);
  return sum;
}

struct ManifestBuilder {
  json j;
  std::string started = now_iso();

  ManifestBuilder(const std::string& command, const std::string& config_text, uint64_t seed) {
    j["command"] = command;
    j["config_hash"] = fnv1a_str(config_text);
    j["seed"] = seed;
  }

  void artifact(const std::string& path) { j["artifacts"][path] = checksum_of(path); }

  void write(const std::string& path) {
    j["started"] = started;
    j["finished"] = now_iso();
    std::ofstream f(path);
    if (!f) {
      std::fprintf(stderr, "error: cannot write %s\n", path.c_str());
      std::exit(2);
    }
    f << j.dump(2) << "\n";
  }
};

json parse_or_empty(const std::string& text, const std::string& what) {
  if (text.empty()) return json::object();
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    std::fprintf(stderr, "error: %s is not valid JSON\n", what.c_str());
    std::exit(2);
  }
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hand3r: online 4D hand-scene reconstruction pipeline"};
  app.require_subcommand(1);

  // ------------------------------------------------------------- gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  uint64_t g_seed = 0, g_tpl_seed = 0;
  int g_sequences = 10, g_frames = 30, g_hands = 1, g_res = 128;
  std::string g_out;
  gen->add_option("--seed", g_seed, "base sequence seed");
  gen->add_option("--sequences", g_sequences, "number of sequences");
  gen->add_option("--frames", g_frames, "frames per sequence");
  gen->add_option("--hands", g_hands, "hands per frame (1 or 2)");
  gen->add_option("--res", g_res, "image resolution (>= 64)");
  gen->add_option("--template-seed", g_tpl_seed, "hand template seed");
  gen->add_option("--out", g_out, "output dataset directory")->required();

  // ---------------------------------------------------------------- train
  auto* tr = app.add_subcommand("train", "run one training stage");
  int t_stage = 1;
  std::string t_data, t_config, t_model_config, t_init, t_out;
  uint64_t t_seed = 0;
  int t_steps = 0;
  double t_lr = 0, t_gamma = -1;
  tr->add_option("--stage", t_stage, "training stage (1 or 2)")->required();
  tr->add_option("--data", t_data, "dataset directory")->required();
  tr->add_option("--config", t_config, "training config JSON file");
  tr->add_option("--model-config", t_model_config, "model config JSON file (stage-1 creation)");
  tr->add_option("--init-checkpoint", t_init, "checkpoint to start from (required for stage 2)");
  tr->add_option("--out", t_out, "output directory")->required();
  auto* t_seed_opt = tr->add_option("--seed", t_seed, "training seed override");
  auto* t_steps_opt = tr->add_option("--steps", t_steps, "step count override");
  auto* t_lr_opt = tr->add_option("--lr", t_lr, "learning rate override");
  auto* t_gamma_opt = tr->add_option("--gamma", t_gamma, "scene-retention weight override");

  // ----------------------------------------------------------------- eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint (or injected oracle)");
  std::string e_ckpt, e_data, e_report, e_cfg, e_oracle;
  std::vector<double> e_offset;
  ev->add_option("--checkpoint", e_ckpt, "model checkpoint");
  ev->add_option("--data", e_data, "dataset directory")->required();
  ev->add_option("--report", e_report, "metrics report JSON output path");
  ev->add_option("--eval-config", e_cfg, "evaluation options JSON file");
  ev->add_option("--oracle", e_oracle, "injected predictions: perfect|world_offset");
  ev->add_option("--offset", e_offset, "world-frame offset (3 values, for world_offset)")
      ->expected(3);

  // ---------------------------------------------------------- reconstruct
  auto* rc = app.add_subcommand("reconstruct", "export a 4D reconstruction");
  std::string r_ckpt, r_data, r_out;
  int r_seq = 0, r_stride = 4;
  rc->add_option("--checkpoint", r_ckpt, "model checkpoint")->required();
  rc->add_option("--data", r_data, "dataset directory")->required();
  rc->add_option("--sequence", r_seq, "sequence index")->required();
  rc->add_option("--out", r_out, "output directory")->required();
  rc->add_option("--stride", r_stride, "point-cloud pixel stride");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    const std::string out = resolve_out(g_out);
    check(h3r_generate_dataset(g_seed, g_sequences, g_frames, g_hands, g_res, g_tpl_seed,
                               out.c_str()),
          "gen-data");
    json cfg = {{"seed", g_seed},   {"sequences", g_sequences}, {"frames", g_frames},
                {"hands", g_hands}, {"res", g_res},             {"template_seed", g_tpl_seed}};
    ManifestBuilder m("gen-data", cfg.dump(), g_seed);
    m.j["dataset"] = out;
    m.artifact(out + "/manifest.json");
    m.write(out + "/run_manifest.json");
    std::printf("wrote %d sequences to %s\n", g_sequences, out.c_str());
    return 0;
  }

  if (tr->parsed()) {
    if (t_stage == 2 && t_init.empty()) {
      std::fprintf(stderr,
                   "error: stage 2 requires --init-checkpoint with a stage-1 checkpoint\n");
      return 2;
    }
    const std::string out = resolve_out(t_out);
    fs::create_directories(out);

    h3r_dataset* data = nullptr;
    check(h3r_dataset_open(t_data.c_str(), &data), "open dataset " + t_data);

    h3r_model* model = nullptr;
    if (!t_init.empty()) {
      check(h3r_model_load(t_init.c_str(), &model), "load checkpoint " + t_init);
    } else {
      json mc = parse_or_empty(t_model_config.empty() ? "" : read_file(t_model_config),
                               "model config");
      if (!mc.contains("template_seed"))
        mc["template_seed"] = h3r_dataset_template_seed(data);
      if (!mc.contains("image_res") && h3r_dataset_image_res(data) > 0)
        mc["image_res"] = h3r_dataset_image_res(data);
      check(h3r_model_create(mc.dump().c_str(), t_seed, &model), "create model");
    }

    json tc = parse_or_empty(t_config.empty() ? "" : read_file(t_config), "training config");
    tc["stage"] = t_stage;
    if (t_seed_opt->count()) tc["seed"] = t_seed;
    if (t_steps_opt->count()) tc["steps"] = t_steps;
    if (t_lr_opt->count()) tc["lr"] = t_lr;
    if (t_gamma_opt->count()) tc["gamma"] = t_gamma;

    const std::string trace = out + "/loss_trace.csv";
    const std::string ckpt = out + "/checkpoint.bin";
    check(h3r_train(model, data, tc.dump().c_str(), trace.c_str()), "train");
    check(h3r_model_save(model, ckpt.c_str()), "save checkpoint");

    ManifestBuilder m("train", tc.dump(), tc.value("seed", uint64_t{0}));
    m.j["dataset"] = t_data;
    m.j["checkpoint"] = ckpt;
    if (!t_init.empty()) m.j["init_checkpoint"] = t_init;
    m.artifact(ckpt);
    m.artifact(trace);
    m.write(out + "/run_manifest.json");

    h3r_model_free(model);
    h3r_dataset_close(data);
    std::printf("stage %d done: %s\n", t_stage, ckpt.c_str());
    return 0;
  }

  if (ev->parsed()) {
    h3r_dataset* data = nullptr;
    check(h3r_dataset_open(e_data.c_str(), &data), "open dataset " + e_data);
    const std::string eval_cfg = e_cfg.empty() ? "" : read_file(e_cfg);

    char* report = nullptr;
    char* table = nullptr;
    if (!e_oracle.empty()) {
      json inj = {{"mode", e_oracle}};
      if (e_oracle == "world_offset") {
        if (e_offset.size() != 3) {
          std::fprintf(stderr, "error: --oracle world_offset requires --offset x y z\n");
          return 2;
        }
        inj["offset"] = e_offset;
      }
      check(h3r_evaluate_oracle(data, inj.dump().c_str(),
                                eval_cfg.empty() ? nullptr : eval_cfg.c_str(), &report,
                                &table),
            "oracle evaluation");
    } else {
      if (e_ckpt.empty()) {
        std::fprintf(stderr, "error: eval requires --checkpoint (or --oracle)\n");
        return 2;
      }
      h3r_model* model = nullptr;
      check(h3r_model_load(e_ckpt.c_str(), &model), "load checkpoint " + e_ckpt);
      check(h3r_evaluate(model, data, eval_cfg.empty() ? nullptr : eval_cfg.c_str(), &report,
                         &table),
            "evaluation");
      h3r_model_free(model);
    }

    std::printf("%s", take_string(table).c_str());
    const std::string report_text = take_string(report);
    if (!e_report.empty()) {
      const std::string path = resolve_out(e_report);
      std::ofstream f(path);
      if (!f) {
        std::fprintf(stderr, "error: cannot write %s\n", path.c_str());
        return 2;
      }
      f << report_text << "\n";
      f.close();
      ManifestBuilder m("eval", eval_cfg, 0);
      m.j["dataset"] = e_data;
      if (!e_ckpt.empty()) m.j["checkpoint"] = e_ckpt;
      if (!e_oracle.empty()) m.j["oracle"] = e_oracle;
      m.artifact(path);
      m.write(path + ".manifest.json");
    }
    h3r_dataset_close(data);
    return 0;
  }

  if (rc->parsed()) {
    const std::string out = resolve_out(r_out);
    h3r_dataset* data = nullptr;
    h3r_model* model = nullptr;
    check(h3r_dataset_open(r_data.c_str(), &data), "open dataset " + r_data);
    check(h3r_model_load(r_ckpt.c_str(), &model), "load checkpoint " + r_ckpt);
    check(h3r_reconstruct(model, data, r_seq, out.c_str(), r_stride), "reconstruct");

    ManifestBuilder m("reconstruct",
                      json{{"sequence", r_seq}, {"stride", r_stride}}.dump(), 0);
    m.j["dataset"] = r_data;
    m.j["checkpoint"] = r_ckpt;
    m.artifact(out + "/scene.ply");
    m.artifact(out + "/trajectory.csv");
    m.write(out + "/run_manifest.json");

    h3r_model_free(model);
    h3r_dataset_close(data);
    std::printf("reconstruction written to %s\n", out.c_str());
    return 0;
  }

  return 0;
}
