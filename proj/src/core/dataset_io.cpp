#include "core/dataset_io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace hand3r {

namespace {

constexpr char kFrameMagic[8] = {'H', '3', 'R', 'F', '0', '0', '0', '1'};
constexpr char kFormat[] = "hand3r-dataset-v1";

struct Writer {
  std::ofstream f;
  explicit Writer(const std::string& path) : f(path, std::ios::binary) {
    if (!f) throw IoError("cannot open for writing: " + path);
  }
  void bytes(const void* p, size_t n) { f.write(static_cast<const char*>(p), n); }
  template <typename T>
  void pod(const T& v) {
    bytes(&v, sizeof(T));
  }
  void f64s(const double* p, size_t n) { bytes(p, n * sizeof(double)); }
};

struct Reader {
  std::ifstream f;
  std::string path;
  explicit Reader(const std::string& p) : f(p, std::ios::binary), path(p) {
    if (!f) throw IoError("missing or unreadable file: " + p);
  }
  void bytes(void* p, size_t n) {
    f.read(static_cast<char*>(p), n);
    if (!f) throw IoError("corrupt or truncated file: " + path);
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  void f64s(double* p, size_t n) { bytes(p, n * sizeof(double)); }
};

std::string frame_name(int k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04d.bin", k);
  return buf;
}

void write_frame(const FrameRecord& rec, const std::string& path) {
  Writer w(path);
  w.bytes(kFrameMagic, 8);
  const int32_t res = rec.image.width;
  const int32_t n_hands = static_cast<int32_t>(rec.hands.size());
  w.pod(res);
  w.pod(n_hands);
  w.pod(rec.intrinsics.fx);
  w.pod(rec.intrinsics.fy);
  w.pod(rec.intrinsics.cx);
  w.pod(rec.intrinsics.cy);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) w.pod(rec.cam_pose.rotation(r, c));
  w.f64s(rec.cam_pose.translation.data(), 3);

  std::vector<uint8_t> img(rec.image.data.size());
  for (size_t i = 0; i < img.size(); ++i)
    img[i] = static_cast<uint8_t>(std::lround(rec.image.data[i] * 255.0));
  w.bytes(img.data(), img.size());

  w.bytes(rec.gt_pointmap.valid.data(), rec.gt_pointmap.valid.size());
  std::vector<float> pts(rec.gt_pointmap.points.size() * 3);
  for (size_t i = 0; i < rec.gt_pointmap.points.size(); ++i)
    for (int c = 0; c < 3; ++c)
      pts[i * 3 + c] = static_cast<float>(rec.gt_pointmap.points[i](c));
  w.bytes(pts.data(), pts.size() * sizeof(float));

  for (const auto& h : rec.hands) {
    w.f64s(h.params_world.beta.data(), kShapeDims);
    for (int j = 0; j < kNumArticulated; ++j)
      for (int c = 0; c < 3; ++c) w.pod(h.params_world.theta(j, c));
    w.f64s(h.params_world.global_orient.data(), 3);
    w.f64s(h.params_world.transl.data(), 3);
    w.pod(static_cast<uint8_t>(h.params_world.handedness));
    w.pod(static_cast<uint8_t>(h.visible ? 1 : 0));
    w.pod(h.occlusion_ratio);
    w.pod(h.box.cx);
    w.pod(h.box.cy);
    w.pod(h.box.w);
    w.pod(h.box.h);
    for (int j = 0; j < kNumKeypoints; ++j)
      for (int c = 0; c < 2; ++c) w.pod(h.keypoints_2d(j, c));
  }
  if (!w.f) throw IoError("write failed: " + path);
}

FrameRecord read_frame(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kFrameMagic, 8) != 0)
    throw IoError("bad frame magic in " + path);
  FrameRecord rec;
  const int32_t res = r.pod<int32_t>();
  const int32_t n_hands = r.pod<int32_t>();
  if (res <= 0 || n_hands < 0 || n_hands > 16)
    throw IoError("implausible frame header in " + path);
  rec.intrinsics.fx = r.pod<double>();
  rec.intrinsics.fy = r.pod<double>();
  rec.intrinsics.cx = r.pod<double>();
  rec.intrinsics.cy = r.pod<double>();
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) rec.cam_pose.rotation(i, c) = r.pod<double>();
  r.f64s(rec.cam_pose.translation.data(), 3);

  rec.image = Image(res, res);
  std::vector<uint8_t> img(rec.image.data.size());
  r.bytes(img.data(), img.size());
  for (size_t i = 0; i < img.size(); ++i) rec.image.data[i] = img[i] / 255.0;

  rec.gt_pointmap = PointMap(res, res);
  r.bytes(rec.gt_pointmap.valid.data(), rec.gt_pointmap.valid.size());
  std::vector<float> pts(rec.gt_pointmap.points.size() * 3);
  r.bytes(pts.data(), pts.size() * sizeof(float));
  for (size_t i = 0; i < rec.gt_pointmap.points.size(); ++i)
    for (int c = 0; c < 3; ++c) rec.gt_pointmap.points[i](c) = pts[i * 3 + c];

  rec.hands.resize(n_hands);
  for (auto& h : rec.hands) {
    r.f64s(h.params_world.beta.data(), kShapeDims);
    for (int j = 0; j < kNumArticulated; ++j)
      for (int c = 0; c < 3; ++c) h.params_world.theta(j, c) = r.pod<double>();
    r.f64s(h.params_world.global_orient.data(), 3);
    r.f64s(h.params_world.transl.data(), 3);
    h.params_world.handedness = static_cast<Handedness>(r.pod<uint8_t>());
    h.visible = r.pod<uint8_t>() != 0;
    h.occlusion_ratio = r.pod<double>();
    h.box.cx = r.pod<double>();
    h.box.cy = r.pod<double>();
    h.box.w = r.pod<double>();
    h.box.h = r.pod<double>();
    h.keypoints_2d = Mat(kNumKeypoints, 2);
    for (int j = 0; j < kNumKeypoints; ++j)
      for (int c = 0; c < 2; ++c) h.keypoints_2d(j, c) = r.pod<double>();
  }
  return rec;
}

json seq_meta(const SequenceSample& seq) {
  json j;
  j["id"] = seq.id;
  j["seed"] = seq.seed;
  j["fps"] = seq.fps;
  j["n_hands"] = seq.n_hands;
  j["image_res"] = seq.image_res;
  j["n_frames"] = static_cast<int>(seq.frames.size());
  return j;
}

uint64_t sequence_checksum(const std::string& seq_dir, int n_frames) {
  uint64_t h = 1469598103934665603ull;
  for (int k = 0; k < n_frames; ++k) {
    const uint64_t c = file_checksum(seq_dir + "/" + frame_name(k));
    h = fnv1a(&c, sizeof(c), h);
  }
  return h;
}

}  // namespace

uint64_t file_checksum(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("missing or unreadable file: " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof(buf));
    h = fnv1a(buf, static_cast<size_t>(f.gcount()), h);
  }
  return h;
}

void write_sequence(const SequenceSample& seq, const std::string& seq_dir) {
  fs::create_directories(seq_dir);
  std::ofstream meta(seq_dir + "/seq.json");
  if (!meta) throw IoError("cannot open for writing: " + seq_dir + "/seq.json");
  meta << seq_meta(seq).dump(2) << "\n";
  for (size_t k = 0; k < seq.frames.size(); ++k)
    write_frame(seq.frames[k], seq_dir + "/" + frame_name(static_cast<int>(k)));
}

SequenceSample read_sequence(const std::string& seq_dir) {
  std::ifstream meta(seq_dir + "/seq.json");
  if (!meta) throw IoError("missing sequence metadata: " + seq_dir + "/seq.json");
  json j = json::parse(meta, nullptr, false);
  if (j.is_discarded()) throw IoError("corrupt sequence metadata: " + seq_dir + "/seq.json");
  SequenceSample seq;
  seq.id = j.at("id").get<std::string>();
  seq.seed = j.at("seed").get<uint64_t>();
  seq.fps = j.at("fps").get<int>();
  seq.n_hands = j.at("n_hands").get<int>();
  seq.image_res = j.at("image_res").get<int>();
  const int n_frames = j.at("n_frames").get<int>();
  seq.frames.reserve(n_frames);
  for (int k = 0; k < n_frames; ++k)
    seq.frames.push_back(read_frame(seq_dir + "/" + frame_name(k)));
  return seq;
}

void write_dataset(const std::vector<SequenceSample>& samples, const std::string& dir,
                   uint64_t template_seed) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = kFormat;
  manifest["template_seed"] = template_seed;
  manifest["sequences"] = json::array();
  for (size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%04d", static_cast<int>(i));
    const std::string seq_dir = dir + "/" + name;
    write_sequence(samples[i], seq_dir);
    json e = seq_meta(samples[i]);
    e["dir"] = name;
    e["checksum"] = sequence_checksum(seq_dir, static_cast<int>(samples[i].frames.size()));
    manifest["sequences"].push_back(e);
  }
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw IoError("cannot open for writing: " + dir + "/manifest.json");
  f << manifest.dump(2) << "\n";
}

void generate_dataset(uint64_t seed, int sequences, int frames, int hands, int image_res,
                      uint64_t template_seed, const std::string& dir) {
  if (sequences < 1) throw InvalidInputError("generate_dataset: sequences must be >= 1");
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = kFormat;
  manifest["template_seed"] = template_seed;
  manifest["sequences"] = json::array();
  for (int i = 0; i < sequences; ++i) {
    const SequenceSample seq =
        generate_sequence(seed + static_cast<uint64_t>(i), frames, hands, image_res,
                          template_seed);
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%04d", i);
    const std::string seq_dir = dir + "/" + name;
    write_sequence(seq, seq_dir);
    json e = seq_meta(seq);
    e["dir"] = name;
    e["checksum"] = sequence_checksum(seq_dir, static_cast<int>(seq.frames.size()));
    manifest["sequences"].push_back(e);
  }
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw IoError("cannot open for writing: " + dir + "/manifest.json");
  f << manifest.dump(2) << "\n";
}

namespace {

json read_manifest(const std::string& dir) {
  const std::string path = dir + "/manifest.json";
  std::ifstream f(path);
  if (!f) throw IoError("missing manifest: " + path);
  json m = json::parse(f, nullptr, false);
  if (m.is_discarded()) throw IoError("corrupt manifest: " + path);
  if (m.value("format", "") != kFormat)
    throw IoError("unrecognized dataset format in " + path);
  return m;
}

std::vector<SequenceInfo> manifest_infos(const json& m) {
  std::vector<SequenceInfo> infos;
  for (const auto& e : m.at("sequences")) {
    SequenceInfo s;
    s.dir = e.at("dir").get<std::string>();
    s.id = e.at("id").get<std::string>();
    s.seed = e.at("seed").get<uint64_t>();
    s.n_frames = e.at("n_frames").get<int>();
    s.n_hands = e.at("n_hands").get<int>();
    s.image_res = e.at("image_res").get<int>();
    s.fps = e.at("fps").get<int>();
    s.checksum = e.at("checksum").get<uint64_t>();
    infos.push_back(std::move(s));
  }
  return infos;
}

}  // namespace

std::vector<SequenceSample> read_dataset(const std::string& dir) {
  const json m = read_manifest(dir);
  std::vector<SequenceSample> out;
  for (const auto& info : manifest_infos(m)) out.push_back(read_sequence(dir + "/" + info.dir));
  return out;
}

uint64_t dataset_template_seed(const std::string& dir) {
  return read_manifest(dir).at("template_seed").get<uint64_t>();
}

Dataset::Dataset(const std::string& dir, size_t cache_capacity)
    : root_(dir), capacity_(std::max<size_t>(1, cache_capacity)) {
  const json m = read_manifest(dir);
  template_seed_ = m.at("template_seed").get<uint64_t>();
  infos_ = manifest_infos(m);
}

const SequenceInfo& Dataset::info(int i) const {
  if (i < 0 || i >= num_sequences())
    throw InvalidInputError("sequence index out of range: " + std::to_string(i));
  return infos_[static_cast<size_t>(i)];
}

const SequenceSample& Dataset::sequence(int i) {
  const SequenceInfo& inf = info(i);
  for (auto it = cache_.begin(); it != cache_.end(); ++it)
    if (it->first == i) {
      cache_.splice(cache_.begin(), cache_, it);
      return cache_.front().second;
    }
  cache_.emplace_front(i, read_sequence(root_ + "/" + inf.dir));
  while (cache_.size() > capacity_) cache_.pop_back();
  return cache_.front().second;
}

}  // namespace hand3r
