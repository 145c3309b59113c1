#pragma once

#include <list>

#include "core/synthdata.hpp"

namespace hand3r {

// Directory layout (stable format "hand3r-dataset-v1"):
//   <dir>/manifest.json           corpus index: format tag, template seed,
//                                 per-sequence entries with frame counts and
//                                 FNV-1a checksums over the frame files
//   <dir>/seq_NNNN/seq.json       per-sequence metadata
//   <dir>/seq_NNNN/frame_NNNN.bin one frame, little-endian binary:
//     magic "H3RF0001"; int32 res, n_hands; intrinsics fx fy cx cy (f64);
//     cam_pose rotation row-major 9xf64 + translation 3xf64;
//     image res*res*3 u8 (value*255; images are generated on the /255 grid);
//     pointmap valid res*res u8, points res*res*3 f32 (generated at f32);
//     per hand: beta 10xf64, theta 45xf64, global_orient 3xf64, transl 3xf64,
//     handedness u8, visible u8, occlusion_ratio f64, box cx cy w h (f64),
//     keypoints 21x2 f64.
// The quantized fields round-trip bit-exactly because generation snaps them to
// the stored precision.

struct SequenceInfo {
  std::string dir;  // relative to the dataset root
  std::string id;
  uint64_t seed = 0;
  int n_frames = 0;
  int n_hands = 0;
  int image_res = 0;
  int fps = 0;
  uint64_t checksum = 0;  // FNV-1a over the frame files in order
};

void write_dataset(const std::vector<SequenceSample>& samples, const std::string& dir,
                   uint64_t template_seed);

// Streaming corpus generation: each sequence (seeds seed .. seed+sequences-1)
// is generated, written, and released before the next, so memory stays at one
// sequence regardless of corpus size. Output is identical to generating all
// sequences and calling write_dataset.
void generate_dataset(uint64_t seed, int sequences, int frames, int hands, int image_res,
                      uint64_t template_seed, const std::string& dir);
std::vector<SequenceSample> read_dataset(const std::string& dir);
uint64_t dataset_template_seed(const std::string& dir);

uint64_t file_checksum(const std::string& path);

void write_sequence(const SequenceSample& seq, const std::string& seq_dir);
SequenceSample read_sequence(const std::string& seq_dir);

// Lazy corpus view: manifest is read eagerly, sequences on demand with a small
// LRU so training over many sequences stays in memory bounds.
class Dataset {
 public:
  explicit Dataset(const std::string& dir, size_t cache_capacity = 4);

  const std::string& root() const { return root_; }
  uint64_t template_seed() const { return template_seed_; }
  int num_sequences() const { return static_cast<int>(infos_.size()); }
  const SequenceInfo& info(int i) const;
  const SequenceSample& sequence(int i);

 private:
  std::string root_;
  uint64_t template_seed_ = 0;
  size_t capacity_;
  std::vector<SequenceInfo> infos_;
  std::list<std::pair<int, SequenceSample>> cache_;  // front = most recent
};

}  // namespace hand3r
