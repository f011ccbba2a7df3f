#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hummorph/body_model.hpp"
#include "hummorph/camera.hpp"
#include "hummorph/tensor.hpp"

namespace hummorph {

// ---- images: binary PPM (P6, 8-bit) ----
struct ImageU8 {
  int width = 0, height = 0;
  std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
};

void save_ppm(const std::string& path, const ImageU8& img);
ImageU8 load_ppm(const std::string& path);

Tensor image_to_tensor(const ImageU8& img, DType dt);        // [3,H,W] in [0,1]
ImageU8 tensor_to_image(const Tensor& rgb, int width, int height);  // [H*W,3] in [0,1]
Tensor image_rows(const ImageU8& img, DType dt);             // [H*W,3] in [0,1]

// ---- float volume dump: magic, rank, extents, 32-bit little-endian data ----
void save_float_volume(const std::string& path, const Tensor& t);
Tensor load_float_volume(const std::string& path, DType dt = DType::F32);

// ---- checkpoint: magic "HMRF", version, iteration, config snapshot, tensors ----
struct Checkpoint {
  uint32_t version = 1;
  uint64_t iteration = 0;
  std::string config_json;
  std::vector<std::pair<std::string, Tensor>> tensors;  // stored as f32
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// ---- scene manifests: line-oriented text, one record per line ----
struct FrameRecord {
  int frame = 0;
  int camera = 0;
  std::string image;  // path relative to the manifest directory
  Pose pose;
  bool estimated = false;
};

struct SceneSequence {
  std::string root;  // directory of the manifest
  std::string skeleton_path;  // as written in the manifest
  Skeleton skeleton;
  std::vector<Camera> cameras;
  int frame_count = 0;
  std::vector<FrameRecord> records;

  const FrameRecord* find(int camera, int frame) const;
};

void save_manifest(const std::string& path, const SceneSequence& seq);
SceneSequence load_manifest(const std::string& path);

Tensor load_frame_image(const SceneSequence& seq, const FrameRecord& rec, DType dt);

// All manifests under dir/<subject>/manifest.txt, sorted by path.
std::vector<SceneSequence> load_scene_dir(const std::string& dir);

}  // namespace hummorph
