#pragma once

#include "hummorph/io.hpp"
#include "hummorph/synthetic.hpp"
#include "hummorph/training.hpp"

namespace hummorph {

Checkpoint make_checkpoint(const HumMorphModel& model, const RunConfig& rc,
                           uint64_t iteration);
void apply_checkpoint(HumMorphModel& model, const Checkpoint& ckpt);

struct TrainDriverOptions {
  std::string log_path;         // append-only, one line per step
  std::string checkpoint_path;  // written at the end (and periodically if set)
  int checkpoint_every = 0;
  bool quiet = false;
};

void run_training(HumMorphModel& model, const std::vector<SceneSequence>& scenes,
                  const RunConfig& rc, const TrainDriverOptions& opts);

struct EvalOptions {
  int views = 2;
  double noise_deg = 0;  // > 0 perturbs observed poses (seeded per frame)
  int target_stride = 1;
  int max_targets_per_seq = 4;
  int max_cameras = 0;  // 0 = all
  uint64_t seed = 0;
};

struct EvalResult {
  double mean_psnr = 0;
  int renders = 0;
};

EvalResult evaluate(HumMorphModel& model, const std::vector<SceneSequence>& scenes,
                    const EvalOptions& opts);

// Stable per-frame pose-noise seed shared by training and evaluation, so an
// "estimated" pose is the same wherever the frame is used.
uint64_t frame_noise_seed(uint64_t base, int subject, int camera, int frame);

}  // namespace hummorph
