#pragma once

#include "hummorph/model.hpp"

namespace hummorph {

struct LossBreakdown {
  double mse = 0, consis = 0, near = 0, proxy = 0;
  double total = 0;      // proxy + l1*mse + l2*consis + l3*near
  double grad_norm = 0;  // pre-clip global L2
  double wall_ms = 0;
};

// Mean over pixels of the squared RGB error norm (channels summed).
Tensor loss_mse(const Tensor& render, const Tensor& gt);
// Thresholded mean of squared cycle residuals: d counts only when d >= eta.
// The denominator is the full point count n (mask applied to the numerator).
Tensor loss_consistency(const Tensor& d, double eta, int64_t n);
// Mean over voxels of the weight-blended bone distances.
Tensor loss_near(const Tensor& w, const Tensor& bone_dist);
// Multi-scale image-gradient L1 difference (perceptual-loss stand-in).
Tensor gradient_difference(const Tensor& render, const Tensor& gt, int h, int w);

double psnr(const Tensor& render, const Tensor& gt);

Pose perturb_pose(const Pose& pose, double magnitude_deg, uint64_t seed);

class Adam {
 public:
  Adam(ParamStore& params, const TrainConfig& cfg);
  // Applies one update using the gradients currently on the parameters.
  // Returns the pre-clip global gradient norm. Parameters under
  // "volumorph_dw." form the motion group: they use lr_motion and stay frozen
  // before motion_delay_iters.
  double step(int iter);

 private:
  ParamStore& params_;
  TrainConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::vector<bool> motion_group_;
  std::vector<int> steps_;
};

struct TrainBatch {
  Pose target_pose;
  Camera target_cam;
  Tensor target_image;  // [3,H,W]
  std::vector<Observation> observed;
};

// One optimization step: renders G seeded patches, assembles the total loss,
// backpropagates through the rendering stage and then the encoder, clips, and
// applies Adam.
LossBreakdown train_step(HumMorphModel& model, Adam& opt, const TrainBatch& batch,
                         const TrainConfig& cfg, int iter, Rng& rng);

// evaluation-protocol observed-frame selector over a full sequence length
std::vector<int> observed_frame_indices(int n_observed, int sequence_length);
// first target index of the second-half split
int split_frame(int sequence_length);

}  // namespace hummorph
