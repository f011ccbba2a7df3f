#pragma once

#include <array>
#include <string>
#include <vector>

#include "hummorph/tensor.hpp"

namespace hummorph {

struct ModelConfig {
  // canonical grid
  int grid_nx = 32, grid_ny = 32, grid_nz = 16;
  double bbox_margin = 0.15;

  // heuristic motion weights
  double sigma_perp = 0.06;
  double w0_floor = 1e-6;

  // feature dimensions
  int feature_dim = 32;  // 2D featuremap learned channels, voxel/triplane channels
  int cnn2d_width = 32;
  std::vector<int> unet3d_widths = {32, 64, 128};
  int latent_dim = 512;
  int triplane_res = 32;

  // fusion / decoder
  int fusion_dim = 64;
  int fusion_hidden = 128;
  int fusion_heads = 4;
  int pe_freq_pos = 4;   // query position
  int pe_freq_dir = 2;   // directions
  int pe_freq_xc = 6;    // decoder input position
  int nerf_layers = 8;
  int nerf_width = 256;
  int nerf_skip = 5;  // 1-based hidden layer that re-reads the input

  // rendering
  int samples_per_ray = 128;
  std::array<double, 3> bg_color = {0, 0, 0};

  // ablations
  bool use_delta_w = true;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct TrainConfig {
  double lr_main = 2e-4;
  double lr_motion = 2e-5;
  int motion_delay_iters = 5000;
  double grad_clip_l2 = 7.5;
  int patches_per_step = 6;   // G
  int patch_size = 32;        // H
  int observed_views_per_step = 2;
  int iters = 10000;

  // loss weights
  double lambda_mse = 0.3;
  double lambda_consis = 2.0;
  double lambda_near = 0.1;
  double eta_consis = 0.05;
  bool use_gradient_proxy = false;

  // pose-noise curriculum: p ramps 0 -> noise_p_max over the first half of
  // training, then holds
  double noise_p_max = 0.75;
  double noise_deg = 5.0;
  bool noise_enabled = false;

  // Adam
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  uint64_t seed = 0;

  double noise_probability(int iter) const {
    double half = 0.5 * (double)iters;
    if (!noise_enabled || half <= 0) return 0.0;
    double p = noise_p_max * (double)iter / half;
    return p < noise_p_max ? p : noise_p_max;
  }

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

// Combined config file {"model": {...}, "train": {...}}; missing keys keep
// defaults.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig from_file(const std::string& path);
};

}  // namespace hummorph
