#pragma once

#include "hummorph/motion_weights.hpp"
#include "hummorph/networks.hpp"

namespace hummorph {

// Spatial context for a batch of canonical query points; every tensor is
// graph-connected where its source is.
struct QueryContext {
  Tensor x_c_norm;        // [N,3] bbox-normalized to [-1,1]
  Tensor view_dir;        // [N,3] target view direction in canonical space
  Tensor nearest_joint;   // [N,3] vector from x_c to the nearest joint
  Tensor weights;         // [N,K] motion weights sampled at x_c
};

// [-1,1] bbox normalization used for positional encodings.
Tensor normalize_points(const Tensor& x_c, const WeightGridSpec& spec);

// Attention-based combination of the coarse (global/voxel) features and the
// per-view pixel-aligned features into one conditioning vector per point.
struct FusionModule {
  int dim = 64, heads = 4;
  int pe_pos = 4, pe_dir = 2;
  Mlp align_coarse, align_pixel, align_query;
  TransformerLayer encoder;
  Linear final_key, final_value;

  FusionModule() = default;
  FusionModule(ParamStore& ps, const std::string& prefix, const ModelConfig& cfg,
               int joint_count, int pixel_feat_dim);

  Tensor context_encoding(const QueryContext& ctx) const;  // [N, ctx_dim]

  // f_glob/f_vox [N,C]; per view f_pix [N,P], obs_dir [N,3], avail [N] const.
  Tensor forward(const Tensor& f_glob, const Tensor& f_vox,
                 const std::vector<Tensor>& f_pix, const std::vector<Tensor>& obs_dir,
                 const std::vector<Tensor>& avail, const QueryContext& ctx) const;
};

}  // namespace hummorph
