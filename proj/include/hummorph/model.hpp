#pragma once

#include "hummorph/fusion.hpp"
#include "hummorph/nerf.hpp"
#include "hummorph/volumorph.hpp"

namespace hummorph {

struct Observation {
  Tensor image;  // [3,H,W] in [0,1]
  Camera cam;
  Pose pose;
};

// Everything the renderer needs from one set of observed views. When built
// with two_stage=true the *_rt handles are detached leaves so the rendering
// stage can run per patch and the collected gradients can be pushed through
// the encoder afterwards in one sweep.
struct SceneEncoding {
  std::vector<Tensor> featmaps;  // per view [F+3, H/4, W/4]
  Tensor biased_log_w0;          // [K,Z,Y,X]
  Tensor w_init;
  Tensor delta_w;  // undefined when the correction module is disabled
  Tensor w;
  Tensor v;
  Tensor z;
  std::array<Tensor, 3> planes;
  std::vector<LbsConstants> obs_lbs;
  std::vector<Camera> obs_cams;

  std::vector<Tensor> featmaps_rt;
  Tensor w_rt, v_rt;
  std::array<Tensor, 3> planes_rt;
  bool two_stage = false;

  // (stage-1 tensor, render-stage leaf) pairs for the deferred backward
  std::vector<std::pair<Tensor, Tensor>> boundary() const;
};

// Rays of one rectangular patch that intersect the target bounding box.
struct PatchRays {
  int x0 = 0, y0 = 0, w = 0, h = 0;
  int m = 0;
  std::vector<int64_t> hit_pixels;  // local index row*w+col per hit ray
  std::vector<Vec3> dirs;
  std::vector<RaySamples> samples;
  std::vector<Vec3> points;  // flattened hit points, ray-major
  int64_t ray_count() const { return (int64_t)hit_pixels.size(); }
  int64_t point_count() const { return ray_count() * m; }
};

PatchRays build_patch_rays(const Camera& cam, const Aabb& box, int x0, int y0, int w,
                           int h, int m, Rng* jitter);

struct PatchRender {
  Tensor rgb;      // [w*h, 3]
  Tensor opacity;  // [w*h]
  Tensor consis_d; // [Nvalid] squared cycle residuals; defined when requested
  int64_t n_points = 0;  // body-supported query points in this patch
};

class HumMorphModel {
 public:
  HumMorphModel(const ModelConfig& cfg, const Skeleton& skel, DType dt, uint64_t seed);

  SceneEncoding encode(const std::vector<Observation>& obs, bool two_stage = false);

  PatchRender render_patch(const SceneEncoding& enc, const Pose& target,
                           const PatchRays& rays, bool with_consis) const;

  // Full-frame evaluation render (no gradients, midpoint sampling), assembled
  // from disjoint tiles. Returns [H*W, 3] values.
  Tensor render_image(const SceneEncoding& enc, const Pose& target, const Camera& cam,
                      int samples, int tile = 32) const;

  Aabb target_bbox(const Pose& p) const;
  std::vector<uint8_t> support_flags(const SceneEncoding& enc, const Pose& target,
                                     const std::vector<Vec3>& x_p) const;

  const ModelConfig& config() const { return cfg_; }
  const Skeleton& skeleton() const { return skel_; }
  const WeightGridSpec& grid() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const Tensor& near_distances() const { return near_dist_; }
  const Tensor& w0() const { return w0_; }
  DType dtype() const { return params_.dtype(); }

  ModelConfig cfg_;
  Skeleton skel_;
  WeightGridSpec spec_;
  ParamStore params_;
  Tensor w0_, log_w0_;   // heuristic weights and their log (constants)
  Tensor near_dist_;     // [K,Z,Y,X] distance from voxel centers to channel bones
  Tensor voxel_centers_; // [Nvox,3]
  Cnn2dEncoder cnn;
  BiasGenerator bias_gen;
  Unet3dAggregator unet_dw;  // valid only when cfg.use_delta_w
  Conv3dLayer dw_head;
  Unet3dAggregator unet_v;
  GlobalLatentHead latent_head;
  TriplaneDecoder triplane_dec;
  FusionModule fusion;
  RadianceDecoder decoder;
};

}  // namespace hummorph
