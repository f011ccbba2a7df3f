#pragma once

#include "hummorph/camera.hpp"
#include "hummorph/deformation.hpp"
#include "hummorph/networks.hpp"

namespace hummorph {

// Voxel centers as an [N,3] constant, flattened z-major to match [C,Z,Y,X].
Tensor grid_voxel_centers(const WeightGridSpec& spec, DType dt);

struct UnprojectedView {
  Tensor volume;  // [C, Z, Y, X]
  Tensor mask;    // [1, Z, Y, X] constant; 1 where the lift is valid
};

// Lift one view into the canonical grid: every voxel center is carried to the
// view's observation space by the forward deformation, projected, and the
// featuremap is sampled bilinearly (at quarter resolution). Voxels that leave
// the frustum or the deformation support are zeroed and masked.
UnprojectedView unproject_undeform(const Tensor& featmap, const Camera& cam,
                                   const LbsConstants& lbs, const Tensor& w,
                                   const WeightGridSpec& spec,
                                   const Tensor& voxel_centers);

// 512-dim scene latent: a learned query attending over linear projections of
// the flattened per-view bottleneck volumes.
struct GlobalLatentHead {
  Tensor query;
  Linear key, value;
  int heads = 4;
  GlobalLatentHead() = default;
  GlobalLatentHead(ParamStore& ps, const std::string& prefix, int64_t bottleneck_dim,
                   int latent_dim);
  Tensor forward(const std::vector<Tensor>& bottlenecks) const;  // -> [latent]
};

// Mean of the three bilinear plane samples; exactly zero outside the bbox.
Tensor sample_triplane(const std::array<Tensor, 3>& planes, const Tensor& x_c,
                       const WeightGridSpec& spec);

// Trilinear feature-volume sample at canonical points (zero outside).
Tensor sample_volume(const Tensor& v, const WeightGridSpec& spec, const Tensor& x_c);

}  // namespace hummorph
