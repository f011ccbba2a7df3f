#pragma once

#include "hummorph/body_model.hpp"
#include "hummorph/ops.hpp"

namespace hummorph {

// Canonical motion-weight grid: K channels over the canonical bounding box,
// stored [K, nz, ny, nx] with x fastest. Texel (ix,iy,iz) is centered at
// bbox.min + (i + 0.5) * extent / resolution.
struct WeightGridSpec {
  Aabb bbox;
  int nx = 32, ny = 32, nz = 16;

  Vec3 voxel_center(int ix, int iy, int iz) const {
    Vec3 e = bbox.extent();
    return bbox.min + Vec3((ix + 0.5) * e.x() / nx, (iy + 0.5) * e.y() / ny,
                           (iz + 0.5) * e.z() / nz);
  }
  Vec3 world_to_grid(const Vec3& p) const {
    Vec3 e = bbox.extent();
    return Vec3((p.x() - bbox.min.x()) / e.x() * nx, (p.y() - bbox.min.y()) / e.y() * ny,
                (p.z() - bbox.min.z()) / e.z() * nz);
  }
  int64_t voxel_count() const { return (int64_t)nx * ny * nz; }
};

WeightGridSpec canonical_grid_spec(const Skeleton& s, double margin, int nx = 32,
                                   int ny = 32, int nz = 16);

// Heuristic initialization W0: per channel, an anisotropic Gaussian along the
// joint's child segments (max over segments; leaves are isotropic blobs),
// floored at `floor_eps` and normalized to a per-voxel simplex.
Tensor init_heuristic(const Skeleton& s, const WeightGridSpec& spec, double sigma_perp,
                      DType dt, double floor_eps = 1e-6);

// W = softmax over channels of (delta_w + biased_log_w0).
Tensor combine_correction(const Tensor& biased_log_w0, const Tensor& delta_w);

// Converts world points to grid coordinates in-graph.
Tensor world_points_to_grid(const Tensor& points, const WeightGridSpec& spec);

// Trilinear K-vector at canonical points (zero outside the bbox).
Tensor sample_canonical(const Tensor& w, const WeightGridSpec& spec, const Tensor& points);

// Bone transforms in tensor form (graph constants).
struct LbsConstants {
  Tensor rot, trans;          // observation -> canonical
  Tensor rot_inv, trans_inv;  // canonical -> observation
};
LbsConstants make_lbs_constants(const BoneTransforms& bt, DType dt);

struct PosedWeights {
  Tensor w;                   // [N,K], normalized; zero rows where free space
  Tensor valid;               // [N] constant 0/1 mask
  std::vector<uint8_t> flags; // 1 = inside support
};

// Motion weights in posed space: channel k of W sampled at R_k x + t_k and
// renormalized. A point is free space when the normalizer falls below 1e-6.
PosedWeights posed_weights(const Tensor& w, const WeightGridSpec& spec,
                           const std::vector<Vec3>& x_p, const LbsConstants& lbs);

}  // namespace hummorph
