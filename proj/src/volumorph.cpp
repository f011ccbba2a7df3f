#include "hummorph/volumorph.hpp"

namespace hummorph {

Tensor grid_voxel_centers(const WeightGridSpec& spec, DType dt) {
  Tensor pts({spec.voxel_count(), 3}, dt);
  int64_t i = 0;
  for (int iz = 0; iz < spec.nz; ++iz)
    for (int iy = 0; iy < spec.ny; ++iy)
      for (int ix = 0; ix < spec.nx; ++ix, ++i) {
        Vec3 c = spec.voxel_center(ix, iy, iz);
        pts.set(i * 3 + 0, c.x());
        pts.set(i * 3 + 1, c.y());
        pts.set(i * 3 + 2, c.z());
      }
  return pts;
}

UnprojectedView unproject_undeform(const Tensor& featmap, const Camera& cam,
                                   const LbsConstants& lbs, const Tensor& w,
                                   const WeightGridSpec& spec,
                                   const Tensor& voxel_centers) {
  DType dt = featmap.dtype();
  int64_t n = voxel_centers.dim(0);
  ForwardDeformed fwd = forward_deform(voxel_centers, lbs, w, spec);

  Tensor rot({3, 3}, dt), trans({3}, dt);
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) rot.set(a * 3 + b, cam.extr.rot(a, b));
    trans.set(a, cam.extr.trans[a]);
  }
  auto [uv, depth] = project_points(fwd.x_o, rot, trans, cam.intr.fx, cam.intr.fy,
                                    cam.intr.cx, cam.intr.cy);

  // validity from forward values: inside the frustum and inside the
  // deformation support
  Tensor valid({n}, dt);
  for (int64_t i = 0; i < n; ++i) {
    double z = depth.get(i);
    double u = uv.get(i * 2), v = uv.get(i * 2 + 1);
    bool ok = z > 1e-6 && u >= 0 && u <= cam.intr.width && v >= 0 &&
              v <= cam.intr.height && fwd.w_sum.get(i) >= 1e-6;
    valid.set(i, ok ? 1.0 : 0.0);
  }

  Tensor feat = grid_sample_2d(featmap, mul_scalar(uv, 0.25));
  feat = scale_rows(feat, valid);

  UnprojectedView out;
  int64_t c = featmap.dim(0);
  out.volume = reshape(permute(feat, {1, 0}), {c, spec.nz, spec.ny, spec.nx});
  Tensor mask = valid.clone();
  mask.impl()->shape = {1, spec.nz, spec.ny, spec.nx};
  out.mask = mask;
  return out;
}

GlobalLatentHead::GlobalLatentHead(ParamStore& ps, const std::string& prefix,
                                   int64_t bottleneck_dim, int latent_dim) {
  query = ps.create(prefix + ".query", {latent_dim}, Init::Normal01, 0.1);
  key = Linear(ps, prefix + ".key", (int)bottleneck_dim, latent_dim);
  value = Linear(ps, prefix + ".value", (int)bottleneck_dim, latent_dim);
}

Tensor GlobalLatentHead::forward(const std::vector<Tensor>& bottlenecks) const {
  check(!bottlenecks.empty(), "global latent: no views");
  int64_t latent = query.numel();
  std::vector<Tensor> flat;
  for (const Tensor& b : bottlenecks) flat.push_back(reshape(b, {1, b.numel()}));
  Tensor stacked = concat(flat, 0);                       // [T, D]
  Tensor k = key.forward(stacked);                        // [T, latent]
  Tensor v = value.forward(stacked);
  Tensor q = reshape(query, {1, 1, latent});
  Tensor att = attend_small(q, reshape(k, {1, (int64_t)bottlenecks.size(), latent}),
                            reshape(v, {1, (int64_t)bottlenecks.size(), latent}),
                            Tensor(), heads);
  return reshape(att, {latent});
}

namespace {

// normalized [0,1] bbox coordinates scaled to plane texels
Tensor plane_coords(const Tensor& x_c, const WeightGridSpec& spec, int axis_a, int axis_b,
                    int64_t res) {
  DType dt = x_c.dtype();
  Vec3 e = spec.bbox.extent();
  double mins[3] = {spec.bbox.min.x(), spec.bbox.min.y(), spec.bbox.min.z()};
  double exts[3] = {e.x(), e.y(), e.z()};
  Tensor shift = Tensor::from_data({3}, {-mins[0], -mins[1], -mins[2]}, dt);
  Tensor scale = Tensor::from_data(
      {3}, {res / exts[0], res / exts[1], res / exts[2]}, dt);
  Tensor t = mul(add(x_c, shift), scale);  // [N,3] in texel units per axis
  Tensor ua = slice(t, 1, axis_a, 1);
  Tensor ub = slice(t, 1, axis_b, 1);
  return concat({ua, ub}, 1);
}

}  // namespace

Tensor sample_triplane(const std::array<Tensor, 3>& planes, const Tensor& x_c,
                       const WeightGridSpec& spec) {
  int64_t res = planes[0].dim(1);
  Tensor s_xy = grid_sample_2d(planes[0], plane_coords(x_c, spec, 0, 1, res));
  Tensor s_xz = grid_sample_2d(planes[1], plane_coords(x_c, spec, 0, 2, res));
  Tensor s_yz = grid_sample_2d(planes[2], plane_coords(x_c, spec, 1, 2, res));
  Tensor mean = mul_scalar(add(add(s_xy, s_xz), s_yz), 1.0 / 3.0);
  // zero outside the bbox on any axis
  int64_t n = x_c.dim(0);
  Tensor inside({n}, x_c.dtype());
  for (int64_t i = 0; i < n; ++i) {
    Vec3 p(x_c.get(i * 3), x_c.get(i * 3 + 1), x_c.get(i * 3 + 2));
    inside.set(i, spec.bbox.contains(p) ? 1.0 : 0.0);
  }
  return scale_rows(mean, inside);
}

Tensor sample_volume(const Tensor& v, const WeightGridSpec& spec, const Tensor& x_c) {
  return grid_sample_3d(v, world_points_to_grid(x_c, spec));
}

}  // namespace hummorph
