#include "hummorph/motion_weights.hpp"

#include <cmath>

namespace hummorph {

WeightGridSpec canonical_grid_spec(const Skeleton& s, double margin, int nx, int ny,
                                   int nz) {
  WeightGridSpec spec;
  spec.bbox = skeleton_bbox(s, Pose::identity(s.joint_count()), margin);
  spec.nx = nx;
  spec.ny = ny;
  spec.nz = nz;
  return spec;
}

namespace {

double segment_gaussian(const Vec3& x, const Segment& seg, double sigma_perp) {
  Vec3 d = seg.b - seg.a;
  double len = d.norm();
  if (len < 1e-9) {
    double r = (x - seg.a).norm();
    return std::exp(-0.5 * (r / sigma_perp) * (r / sigma_perp));
  }
  Vec3 u = d / len;
  Vec3 mid = 0.5 * (seg.a + seg.b);
  double half = 0.5 * len;
  double along = std::clamp((x - mid).dot(u), -half, half);
  double radial = point_segment_distance(x, seg);
  double qa = along / half;
  double qr = radial / sigma_perp;
  return std::exp(-0.5 * (qa * qa + qr * qr));
}

}  // namespace

Tensor init_heuristic(const Skeleton& s, const WeightGridSpec& spec, double sigma_perp,
                      DType dt, double floor_eps) {
  int k = s.joint_count();
  std::vector<std::vector<Segment>> segs(k);
  for (int c = 0; c < k; ++c) segs[c] = channel_segments(s, c);
  Tensor w({k, spec.nz, spec.ny, spec.nx}, dt);
  int64_t vox = spec.voxel_count();
  std::vector<double> vals(k);
  for (int iz = 0; iz < spec.nz; ++iz)
    for (int iy = 0; iy < spec.ny; ++iy)
      for (int ix = 0; ix < spec.nx; ++ix) {
        Vec3 x = spec.voxel_center(ix, iy, iz);
        double total = 0;
        for (int c = 0; c < k; ++c) {
          double best = 0;
          for (const Segment& seg : segs[c])
            best = std::max(best, segment_gaussian(x, seg, sigma_perp));
          vals[c] = std::max(best, floor_eps);
          total += vals[c];
        }
        int64_t at = (int64_t)(iz * spec.ny + iy) * spec.nx + ix;
        for (int c = 0; c < k; ++c) w.set(c * vox + at, vals[c] / total);
      }
  return w;
}

Tensor combine_correction(const Tensor& biased_log_w0, const Tensor& delta_w) {
  check(biased_log_w0.shape() == delta_w.shape(),
        "combine_correction: shapes " + shape_str(biased_log_w0.shape()) + " vs " +
            shape_str(delta_w.shape()));
  return softmax(add(delta_w, biased_log_w0), 0);
}

Tensor world_points_to_grid(const Tensor& points, const WeightGridSpec& spec) {
  Vec3 e = spec.bbox.extent();
  DType dt = points.dtype();
  Tensor shift = Tensor::from_data(
      {3}, {-spec.bbox.min.x(), -spec.bbox.min.y(), -spec.bbox.min.z()}, dt);
  Tensor scale = Tensor::from_data(
      {3}, {spec.nx / e.x(), spec.ny / e.y(), spec.nz / e.z()}, dt);
  return mul(add(points, shift), scale);
}

Tensor sample_canonical(const Tensor& w, const WeightGridSpec& spec, const Tensor& points) {
  return grid_sample_3d(w, world_points_to_grid(points, spec));
}

LbsConstants make_lbs_constants(const BoneTransforms& bt, DType dt) {
  int k = bt.count();
  LbsConstants out;
  out.rot = Tensor({k, 3, 3}, dt);
  out.trans = Tensor({k, 3}, dt);
  out.rot_inv = Tensor({k, 3, 3}, dt);
  out.trans_inv = Tensor({k, 3}, dt);
  for (int i = 0; i < k; ++i) {
    Mat3 rinv = bt.r[i].transpose();
    Vec3 tinv = -(rinv * bt.t[i]);
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        out.rot.set((i * 3 + a) * 3 + b, bt.r[i](a, b));
        out.rot_inv.set((i * 3 + a) * 3 + b, rinv(a, b));
      }
      out.trans.set(i * 3 + a, bt.t[i][a]);
      out.trans_inv.set(i * 3 + a, tinv[a]);
    }
  }
  return out;
}

PosedWeights posed_weights(const Tensor& w, const WeightGridSpec& spec,
                           const std::vector<Vec3>& x_p, const LbsConstants& lbs) {
  int64_t k = w.dim(0);
  int64_t n = (int64_t)x_p.size();
  DType dt = w.dtype();
  // Mapped sample points R_k x + t_k are pose constants, built outside the graph.
  Tensor pts({k, n, 3}, dt);
  for (int64_t c = 0; c < k; ++c) {
    Mat3 r;
    Vec3 t;
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) r(a, b) = lbs.rot.get((c * 3 + a) * 3 + b);
      t[a] = lbs.trans.get(c * 3 + a);
    }
    for (int64_t i = 0; i < n; ++i) {
      Vec3 g = spec.world_to_grid(r * x_p[(size_t)i] + t);
      pts.set((c * n + i) * 3 + 0, g.x());
      pts.set((c * n + i) * 3 + 1, g.y());
      pts.set((c * n + i) * 3 + 2, g.z());
    }
  }
  Tensor raw = gather_channel_samples(w, pts);  // [N,K]
  Tensor total = sum(raw, 1);                   // [N]

  PosedWeights out;
  out.flags.resize((size_t)n);
  Tensor valid({n}, dt);
  for (int64_t i = 0; i < n; ++i) {
    bool ok = total.get(i) >= 1e-6;
    out.flags[(size_t)i] = ok ? 1 : 0;
    valid.set(i, ok ? 1.0 : 0.0);
  }
  out.valid = valid;
  // denom = total where valid, 1 elsewhere; invalid rows end up exactly zero.
  Tensor one_minus = Tensor({n}, dt);
  for (int64_t i = 0; i < n; ++i) one_minus.set(i, out.flags[(size_t)i] ? 0.0 : 1.0);
  Tensor denom = add(mul(total, valid), one_minus);
  out.w = scale_rows(scale_rows(raw, reciprocal(denom)), valid);
  return out;
}

}  // namespace hummorph
