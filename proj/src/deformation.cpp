#include "hummorph/deformation.hpp"

namespace hummorph {

Tensor points_to_tensor(const std::vector<Vec3>& pts, DType dt) {
  Tensor t({(int64_t)pts.size(), 3}, dt);
  for (size_t i = 0; i < pts.size(); ++i) {
    t.set((int64_t)i * 3 + 0, pts[i].x());
    t.set((int64_t)i * 3 + 1, pts[i].y());
    t.set((int64_t)i * 3 + 2, pts[i].z());
  }
  return t;
}

BackwardDeformed backward_deform(const std::vector<Vec3>& x_p, const LbsConstants& lbs,
                                 const Tensor& w, const WeightGridSpec& spec) {
  PosedWeights pw = posed_weights(w, spec, x_p, lbs);
  BackwardDeformed out;
  out.w_p = pw.w;
  out.valid = pw.valid;
  out.flags = std::move(pw.flags);
  Tensor pts = points_to_tensor(x_p, w.dtype());
  out.x_c = lbs_blend(pts, out.w_p, lbs.rot, lbs.trans);
  return out;
}

ForwardDeformed forward_deform(const Tensor& x_c, const LbsConstants& lbs,
                               const Tensor& w, const WeightGridSpec& spec) {
  ForwardDeformed out;
  out.w_c = sample_canonical(w, spec, x_c);
  out.w_sum = sum(out.w_c, 1);
  out.x_o = lbs_blend(x_c, out.w_c, lbs.rot_inv, lbs.trans_inv);
  return out;
}

CycleResidual cycle_residual(const std::vector<Vec3>& x_p, const LbsConstants& lbs,
                             const Tensor& w, const WeightGridSpec& spec) {
  BackwardDeformed b = backward_deform(x_p, lbs, w, spec);
  ForwardDeformed f = forward_deform(b.x_c, lbs, w, spec);
  Tensor pts = points_to_tensor(x_p, w.dtype());
  Tensor diff = sub(pts, f.x_o);
  CycleResidual out;
  out.d = sum(mul(diff, diff), 1);
  out.valid = b.valid;
  out.flags = std::move(b.flags);
  return out;
}

}  // namespace hummorph
