#pragma once

#include "hummorph/motion_weights.hpp"

namespace hummorph {

// Posed -> canonical LBS map for a batch of observation-space points.
struct BackwardDeformed {
  Tensor x_c;     // [N,3]; zero rows where free space
  Tensor w_p;     // [N,K]
  Tensor valid;   // [N] constant 0/1
  std::vector<uint8_t> flags;
};

BackwardDeformed backward_deform(const std::vector<Vec3>& x_p, const LbsConstants& lbs,
                                 const Tensor& w, const WeightGridSpec& spec);

// Canonical -> posed LBS map; x_c may be graph-connected.
struct ForwardDeformed {
  Tensor x_o;     // [N,3]
  Tensor w_c;     // [N,K] canonical weights at x_c (unnormalized blend)
  Tensor w_sum;   // [N] support indicator (sum of w_c)
};

ForwardDeformed forward_deform(const Tensor& x_c, const LbsConstants& lbs,
                               const Tensor& w, const WeightGridSpec& spec);

// Per-point squared forward/backward cycle error
// d = |x_p - T_f(T_b(x_p))|^2; rows flagged free-space are reported invalid.
struct CycleResidual {
  Tensor d;  // [N]
  Tensor valid;
  std::vector<uint8_t> flags;
};

CycleResidual cycle_residual(const std::vector<Vec3>& x_p, const LbsConstants& lbs,
                             const Tensor& w, const WeightGridSpec& spec);

Tensor points_to_tensor(const std::vector<Vec3>& pts, DType dt);

}  // namespace hummorph
