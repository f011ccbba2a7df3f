#pragma once

#include <array>
#include <vector>

#include "hummorph/tensor.hpp"

// Differentiable operations. Conventions shared by every kernel:
//   - inputs must have equal dtypes; shapes are validated and reported on error
//   - binary broadcasting: the smaller shape must equal a trailing suffix of
//     the larger (broadcast over leading axes only)
//   - each output element is produced by one serial reduction, so results are
//     bit-identical for any thread count
namespace hummorph {

// ---- elementwise / linear ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor reciprocal(const Tensor& a);

Tensor softmax(const Tensor& a, int axis);
// Normalization over the last axis; gain/bias may be undefined.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// ---- shape ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor index_select(const Tensor& a, const std::vector<int64_t>& idx);  // axis 0
// Rows scattered back to `n` rows (zeros elsewhere); inverse of index_select.
Tensor expand_rows(const Tensor& values, const std::vector<int64_t>& idx, int64_t n);

// ---- reductions ----
Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);
// Mean whose addends are pre-sorted by (value, bit pattern): permuting slices
// along `axis` cannot change the result even in floating point.
Tensor mean_sorted(const Tensor& a, int axis);

// Multiply each length-D row of `a` by the matching scalar of `s`
// (s has a's shape minus the last axis).
Tensor scale_rows(const Tensor& a, const Tensor& s);

// ---- matmul ----
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
              bool trans_b = false);
Tensor batched_matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
                      bool trans_b = false);

// ---- convolution (channels-first; 2D wrappers treat depth=1) ----
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::array<int, 3> stride = {1, 1, 1}, std::array<int, 3> pad = {0, 0, 0});
Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        std::array<int, 3> stride, std::array<int, 3> pad);
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::array<int, 2> stride = {1, 1}, std::array<int, 2> pad = {0, 0});
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        std::array<int, 2> stride, std::array<int, 2> pad);
// Average pooling with partial windows at the edges (divisor = actual count).
Tensor avg_pool3d(const Tensor& x, std::array<int, 3> k, std::array<int, 3> stride);
Tensor avg_pool2d(const Tensor& x, std::array<int, 2> k, std::array<int, 2> stride);
Tensor upsample_nearest3d(const Tensor& x, std::array<int, 3> factor);
Tensor upsample_nearest2d(const Tensor& x, std::array<int, 2> factor);

// ---- grid sampling ----
// Continuous coordinates in texel units: texel (i) spans [i, i+1), center at
// i + 0.5. Inside the grid the border texel is replicated; outside [0, size]
// on any axis the sample is exactly zero. Interpolation is lerp over x, then
// y (then z), evaluated as v0 + f*(v1 - v0).
Tensor grid_sample_2d(const Tensor& f, const Tensor& uv);    // f[C,H,W], uv[N,2] -> [N,C]
Tensor grid_sample_3d(const Tensor& v, const Tensor& pts);   // v[C,D,H,W], pts[N,3] -> [N,C]
// Channel k sampled at its own point set: w[k] at pts[k,n] -> out[n,k].
Tensor gather_channel_samples(const Tensor& w, const Tensor& pts);  // w[K,D,H,W], pts[K,N,3]

// ---- pose/camera kernels ----
// out[n] = sum_k weights[n,k] * (rot[k] * points[n] + trans[k]);
// rot[K,3,3] and trans[K,3] are constants (no gradient).
Tensor lbs_blend(const Tensor& points, const Tensor& weights, const Tensor& rot,
                 const Tensor& trans);
// Pinhole projection of world points: returns {uv[N,2], depth[N,1]}.
// Rows with |depth| < 1e-9 produce uv = 0 with zero gradient.
std::pair<Tensor, Tensor> project_points(const Tensor& points, const Tensor& rot,
                                         const Tensor& trans, double fx, double fy,
                                         double cx, double cy);

// ---- volume rendering ----
// Front-to-back alpha compositing of per-ray samples.
// sigma[R,M], color[R,M,3], delta[R,M] (constant), bg[3] (constant).
// Returns {color[R,3], opacity[R]}.
std::pair<Tensor, Tensor> composite_rays(const Tensor& sigma, const Tensor& color,
                                         const Tensor& delta, const Tensor& bg);

// ---- attention ----
// Scaled dot-product attention over small token sets. q[B,Tq,D], k/v[B,Tk,D],
// mask[B,Tk] constant (1 keep, 0 drop) or undefined. Softmax denominators and
// value sums use (value, bit pattern)-sorted summation, making the output
// invariant, bitwise, under permutation of the Tk axis.
Tensor attend_small(const Tensor& q, const Tensor& k, const Tensor& v,
                    const Tensor& mask, int heads);

// ---- operator sugar ----
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace hummorph
