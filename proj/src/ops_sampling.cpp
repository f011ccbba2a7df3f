#include <algorithm>
#include <bit>
#include <cmath>

#include "hummorph/ops.hpp"
#include "hummorph/threading.hpp"

namespace hummorph {

namespace {

template <typename F>
void dispatch(DType dt, F&& f) {
  if (dt == DType::F32)
    f(float{});
  else
    f(double{});
}

template <typename S>
uint64_t value_bits(S v) {
  if constexpr (sizeof(S) == 4)
    return std::bit_cast<uint32_t>(v);
  else
    return std::bit_cast<uint64_t>(v);
}

// Insertion sort by (value, bit pattern): canonical summation order for the
// small token counts used here.
template <typename S>
S sorted_sum(S* vals, int n) {
  for (int i = 1; i < n; ++i) {
    S v = vals[i];
    uint64_t vb = value_bits(v);
    int j = i - 1;
    while (j >= 0 && (vals[j] > v || (vals[j] == v && value_bits(vals[j]) > vb))) {
      vals[j + 1] = vals[j];
      --j;
    }
    vals[j + 1] = v;
  }
  S acc = 0;
  for (int i = 0; i < n; ++i) acc += vals[i];
  return acc;
}

inline int64_t clamp_idx(int64_t i, int64_t n) {
  return std::min(std::max<int64_t>(i, 0), n - 1);
}

// Texel centers at +0.5, border replication inside [0, extent].
template <typename S>
struct Cell2 {
  int64_t x0, x1, y0, y1;
  S fx, fy;
};

template <typename S>
Cell2<S> cell2(S u, S v, int64_t w, int64_t h) {
  S gx = u - (S)0.5, gy = v - (S)0.5;
  S fx0 = std::floor(gx), fy0 = std::floor(gy);
  Cell2<S> c;
  c.fx = gx - fx0;
  c.fy = gy - fy0;
  c.x0 = clamp_idx((int64_t)fx0, w);
  c.x1 = clamp_idx((int64_t)fx0 + 1, w);
  c.y0 = clamp_idx((int64_t)fy0, h);
  c.y1 = clamp_idx((int64_t)fy0 + 1, h);
  return c;
}

template <typename S>
struct Cell3 {
  Cell2<S> xy;
  int64_t z0, z1;
  S fz;
};

template <typename S>
Cell3<S> cell3(S x, S y, S z, int64_t w, int64_t h, int64_t d) {
  Cell3<S> c;
  c.xy = cell2(x, y, w, h);
  S gz = z - (S)0.5;
  S fz0 = std::floor(gz);
  c.fz = gz - fz0;
  c.z0 = clamp_idx((int64_t)fz0, d);
  c.z1 = clamp_idx((int64_t)fz0 + 1, d);
  return c;
}

// One channel plane: lerp x, then y (v0 + f*(v1-v0) form).
template <typename S>
S bilin_read(const S* plane, const Cell2<S>& c, int64_t w) {
  S v00 = plane[c.y0 * w + c.x0], v01 = plane[c.y0 * w + c.x1];
  S v10 = plane[c.y1 * w + c.x0], v11 = plane[c.y1 * w + c.x1];
  S a = v00 + c.fx * (v01 - v00);
  S b = v10 + c.fx * (v11 - v10);
  return a + c.fy * (b - a);
}

template <typename S>
S tri_read(const S* vol, const Cell3<S>& c, int64_t h, int64_t w) {
  S pa = bilin_read(vol + c.z0 * h * w, c.xy, w);
  S pb = bilin_read(vol + c.z1 * h * w, c.xy, w);
  return pa + c.fz * (pb - pa);
}

// corner weights and value gradients for one bilinear cell
template <typename S>
void bilin_backward(const S* plane, const Cell2<S>& c, int64_t w, S go, S* gplane,
                    S& du, S& dv) {
  S v00 = plane[c.y0 * w + c.x0], v01 = plane[c.y0 * w + c.x1];
  S v10 = plane[c.y1 * w + c.x0], v11 = plane[c.y1 * w + c.x1];
  if (gplane) {
    gplane[c.y0 * w + c.x0] += go * (1 - c.fx) * (1 - c.fy);
    gplane[c.y0 * w + c.x1] += go * c.fx * (1 - c.fy);
    gplane[c.y1 * w + c.x0] += go * (1 - c.fx) * c.fy;
    gplane[c.y1 * w + c.x1] += go * c.fx * c.fy;
  }
  du += go * ((1 - c.fy) * (v01 - v00) + c.fy * (v11 - v10));
  dv += go * ((v10 + c.fx * (v11 - v10)) - (v00 + c.fx * (v01 - v00)));
}

// trilinear cell: value-gradient scatter plus position derivatives
template <typename S>
void tri_backward(const S* vol, const Cell3<S>& c, int64_t h, int64_t w, S go, S* gvol,
                  S& dx, S& dy, S& dz) {
  const S* pa = vol + c.z0 * h * w;
  const S* pb = vol + c.z1 * h * w;
  S wa = go * (1 - c.fz), wb = go * c.fz;
  S dua = 0, dva = 0, dub = 0, dvb = 0;
  bilin_backward(pa, c.xy, w, wa, gvol ? gvol + c.z0 * h * w : nullptr, dua, dva);
  bilin_backward(pb, c.xy, w, wb, gvol ? gvol + c.z1 * h * w : nullptr, dub, dvb);
  dx += dua + dub;
  dy += dva + dvb;
  dz += go * (bilin_read(pb, c.xy, w) - bilin_read(pa, c.xy, w));
}

}  // namespace

Tensor grid_sample_2d(const Tensor& f, const Tensor& uv) {
  check(f.rank() == 3, "grid_sample_2d: featuremap must be [C,H,W], got " +
                           shape_str(f.shape()));
  check(uv.rank() == 2 && uv.dim(1) == 2,
        "grid_sample_2d: coordinates must be [N,2], got " + shape_str(uv.shape()));
  check(f.dtype() == uv.dtype(), "grid_sample_2d: dtype mismatch");
  int64_t c = f.dim(0), h = f.dim(1), w = f.dim(2), n = uv.dim(0);
  Tensor out({n, c}, f.dtype());
  dispatch(f.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* pf = f.data<S>();
    const S* puv = uv.data<S>();
    S* po = out.data<S>();
    parallel_for(n, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        S u = puv[i * 2], v = puv[i * 2 + 1];
        if (u < 0 || u > (S)w || v < 0 || v > (S)h) {
          for (int64_t ch = 0; ch < c; ++ch) po[i * c + ch] = 0;
          continue;
        }
        Cell2<S> cl = cell2(u, v, w, h);
        for (int64_t ch = 0; ch < c; ++ch)
          po[i * c + ch] = bilin_read(pf + ch * h * w, cl, w);
      }
    }, 256);
  });
  if (auto node = make_node("grid_sample_2d", {f, uv}, {out})) {
    node->backward = [f, uv, c, h, w, n](const std::vector<Tensor>& gs) {
      dispatch(f.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const S* g = gs[0].data<S>();
        const S* pf = f.data<S>();
        const S* puv = uv.data<S>();
        Tensor gf = f.requires_grad() ? Tensor::zeros(f.shape(), f.dtype()) : Tensor();
        Tensor guv = uv.requires_grad() ? Tensor::zeros(uv.shape(), uv.dtype()) : Tensor();
        S* pgf = gf.defined() ? gf.data<S>() : nullptr;
        S* pguv = guv.defined() ? guv.data<S>() : nullptr;
        for (int64_t i = 0; i < n; ++i) {
          S u = puv[i * 2], v = puv[i * 2 + 1];
          if (u < 0 || u > (S)w || v < 0 || v > (S)h) continue;
          Cell2<S> cl = cell2(u, v, w, h);
          S du = 0, dv = 0;
          for (int64_t ch = 0; ch < c; ++ch)
            bilin_backward(pf + ch * h * w, cl, w, g[i * c + ch],
                           pgf ? pgf + ch * h * w : nullptr, du, dv);
          if (pguv) {
            pguv[i * 2] = du;
            pguv[i * 2 + 1] = dv;
          }
        }
        if (gf.defined()) add_to_grad(f, gf);
        if (guv.defined()) add_to_grad(uv, guv);
      });
    };
  }
  return out;
}

Tensor grid_sample_3d(const Tensor& v, const Tensor& pts) {
  check(v.rank() == 4, "grid_sample_3d: volume must be [C,D,H,W], got " +
                           shape_str(v.shape()));
  check(pts.rank() == 2 && pts.dim(1) == 3,
        "grid_sample_3d: points must be [N,3], got " + shape_str(pts.shape()));
  check(v.dtype() == pts.dtype(), "grid_sample_3d: dtype mismatch");
  int64_t c = v.dim(0), d = v.dim(1), h = v.dim(2), w = v.dim(3), n = pts.dim(0);
  Tensor out({n, c}, v.dtype());
  dispatch(v.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* pv = v.data<S>();
    const S* pp = pts.data<S>();
    S* po = out.data<S>();
    parallel_for(n, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        S x = pp[i * 3], y = pp[i * 3 + 1], z = pp[i * 3 + 2];
        if (x < 0 || x > (S)w || y < 0 || y > (S)h || z < 0 || z > (S)d) {
          for (int64_t ch = 0; ch < c; ++ch) po[i * c + ch] = 0;
          continue;
        }
        Cell3<S> cl = cell3(x, y, z, w, h, d);
        for (int64_t ch = 0; ch < c; ++ch)
          po[i * c + ch] = tri_read(pv + ch * d * h * w, cl, h, w);
      }
    }, 256);
  });
  if (auto node = make_node("grid_sample_3d", {v, pts}, {out})) {
    node->backward = [v, pts, c, d, h, w, n](const std::vector<Tensor>& gs) {
      dispatch(v.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const S* g = gs[0].data<S>();
        const S* pv = v.data<S>();
        const S* pp = pts.data<S>();
        Tensor gv = v.requires_grad() ? Tensor::zeros(v.shape(), v.dtype()) : Tensor();
        Tensor gp = pts.requires_grad() ? Tensor::zeros(pts.shape(), pts.dtype()) : Tensor();
        S* pgv = gv.defined() ? gv.data<S>() : nullptr;
        S* pgp = gp.defined() ? gp.data<S>() : nullptr;
        for (int64_t i = 0; i < n; ++i) {
          S x = pp[i * 3], y = pp[i * 3 + 1], z = pp[i * 3 + 2];
          if (x < 0 || x > (S)w || y < 0 || y > (S)h || z < 0 || z > (S)d) continue;
          Cell3<S> cl = cell3(x, y, z, w, h, d);
          S dx = 0, dy = 0, dz = 0;
          for (int64_t ch = 0; ch < c; ++ch)
            tri_backward(pv + ch * d * h * w, cl, h, w, g[i * c + ch],
                         pgv ? pgv + ch * d * h * w : nullptr, dx, dy, dz);
          if (pgp) {
            pgp[i * 3] = dx;
            pgp[i * 3 + 1] = dy;
            pgp[i * 3 + 2] = dz;
          }
        }
        if (gv.defined()) add_to_grad(v, gv);
        if (gp.defined()) add_to_grad(pts, gp);
      });
    };
  }
  return out;
}

Tensor gather_channel_samples(const Tensor& w, const Tensor& pts) {
  check(w.rank() == 4, "gather_channel_samples: volume must be [K,D,H,W]");
  check(pts.rank() == 3 && pts.dim(2) == 3 && pts.dim(0) == w.dim(0),
        "gather_channel_samples: points must be [K,N,3] matching channels, got " +
            shape_str(pts.shape()) + " for " + shape_str(w.shape()));
  check(w.dtype() == pts.dtype(), "gather_channel_samples: dtype mismatch");
  int64_t kch = w.dim(0), d = w.dim(1), h = w.dim(2), ww = w.dim(3), n = pts.dim(1);
  Tensor out({n, kch}, w.dtype());
  dispatch(w.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* pv = w.data<S>();
    const S* pp = pts.data<S>();
    S* po = out.data<S>();
    parallel_for(n, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i)
        for (int64_t k = 0; k < kch; ++k) {
          const S* pt = pp + (k * n + i) * 3;
          S x = pt[0], y = pt[1], z = pt[2];
          if (x < 0 || x > (S)ww || y < 0 || y > (S)h || z < 0 || z > (S)d) {
            po[i * kch + k] = 0;
            continue;
          }
          Cell3<S> cl = cell3(x, y, z, ww, h, d);
          po[i * kch + k] = tri_read(pv + k * d * h * ww, cl, h, ww);
        }
    }, 128);
  });
  if (auto node = make_node("gather_channel_samples", {w, pts}, {out})) {
    node->backward = [w, pts, kch, d, h, ww, n](const std::vector<Tensor>& gs) {
      dispatch(w.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const S* g = gs[0].data<S>();
        const S* pv = w.data<S>();
        const S* pp = pts.data<S>();
        Tensor gv = w.requires_grad() ? Tensor::zeros(w.shape(), w.dtype()) : Tensor();
        Tensor gp = pts.requires_grad() ? Tensor::zeros(pts.shape(), pts.dtype()) : Tensor();
        S* pgv = gv.defined() ? gv.data<S>() : nullptr;
        S* pgp = gp.defined() ? gp.data<S>() : nullptr;
        for (int64_t i = 0; i < n; ++i)
          for (int64_t k = 0; k < kch; ++k) {
            const S* pt = pp + (k * n + i) * 3;
            S x = pt[0], y = pt[1], z = pt[2];
            if (x < 0 || x > (S)ww || y < 0 || y > (S)h || z < 0 || z > (S)d) continue;
            Cell3<S> cl = cell3(x, y, z, ww, h, d);
            S dx = 0, dy = 0, dz = 0;
            tri_backward(pv + k * d * h * ww, cl, h, ww, g[i * kch + k],
                         pgv ? pgv + k * d * h * ww : nullptr, dx, dy, dz);
            if (pgp) {
              pgp[(k * n + i) * 3] = dx;
              pgp[(k * n + i) * 3 + 1] = dy;
              pgp[(k * n + i) * 3 + 2] = dz;
            }
          }
        if (gv.defined()) add_to_grad(w, gv);
        if (gp.defined()) add_to_grad(pts, gp);
      });
    };
  }
  return out;
}

Tensor lbs_blend(const Tensor& points, const Tensor& weights, const Tensor& rot,
                 const Tensor& trans) {
  check(points.rank() == 2 && points.dim(1) == 3, "lbs_blend: points must be [N,3]");
  check(weights.rank() == 2 && weights.dim(0) == points.dim(0),
        "lbs_blend: weights " + shape_str(weights.shape()) + " vs points " +
            shape_str(points.shape()));
  int64_t kch = weights.dim(1), n = points.dim(0);
  check(rot.rank() == 3 && rot.dim(0) == kch && rot.dim(1) == 3 && rot.dim(2) == 3,
        "lbs_blend: rotations must be [K,3,3]");
  check(trans.rank() == 2 && trans.dim(0) == kch && trans.dim(1) == 3,
        "lbs_blend: translations must be [K,3]");
  check(!rot.requires_grad() && !trans.requires_grad(),
        "lbs_blend: bone transforms are constants");
  check(points.dtype() == weights.dtype() && points.dtype() == rot.dtype() &&
            points.dtype() == trans.dtype(),
        "lbs_blend: dtype mismatch");
  Tensor out({n, 3}, points.dtype());
  dispatch(points.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* pp = points.data<S>();
    const S* pw = weights.data<S>();
    const S* pr = rot.data<S>();
    const S* pt = trans.data<S>();
    S* po = out.data<S>();
    parallel_for(n, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        S acc0 = 0, acc1 = 0, acc2 = 0;
        S x = pp[i * 3], y = pp[i * 3 + 1], z = pp[i * 3 + 2];
        for (int64_t k = 0; k < kch; ++k) {
          S wk = pw[i * kch + k];
          const S* r = pr + k * 9;
          const S* t = pt + k * 3;
          acc0 += wk * (r[0] * x + r[1] * y + r[2] * z + t[0]);
          acc1 += wk * (r[3] * x + r[4] * y + r[5] * z + t[1]);
          acc2 += wk * (r[6] * x + r[7] * y + r[8] * z + t[2]);
        }
        po[i * 3] = acc0;
        po[i * 3 + 1] = acc1;
        po[i * 3 + 2] = acc2;
      }
    }, 512);
  });
  if (auto node = make_node("lbs_blend", {points, weights, rot, trans}, {out})) {
    node->backward = [points, weights, rot, trans, kch, n](const std::vector<Tensor>& gs) {
      dispatch(points.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const S* g = gs[0].data<S>();
        const S* pp = points.data<S>();
        const S* pw = weights.data<S>();
        const S* pr = rot.data<S>();
        const S* pt = trans.data<S>();
        Tensor gp = points.requires_grad() ? Tensor::zeros(points.shape(), points.dtype())
                                           : Tensor();
        Tensor gw = weights.requires_grad()
                        ? Tensor::zeros(weights.shape(), weights.dtype())
                        : Tensor();
        S* pgp = gp.defined() ? gp.data<S>() : nullptr;
        S* pgw = gw.defined() ? gw.data<S>() : nullptr;
        parallel_for(n, [&](int64_t lo, int64_t hi) {
          for (int64_t i = lo; i < hi; ++i) {
            S x = pp[i * 3], y = pp[i * 3 + 1], z = pp[i * 3 + 2];
            S g0 = g[i * 3], g1 = g[i * 3 + 1], g2 = g[i * 3 + 2];
            S dp0 = 0, dp1 = 0, dp2 = 0;
            for (int64_t k = 0; k < kch; ++k) {
              S wk = pw[i * kch + k];
              const S* r = pr + k * 9;
              const S* t = pt + k * 3;
              if (pgw) {
                S m0 = r[0] * x + r[1] * y + r[2] * z + t[0];
                S m1 = r[3] * x + r[4] * y + r[5] * z + t[1];
                S m2 = r[6] * x + r[7] * y + r[8] * z + t[2];
                pgw[i * kch + k] = g0 * m0 + g1 * m1 + g2 * m2;
              }
              if (pgp) {
                dp0 += wk * (g0 * r[0] + g1 * r[3] + g2 * r[6]);
                dp1 += wk * (g0 * r[1] + g1 * r[4] + g2 * r[7]);
                dp2 += wk * (g0 * r[2] + g1 * r[5] + g2 * r[8]);
              }
            }
            if (pgp) {
              pgp[i * 3] = dp0;
              pgp[i * 3 + 1] = dp1;
              pgp[i * 3 + 2] = dp2;
            }
          }
        }, 512);
        if (gp.defined()) add_to_grad(points, gp);
        if (gw.defined()) add_to_grad(weights, gw);
      });
    };
  }
  return out;
}

std::pair<Tensor, Tensor> project_points(const Tensor& points, const Tensor& rot,
                                         const Tensor& trans, double fx, double fy,
                                         double cx, double cy) {
  check(points.rank() == 2 && points.dim(1) == 3, "project_points: points must be [N,3]");
  check(rot.rank() == 2 && rot.dim(0) == 3 && rot.dim(1) == 3 && trans.numel() == 3,
        "project_points: extrinsics must be [3,3] and [3]");
  check(!rot.requires_grad() && !trans.requires_grad(),
        "project_points: camera is constant");
  int64_t n = points.dim(0);
  Tensor uv({n, 2}, points.dtype());
  Tensor depth({n, 1}, points.dtype());
  dispatch(points.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* pp = points.data<S>();
    const S* pr = rot.data<S>();
    const S* pt = trans.data<S>();
    S* puv = uv.data<S>();
    S* pd = depth.data<S>();
    parallel_for(n, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        S c[3];
        for (int dd = 0; dd < 3; ++dd)
          c[dd] = pr[dd * 3] * pp[i * 3] + pr[dd * 3 + 1] * pp[i * 3 + 1] +
                  pr[dd * 3 + 2] * pp[i * 3 + 2] + pt[dd];
        pd[i] = c[2];
        if (std::fabs((double)c[2]) < 1e-9) {
          puv[i * 2] = 0;
          puv[i * 2 + 1] = 0;
        } else {
          puv[i * 2] = (S)fx * (c[0] / c[2]) + (S)cx;
          puv[i * 2 + 1] = (S)fy * (c[1] / c[2]) + (S)cy;
        }
      }
    }, 512);
  });
  if (auto node = make_node("project_points", {points, rot, trans}, {uv, depth})) {
    node->backward = [points, rot, trans, fx, fy, n](const std::vector<Tensor>& gs) {
      dispatch(points.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const Tensor& guv = gs[0];
        const Tensor& gz = gs[1];
        const S* pguv = guv.defined() ? guv.data<S>() : nullptr;
        const S* pgz = gz.defined() ? gz.data<S>() : nullptr;
        const S* pp = points.data<S>();
        const S* pr = rot.data<S>();
        const S* pt = trans.data<S>();
        Tensor gp = Tensor::zeros(points.shape(), points.dtype());
        S* pgp = gp.data<S>();
        parallel_for(n, [&](int64_t lo, int64_t hi) {
          for (int64_t i = lo; i < hi; ++i) {
            S c[3];
            for (int dd = 0; dd < 3; ++dd)
              c[dd] = pr[dd * 3] * pp[i * 3] + pr[dd * 3 + 1] * pp[i * 3 + 1] +
                      pr[dd * 3 + 2] * pp[i * 3 + 2] + pt[dd];
            S dc[3] = {0, 0, 0};
            if (std::fabs((double)c[2]) >= 1e-9 && pguv) {
              S gu = pguv[i * 2], gv = pguv[i * 2 + 1];
              dc[0] += gu * (S)fx / c[2];
              dc[1] += gv * (S)fy / c[2];
              dc[2] += -gu * (S)fx * c[0] / (c[2] * c[2]) -
                       gv * (S)fy * c[1] / (c[2] * c[2]);
            }
            if (pgz) dc[2] += pgz[i];
            for (int j = 0; j < 3; ++j)
              pgp[i * 3 + j] = dc[0] * pr[j] + dc[1] * pr[3 + j] + dc[2] * pr[6 + j];
          }
        }, 512);
        add_to_grad(points, gp);
      });
    };
  }
  return {uv, depth};
}

std::pair<Tensor, Tensor> composite_rays(const Tensor& sigma, const Tensor& color,
                                         const Tensor& delta, const Tensor& bg) {
  check(sigma.rank() == 2, "composite_rays: sigma must be [R,M]");
  int64_t r = sigma.dim(0), m = sigma.dim(1);
  check(color.rank() == 3 && color.dim(0) == r && color.dim(1) == m && color.dim(2) == 3,
        "composite_rays: color " + shape_str(color.shape()) + " vs sigma " +
            shape_str(sigma.shape()));
  check(delta.rank() == 2 && delta.dim(0) == r && delta.dim(1) == m,
        "composite_rays: delta shape mismatch");
  check(bg.numel() == 3, "composite_rays: background must have 3 channels");
  check(!delta.requires_grad() && !bg.requires_grad(),
        "composite_rays: delta and background are constants");
  Tensor out({r, 3}, sigma.dtype());
  Tensor opacity({r}, sigma.dtype());
  dispatch(sigma.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* ps = sigma.data<S>();
    const S* pc = color.data<S>();
    const S* pd = delta.data<S>();
    const S* pb = bg.data<S>();
    S* po = out.data<S>();
    S* pa = opacity.data<S>();
    parallel_for(r, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        S t = 1, c0 = 0, c1 = 0, c2 = 0;
        for (int64_t j = 0; j < m; ++j) {
          S a = 1 - std::exp(-ps[i * m + j] * pd[i * m + j]);
          S w = t * a;
          c0 += w * pc[(i * m + j) * 3];
          c1 += w * pc[(i * m + j) * 3 + 1];
          c2 += w * pc[(i * m + j) * 3 + 2];
          t *= 1 - a;
        }
        po[i * 3] = c0 + t * pb[0];
        po[i * 3 + 1] = c1 + t * pb[1];
        po[i * 3 + 2] = c2 + t * pb[2];
        pa[i] = 1 - t;
      }
    }, 64);
  });
  if (auto node = make_node("composite_rays", {sigma, color, delta, bg}, {out, opacity})) {
    node->backward = [sigma, color, delta, bg, r, m](const std::vector<Tensor>& gs) {
      dispatch(sigma.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const Tensor& gout = gs[0];
        const Tensor& gop = gs[1];
        const S* pgo = gout.defined() ? gout.data<S>() : nullptr;
        const S* pga = gop.defined() ? gop.data<S>() : nullptr;
        const S* ps = sigma.data<S>();
        const S* pc = color.data<S>();
        const S* pd = delta.data<S>();
        const S* pb = bg.data<S>();
        Tensor gsig = sigma.requires_grad() ? Tensor::zeros(sigma.shape(), sigma.dtype())
                                            : Tensor();
        Tensor gcol = color.requires_grad() ? Tensor::zeros(color.shape(), color.dtype())
                                            : Tensor();
        S* pgsig = gsig.defined() ? gsig.data<S>() : nullptr;
        S* pgcol = gcol.defined() ? gcol.data<S>() : nullptr;
        parallel_for(r, [&](int64_t lo, int64_t hi) {
          std::vector<S> trans((size_t)m + 1), alpha((size_t)m);
          for (int64_t i = lo; i < hi; ++i) {
            trans[0] = 1;
            for (int64_t j = 0; j < m; ++j) {
              alpha[(size_t)j] = 1 - std::exp(-ps[i * m + j] * pd[i * m + j]);
              trans[(size_t)j + 1] = trans[(size_t)j] * (1 - alpha[(size_t)j]);
            }
            S t_end = trans[(size_t)m];
            S gc[3] = {0, 0, 0};
            if (pgo)
              for (int dd = 0; dd < 3; ++dd) gc[dd] = pgo[i * 3 + dd];
            S go = pga ? pga[i] : (S)0;
            // suffix sums S_d = sum_{j>i} w_j c_jd + T_end * bg_d
            S sfx[3] = {t_end * pb[0], t_end * pb[1], t_end * pb[2]};
            for (int64_t j = m - 1; j >= 0; --j) {
              S w = trans[(size_t)j] * alpha[(size_t)j];
              S dot_c = 0, dot_s = 0;
              for (int dd = 0; dd < 3; ++dd) {
                S cj = pc[(i * m + j) * 3 + dd];
                dot_c += gc[dd] * cj;
                dot_s += gc[dd] * sfx[dd];
                if (pgcol) pgcol[(i * m + j) * 3 + dd] = gc[dd] * w;
              }
              if (pgsig)
                pgsig[i * m + j] =
                    pd[i * m + j] *
                    ((1 - alpha[(size_t)j]) * trans[(size_t)j] * dot_c - dot_s +
                     go * t_end);
              for (int dd = 0; dd < 3; ++dd) sfx[dd] += w * pc[(i * m + j) * 3 + dd];
            }
          }
        }, 64);
        if (gsig.defined()) add_to_grad(sigma, gsig);
        if (gcol.defined()) add_to_grad(color, gcol);
      });
    };
  }
  return {out, opacity};
}

Tensor attend_small(const Tensor& q, const Tensor& k, const Tensor& v,
                    const Tensor& mask, int heads) {
  check(q.rank() == 3 && k.rank() == 3 && v.rank() == 3,
        "attend_small: q/k/v must be [B,T,D]");
  int64_t b = q.dim(0), tq = q.dim(1), dmodel = q.dim(2), tk = k.dim(1);
  check(k.dim(0) == b && v.dim(0) == b && v.dim(1) == tk && k.dim(2) == dmodel &&
            v.dim(2) == dmodel,
        "attend_small: shapes " + shape_str(q.shape()) + ", " + shape_str(k.shape()) +
            ", " + shape_str(v.shape()) + " are inconsistent");
  check(heads >= 1 && dmodel % heads == 0,
        "attend_small: model dim " + std::to_string(dmodel) + " not divisible by " +
            std::to_string(heads) + " heads");
  if (mask.defined()) {
    check(mask.rank() == 2 && mask.dim(0) == b && mask.dim(1) == tk,
          "attend_small: mask must be [B,Tk]");
    check(!mask.requires_grad(), "attend_small: mask is constant");
  }
  int64_t dh = dmodel / heads;
  double scale = 1.0 / std::sqrt((double)dh);
  Tensor out({b, tq, dmodel}, q.dtype());
  dispatch(q.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* pq = q.data<S>();
    const S* pk = k.data<S>();
    const S* pv = v.data<S>();
    const S* pm = mask.defined() ? mask.data<S>() : nullptr;
    S* po = out.data<S>();
    parallel_for(b * heads * tq, [&](int64_t lo, int64_t hi) {
      std::vector<S> sc((size_t)tk), buf((size_t)tk);
      for (int64_t idx = lo; idx < hi; ++idx) {
        int64_t bi = idx / (heads * tq);
        int64_t hh = (idx / tq) % heads;
        int64_t ti = idx % tq;
        const S* qrow = pq + (bi * tq + ti) * dmodel + hh * dh;
        S mx = std::numeric_limits<S>::lowest();
        for (int64_t t = 0; t < tk; ++t) {
          const S* krow = pk + (bi * tk + t) * dmodel + hh * dh;
          S dot = 0;
          for (int64_t dd = 0; dd < dh; ++dd) dot += qrow[dd] * krow[dd];
          S s = (S)scale * dot;
          if (pm && pm[bi * tk + t] == 0) s = (S)-1e30;
          sc[(size_t)t] = s;
          mx = std::max(mx, s);
        }
        for (int64_t t = 0; t < tk; ++t) {
          sc[(size_t)t] = std::exp(sc[(size_t)t] - mx);
          buf[(size_t)t] = sc[(size_t)t];
        }
        S z = sorted_sum(buf.data(), (int)tk);
        for (int64_t t = 0; t < tk; ++t) sc[(size_t)t] /= z;
        S* orow = po + (bi * tq + ti) * dmodel + hh * dh;
        for (int64_t dd = 0; dd < dh; ++dd) {
          for (int64_t t = 0; t < tk; ++t)
            buf[(size_t)t] = sc[(size_t)t] * pv[(bi * tk + t) * dmodel + hh * dh + dd];
          orow[dd] = sorted_sum(buf.data(), (int)tk);
        }
      }
    }, 32);
  });
  std::vector<Tensor> ins = {q, k, v};
  if (mask.defined()) ins.push_back(mask);
  if (auto node = make_node("attend_small", ins, {out})) {
    node->backward = [q, k, v, mask, heads, b, tq, tk, dmodel, dh,
                      scale](const std::vector<Tensor>& gs) {
      dispatch(q.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const S* g = gs[0].data<S>();
        const S* pq = q.data<S>();
        const S* pk = k.data<S>();
        const S* pv = v.data<S>();
        const S* pm = mask.defined() ? mask.data<S>() : nullptr;
        Tensor gq = q.requires_grad() ? Tensor::zeros(q.shape(), q.dtype()) : Tensor();
        Tensor gk = k.requires_grad() ? Tensor::zeros(k.shape(), k.dtype()) : Tensor();
        Tensor gv = v.requires_grad() ? Tensor::zeros(v.shape(), v.dtype()) : Tensor();
        S* pgq = gq.defined() ? gq.data<S>() : nullptr;
        S* pgk = gk.defined() ? gk.data<S>() : nullptr;
        S* pgv = gv.defined() ? gv.data<S>() : nullptr;
        // parallel over batches: each batch owns its q/k/v gradient rows
        parallel_for(b, [&](int64_t blo, int64_t bhi) {
          std::vector<S> w((size_t)tk), rt((size_t)tk);
          for (int64_t bi = blo; bi < bhi; ++bi)
            for (int hh = 0; hh < heads; ++hh)
              for (int64_t ti = 0; ti < tq; ++ti) {
                int64_t qoff = (bi * tq + ti) * dmodel + hh * dh;
                const S* qrow = pq + qoff;
                S mx = std::numeric_limits<S>::lowest();
                for (int64_t t = 0; t < tk; ++t) {
                  const S* krow = pk + (bi * tk + t) * dmodel + hh * dh;
                  S dot = 0;
                  for (int64_t dd = 0; dd < dh; ++dd) dot += qrow[dd] * krow[dd];
                  S s = (S)scale * dot;
                  if (pm && pm[bi * tk + t] == 0) s = (S)-1e30;
                  w[(size_t)t] = s;
                  mx = std::max(mx, s);
                }
                S z = 0;
                for (int64_t t = 0; t < tk; ++t) {
                  w[(size_t)t] = std::exp(w[(size_t)t] - mx);
                  z += w[(size_t)t];
                }
                for (int64_t t = 0; t < tk; ++t) w[(size_t)t] /= z;
                S rho = 0;
                const S* grow = g + qoff;
                for (int64_t t = 0; t < tk; ++t) {
                  const S* vrow = pv + (bi * tk + t) * dmodel + hh * dh;
                  S rv = 0;
                  for (int64_t dd = 0; dd < dh; ++dd) rv += grow[dd] * vrow[dd];
                  rt[(size_t)t] = rv;
                  rho += w[(size_t)t] * rv;
                }
                for (int64_t t = 0; t < tk; ++t) {
                  S at = w[(size_t)t] * (rt[(size_t)t] - rho);
                  int64_t koff = (bi * tk + t) * dmodel + hh * dh;
                  const S* krow = pk + koff;
                  for (int64_t dd = 0; dd < dh; ++dd) {
                    if (pgq) pgq[qoff + dd] += (S)scale * at * krow[dd];
                    if (pgk) pgk[koff + dd] += (S)scale * at * qrow[dd];
                    if (pgv) pgv[koff + dd] += w[(size_t)t] * grow[dd];
                  }
                }
              }
        }, 8);
        if (gq.defined()) add_to_grad(q, gq);
        if (gk.defined()) add_to_grad(k, gk);
        if (gv.defined()) add_to_grad(v, gv);
      });
    };
  }
  return out;
}

}  // namespace hummorph
