#include <cstring>

#include "hummorph/ops.hpp"
#include "hummorph/threading.hpp"

namespace hummorph {

namespace {

struct ConvGeom {
  int64_t ci, co;
  int64_t in[3], out[3], k[3];
  int s[3], p[3];
};

ConvGeom conv_geom(const Tensor& x, const Tensor& w, std::array<int, 3> stride,
                   std::array<int, 3> pad, bool transposed) {
  check(x.rank() == 4, "conv3d: input must be [C,D,H,W], got " + shape_str(x.shape()));
  check(w.rank() == 5, "conv3d: weight must be rank 5, got " + shape_str(w.shape()));
  ConvGeom g;
  g.ci = x.dim(0);
  g.co = transposed ? w.dim(1) : w.dim(0);
  int64_t wc = transposed ? w.dim(0) : w.dim(1);
  check(wc == g.ci, "conv3d: input channels " + std::to_string(g.ci) + " vs weight " +
                        shape_str(w.shape()));
  for (int i = 0; i < 3; ++i) {
    g.in[i] = x.dim(1 + i);
    g.k[i] = w.dim(2 + i);
    g.s[i] = stride[i];
    g.p[i] = pad[i];
    check(g.s[i] >= 1 && g.p[i] >= 0, "conv3d: bad stride/padding");
    if (transposed) {
      g.out[i] = (g.in[i] - 1) * g.s[i] - 2 * g.p[i] + g.k[i];
    } else {
      check(g.k[i] <= g.in[i] + 2 * g.p[i],
            "conv3d: kernel " + std::to_string(g.k[i]) + " exceeds padded extent " +
                std::to_string(g.in[i] + 2 * g.p[i]));
      g.out[i] = (g.in[i] + 2 * g.p[i] - g.k[i]) / g.s[i] + 1;
    }
    check(g.out[i] > 0, "conv3d: non-positive output extent on axis " + std::to_string(i) +
                            " (input " + shape_str(x.shape()) + ", kernel " +
                            shape_str(w.shape()) + ")");
  }
  return g;
}

// Valid output range [lo, hi) along one axis for a fixed kernel offset:
// in = out*s - p + k must land in [0, extent).
inline void out_range(int64_t k, int64_t in_extent, int64_t out_extent, int s, int p,
                      int64_t& lo, int64_t& hi) {
  int64_t min_num = p - k;  // out*s >= p - k
  lo = min_num <= 0 ? 0 : (min_num + s - 1) / s;
  int64_t max_num = in_extent - 1 + p - k;  // out*s <= ...
  hi = max_num < 0 ? 0 : max_num / s + 1;
  lo = std::min(lo, out_extent);
  hi = std::min(hi, out_extent);
  if (hi < lo) hi = lo;
}

// Dense cross-correlation. Contributions accumulate per output element in
// (ic, kz, ky, kx) order, matching the nested-loop definition bit for bit.
template <typename S>
void conv3d_forward(const S* __restrict x, const S* __restrict w,
                    const S* __restrict bias, S* __restrict y, const ConvGeom& g) {
  int64_t out_plane = g.out[1] * g.out[2];
  int64_t out_vol = g.out[0] * out_plane;
  parallel_for(g.co, [&](int64_t clo, int64_t chi) {
    for (int64_t oc = clo; oc < chi; ++oc) {
      S* yo = y + oc * out_vol;
      S b = bias ? bias[oc] : (S)0;
      for (int64_t i = 0; i < out_vol; ++i) yo[i] = b;
      for (int64_t ic = 0; ic < g.ci; ++ic) {
        const S* xc = x + ic * g.in[0] * g.in[1] * g.in[2];
        for (int64_t kz = 0; kz < g.k[0]; ++kz) {
          int64_t zlo, zhi;
          out_range(kz, g.in[0], g.out[0], g.s[0], g.p[0], zlo, zhi);
          for (int64_t ky = 0; ky < g.k[1]; ++ky) {
            int64_t ylo, yhi;
            out_range(ky, g.in[1], g.out[1], g.s[1], g.p[1], ylo, yhi);
            for (int64_t kx = 0; kx < g.k[2]; ++kx) {
              int64_t xlo, xhi;
              out_range(kx, g.in[2], g.out[2], g.s[2], g.p[2], xlo, xhi);
              S wv = w[(((oc * g.ci + ic) * g.k[0] + kz) * g.k[1] + ky) * g.k[2] + kx];
              if (wv == (S)0) continue;
              for (int64_t oz = zlo; oz < zhi; ++oz) {
                int64_t iz = oz * g.s[0] - g.p[0] + kz;
                const S* xz = xc + iz * g.in[1] * g.in[2];
                S* yz = yo + oz * out_plane;
                for (int64_t oy = ylo; oy < yhi; ++oy) {
                  int64_t iy = oy * g.s[1] - g.p[1] + ky;
                  const S* xr = xz + iy * g.in[2] - g.p[2] + kx;
                  S* yr = yz + oy * g.out[2];
                  if (g.s[2] == 1) {
                    for (int64_t ox = xlo; ox < xhi; ++ox) yr[ox] += wv * xr[ox];
                  } else {
                    for (int64_t ox = xlo; ox < xhi; ++ox)
                      yr[ox] += wv * xr[ox * g.s[2]];
                  }
                }
              }
            }
          }
        }
      }
    }
  }, 1);
}

// dX for the dense convolution: per input channel, gather from the output
// gradient; each input element is owned by exactly one worker block.
template <typename S>
void conv3d_backward_input(const S* __restrict go, const S* __restrict w,
                           S* __restrict gx, const ConvGeom& g) {
  int64_t in_plane = g.in[1] * g.in[2];
  int64_t in_vol = g.in[0] * in_plane;
  int64_t out_plane = g.out[1] * g.out[2];
  int64_t out_vol = g.out[0] * out_plane;
  parallel_for(g.ci, [&](int64_t clo, int64_t chi) {
    for (int64_t ic = clo; ic < chi; ++ic) {
      S* gxi = gx + ic * in_vol;
      std::memset(gxi, 0, sizeof(S) * (size_t)in_vol);
      for (int64_t oc = 0; oc < g.co; ++oc) {
        const S* goc = go + oc * out_vol;
        for (int64_t kz = 0; kz < g.k[0]; ++kz) {
          int64_t zlo, zhi;
          out_range(kz, g.in[0], g.out[0], g.s[0], g.p[0], zlo, zhi);
          for (int64_t ky = 0; ky < g.k[1]; ++ky) {
            int64_t ylo, yhi;
            out_range(ky, g.in[1], g.out[1], g.s[1], g.p[1], ylo, yhi);
            for (int64_t kx = 0; kx < g.k[2]; ++kx) {
              int64_t xlo, xhi;
              out_range(kx, g.in[2], g.out[2], g.s[2], g.p[2], xlo, xhi);
              S wv = w[(((oc * g.ci + ic) * g.k[0] + kz) * g.k[1] + ky) * g.k[2] + kx];
              if (wv == (S)0) continue;
              for (int64_t oz = zlo; oz < zhi; ++oz) {
                int64_t iz = oz * g.s[0] - g.p[0] + kz;
                const S* gor = goc + oz * out_plane;
                S* gxz = gxi + iz * in_plane;
                for (int64_t oy = ylo; oy < yhi; ++oy) {
                  int64_t iy = oy * g.s[1] - g.p[1] + ky;
                  const S* gr = gor + oy * g.out[2];
                  S* gxr = gxz + iy * g.in[2] - g.p[2] + kx;
                  if (g.s[2] == 1) {
                    for (int64_t ox = xlo; ox < xhi; ++ox) gxr[ox] += wv * gr[ox];
                  } else {
                    for (int64_t ox = xlo; ox < xhi; ++ox)
                      gxr[ox * g.s[2]] += wv * gr[ox];
                  }
                }
              }
            }
          }
        }
      }
    }
  }, 1);
}

template <typename S>
void conv3d_backward_filter(const S* __restrict go, const S* __restrict x,
                            S* __restrict gw, const ConvGeom& g) {
  int64_t out_plane = g.out[1] * g.out[2];
  int64_t out_vol = g.out[0] * out_plane;
  int64_t kern = g.ci * g.k[0] * g.k[1] * g.k[2];
  parallel_for(g.co * kern, [&](int64_t lo, int64_t hi) {
    for (int64_t idx = lo; idx < hi; ++idx) {
      int64_t oc = idx / kern, rem = idx % kern;
      int64_t ic = rem / (g.k[0] * g.k[1] * g.k[2]);
      int64_t kz = (rem / (g.k[1] * g.k[2])) % g.k[0];
      int64_t ky = (rem / g.k[2]) % g.k[1];
      int64_t kx = rem % g.k[2];
      int64_t zlo, zhi, ylo, yhi, xlo, xhi;
      out_range(kz, g.in[0], g.out[0], g.s[0], g.p[0], zlo, zhi);
      out_range(ky, g.in[1], g.out[1], g.s[1], g.p[1], ylo, yhi);
      out_range(kx, g.in[2], g.out[2], g.s[2], g.p[2], xlo, xhi);
      const S* goc = go + oc * out_vol;
      const S* xc = x + ic * g.in[0] * g.in[1] * g.in[2];
      S acc = 0;
      for (int64_t oz = zlo; oz < zhi; ++oz) {
        int64_t iz = oz * g.s[0] - g.p[0] + kz;
        const S* gr = goc + oz * out_plane;
        const S* xz = xc + iz * g.in[1] * g.in[2];
        for (int64_t oy = ylo; oy < yhi; ++oy) {
          int64_t iy = oy * g.s[1] - g.p[1] + ky;
          const S* grow = gr + oy * g.out[2];
          const S* xr = xz + iy * g.in[2] - g.p[2] + kx;
          if (g.s[2] == 1) {
            for (int64_t ox = xlo; ox < xhi; ++ox) acc += grow[ox] * xr[ox];
          } else {
            for (int64_t ox = xlo; ox < xhi; ++ox) acc += grow[ox] * xr[ox * g.s[2]];
          }
        }
      }
      gw[idx] = acc;
    }
  }, 8);
}

template <typename S>
void bias_grad(const S* go, S* gb, int64_t co, int64_t out_vol) {
  for (int64_t oc = 0; oc < co; ++oc) {
    S acc = 0;
    const S* p = go + oc * out_vol;
    for (int64_t i = 0; i < out_vol; ++i) acc += p[i];
    gb[oc] = acc;
  }
}

// Transposed convolution: out[oz] gathers x[iz] where iz*s + k - p == oz.
// Same loop machinery with the roles of in/out swapped.
template <typename S>
void convt3d_forward(const S* __restrict x, const S* __restrict w,
                     const S* __restrict bias, S* __restrict y, const ConvGeom& g) {
  int64_t out_plane = g.out[1] * g.out[2];
  int64_t out_vol = g.out[0] * out_plane;
  int64_t in_plane = g.in[1] * g.in[2];
  parallel_for(g.co, [&](int64_t clo, int64_t chi) {
    for (int64_t oc = clo; oc < chi; ++oc) {
      S* yo = y + oc * out_vol;
      S b = bias ? bias[oc] : (S)0;
      for (int64_t i = 0; i < out_vol; ++i) yo[i] = b;
      for (int64_t ic = 0; ic < g.ci; ++ic) {
        const S* xc = x + ic * g.in[0] * in_plane;
        for (int64_t kz = 0; kz < g.k[0]; ++kz) {
          int64_t zlo, zhi;
          out_range(kz, g.out[0], g.in[0], g.s[0], g.p[0], zlo, zhi);
          for (int64_t ky = 0; ky < g.k[1]; ++ky) {
            int64_t ylo, yhi;
            out_range(ky, g.out[1], g.in[1], g.s[1], g.p[1], ylo, yhi);
            for (int64_t kx = 0; kx < g.k[2]; ++kx) {
              int64_t xlo, xhi;
              out_range(kx, g.out[2], g.in[2], g.s[2], g.p[2], xlo, xhi);
              S wv = w[(((ic * g.co + oc) * g.k[0] + kz) * g.k[1] + ky) * g.k[2] + kx];
              if (wv == (S)0) continue;
              // here iz in [zlo,zhi) indexes the *input*; oz = iz*s - p + kz
              for (int64_t iz = zlo; iz < zhi; ++iz) {
                int64_t oz = iz * g.s[0] - g.p[0] + kz;
                const S* xz = xc + iz * in_plane;
                S* yz = yo + oz * out_plane;
                for (int64_t iy = ylo; iy < yhi; ++iy) {
                  int64_t oy = iy * g.s[1] - g.p[1] + ky;
                  const S* xr = xz + iy * g.in[2];
                  S* yr = yz + oy * g.out[2] - g.p[2] + kx;
                  if (g.s[2] == 1) {
                    for (int64_t ix = xlo; ix < xhi; ++ix) yr[ix] += wv * xr[ix];
                  } else {
                    for (int64_t ix = xlo; ix < xhi; ++ix)
                      yr[ix * g.s[2]] += wv * xr[ix];
                  }
                }
              }
            }
          }
        }
      }
    }
  }, 1);
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::array<int, 3> stride, std::array<int, 3> pad) {
  check(x.dtype() == w.dtype(), "conv3d: dtype mismatch");
  ConvGeom g = conv_geom(x, w, stride, pad, false);
  if (bias.defined())
    check(bias.numel() == g.co, "conv3d: bias " + shape_str(bias.shape()) + " vs " +
                                    std::to_string(g.co) + " output channels");
  Tensor out({g.co, g.out[0], g.out[1], g.out[2]}, x.dtype());
  if (x.dtype() == DType::F32)
    conv3d_forward<float>(x.data<float>(), w.data<float>(),
                          bias.defined() ? bias.data<float>() : nullptr, out.data<float>(),
                          g);
  else
    conv3d_forward<double>(x.data<double>(), w.data<double>(),
                           bias.defined() ? bias.data<double>() : nullptr,
                           out.data<double>(), g);

  std::vector<Tensor> ins = {x, w};
  if (bias.defined()) ins.push_back(bias);
  if (auto node = make_node("conv3d", ins, {out})) {
    node->backward = [x, w, bias, g](const std::vector<Tensor>& gs) {
      const Tensor& gout = gs[0];
      auto run = [&](auto sample) {
        using S = decltype(sample);
        const S* go = gout.data<S>();
        if (x.requires_grad()) {
          Tensor gx(x.shape(), x.dtype());
          conv3d_backward_input<S>(go, w.data<S>(), gx.data<S>(), g);
          add_to_grad(x, gx);
        }
        if (w.requires_grad()) {
          Tensor gw(w.shape(), w.dtype());
          conv3d_backward_filter<S>(go, x.data<S>(), gw.data<S>(), g);
          add_to_grad(w, gw);
        }
        if (bias.defined() && bias.requires_grad()) {
          Tensor gb(bias.shape(), bias.dtype());
          bias_grad<S>(go, gb.data<S>(), g.co, g.out[0] * g.out[1] * g.out[2]);
          add_to_grad(bias, gb);
        }
      };
      if (x.dtype() == DType::F32)
        run(float{});
      else
        run(double{});
    };
  }
  return out;
}

Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        std::array<int, 3> stride, std::array<int, 3> pad) {
  check(x.dtype() == w.dtype(), "conv_transpose3d: dtype mismatch");
  ConvGeom g = conv_geom(x, w, stride, pad, true);
  if (bias.defined()) check(bias.numel() == g.co, "conv_transpose3d: bias size mismatch");
  Tensor out({g.co, g.out[0], g.out[1], g.out[2]}, x.dtype());
  if (x.dtype() == DType::F32)
    convt3d_forward<float>(x.data<float>(), w.data<float>(),
                           bias.defined() ? bias.data<float>() : nullptr,
                           out.data<float>(), g);
  else
    convt3d_forward<double>(x.data<double>(), w.data<double>(),
                            bias.defined() ? bias.data<double>() : nullptr,
                            out.data<double>(), g);

  std::vector<Tensor> ins = {x, w};
  if (bias.defined()) ins.push_back(bias);
  if (auto node = make_node("conv_transpose3d", ins, {out})) {
    node->backward = [x, w, bias, g](const std::vector<Tensor>& gs) {
      const Tensor& gout = gs[0];
      // dX of the transposed conv is the dense conv of the output gradient;
      // reuse the dense kernels with in/out swapped.
      ConvGeom fwd = g;
      std::swap(fwd.ci, fwd.co);
      std::swap(fwd.in[0], fwd.out[0]);
      std::swap(fwd.in[1], fwd.out[1]);
      std::swap(fwd.in[2], fwd.out[2]);
      auto run = [&](auto sample) {
        using S = decltype(sample);
        const S* go = gout.data<S>();
        if (x.requires_grad()) {
          // weight layout is [ci, co, k...] == fwd's [oc=ci, ic=co, k...]
          Tensor gx(x.shape(), x.dtype());
          conv3d_forward<S>(go, w.data<S>(), nullptr, gx.data<S>(), fwd);
          add_to_grad(x, gx);
        }
        if (w.requires_grad()) {
          Tensor gw(w.shape(), w.dtype());
          conv3d_backward_filter<S>(x.data<S>(), go, gw.data<S>(), fwd);
          add_to_grad(w, gw);
        }
        if (bias.defined() && bias.requires_grad()) {
          Tensor gb(bias.shape(), bias.dtype());
          bias_grad<S>(go, gb.data<S>(), g.co, g.out[0] * g.out[1] * g.out[2]);
          add_to_grad(bias, gb);
        }
      };
      if (x.dtype() == DType::F32)
        run(float{});
      else
        run(double{});
    };
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::array<int, 2> stride, std::array<int, 2> pad) {
  check(x.rank() == 3 && w.rank() == 4, "conv2d: expected [C,H,W] and rank-4 weight");
  Tensor x3 = reshape(x, {x.dim(0), 1, x.dim(1), x.dim(2)});
  Tensor w3 = reshape(w, {w.dim(0), w.dim(1), 1, w.dim(2), w.dim(3)});
  Tensor y = conv3d(x3, w3, bias, {1, stride[0], stride[1]}, {0, pad[0], pad[1]});
  return reshape(y, {y.dim(0), y.dim(2), y.dim(3)});
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        std::array<int, 2> stride, std::array<int, 2> pad) {
  check(x.rank() == 3 && w.rank() == 4, "conv_transpose2d: expected [C,H,W] input");
  Tensor x3 = reshape(x, {x.dim(0), 1, x.dim(1), x.dim(2)});
  Tensor w3 = reshape(w, {w.dim(0), w.dim(1), 1, w.dim(2), w.dim(3)});
  Tensor y = conv_transpose3d(x3, w3, bias, {1, stride[0], stride[1]}, {0, pad[0], pad[1]});
  return reshape(y, {y.dim(0), y.dim(2), y.dim(3)});
}

Tensor avg_pool3d(const Tensor& x, std::array<int, 3> k, std::array<int, 3> stride) {
  check(x.rank() == 4, "avg_pool3d: input must be [C,D,H,W]");
  int64_t c = x.dim(0);
  int64_t in[3] = {x.dim(1), x.dim(2), x.dim(3)};
  int64_t out[3];
  for (int i = 0; i < 3; ++i) {
    check(k[i] >= 1 && stride[i] >= 1, "avg_pool3d: bad kernel/stride");
    out[i] = (in[i] + stride[i] - 1) / stride[i];
  }
  Tensor y({c, out[0], out[1], out[2]}, x.dtype());
  auto run = [&](auto sample) {
    using S = decltype(sample);
    const S* px = x.data<S>();
    S* py = y.data<S>();
    int64_t out_vol = out[0] * out[1] * out[2];
    parallel_for(c * out_vol, [&](int64_t lo, int64_t hi) {
      for (int64_t o = lo; o < hi; ++o) {
        int64_t ch = o / out_vol, rem = o % out_vol;
        int64_t oz = rem / (out[1] * out[2]);
        int64_t oy = (rem / out[2]) % out[1];
        int64_t ox = rem % out[2];
        S acc = 0;
        int64_t count = 0;
        for (int64_t kz = 0; kz < k[0]; ++kz) {
          int64_t iz = oz * stride[0] + kz;
          if (iz >= in[0]) break;
          for (int64_t ky = 0; ky < k[1]; ++ky) {
            int64_t iy = oy * stride[1] + ky;
            if (iy >= in[1]) break;
            const S* row = px + ((ch * in[0] + iz) * in[1] + iy) * in[2];
            for (int64_t kx = 0; kx < k[2]; ++kx) {
              int64_t ix = ox * stride[2] + kx;
              if (ix >= in[2]) break;
              acc += row[ix];
              ++count;
            }
          }
        }
        py[o] = acc / (S)count;
      }
    }, 512);
  };
  if (x.dtype() == DType::F32)
    run(float{});
  else
    run(double{});
  if (auto node = make_node("avg_pool3d", {x}, {y})) {
    node->backward = [x, k, stride, in, out, c](const std::vector<Tensor>& gs) {
      auto run_b = [&](auto sample) {
        using S = decltype(sample);
        Tensor gx = Tensor::zeros(x.shape(), x.dtype());
        S* pgx = gx.data<S>();
        const S* pg = gs[0].data<S>();
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t oz = 0; oz < out[0]; ++oz)
            for (int64_t oy = 0; oy < out[1]; ++oy)
              for (int64_t ox = 0; ox < out[2]; ++ox) {
                int64_t nz = std::min((int64_t)k[0], in[0] - oz * stride[0]);
                int64_t ny = std::min((int64_t)k[1], in[1] - oy * stride[1]);
                int64_t nx = std::min((int64_t)k[2], in[2] - ox * stride[2]);
                S gval = pg[((ch * out[0] + oz) * out[1] + oy) * out[2] + ox] /
                         (S)(nz * ny * nx);
                for (int64_t kz = 0; kz < nz; ++kz)
                  for (int64_t ky = 0; ky < ny; ++ky) {
                    S* row = pgx + ((ch * in[0] + oz * stride[0] + kz) * in[1] +
                                    oy * stride[1] + ky) *
                                       in[2] +
                             ox * stride[2];
                    for (int64_t kx = 0; kx < nx; ++kx) row[kx] += gval;
                  }
              }
        add_to_grad(x, gx);
      };
      if (x.dtype() == DType::F32)
        run_b(float{});
      else
        run_b(double{});
    };
  }
  return y;
}

Tensor avg_pool2d(const Tensor& x, std::array<int, 2> k, std::array<int, 2> stride) {
  Tensor x3 = reshape(x, {x.dim(0), 1, x.dim(1), x.dim(2)});
  Tensor y = avg_pool3d(x3, {1, k[0], k[1]}, {1, stride[0], stride[1]});
  return reshape(y, {y.dim(0), y.dim(2), y.dim(3)});
}

Tensor upsample_nearest3d(const Tensor& x, std::array<int, 3> factor) {
  check(x.rank() == 4, "upsample_nearest3d: input must be [C,D,H,W]");
  int64_t c = x.dim(0);
  int64_t in[3] = {x.dim(1), x.dim(2), x.dim(3)};
  int64_t out[3] = {in[0] * factor[0], in[1] * factor[1], in[2] * factor[2]};
  Tensor y({c, out[0], out[1], out[2]}, x.dtype());
  auto run = [&](auto sample) {
    using S = decltype(sample);
    const S* px = x.data<S>();
    S* py = y.data<S>();
    int64_t plane = out[1] * out[2], vol = out[0] * plane;
    parallel_for(c * vol, [&](int64_t lo, int64_t hi) {
      for (int64_t o = lo; o < hi; ++o) {
        int64_t ch = o / vol, rem = o % vol;
        int64_t oz = rem / plane, oy = (rem % plane) / out[2], ox = rem % out[2];
        py[o] = px[((ch * in[0] + oz / factor[0]) * in[1] + oy / factor[1]) * in[2] +
                   ox / factor[2]];
      }
    }, 4096);
  };
  if (x.dtype() == DType::F32)
    run(float{});
  else
    run(double{});
  if (auto node = make_node("upsample_nearest3d", {x}, {y})) {
    node->backward = [x, factor, in, c](const std::vector<Tensor>& gs) {
      auto run_b = [&](auto sample) {
        using S = decltype(sample);
        Tensor gx(x.shape(), x.dtype());
        S* pgx = gx.data<S>();
        const S* pg = gs[0].data<S>();
        int64_t out1 = in[1] * factor[1], out2 = in[2] * factor[2];
        int64_t out0 = in[0] * factor[0];
        int64_t in_vol = in[0] * in[1] * in[2];
        parallel_for(c * in_vol, [&](int64_t lo, int64_t hi) {
          for (int64_t idx = lo; idx < hi; ++idx) {
            int64_t ch = idx / in_vol, rem = idx % in_vol;
            int64_t iz = rem / (in[1] * in[2]);
            int64_t iy = (rem / in[2]) % in[1];
            int64_t ix = rem % in[2];
            S acc = 0;
            for (int64_t fz = 0; fz < factor[0]; ++fz)
              for (int64_t fy = 0; fy < factor[1]; ++fy) {
                const S* row = pg + ((ch * out0 + iz * factor[0] + fz) * out1 +
                                     iy * factor[1] + fy) *
                                        out2 +
                               ix * factor[2];
                for (int64_t fx = 0; fx < factor[2]; ++fx) acc += row[fx];
              }
            pgx[idx] = acc;
          }
        }, 1024);
        add_to_grad(x, gx);
      };
      if (x.dtype() == DType::F32)
        run_b(float{});
      else
        run_b(double{});
    };
  }
  return y;
}

Tensor upsample_nearest2d(const Tensor& x, std::array<int, 2> factor) {
  Tensor x3 = reshape(x, {x.dim(0), 1, x.dim(1), x.dim(2)});
  Tensor y = upsample_nearest3d(x3, {1, factor[0], factor[1]});
  return reshape(y, {y.dim(0), y.dim(2), y.dim(3)});
}

}  // namespace hummorph
