#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "hummorph/ops.hpp"
#include "hummorph/threading.hpp"

namespace hummorph {

namespace {

void check_same_dtype(const Tensor& a, const Tensor& b, const char* name) {
  check(a.dtype() == b.dtype(), std::string(name) + ": dtype mismatch (" +
                                    dtype_name(a.dtype()) + " vs " +
                                    dtype_name(b.dtype()) + ")");
}

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

// Sum with addends ordered by (value, bit pattern); permutation independent.
// Insertion sort: the token counts here are tiny.
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

// Unary elementwise op; dfdx receives (x, y).
template <typename Fwd, typename Dfdx>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Dfdx dfdx) {
  Tensor out(a.shape(), a.dtype());
  int64_t n = a.numel();
  dispatch(a.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* x = a.data<S>();
    S* y = out.data<S>();
    parallel_for(n, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) y[i] = (S)fwd((double)x[i]);
    }, 8192);
  });
  if (auto node = make_node(name, {a}, {out})) {
    Tensor saved = out.detach();
    node->backward = [a, saved, dfdx](const std::vector<Tensor>& gs) {
      Tensor ga(a.shape(), a.dtype());
      int64_t n = a.numel();
      dispatch(a.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const S* g = gs[0].data<S>();
        const S* x = a.data<S>();
        const S* y = saved.data<S>();
        S* out = ga.data<S>();
        parallel_for(n, [&](int64_t lo, int64_t hi) {
          for (int64_t i = lo; i < hi; ++i)
            out[i] = g[i] * (S)dfdx((double)x[i], (double)y[i]);
        }, 8192);
      });
      add_to_grad(a, ga);
    };
  }
  return out;
}

struct BroadcastPlan {
  bool a_big;
  int64_t outer, inner;
};

BroadcastPlan broadcast_plan(const char* name, const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const Shape& big = sa.size() >= sb.size() ? sa : sb;
  const Shape& small = sa.size() >= sb.size() ? sb : sa;
  size_t off = big.size() - small.size();
  for (size_t i = 0; i < small.size(); ++i)
    check(big[off + i] == small[i],
          std::string(name) + ": shapes " + shape_str(sa) + " and " + shape_str(sb) +
              " do not broadcast (suffix mismatch)");
  int64_t inner = shape_numel(small);
  int64_t outer = inner == 0 ? 0 : shape_numel(big) / inner;
  return {sa.size() >= sb.size(), outer, inner};
}

enum class BinKind { Add, Sub, Mul, Div };

Tensor binary_op(const char* name, BinKind kind, const Tensor& a, const Tensor& b) {
  check_same_dtype(a, b, name);
  BroadcastPlan plan = broadcast_plan(name, a, b);
  const Tensor& big = plan.a_big ? a : b;
  const Tensor& small = plan.a_big ? b : a;
  Tensor out(big.shape(), big.dtype());
  int64_t inner = plan.inner;
  dispatch(a.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* pb = big.data<S>();
    const S* ps = small.data<S>();
    S* po = out.data<S>();
    bool a_big = plan.a_big;
    parallel_for(big.numel(), [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        S x = a_big ? pb[i] : ps[i % inner];
        S y = a_big ? ps[i % inner] : pb[i];
        switch (kind) {
          case BinKind::Add: po[i] = x + y; break;
          case BinKind::Sub: po[i] = x - y; break;
          case BinKind::Mul: po[i] = x * y; break;
          case BinKind::Div: po[i] = x / y; break;
        }
      }
    }, 8192);
  });
  if (auto node = make_node(name, {a, b}, {out})) {
    node->backward = [kind, a, b, plan](const std::vector<Tensor>& gs) {
      const Tensor& big = plan.a_big ? a : b;
      const Tensor& small = plan.a_big ? b : a;
      int64_t inner = plan.inner;
      dispatch(a.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const S* g = gs[0].data<S>();
        const S* pbig = big.data<S>();
        const S* psm = small.data<S>();
        // d/d(first operand), d/d(second operand) at (x=a-side, y=b-side)
        auto dpair = [kind](S x, S y, S& dx, S& dy) {
          switch (kind) {
            case BinKind::Add: dx = 1; dy = 1; break;
            case BinKind::Sub: dx = 1; dy = -1; break;
            case BinKind::Mul: dx = y; dy = x; break;
            case BinKind::Div: dx = 1 / y; dy = -x / (y * y); break;
          }
        };
        if (big.requires_grad()) {
          Tensor gb(big.shape(), big.dtype());
          S* out = gb.data<S>();
          bool a_big = plan.a_big;
          parallel_for(big.numel(), [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
              S x = a_big ? pbig[i] : psm[i % inner];
              S y = a_big ? psm[i % inner] : pbig[i];
              S dx = 0, dy = 0;
              dpair(x, y, dx, dy);
              out[i] = g[i] * (a_big ? dx : dy);
            }
          }, 8192);
          add_to_grad(big, gb);
        }
        if (small.requires_grad()) {
          Tensor gsm = Tensor::zeros(small.shape(), small.dtype());
          S* out = gsm.data<S>();
          bool a_big = plan.a_big;
          for (int64_t o = 0; o < plan.outer; ++o) {
            const S* grow = g + o * inner;
            const S* brow = pbig + o * inner;
            for (int64_t i = 0; i < inner; ++i) {
              S x = a_big ? brow[i] : psm[i];
              S y = a_big ? psm[i] : brow[i];
              S dx = 0, dy = 0;
              dpair(x, y, dx, dy);
              out[i] += grow[i] * (a_big ? dy : dx);
            }
          }
          add_to_grad(small, gsm);
        }
      });
    };
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op("add", BinKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op("sub", BinKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op("mul", BinKind::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op("div", BinKind::Div, a, b); }

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op("add_scalar", a, [s](double x) { return x + s; },
                  [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op("mul_scalar", a, [s](double x) { return x * s; },
                  [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) {
  return unary_op("neg", a, [](double x) { return -x; },
                  [](double, double) { return -1.0; });
}

Tensor relu(const Tensor& a) {
  return unary_op("relu", a, [](double x) { return x > 0 ? x : 0.0; },
                  [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& a) {
  return unary_op("softplus", a,
                  [](double x) { return x > 30 ? x : std::log1p(std::exp(x)); },
                  [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op("sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
  return unary_op("exp", a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op("log", a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op("sqrt", a, [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor sin(const Tensor& a) {
  return unary_op("sin", a, [](double x) { return std::sin(x); },
                  [](double x, double) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
  return unary_op("cos", a, [](double x) { return std::cos(x); },
                  [](double x, double) { return -std::sin(x); });
}

Tensor abs(const Tensor& a) {
  return unary_op("abs", a, [](double x) { return std::fabs(x); },
                  [](double x, double) { return x >= 0 ? 1.0 : -1.0; });
}

Tensor reciprocal(const Tensor& a) {
  return unary_op("reciprocal", a, [](double x) { return 1.0 / x; },
                  [](double, double y) { return -y * y; });
}

namespace {

struct AxisSplit {
  int64_t outer, n, inner;
};

AxisSplit axis_split(const Shape& s, int axis, const char* name) {
  check(axis >= 0 && axis < (int)s.size(),
        std::string(name) + ": axis " + std::to_string(axis) + " out of range for " +
            shape_str(s));
  AxisSplit sp{1, s[axis], 1};
  for (int i = 0; i < axis; ++i) sp.outer *= s[i];
  for (int i = axis + 1; i < (int)s.size(); ++i) sp.inner *= s[i];
  return sp;
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
  AxisSplit sp = axis_split(a.shape(), axis, "softmax");
  Tensor out(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* x = a.data<S>();
    S* y = out.data<S>();
    parallel_for(sp.outer * sp.inner, [&](int64_t lo, int64_t hi) {
      for (int64_t oi = lo; oi < hi; ++oi) {
        int64_t o = oi / sp.inner, i = oi % sp.inner;
        const S* px = x + o * sp.n * sp.inner + i;
        S* py = y + o * sp.n * sp.inner + i;
        S m = px[0];
        for (int64_t k = 1; k < sp.n; ++k) m = std::max(m, px[k * sp.inner]);
        S z = 0;
        for (int64_t k = 0; k < sp.n; ++k) {
          S e = std::exp(px[k * sp.inner] - m);
          py[k * sp.inner] = e;
          z += e;
        }
        for (int64_t k = 0; k < sp.n; ++k) py[k * sp.inner] /= z;
      }
    }, 64);
  });
  if (auto node = make_node("softmax", {a}, {out})) {
    Tensor y = out.detach();
    node->backward = [a, y, sp](const std::vector<Tensor>& gs) {
      Tensor ga(a.shape(), a.dtype());
      dispatch(a.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const S* g = gs[0].data<S>();
        const S* py = y.data<S>();
        S* out = ga.data<S>();
        parallel_for(sp.outer * sp.inner, [&](int64_t lo, int64_t hi) {
          for (int64_t oi = lo; oi < hi; ++oi) {
            int64_t o = oi / sp.inner, i = oi % sp.inner;
            int64_t base = o * sp.n * sp.inner + i;
            S dot = 0;
            for (int64_t k = 0; k < sp.n; ++k)
              dot += g[base + k * sp.inner] * py[base + k * sp.inner];
            for (int64_t k = 0; k < sp.n; ++k) {
              int64_t j = base + k * sp.inner;
              out[j] = py[j] * (g[j] - dot);
            }
          }
        }, 64);
      });
      add_to_grad(a, ga);
    };
  }
  return out;
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  check(a.rank() >= 1, "layer_norm: rank-0 input");
  int64_t d = a.dim(a.rank() - 1);
  int64_t rows = a.numel() / d;
  if (gain.defined())
    check(gain.numel() == d && bias.defined() && bias.numel() == d,
          "layer_norm: gain/bias must have " + std::to_string(d) + " elements");
  Tensor out(a.shape(), a.dtype());
  Tensor xhat(a.shape(), a.dtype());
  Tensor inv_std({rows}, a.dtype());
  dispatch(a.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* x = a.data<S>();
    const S* pg = gain.defined() ? gain.data<S>() : nullptr;
    const S* pb = bias.defined() ? bias.data<S>() : nullptr;
    S* py = out.data<S>();
    S* ph = xhat.data<S>();
    S* pis = inv_std.data<S>();
    parallel_for(rows, [&](int64_t lo, int64_t hi) {
      for (int64_t r = lo; r < hi; ++r) {
        const S* xr = x + r * d;
        S mu = 0;
        for (int64_t i = 0; i < d; ++i) mu += xr[i];
        mu /= (S)d;
        S var = 0;
        for (int64_t i = 0; i < d; ++i) {
          S c = xr[i] - mu;
          var += c * c;
        }
        var /= (S)d;
        S is = (S)(1.0 / std::sqrt((double)var + eps));
        pis[r] = is;
        for (int64_t i = 0; i < d; ++i) {
          S xh = (xr[i] - mu) * is;
          ph[r * d + i] = xh;
          py[r * d + i] = pg ? xh * pg[i] + pb[i] : xh;
        }
      }
    }, 64);
  });
  std::vector<Tensor> ins = {a};
  if (gain.defined()) {
    ins.push_back(gain);
    ins.push_back(bias);
  }
  if (auto node = make_node("layer_norm", ins, {out})) {
    node->backward = [a, gain, bias, xhat, inv_std, d, rows](const std::vector<Tensor>& gs) {
      Tensor ga(a.shape(), a.dtype());
      Tensor gg, gb;
      if (gain.defined()) {
        gg = Tensor::zeros(gain.shape(), a.dtype());
        gb = Tensor::zeros(bias.shape(), a.dtype());
      }
      dispatch(a.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const S* g = gs[0].data<S>();
        const S* ph = xhat.data<S>();
        const S* pis = inv_std.data<S>();
        const S* pg = gain.defined() ? gain.data<S>() : nullptr;
        S* out = ga.data<S>();
        parallel_for(rows, [&](int64_t lo, int64_t hi) {
          for (int64_t r = lo; r < hi; ++r) {
            const S* grow = g + r * d;
            const S* hrow = ph + r * d;
            S sum_dxh = 0, sum_dxh_xh = 0;
            for (int64_t i = 0; i < d; ++i) {
              S dxh = pg ? grow[i] * pg[i] : grow[i];
              sum_dxh += dxh;
              sum_dxh_xh += dxh * hrow[i];
            }
            S is = pis[r];
            for (int64_t i = 0; i < d; ++i) {
              S dxh = pg ? grow[i] * pg[i] : grow[i];
              out[r * d + i] =
                  (dxh - sum_dxh / (S)d - hrow[i] * sum_dxh_xh / (S)d) * is;
            }
          }
        }, 64);
        if (gain.defined()) {
          S* pgg = gg.data<S>();
          S* pgb = gb.data<S>();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t i = 0; i < d; ++i) {
              pgg[i] += g[r * d + i] * ph[r * d + i];
              pgb[i] += g[r * d + i];
            }
        }
      });
      add_to_grad(a, ga);
      if (gain.defined()) {
        add_to_grad(gain, gg);
        add_to_grad(bias, gb);
      }
    };
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  int64_t n = shape_numel(shape);
  check(n == a.numel(), "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                            " changes element count");
  Tensor out = a.detach().clone();
  out.impl()->shape = shape;
  Tensor wrapped(out.impl());
  if (auto node = make_node("reshape", {a}, {wrapped})) {
    node->backward = [a](const std::vector<Tensor>& gs) {
      Tensor g = gs[0].detach();
      g.impl()->shape = a.shape();
      add_to_grad(a, Tensor(g.impl()));
    };
  }
  return wrapped;
}

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  int r = a.rank();
  check((int)perm.size() == r, "permute: got " + std::to_string(perm.size()) +
                                   " axes for rank " + std::to_string(r));
  Shape out_shape(r);
  for (int i = 0; i < r; ++i) out_shape[i] = a.dim(perm[i]);
  Tensor out(out_shape, a.dtype());

  std::vector<int64_t> in_strides(r, 1), out_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * a.dim(i + 1);
  for (int i = r - 2; i >= 0; --i) out_strides[i] = out_strides[i + 1] * out_shape[i + 1];
  std::vector<int64_t> map(r);
  for (int i = 0; i < r; ++i) map[i] = in_strides[perm[i]];

  dispatch(a.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* src = a.data<S>();
    S* dst = out.data<S>();
    int64_t inner = out_shape[r - 1];
    int64_t inner_stride = map[r - 1];
    parallel_for(out.numel() / inner, [&](int64_t lo, int64_t hi) {
      for (int64_t row = lo; row < hi; ++row) {
        int64_t rem = row, src_base = 0;
        for (int i = 0; i < r - 1; ++i) {
          int64_t q = rem / (out_strides[i] / inner);
          rem -= q * (out_strides[i] / inner);
          src_base += q * map[i];
        }
        S* drow = dst + row * inner;
        for (int64_t i = 0; i < inner; ++i) drow[i] = src[src_base + i * inner_stride];
      }
    }, 512);
  });
  if (auto node = make_node("permute", {a}, {out})) {
    std::vector<int> inv(r);
    for (int i = 0; i < r; ++i) inv[perm[i]] = i;
    node->backward = [a, inv](const std::vector<Tensor>& gs) {
      NoGradGuard ng;
      add_to_grad(a, permute(gs[0], inv));
    };
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  check(!parts.empty(), "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  Shape out_shape = s0;
  int64_t total = 0;
  for (const auto& p : parts) {
    check(p.rank() == (int)s0.size(), "concat: rank mismatch");
    check(p.dtype() == parts[0].dtype(), "concat: dtype mismatch");
    for (int i = 0; i < p.rank(); ++i)
      if (i != axis)
        check(p.dim(i) == s0[i], "concat: shape " + shape_str(p.shape()) + " vs " +
                                     shape_str(s0) + " on axis " + std::to_string(i));
    total += p.dim(axis);
  }
  out_shape[axis] = total;
  AxisSplit sp = axis_split(out_shape, axis, "concat");
  Tensor out(out_shape, parts[0].dtype());
  dispatch(out.dtype(), [&](auto sample) {
    using S = decltype(sample);
    S* dst = out.data<S>();
    int64_t offset = 0;
    for (const auto& p : parts) {
      int64_t n = p.dim(axis);
      const S* src = p.data<S>();
      for (int64_t o = 0; o < sp.outer; ++o)
        std::memcpy(dst + (o * sp.n + offset) * sp.inner, src + o * n * sp.inner,
                    sizeof(S) * (size_t)(n * sp.inner));
      offset += n;
    }
  });
  if (auto node = make_node("concat", parts, {out})) {
    node->backward = [parts, axis](const std::vector<Tensor>& gs) {
      NoGradGuard ng;
      int64_t off = 0;
      for (const auto& p : parts) {
        add_to_grad(p, slice(gs[0], axis, off, p.dim(axis)));
        off += p.dim(axis);
      }
    };
  }
  return out;
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  AxisSplit sp = axis_split(a.shape(), axis, "slice");
  check(start >= 0 && len >= 0 && start + len <= sp.n,
        "slice: [" + std::to_string(start) + "," + std::to_string(start + len) +
            ") out of range for axis extent " + std::to_string(sp.n));
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  Tensor out(out_shape, a.dtype());
  dispatch(a.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* src = a.data<S>();
    S* dst = out.data<S>();
    for (int64_t o = 0; o < sp.outer; ++o)
      std::memcpy(dst + o * len * sp.inner, src + (o * sp.n + start) * sp.inner,
                  sizeof(S) * (size_t)(len * sp.inner));
  });
  if (auto node = make_node("slice", {a}, {out})) {
    node->backward = [a, sp, axis, start, len](const std::vector<Tensor>& gs) {
      Tensor ga = Tensor::zeros(a.shape(), a.dtype());
      dispatch(a.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const S* g = gs[0].data<S>();
        S* dst = ga.data<S>();
        for (int64_t o = 0; o < sp.outer; ++o)
          std::memcpy(dst + (o * sp.n + start) * sp.inner, g + o * len * sp.inner,
                      sizeof(S) * (size_t)(len * sp.inner));
      });
      add_to_grad(a, ga);
    };
  }
  return out;
}

Tensor index_select(const Tensor& a, const std::vector<int64_t>& idx) {
  check(a.rank() >= 1, "index_select: rank-0 input");
  int64_t row = a.numel() / a.dim(0);
  Shape out_shape = a.shape();
  out_shape[0] = (int64_t)idx.size();
  Tensor out(out_shape, a.dtype());
  for (size_t r = 0; r < idx.size(); ++r)
    check(idx[r] >= 0 && idx[r] < a.dim(0), "index_select: index " + std::to_string(idx[r]) +
                                                " out of range " + std::to_string(a.dim(0)));
  dispatch(a.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* src = a.data<S>();
    S* dst = out.data<S>();
    for (size_t r = 0; r < idx.size(); ++r)
      std::memcpy(dst + (int64_t)r * row, src + idx[r] * row, sizeof(S) * (size_t)row);
  });
  if (auto node = make_node("index_select", {a}, {out})) {
    node->backward = [a, idx, row](const std::vector<Tensor>& gs) {
      Tensor ga = Tensor::zeros(a.shape(), a.dtype());
      dispatch(a.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const S* g = gs[0].data<S>();
        S* dst = ga.data<S>();
        for (size_t r = 0; r < idx.size(); ++r) {
          S* drow = dst + idx[r] * row;
          const S* grow = g + (int64_t)r * row;
          for (int64_t i = 0; i < row; ++i) drow[i] += grow[i];
        }
      });
      add_to_grad(a, ga);
    };
  }
  return out;
}

Tensor expand_rows(const Tensor& values, const std::vector<int64_t>& idx, int64_t n) {
  check(values.rank() >= 1 && values.dim(0) == (int64_t)idx.size(),
        "expand_rows: values " + shape_str(values.shape()) + " vs " +
            std::to_string(idx.size()) + " indices");
  int64_t row = values.numel() / std::max<int64_t>(1, values.dim(0));
  Shape out_shape = values.shape();
  out_shape[0] = n;
  Tensor out = Tensor::zeros(out_shape, values.dtype());
  for (size_t r = 0; r < idx.size(); ++r)
    check(idx[r] >= 0 && idx[r] < n, "expand_rows: index out of range");
  dispatch(values.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* src = values.data<S>();
    S* dst = out.data<S>();
    for (size_t r = 0; r < idx.size(); ++r) {
      S* drow = dst + idx[r] * row;
      const S* srow = src + (int64_t)r * row;
      for (int64_t i = 0; i < row; ++i) drow[i] += srow[i];
    }
  });
  if (auto node = make_node("expand_rows", {values}, {out})) {
    node->backward = [values, idx, row](const std::vector<Tensor>& gs) {
      Tensor gv(values.shape(), values.dtype());
      dispatch(values.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const S* g = gs[0].data<S>();
        S* dst = gv.data<S>();
        for (size_t r = 0; r < idx.size(); ++r)
          std::memcpy(dst + (int64_t)r * row, g + idx[r] * row, sizeof(S) * (size_t)row);
      });
      add_to_grad(values, gv);
    };
  }
  return out;
}

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  AxisSplit sp = axis_split(a.shape(), axis, "sum");
  Shape out_shape;
  for (int i = 0; i < a.rank(); ++i) {
    if (i == axis) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(a.dim(i));
    }
  }
  Tensor out(out_shape, a.dtype());
  dispatch(a.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* x = a.data<S>();
    S* y = out.data<S>();
    parallel_for(sp.outer, [&](int64_t lo, int64_t hi) {
      for (int64_t o = lo; o < hi; ++o) {
        S* yrow = y + o * sp.inner;
        for (int64_t i = 0; i < sp.inner; ++i) yrow[i] = 0;
        for (int64_t k = 0; k < sp.n; ++k) {
          const S* xrow = x + (o * sp.n + k) * sp.inner;
          for (int64_t i = 0; i < sp.inner; ++i) yrow[i] += xrow[i];
        }
      }
    }, 64);
  });
  if (auto node = make_node("sum", {a}, {out})) {
    node->backward = [a, sp](const std::vector<Tensor>& gs) {
      Tensor ga(a.shape(), a.dtype());
      dispatch(a.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const S* g = gs[0].data<S>();
        S* dst = ga.data<S>();
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t k = 0; k < sp.n; ++k)
            std::memcpy(dst + (o * sp.n + k) * sp.inner, g + o * sp.inner,
                        sizeof(S) * (size_t)sp.inner);
      });
      add_to_grad(a, ga);
    };
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  Tensor out({}, a.dtype());
  dispatch(a.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* x = a.data<S>();
    S acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) acc += x[i];
    out.data<S>()[0] = acc;
  });
  if (auto node = make_node("sum_all", {a}, {out})) {
    node->backward = [a](const std::vector<Tensor>& gs) {
      add_to_grad(a, Tensor::full(a.shape(), gs[0].get(0), a.dtype()));
    };
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0 / (double)a.numel());
}

Tensor mean(const Tensor& a, int axis, bool keepdim) {
  return mul_scalar(sum(a, axis, keepdim), 1.0 / (double)a.dim(axis));
}

Tensor mean_sorted(const Tensor& a, int axis) {
  AxisSplit sp = axis_split(a.shape(), axis, "mean_sorted");
  Shape out_shape;
  for (int i = 0; i < a.rank(); ++i)
    if (i != axis) out_shape.push_back(a.dim(i));
  Tensor out(out_shape, a.dtype());
  dispatch(a.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* x = a.data<S>();
    S* y = out.data<S>();
    parallel_for(sp.outer * sp.inner, [&](int64_t lo, int64_t hi) {
      std::vector<S> vals((size_t)sp.n);
      for (int64_t oi = lo; oi < hi; ++oi) {
        int64_t o = oi / sp.inner, i = oi % sp.inner;
        for (int64_t k = 0; k < sp.n; ++k) vals[(size_t)k] = x[(o * sp.n + k) * sp.inner + i];
        y[oi] = sorted_sum(vals.data(), (int)sp.n) / (S)sp.n;
      }
    }, 1024);
  });
  if (auto node = make_node("mean_sorted", {a}, {out})) {
    node->backward = [a, sp](const std::vector<Tensor>& gs) {
      Tensor ga(a.shape(), a.dtype());
      dispatch(a.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const S* g = gs[0].data<S>();
        S* dst = ga.data<S>();
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t k = 0; k < sp.n; ++k) {
            S* drow = dst + (o * sp.n + k) * sp.inner;
            const S* grow = g + o * sp.inner;
            for (int64_t i = 0; i < sp.inner; ++i) drow[i] = grow[i] / (S)sp.n;
          }
      });
      add_to_grad(a, ga);
    };
  }
  return out;
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
  check(a.rank() >= 1, "scale_rows: rank-0 input");
  check_same_dtype(a, s, "scale_rows");
  int64_t d = a.dim(a.rank() - 1);
  int64_t rows = a.numel() / d;
  check(s.numel() == rows, "scale_rows: scales " + shape_str(s.shape()) + " vs rows " +
                               std::to_string(rows) + " of " + shape_str(a.shape()));
  Tensor out(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto sample) {
    using S = decltype(sample);
    const S* pa = a.data<S>();
    const S* ps = s.data<S>();
    S* po = out.data<S>();
    parallel_for(rows, [&](int64_t lo, int64_t hi) {
      for (int64_t r = lo; r < hi; ++r)
        for (int64_t i = 0; i < d; ++i) po[r * d + i] = pa[r * d + i] * ps[r];
    }, 256);
  });
  if (auto node = make_node("scale_rows", {a, s}, {out})) {
    node->backward = [a, s, d, rows](const std::vector<Tensor>& gs) {
      dispatch(a.dtype(), [&](auto sample) {
        using S = decltype(sample);
        const S* g = gs[0].data<S>();
        if (a.requires_grad()) {
          Tensor ga(a.shape(), a.dtype());
          S* dst = ga.data<S>();
          const S* ps = s.data<S>();
          parallel_for(rows, [&](int64_t lo, int64_t hi) {
            for (int64_t r = lo; r < hi; ++r)
              for (int64_t i = 0; i < d; ++i) dst[r * d + i] = g[r * d + i] * ps[r];
          }, 256);
          add_to_grad(a, ga);
        }
        if (s.requires_grad()) {
          Tensor gsv(s.shape(), s.dtype());
          S* dst = gsv.data<S>();
          const S* pa = a.data<S>();
          parallel_for(rows, [&](int64_t lo, int64_t hi) {
            for (int64_t r = lo; r < hi; ++r) {
              S acc = 0;
              for (int64_t i = 0; i < d; ++i) acc += g[r * d + i] * pa[r * d + i];
              dst[r] = acc;
            }
          }, 256);
          add_to_grad(s, gsv);
        }
      });
    };
  }
  return out;
}

}  // namespace hummorph
