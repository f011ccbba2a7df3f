#include "hummorph/ops.hpp"
#include "hummorph/threading.hpp"

namespace hummorph {

namespace {

// C[m,n] (+)= A[m,k] * B[k,n] with optional transposes; row-major. Every
// output element accumulates its K contributions in ascending-k order
// regardless of the loop arrangement chosen for locality.
template <typename S>
void gemm(const S* __restrict a, const S* __restrict b, S* __restrict c,
          int64_t M, int64_t N, int64_t K, bool ta, bool tb, bool accumulate) {
  parallel_for(M, [&](int64_t lo, int64_t hi) {
    for (int64_t m = lo; m < hi; ++m) {
      S* crow = c + m * N;
      if (!tb) {  // row-accumulation form, B rows contiguous
        if (!accumulate)
          for (int64_t n = 0; n < N; ++n) crow[n] = 0;
        for (int64_t k = 0; k < K; ++k) {
          S av = ta ? a[k * M + m] : a[m * K + k];
          if (av == (S)0) continue;
          const S* brow = b + k * N;
          for (int64_t n = 0; n < N; ++n) crow[n] += av * brow[n];
        }
      } else {  // dot-product form, both rows contiguous
        for (int64_t n = 0; n < N; ++n) {
          const S* pb = b + n * K;
          S acc = 0;
          if (!ta) {
            const S* pa = a + m * K;
            for (int64_t k = 0; k < K; ++k) acc += pa[k] * pb[k];
          } else {
            for (int64_t k = 0; k < K; ++k) acc += a[k * M + m] * pb[k];
          }
          if (accumulate)
            crow[n] += acc;
          else
            crow[n] = acc;
        }
      }
    }
  }, 8);
}

struct MatShape {
  int64_t M, N, K;
};

MatShape matmul_dims(const Tensor& a, const Tensor& b, bool ta, bool tb, int off,
                     const char* name) {
  int64_t am = a.dim(off + (ta ? 1 : 0)), ak = a.dim(off + (ta ? 0 : 1));
  int64_t bk = b.dim(off + (tb ? 1 : 0)), bn = b.dim(off + (tb ? 0 : 1));
  check(ak == bk, std::string(name) + ": inner dimensions differ, " + shape_str(a.shape()) +
                      (ta ? "^T" : "") + " x " + shape_str(b.shape()) + (tb ? "^T" : ""));
  return {am, bn, ak};
}

template <typename S>
void gemm_dispatch(const Tensor& a, const Tensor& b, Tensor& c, int64_t batch,
                   MatShape ms, bool ta, bool tb, bool accumulate) {
  int64_t an = a.numel() / batch, bn = b.numel() / batch, cn = ms.M * ms.N;
  for (int64_t i = 0; i < batch; ++i)
    gemm<S>(a.data<S>() + i * an, b.data<S>() + i * bn, c.data<S>() + i * cn, ms.M,
            ms.N, ms.K, ta, tb, accumulate);
}

Tensor matmul_impl(const char* name, const Tensor& a, const Tensor& b, bool ta, bool tb,
                   bool batched) {
  check(a.dtype() == b.dtype(), std::string(name) + ": dtype mismatch");
  int off = batched ? 1 : 0;
  check(a.rank() == 2 + off && b.rank() == 2 + off,
        std::string(name) + ": expected rank " + std::to_string(2 + off) + ", got " +
            shape_str(a.shape()) + " and " + shape_str(b.shape()));
  int64_t batch = 1;
  if (batched) {
    check(a.dim(0) == b.dim(0), std::string(name) + ": batch sizes differ, " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    batch = a.dim(0);
  }
  MatShape ms = matmul_dims(a, b, ta, tb, off, name);
  Shape out_shape = batched ? Shape{batch, ms.M, ms.N} : Shape{ms.M, ms.N};
  Tensor out(out_shape, a.dtype());
  if (a.dtype() == DType::F32)
    gemm_dispatch<float>(a, b, out, batch, ms, ta, tb, false);
  else
    gemm_dispatch<double>(a, b, out, batch, ms, ta, tb, false);

  if (auto node = make_node(name, {a, b}, {out})) {
    node->backward = [a, b, ta, tb, batch, ms](const std::vector<Tensor>& gs) {
      const Tensor& g = gs[0];
      // dA = g B^T (layout depends on the transpose flags), dB = A^T g.
      if (a.requires_grad()) {
        Tensor ga = Tensor::zeros(a.shape(), a.dtype());
        MatShape m_a = ta ? MatShape{ms.K, ms.M, ms.N} : MatShape{ms.M, ms.K, ms.N};
        auto run = [&](auto sample) {
          using S = decltype(sample);
          int64_t gn = ms.M * ms.N, bn = b.numel() / batch, an = a.numel() / batch;
          for (int64_t i = 0; i < batch; ++i) {
            if (!ta)
              gemm<S>(g.data<S>() + i * gn, b.data<S>() + i * bn, ga.data<S>() + i * an,
                      m_a.M, m_a.N, m_a.K, false, !tb, true);
            else
              gemm<S>(b.data<S>() + i * bn, g.data<S>() + i * gn, ga.data<S>() + i * an,
                      m_a.M, m_a.N, m_a.K, tb, true, true);
          }
        };
        if (a.dtype() == DType::F32)
          run(float{});
        else
          run(double{});
        add_to_grad(a, ga);
      }
      if (b.requires_grad()) {
        Tensor gb = Tensor::zeros(b.shape(), b.dtype());
        MatShape m_b = tb ? MatShape{ms.N, ms.K, ms.M} : MatShape{ms.K, ms.N, ms.M};
        auto run = [&](auto sample) {
          using S = decltype(sample);
          int64_t gn = ms.M * ms.N, an = a.numel() / batch, bn = b.numel() / batch;
          for (int64_t i = 0; i < batch; ++i) {
            if (!tb)
              gemm<S>(a.data<S>() + i * an, g.data<S>() + i * gn, gb.data<S>() + i * bn,
                      m_b.M, m_b.N, m_b.K, !ta, false, true);
            else
              gemm<S>(g.data<S>() + i * gn, a.data<S>() + i * an, gb.data<S>() + i * bn,
                      m_b.M, m_b.N, m_b.K, true, ta, true);
          }
        };
        if (b.dtype() == DType::F32)
          run(float{});
        else
          run(double{});
        add_to_grad(b, gb);
      }
    };
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  return matmul_impl("matmul", a, b, trans_a, trans_b, false);
}

Tensor batched_matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  return matmul_impl("batched_matmul", a, b, trans_a, trans_b, true);
}

}  // namespace hummorph
