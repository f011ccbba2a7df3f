#include "hummorph/gradsuite.hpp"

#include <chrono>
#include <cmath>
#include <functional>

#include "hummorph/body_model.hpp"
#include "hummorph/networks.hpp"

namespace hummorph {

namespace {

Tensor rand_t(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape), DType::F64);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(lo, hi));
  return t;
}

// random values bounded away from zero (for kinked activations)
Tensor rand_nonzero(Shape shape, Rng& rng, double mag) {
  Tensor t(std::move(shape), DType::F64);
  for (int64_t i = 0; i < t.numel(); ++i) {
    double v = rng.uniform(0.1, mag);
    t.set(i, rng.uniform() < 0.5 ? -v : v);
  }
  return t;
}

// grid-texel coordinates strictly inside, away from cell boundaries
Tensor rand_coords(int64_t n, int dims, Rng& rng, const std::vector<int64_t>& extents) {
  Tensor t({n, dims}, DType::F64);
  for (int64_t i = 0; i < n; ++i)
    for (int d = 0; d < dims; ++d) {
      int64_t cell = 1 + rng.uniform_int(extents[(size_t)d] - 2);
      t.set(i * dims + d, (double)cell + rng.uniform(0.2, 0.8));
    }
  return t;
}

Tensor mixdown(const Tensor& t) {
  Tensor m(t.shape(), t.dtype());
  for (int64_t i = 0; i < m.numel(); ++i) m.set(i, 0.05 + 0.013 * (double)(i % 23));
  return sum_all(mul(t, m));
}

using Builder = std::function<double(Rng&)>;

}  // namespace

GradSuiteReport run_gradient_suite(int instances_per_op, uint64_t seed) {
  auto t0 = std::chrono::steady_clock::now();
  GradSuiteReport report;

  std::vector<std::pair<std::string, Builder>> ops;

  auto unary = [&](const std::string& name, auto fn, double lo, double hi) {
    ops.emplace_back(name, [fn, lo, hi](Rng& rng) {
      Tensor x = rand_t({3, 5}, rng, lo, hi);
      return grad_check([&](const std::vector<Tensor>& in) { return mixdown(fn(in[0])); },
                        {x});
    });
  };
  unary("softplus", [](const Tensor& t) { return softplus(t); }, -2, 2);
  unary("sigmoid", [](const Tensor& t) { return sigmoid(t); }, -2, 2);
  unary("exp", [](const Tensor& t) { return exp(t); }, -1, 1);
  unary("log", [](const Tensor& t) { return log(t); }, 0.4, 3);
  unary("sqrt", [](const Tensor& t) { return sqrt(t); }, 0.4, 3);
  unary("sin", [](const Tensor& t) { return sin(t); }, -2, 2);
  unary("cos", [](const Tensor& t) { return cos(t); }, -2, 2);
  unary("reciprocal", [](const Tensor& t) { return reciprocal(t); }, 0.4, 2);
  unary("neg", [](const Tensor& t) { return neg(t); }, -1, 1);
  unary("softmax", [](const Tensor& t) { return softmax(t, 1); }, -2, 2);
  unary("mean_sorted", [](const Tensor& t) { return mean_sorted(t, 0); }, -2, 2);
  unary("positional_encode", [](const Tensor& t) { return positional_encode(t, 3); }, -1, 1);

  ops.emplace_back("relu", [](Rng& rng) {
    Tensor x = rand_nonzero({3, 5}, rng, 2.0);
    return grad_check([](const std::vector<Tensor>& in) { return mixdown(relu(in[0])); },
                      {x});
  });
  ops.emplace_back("abs", [](Rng& rng) {
    Tensor x = rand_nonzero({3, 5}, rng, 2.0);
    return grad_check([](const std::vector<Tensor>& in) { return mixdown(abs(in[0])); },
                      {x});
  });

  ops.emplace_back("add/sub/mul/div", [](Rng& rng) {
    Tensor a = rand_t({2, 3, 2}, rng, -1, 1);
    Tensor b = rand_nonzero({3, 2}, rng, 1.5);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return mixdown(div(mul(add(in[0], in[1]), sub(in[0], in[1])), in[1]));
        },
        {a, b});
  });
  ops.emplace_back("scale_rows", [](Rng& rng) {
    Tensor a = rand_t({4, 3}, rng, -1, 1);
    Tensor s = rand_t({4}, rng, -1, 1);
    return grad_check(
        [](const std::vector<Tensor>& in) { return mixdown(scale_rows(in[0], in[1])); },
        {a, s});
  });
  ops.emplace_back("layer_norm", [](Rng& rng) {
    Tensor x = rand_t({3, 6}, rng, -1, 1);
    Tensor g = rand_t({6}, rng, 0.5, 1.5);
    Tensor b = rand_t({6}, rng, -0.3, 0.3);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return mixdown(layer_norm(in[0], in[1], in[2]));
        },
        {x, g, b});
  });
  ops.emplace_back("concat/slice/permute", [](Rng& rng) {
    Tensor a = rand_t({2, 3}, rng, -1, 1);
    Tensor b = rand_t({2, 2}, rng, -1, 1);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return mixdown(slice(permute(concat({in[0], in[1]}, 1), {1, 0}), 0, 1, 3));
        },
        {a, b});
  });
  ops.emplace_back("sum/mean/reshape", [](Rng& rng) {
    Tensor a = rand_t({3, 4}, rng, -1, 1);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return mixdown(add(mean(in[0], 1), sum(reshape(in[0], {4, 3}), 1)));
        },
        {a});
  });
  ops.emplace_back("index_select/expand_rows", [](Rng& rng) {
    Tensor a = rand_t({5, 3}, rng, -1, 1);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return mixdown(expand_rows(index_select(in[0], {4, 0, 2, 2}), {1, 3, 5, 0}, 6));
        },
        {a});
  });
  ops.emplace_back("matmul", [](Rng& rng) {
    Tensor a = rand_t({3, 4}, rng, -1, 1);
    Tensor b = rand_t({4, 2}, rng, -1, 1);
    return grad_check(
        [](const std::vector<Tensor>& in) { return mixdown(matmul(in[0], in[1])); },
        {a, b});
  });
  ops.emplace_back("matmul_transposed", [](Rng& rng) {
    Tensor a = rand_t({4, 3}, rng, -1, 1);
    Tensor b = rand_t({2, 4}, rng, -1, 1);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return mixdown(matmul(in[0], in[1], true, true));
        },
        {a, b});
  });
  ops.emplace_back("batched_matmul", [](Rng& rng) {
    Tensor a = rand_t({2, 3, 4}, rng, -1, 1);
    Tensor b = rand_t({2, 2, 4}, rng, -1, 1);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return mixdown(batched_matmul(in[0], in[1], false, true));
        },
        {a, b});
  });
  ops.emplace_back("conv3d", [](Rng& rng) {
    Tensor x = rand_t({2, 3, 4, 4}, rng, -1, 1);
    Tensor w = rand_t({2, 2, 2, 3, 3}, rng, -0.5, 0.5);
    Tensor b = rand_t({2}, rng, -0.2, 0.2);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return mixdown(conv3d(in[0], in[1], in[2], {1, 1, 1}, {0, 1, 1}));
        },
        {x, w, b});
  });
  ops.emplace_back("conv3d_strided", [](Rng& rng) {
    Tensor x = rand_t({2, 4, 5, 5}, rng, -1, 1);
    Tensor w = rand_t({3, 2, 3, 3, 3}, rng, -0.5, 0.5);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return mixdown(conv3d(in[0], in[1], Tensor(), {2, 2, 2}, {1, 1, 1}));
        },
        {x, w});
  });
  ops.emplace_back("conv_transpose3d", [](Rng& rng) {
    Tensor x = rand_t({2, 2, 3, 3}, rng, -1, 1);
    Tensor w = rand_t({2, 3, 4, 4, 4}, rng, -0.5, 0.5);
    Tensor b = rand_t({3}, rng, -0.2, 0.2);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return mixdown(conv_transpose3d(in[0], in[1], in[2], {2, 2, 2}, {1, 1, 1}));
        },
        {x, w, b});
  });
  ops.emplace_back("avg_pool3d", [](Rng& rng) {
    Tensor x = rand_t({2, 4, 5, 4}, rng, -1, 1);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return mixdown(avg_pool3d(in[0], {2, 2, 2}, {2, 2, 2}));
        },
        {x});
  });
  ops.emplace_back("upsample_nearest3d", [](Rng& rng) {
    Tensor x = rand_t({2, 2, 3, 2}, rng, -1, 1);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return mixdown(upsample_nearest3d(in[0], {2, 2, 2}));
        },
        {x});
  });
  ops.emplace_back("grid_sample_2d", [](Rng& rng) {
    Tensor f = rand_t({3, 6, 7}, rng, -1, 1);
    Tensor uv = rand_coords(5, 2, rng, {7, 6});
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return mixdown(grid_sample_2d(in[0], in[1]));
        },
        {f, uv});
  });
  ops.emplace_back("grid_sample_3d", [](Rng& rng) {
    Tensor v = rand_t({2, 4, 5, 6}, rng, -1, 1);
    Tensor pts = rand_coords(5, 3, rng, {6, 5, 4});
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return mixdown(grid_sample_3d(in[0], in[1]));
        },
        {v, pts});
  });
  ops.emplace_back("gather_channel_samples", [](Rng& rng) {
    Tensor v = rand_t({3, 4, 4, 4}, rng, 0, 1);
    Tensor pts({3, 4, 3}, DType::F64);
    for (int64_t k = 0; k < 3; ++k) {
      Tensor c = rand_coords(4, 3, rng, {4, 4, 4});
      for (int64_t i = 0; i < 12; ++i) pts.set(k * 12 + i, c.get(i));
    }
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return mixdown(gather_channel_samples(in[0], in[1]));
        },
        {v, pts});
  });
  ops.emplace_back("lbs_blend", [](Rng& rng) {
    int64_t k = 3, n = 4;
    Tensor pts = rand_t({n, 3}, rng, -1, 1);
    Tensor wts = rand_t({n, k}, rng, 0.1, 1);
    Tensor rot({k, 3, 3}, DType::F64);
    Tensor tr = rand_t({k, 3}, rng, -0.3, 0.3);
    for (int64_t i = 0; i < k; ++i) {
      Vec3 axis(rng.normal(), rng.normal(), rng.normal());
      Mat3 m = Eigen::AngleAxisd(rng.uniform(-1, 1), axis.normalized()).toRotationMatrix();
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) rot.set((i * 3 + a) * 3 + b, m(a, b));
    }
    return grad_check(
        [&](const std::vector<Tensor>& in) {
          return mixdown(lbs_blend(in[0], in[1], rot, tr));
        },
        {pts, wts});
  });
  ops.emplace_back("project_points", [](Rng& rng) {
    Tensor pts({4, 3}, DType::F64);
    for (int64_t i = 0; i < 4; ++i) {
      pts.set(i * 3 + 0, rng.uniform(-0.5, 0.5));
      pts.set(i * 3 + 1, rng.uniform(-0.5, 0.5));
      pts.set(i * 3 + 2, rng.uniform(0.8, 3.0));
    }
    Tensor rot = Tensor::zeros({3, 3}, DType::F64);
    rot.set(0, 1);
    rot.set(4, 1);
    rot.set(8, 1);
    Tensor tr = Tensor::zeros({3}, DType::F64);
    return grad_check(
        [&](const std::vector<Tensor>& in) {
          auto [uv, depth] = project_points(in[0], rot, tr, 80, 80, 32, 32);
          return add(mixdown(uv), mixdown(depth));
        },
        {pts});
  });
  ops.emplace_back("composite_rays", [](Rng& rng) {
    int64_t r = 3, m = 5;
    Tensor sigma = rand_t({r, m}, rng, 0.05, 2.5);
    Tensor color = rand_t({r, m, 3}, rng, 0.05, 0.95);
    Tensor delta = rand_t({r, m}, rng, 0.05, 0.3);
    Tensor bg = rand_t({3}, rng, 0, 1);
    return grad_check(
        [&](const std::vector<Tensor>& in) {
          auto [rgb, opacity] = composite_rays(in[0], in[1], delta, bg);
          return add(mixdown(rgb), mixdown(opacity));
        },
        {sigma, color});
  });
  ops.emplace_back("attend_small", [](Rng& rng) {
    int64_t b = 2, tq = 2, tk = 4, d = 8;
    Tensor q = rand_t({b, tq, d}, rng, -1, 1);
    Tensor k = rand_t({b, tk, d}, rng, -1, 1);
    Tensor v = rand_t({b, tk, d}, rng, -1, 1);
    Tensor mask({b, tk}, DType::F64);
    for (int64_t i = 0; i < mask.numel(); ++i) mask.set(i, rng.uniform() < 0.3 ? 0 : 1);
    for (int64_t i = 0; i < b; ++i) mask.set(i * tk, 1);  // keep one token alive
    return grad_check(
        [&](const std::vector<Tensor>& in) {
          return mixdown(attend_small(in[0], in[1], in[2], mask, 2));
        },
        {q, k, v});
  });

  Rng master(seed);
  for (auto& [name, builder] : ops) {
    GradSuiteEntry entry;
    entry.op = name;
    entry.instances = instances_per_op;
    for (int i = 0; i < instances_per_op; ++i) {
      Rng rng = master.fork(fnv1a(name) + (uint64_t)i);
      entry.max_err = std::max(entry.max_err, builder(rng));
    }
    report.max_err = std::max(report.max_err, entry.max_err);
    report.entries.push_back(std::move(entry));
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace hummorph
