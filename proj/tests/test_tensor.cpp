#include <cmath>
#include <cstring>

#include "hummorph/gradcheck.hpp"
#include "hummorph/threading.hpp"
#include "test_util.hpp"

using namespace hummorph;
using testutil::bitwise_equal;
using testutil::max_abs_diff;
using testutil::random_tensor;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("softmax of a constant vector is uniform") {
  Tensor y = softmax(Tensor::zeros({3}, DType::F64), 0);
  for (int i = 0; i < 3; ++i) CHECK(y.get(i) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("matmul with the identity returns the operand") {
  Rng rng(11);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor eye = Tensor::zeros({3, 3}, DType::F64);
  for (int i = 0; i < 3; ++i) eye.set(i * 4, 1.0);
  CHECK(bitwise_equal(matmul(eye, a), a));
}

TEST_CASE("softplus derivative at zero is sigmoid(0)") {
  Tensor x = Tensor::zeros({1}, DType::F64).set_requires_grad(true);
  backward(sum_all(softplus(x)));
  CHECK(x.grad().get(0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("backward of sum of squares") {
  Tensor x = Tensor::from_data({2}, {1, 2}, DType::F64).set_requires_grad(true);
  backward(sum_all(mul(x, x)));
  CHECK(x.grad().get(0) == doctest::Approx(2.0));
  CHECK(x.grad().get(1) == doctest::Approx(4.0));
}

TEST_CASE("detached tensors receive no gradient") {
  Tensor x = Tensor::from_data({2}, {1, 2}, DType::F64).set_requires_grad(true);
  Tensor y = Tensor::from_data({2}, {3, 4}, DType::F64).set_requires_grad(true);
  backward(sum_all(mul(y, y)));
  CHECK(!x.has_grad());
  CHECK(y.has_grad());
}

TEST_CASE("repeated backward accumulates into leaf gradients") {
  Tensor x = Tensor::from_data({2}, {1, 2}, DType::F64).set_requires_grad(true);
  Tensor loss = sum_all(mul(x, x));
  backward(loss);
  backward(loss);
  CHECK(x.grad().get(0) == doctest::Approx(4.0));
  CHECK(x.grad().get(1) == doctest::Approx(8.0));
}

TEST_CASE("non-scalar loss is rejected") {
  Tensor x = Tensor::zeros({2}, DType::F64).set_requires_grad(true);
  CHECK_THROWS(backward(mul(x, x)));
}

TEST_CASE("shape mismatch is rejected with both shapes reported") {
  Tensor a = Tensor::zeros({2, 3}, DType::F64);
  Tensor b = Tensor::zeros({2, 4}, DType::F64);
  try {
    add(a, b);
    FAIL("expected an exception");
  } catch (const std::exception& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[2,4]") != std::string::npos);
  }
}

TEST_CASE("broadcasting over leading axes") {
  Rng rng(3);
  Tensor a = random_tensor({4, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  Tensor y = add(a, b);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(y.get(i * 3 + j) == doctest::Approx(a.get(i * 3 + j) + b.get(j)));
}

namespace {

// Independent brute-force references, plain nested loops.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n}, a.dtype());
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0;
      for (int64_t p = 0; p < k; ++p) acc += a.get(i * k + p) * b.get(p * n + j);
      c.set(i * n + j, acc);
    }
  return c;
}

Tensor softmax_oracle(const Tensor& x) {  // last axis
  int64_t d = x.dim(x.rank() - 1), rows = x.numel() / d;
  Tensor y(x.shape(), x.dtype());
  for (int64_t r = 0; r < rows; ++r) {
    double m = x.get(r * d);
    for (int64_t i = 1; i < d; ++i) m = std::max(m, x.get(r * d + i));
    double z = 0;
    for (int64_t i = 0; i < d; ++i) z += std::exp(x.get(r * d + i) - m);
    for (int64_t i = 0; i < d; ++i) y.set(r * d + i, std::exp(x.get(r * d + i) - m) / z);
  }
  return y;
}

Tensor conv3d_oracle(const Tensor& x, const Tensor& w, std::array<int, 3> s,
                     std::array<int, 3> p) {
  int64_t ci = x.dim(0), di = x.dim(1), hi = x.dim(2), wi = x.dim(3);
  int64_t co = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  int64_t od = (di + 2 * p[0] - kd) / s[0] + 1;
  int64_t oh = (hi + 2 * p[1] - kh) / s[1] + 1;
  int64_t ow = (wi + 2 * p[2] - kw) / s[2] + 1;
  Tensor y({co, od, oh, ow}, x.dtype());
  for (int64_t oc = 0; oc < co; ++oc)
    for (int64_t oz = 0; oz < od; ++oz)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          double acc = 0;
          for (int64_t ic = 0; ic < ci; ++ic)
            for (int64_t kz = 0; kz < kd; ++kz)
              for (int64_t ky = 0; ky < kh; ++ky)
                for (int64_t kx = 0; kx < kw; ++kx) {
                  int64_t iz = oz * s[0] - p[0] + kz;
                  int64_t iy = oy * s[1] - p[1] + ky;
                  int64_t ix = ox * s[2] - p[2] + kx;
                  if (iz < 0 || iz >= di || iy < 0 || iy >= hi || ix < 0 || ix >= wi)
                    continue;
                  acc += x.get(((ic * di + iz) * hi + iy) * wi + ix) *
                         w.get((((oc * ci + ic) * kd + kz) * kh + ky) * kw + kx);
                }
          y.set(((oc * od + oz) * oh + oy) * ow + ox, acc);
        }
  return y;
}

}  // namespace

TEST_CASE("matmul matches the brute-force oracle exactly in 64-bit") {
  Rng rng(5);
  for (int it = 0; it < 10; ++it) {
    int64_t m = 1 + rng.uniform_int(6), k = 1 + rng.uniform_int(6),
            n = 1 + rng.uniform_int(6);
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    CHECK(bitwise_equal(matmul(a, b), matmul_oracle(a, b)));
  }
}

TEST_CASE("softmax matches the brute-force oracle exactly in 64-bit") {
  Rng rng(6);
  for (int it = 0; it < 10; ++it) {
    Tensor x = random_tensor({2 + rng.uniform_int(4), 1 + rng.uniform_int(7)}, rng, 2.0);
    CHECK(bitwise_equal(softmax(x, 1), softmax_oracle(x)));
  }
}

TEST_CASE("conv3d: 1x1x1 identity filter returns the input") {
  Rng rng(7);
  Tensor x = random_tensor({1, 3, 4, 5}, rng);
  Tensor w = Tensor::full({1, 1, 1, 1, 1}, 1.0, DType::F64);
  CHECK(bitwise_equal(conv3d(x, w, Tensor()), x));
}

TEST_CASE("conv3d: all-ones kernel over a constant volume") {
  Tensor x = Tensor::full({1, 5, 5, 5}, 2.0, DType::F64);
  Tensor w = Tensor::full({1, 1, 3, 3, 3}, 1.0, DType::F64);
  Tensor y = conv3d(x, w, Tensor());
  REQUIRE(y.shape() == Shape{1, 3, 3, 3});
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.get(i) == doctest::Approx(54.0));
}

TEST_CASE("conv3d matches the nested-loop oracle exactly in 64-bit") {
  Rng rng(8);
  Tensor x = random_tensor({2, 5, 5, 5}, rng);
  Tensor w = random_tensor({3, 2, 3, 3, 3}, rng);
  SUBCASE("no padding") {
    CHECK(bitwise_equal(conv3d(x, w, Tensor()), conv3d_oracle(x, w, {1, 1, 1}, {0, 0, 0})));
  }
  SUBCASE("stride and padding") {
    CHECK(bitwise_equal(conv3d(x, w, Tensor(), {2, 1, 2}, {1, 1, 1}),
                        conv3d_oracle(x, w, {2, 1, 2}, {1, 1, 1})));
  }
}

TEST_CASE("conv3d rejects non-positive output extents") {
  Tensor x = Tensor::zeros({1, 2, 2, 2}, DType::F64);
  Tensor w = Tensor::zeros({1, 1, 3, 3, 3}, DType::F64);
  CHECK_THROWS(conv3d(x, w, Tensor()));
}

TEST_CASE("backward is bit-deterministic across runs") {
  Rng rng(9);
  Tensor x = random_tensor({4, 6}, rng);
  Tensor w = random_tensor({6, 5}, rng);
  Tensor grads[2];
  for (int run = 0; run < 2; ++run) {
    Tensor xx = x.clone().set_requires_grad(true);
    Tensor y = softmax(matmul(relu(xx), w), 1);
    backward(sum_all(mul(y, y)));
    grads[run] = xx.grad().clone();
  }
  CHECK(bitwise_equal(grads[0], grads[1]));
}

TEST_CASE("results are independent of the thread count") {
  Rng rng(19);
  Tensor x = random_tensor({2, 10, 11, 12}, rng);
  Tensor w = random_tensor({4, 2, 3, 3, 3}, rng);
  set_num_threads(1);
  Tensor serial = conv3d(x, w, Tensor());
  set_num_threads(4);
  Tensor parallel = conv3d(x, w, Tensor());
  set_num_threads(0);
  CHECK(bitwise_equal(serial, parallel));
}

TEST_CASE("gradient check battery over every differentiable operation") {
  Rng rng(10);
  auto scalarize = [](const Tensor& t) {
    // mix the outputs so every element matters
    Tensor m(t.shape(), t.dtype());
    for (int64_t i = 0; i < m.numel(); ++i) m.set(i, 0.1 + 0.01 * (double)(i % 17));
    return sum_all(mul(t, m));
  };

  auto check_unary = [&](const char* name, auto&& fn, double lo, double hi) {
    CAPTURE(name);
    Tensor x({3, 4}, DType::F64);
    for (int64_t i = 0; i < x.numel(); ++i) x.set(i, rng.uniform(lo, hi));
    double err = grad_check([&](const std::vector<Tensor>& in) { return scalarize(fn(in[0])); },
                            {x});
    CHECK(err < 1e-6);
  };

  check_unary("relu", [](const Tensor& t) { return relu(t); }, 0.1, 2.0);
  check_unary("softplus", [](const Tensor& t) { return softplus(t); }, -2.0, 2.0);
  check_unary("sigmoid", [](const Tensor& t) { return sigmoid(t); }, -2.0, 2.0);
  check_unary("exp", [](const Tensor& t) { return exp(t); }, -1.0, 1.0);
  check_unary("log", [](const Tensor& t) { return log(t); }, 0.5, 3.0);
  check_unary("sqrt", [](const Tensor& t) { return sqrt(t); }, 0.5, 3.0);
  check_unary("sin", [](const Tensor& t) { return sin(t); }, -2.0, 2.0);
  check_unary("cos", [](const Tensor& t) { return cos(t); }, -2.0, 2.0);
  check_unary("abs", [](const Tensor& t) { return abs(t); }, 0.2, 2.0);
  check_unary("reciprocal", [](const Tensor& t) { return reciprocal(t); }, 0.5, 2.0);
  check_unary("neg", [](const Tensor& t) { return neg(t); }, -1.0, 1.0);
  check_unary("softmax", [](const Tensor& t) { return softmax(t, 1); }, -2.0, 2.0);
  check_unary("mean_sorted", [](const Tensor& t) { return mean_sorted(t, 0); }, -2.0, 2.0);

  SUBCASE("binary and matmul") {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng, 0.5);
    for (int64_t i = 0; i < b.numel(); ++i) b.set(i, b.get(i) + (b.get(i) >= 0 ? 1.0 : -1.0));
    double err = grad_check(
        [&](const std::vector<Tensor>& in) {
          return scalarize(div(mul(add(in[0], in[1]), sub(in[0], in[1])), in[1]));
        },
        {a, b});
    CHECK(err < 1e-6);
    Tensor m1 = random_tensor({3, 5}, rng), m2 = random_tensor({5, 4}, rng);
    err = grad_check(
        [&](const std::vector<Tensor>& in) { return scalarize(matmul(in[0], in[1])); },
        {m1, m2});
    CHECK(err < 1e-6);
    Tensor bm1 = random_tensor({2, 3, 4}, rng), bm2 = random_tensor({2, 5, 4}, rng);
    err = grad_check(
        [&](const std::vector<Tensor>& in) {
          return scalarize(batched_matmul(in[0], in[1], false, true));
        },
        {bm1, bm2});
    CHECK(err < 1e-6);
  }

  SUBCASE("layer_norm, concat, slice, permute, reductions") {
    Tensor x = random_tensor({4, 6}, rng);
    Tensor gain = random_tensor({6}, rng, 0.3);
    Tensor bias = random_tensor({6}, rng, 0.3);
    double err = grad_check(
        [&](const std::vector<Tensor>& in) {
          return scalarize(layer_norm(in[0], in[1], in[2]));
        },
        {x, gain, bias});
    CHECK(err < 1e-6);
    Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 2}, rng);
    err = grad_check(
        [&](const std::vector<Tensor>& in) {
          Tensor c = concat({in[0], in[1]}, 1);
          return scalarize(slice(permute(c, {1, 0}), 0, 1, 3));
        },
        {a, b});
    CHECK(err < 1e-6);
    err = grad_check(
        [&](const std::vector<Tensor>& in) {
          return scalarize(add(mean(in[0], 1), sum(in[0], 1)));
        },
        {a});
    CHECK(err < 1e-6);
  }

  SUBCASE("index_select, expand_rows, scale_rows") {
    Tensor x = random_tensor({5, 3}, rng);
    Tensor s = random_tensor({5}, rng);
    double err = grad_check(
        [&](const std::vector<Tensor>& in) {
          Tensor sel = index_select(in[0], {4, 1, 1, 0});
          return scalarize(expand_rows(sel, {0, 2, 3, 5}, 7));
        },
        {x});
    CHECK(err < 1e-6);
    err = grad_check(
        [&](const std::vector<Tensor>& in) { return scalarize(scale_rows(in[0], in[1])); },
        {x, s});
    CHECK(err < 1e-6);
  }

  SUBCASE("conv variants and pooling") {
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor w = random_tensor({2, 2, 2, 3, 3}, rng, 0.5);
    Tensor b = random_tensor({2}, rng, 0.2);
    double err = grad_check(
        [&](const std::vector<Tensor>& in) {
          return scalarize(conv3d(in[0], in[1], in[2], {1, 1, 1}, {0, 1, 1}));
        },
        {x, w, b});
    CHECK(err < 1e-6);
    Tensor wt = random_tensor({2, 3, 2, 2, 2}, rng, 0.5);
    err = grad_check(
        [&](const std::vector<Tensor>& in) {
          return scalarize(conv_transpose3d(in[0], in[1], Tensor(), {2, 2, 2}, {1, 1, 1}));
        },
        {x, wt});
    CHECK(err < 1e-6);
    err = grad_check(
        [&](const std::vector<Tensor>& in) {
          return scalarize(avg_pool3d(in[0], {2, 2, 2}, {2, 2, 2}));
        },
        {x});
    CHECK(err < 1e-6);
    err = grad_check(
        [&](const std::vector<Tensor>& in) {
          return scalarize(upsample_nearest3d(in[0], {2, 2, 2}));
        },
        {x});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("grad_check on a quadratic form is near machine precision") {
  Rng rng(12);
  Tensor x = random_tensor({4}, rng);
  double err = grad_check(
      [](const std::vector<Tensor>& in) { return sum_all(mul(in[0], in[0])); }, {x});
  CHECK(err < 1e-9);
}

TEST_CASE("grad_check on a constant function reports zero") {
  Tensor x = Tensor::full({3}, 2.0, DType::F64);
  double err = grad_check(
      [](const std::vector<Tensor>& in) {
        return mul_scalar(sum_all(mul_scalar(in[0], 0.0)), 1.0);
      },
      {x});
  CHECK(err == doctest::Approx(0.0));
}

TEST_SUITE_END();
