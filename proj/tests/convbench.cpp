#include <chrono>
#include <cstdio>
#include "hummorph/ops.hpp"
#include "hummorph/threading.hpp"
#include "hummorph/rng.hpp"
using namespace hummorph;
int main(int argc, char** argv) {
  set_num_threads(argc > 1 ? atoi(argv[1]) : 2);
  Rng rng(1);
  Tensor x({20, 16, 32, 32}, DType::F32);
  Tensor w({16, 20, 3, 3, 3}, DType::F32);
  for (int64_t i = 0; i < x.numel(); ++i) x.set(i, rng.normal());
  for (int64_t i = 0; i < w.numel(); ++i) w.set(i, rng.normal());
  double macs = 16.0*16*32*32 * 27 * 20;
  // forward only
  {
    NoGradGuard ng;
    conv3d(x, w, Tensor(), {1,1,1}, {1,1,1});
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 10; ++i) conv3d(x, w, Tensor(), {1,1,1}, {1,1,1});
    double s = std::chrono::duration<double>(std::chrono::steady_clock::now()-t0).count()/10;
    std::printf("conv fwd: %.1f ms  -> %.2f GMAC/s\n", s*1e3, macs/s/1e9);
  }
  // fwd+bwd
  x.set_requires_grad(true); w.set_requires_grad(true);
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 5; ++i) {
    Tensor y = conv3d(x, w, Tensor(), {1,1,1}, {1,1,1});
    backward(sum_all(y));
    x.drop_grad(); w.drop_grad();
  }
  double s = std::chrono::duration<double>(std::chrono::steady_clock::now()-t0).count()/5;
  std::printf("conv fwd+bwd: %.1f ms -> %.2f GMAC/s effective (3x macs)\n", s*1e3, 3*macs/s/1e9);
  // gemm bench
  {
    NoGradGuard ng;
    Tensor a({4096, 128}, DType::F32), b({128, 128}, DType::F32);
    for (int64_t i = 0; i < a.numel(); ++i) a.set(i, 0.5);
    for (int64_t i = 0; i < b.numel(); ++i) b.set(i, 0.5);
    matmul(a, b);
    auto t1 = std::chrono::steady_clock::now();
    for (int i = 0; i < 20; ++i) matmul(a, b);
    double sm = std::chrono::duration<double>(std::chrono::steady_clock::now()-t1).count()/20;
    std::printf("gemm 4096x128x128: %.1f ms -> %.2f GMAC/s\n", sm*1e3, 4096.0*128*128/sm/1e9);
  }
  return 0;
}
