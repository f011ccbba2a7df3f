#include <cstdio>
#include <chrono>
#include "hummorph/driver.hpp"
#include "hummorph/threading.hpp"

using namespace hummorph;
using Clock = std::chrono::steady_clock;
double ms(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

int main(int argc, char** argv) {
  set_num_threads(argc > 1 ? atoi(argv[1]) : 2);
  ModelConfig mc;
  mc.feature_dim = 8;
  mc.cnn2d_width = 8;
  mc.unet3d_widths = {8, 16, 24};
  mc.latent_dim = 512;
  mc.fusion_dim = 32;
  mc.fusion_hidden = 64;
  mc.nerf_layers = 4;
  mc.nerf_width = 96;
  mc.nerf_skip = 3;
  mc.samples_per_ray = 32;

  Skeleton skel = Skeleton::humanoid12();
  auto t0 = Clock::now();
  HumMorphModel model(mc, skel, DType::F32, 7);
  auto t1 = Clock::now();
  std::printf("model built: %.0f ms, %lld params\n", ms(t0, t1),
              (long long)model.params().total_scalars());

  // synthetic observations
  SyntheticBody body = generate_subject(3);
  DatasetSpec ds; ds.cameras = 6; ds.width = 64; ds.height = 64;
  std::vector<Camera> cams = camera_ring(ds);
  MotionParams motion = sample_motion(skel, 5);
  Pose pose0 = sample_pose(motion, 12, 2, 8);
  Pose pose1 = sample_pose(motion, 12, 5, 8);

  std::vector<Observation> obs;
  for (int i = 0; i < 2; ++i) {
    auto t = Clock::now();
    OracleRender r = oracle_render(body, i ? pose1 : pose0, cams[i]);
    std::printf("oracle render: %.0f ms\n", ms(t, Clock::now()));
    obs.push_back({image_to_tensor(r.image, DType::F32), cams[i], i ? pose1 : pose0});
  }

  auto t2 = Clock::now();
  SceneEncoding enc = model.encode(obs, true);
  auto t3 = Clock::now();
  std::printf("encode: %.0f ms\n", ms(t2, t3));

  Aabb box = model.target_bbox(pose0);
  Rng jit(1);
  PatchRays rays = build_patch_rays(cams[2], box, 24, 16, 16, 16, 32, &jit);
  std::printf("patch rays: %lld hit, %lld pts\n", (long long)rays.ray_count(),
              (long long)rays.point_count());
  auto t4 = Clock::now();
  PatchRender pr = model.render_patch(enc, pose0, rays, true);
  auto t5 = Clock::now();
  std::printf("render_patch fwd: %.0f ms (%lld valid pts)\n", ms(t4, t5), (long long)pr.n_points);

  Tensor loss = mul_scalar(sum_all(mul(pr.rgb, pr.rgb)), 0.5);
  auto t6 = Clock::now();
  backward(loss);
  auto t7 = Clock::now();
  std::printf("patch backward: %.0f ms\n", ms(t6, t7));

  std::vector<std::pair<Tensor, Tensor>> seeds;
  for (auto& [orig, leaf] : enc.boundary())
    if (leaf.has_grad()) seeds.push_back({orig, leaf.grad()});
  std::printf("boundary seeds: %zu\n", seeds.size());
  auto t8 = Clock::now();
  backward_multi(seeds);
  auto t9 = Clock::now();
  std::printf("encoder backward: %.0f ms\n", ms(t8, t9));

  // full train step timing
  TrainConfig tc;
  tc.patches_per_step = 2;
  tc.patch_size = 16;
  tc.motion_delay_iters = 100;
  Adam opt(model.params(), tc);
  TrainBatch batch;
  batch.target_pose = pose0;
  batch.target_cam = cams[2];
  OracleRender gt = oracle_render(body, pose0, cams[2]);
  batch.target_image = image_to_tensor(gt.image, DType::F32);
  batch.observed = obs;
  for (int it = 0; it < 3; ++it) {
    Rng rng(100 + it);
    auto ta = Clock::now();
    LossBreakdown lb = train_step(model, opt, batch, tc, it, rng);
    std::printf("train_step %d: total %.5f mse %.5f consis %.6f near %.4f |g| %.3f  %.0f ms\n",
                it, lb.total, lb.mse, lb.consis, lb.near, lb.grad_norm, lb.wall_ms);
    (void)ta;
  }
  // eval render timing
  auto te = Clock::now();
  Tensor img = model.render_image(enc, pose0, cams[2], 32);
  std::printf("render_image 64x64: %.0f ms\n", ms(te, Clock::now()));
  OracleRender gtv = oracle_render(body, pose0, cams[2]);
  std::printf("psnr vs gt (untrained): %.2f dB\n", psnr(img, image_rows(gtv.image, DType::F32)));
  return 0;
}
