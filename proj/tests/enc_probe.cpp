#include <cstdio>
#include <chrono>
#include "hummorph/driver.hpp"
#include "hummorph/threading.hpp"
using namespace hummorph;
using Clock = std::chrono::steady_clock;
static Clock::time_point T0;
static void tick(const char* name) {
  auto now = Clock::now();
  std::printf("%-18s %7.1f ms\n", name, std::chrono::duration<double,std::milli>(now-T0).count());
  T0 = now;
}
int main() {
  set_num_threads(2);
  ModelConfig mc;
  mc.feature_dim = 8; mc.cnn2d_width = 8; mc.unet3d_widths = {8, 16, 24};
  mc.fusion_dim = 32; mc.fusion_hidden = 64;
  mc.nerf_layers = 4; mc.nerf_width = 96; mc.nerf_skip = 3; mc.samples_per_ray = 32;
  Skeleton skel = Skeleton::humanoid12();
  HumMorphModel model(mc, skel, DType::F32, 7);
  SyntheticBody body = generate_subject(3);
  DatasetSpec ds; ds.cameras = 6;
  std::vector<Camera> cams = camera_ring(ds);
  MotionParams motion = sample_motion(skel, 5);
  Pose pose0 = sample_pose(motion, 12, 2, 8);
  std::vector<Observation> obs;
  for (int i = 0; i < 2; ++i) {
    OracleRender r = oracle_render(body, pose0, cams[i]);
    obs.push_back({image_to_tensor(r.image, DType::F32), cams[i], pose0});
  }
  // warm
  model.encode(obs, false);
  T0 = Clock::now();
  std::vector<Tensor> featmaps;
  for (auto& o : obs) featmaps.push_back(model.cnn.forward(o.image));
  tick("cnn x2");
  Tensor bias = model.bias_gen.forward();
  tick("bias_gen");
  Tensor biased = add(model.log_w0_, bias);
  Tensor w_init = softmax(biased, 0);
  tick("softmax w_init");
  std::vector<LbsConstants> lbs;
  for (auto& o : obs) lbs.push_back(make_lbs_constants(canonicalizing_transforms(skel, o.pose), DType::F32));
  std::vector<Tensor> vols, masks;
  for (size_t t = 0; t < obs.size(); ++t) {
    UnprojectedView uv = unproject_undeform(featmaps[t], cams[t], lbs[t], w_init, model.spec_, model.voxel_centers_);
    vols.push_back(uv.volume); masks.push_back(uv.mask);
  }
  tick("unproject x2");
  auto r1 = model.unet_dw.forward(vols, masks);
  tick("unet_dw fwd");
  Tensor dw = model.dw_head.forward(r1.combined);
  Tensor w = combine_correction(biased, dw);
  tick("dw head+combine");
  std::vector<Tensor> vols2, masks2;
  for (size_t t = 0; t < obs.size(); ++t) {
    UnprojectedView uv = unproject_undeform(featmaps[t], cams[t], lbs[t], w, model.spec_, model.voxel_centers_);
    vols2.push_back(uv.volume); masks2.push_back(uv.mask);
  }
  tick("unproject2 x2");
  auto r2 = model.unet_v.forward(vols2, masks2);
  tick("unet_v fwd");
  Tensor z = model.latent_head.forward(r2.bottlenecks);
  tick("latent");
  auto planes = model.triplane_dec.forward(z);
  tick("triplane");
  Tensor loss = add(add(sum_all(r2.combined), sum_all(w)), sum_all(planes[0]));
  tick("loss build");
  backward(loss);
  tick("backward all");
  return 0;
}
