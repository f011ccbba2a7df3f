#include <chrono>
#include <cstdio>
#include "hummorph/driver.hpp"
#include "hummorph/threading.hpp"
using namespace hummorph;
using Clock = std::chrono::steady_clock;
static Clock::time_point T0;
static void tick(const char* name) {
  auto now = Clock::now();
  std::printf("%-22s %7.1f ms\n", name, std::chrono::duration<double,std::milli>(now-T0).count());
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
  NoGradGuard ng;
  SceneEncoding enc = model.encode(obs, false);
  Aabb box = model.target_bbox(pose0);
  PatchRays rays = build_patch_rays(cams[2], box, 16, 16, 32, 32, 32, nullptr);
  std::printf("rays %lld pts %lld\n", (long long)rays.ray_count(), (long long)rays.point_count());
  // replicate render_patch stages
  DType dt = DType::F32;
  for (int rep = 0; rep < 2; ++rep) {
  T0 = Clock::now();
  LbsConstants lbs_t = make_lbs_constants(canonicalizing_transforms(skel, pose0), dt);
  tick("lbs consts");
  BackwardDeformed bd = backward_deform(rays.points, lbs_t, enc.w_rt, model.spec_);
  tick("backward_deform");
  std::vector<int64_t> valid_idx;
  for (int64_t i = 0; i < (int64_t)bd.flags.size(); ++i) if (bd.flags[i]) valid_idx.push_back(i);
  Tensor x_c = index_select(bd.x_c, valid_idx);
  Tensor w_p = index_select(bd.w_p, valid_idx);
  std::printf("   valid %zu\n", valid_idx.size());
  tick("select");
  Tensor w_c = sample_canonical(enc.w_rt, model.spec_, x_c);
  Tensor w_c_sum = sum(w_c, 1);
  tick("w_c sample");
  Tensor f_vox = sample_volume(enc.v_rt, model.spec_, x_c);
  Tensor f_glob = sample_triplane(enc.planes_rt, x_c, model.spec_);
  tick("f_vox+f_glob");
  int64_t nv = x_c.dim(0);
  Tensor zero_trans = Tensor::zeros({12, 3}, dt);
  Tensor dirs_full({(int64_t)rays.point_count(), 3}, dt);
  Tensor vd_raw = lbs_blend(index_select(dirs_full, valid_idx), w_p, lbs_t.rot, zero_trans);
  Tensor view_dir = scale_rows(vd_raw, reciprocal(sqrt(add_scalar(sum(mul(vd_raw, vd_raw), 1), 1e-12))));
  (void)view_dir;
  Tensor jpos({nv, 3}, dt);
  for (int64_t i = 0; i < nv; ++i) {
    Vec3 p(x_c.get(i*3), x_c.get(i*3+1), x_c.get(i*3+2));
    const Vec3& j = skel.rest_positions[(size_t)nearest_joint(skel, p)];
    for (int d2 = 0; d2 < 3; ++d2) jpos.set(i*3+d2, j[d2]);
  }
  tick("dirs+njv");
  QueryContext ctx;
  ctx.x_c_norm = normalize_points(x_c, model.spec_);
  ctx.view_dir = jpos; // placeholder same shape
  ctx.nearest_joint = sub(jpos, x_c);
  ctx.weights = w_c;
  std::vector<Tensor> f_pix, obs_dirs, avails;
  for (size_t t = 0; t < enc.featmaps_rt.size(); ++t) {
    Tensor x_o = lbs_blend(x_c, w_c, enc.obs_lbs[t].rot_inv, enc.obs_lbs[t].trans_inv);
    Tensor rot({3,3}, dt), tr({3}, dt);
    for (int a = 0; a < 3; ++a) { for (int b2 = 0; b2 < 3; ++b2) rot.set(a*3+b2, cams[t].extr.rot(a,b2)); tr.set(a, cams[t].extr.trans[a]); }
    auto [uv, depth] = project_points(x_o, rot, tr, cams[t].intr.fx, cams[t].intr.fy, cams[t].intr.cx, cams[t].intr.cy);
    Tensor avail({nv}, dt);
    for (int64_t i = 0; i < nv; ++i) avail.set(i, 1.0);
    f_pix.push_back(scale_rows(grid_sample_2d(enc.featmaps_rt[t], mul_scalar(uv, 0.25)), avail));
    obs_dirs.push_back(ctx.nearest_joint);
    avails.push_back(avail);
  }
  tick("pixel feats x2");
  Tensor f = model.fusion.forward(f_glob, f_vox, f_pix, obs_dirs, avails, ctx);
  tick("fuse");
  RadianceDecoder::Out dec = model.decoder.decode(ctx.x_c_norm, f);
  tick("decode");
  Tensor sigma_full = expand_rows(dec.sigma, valid_idx, rays.point_count());
  Tensor color_full = expand_rows(dec.color, valid_idx, rays.point_count());
  Tensor delta({rays.ray_count(), 32}, dt);
  Tensor bg = Tensor::zeros({3}, dt);
  auto [colors, opacity] = composite_rays(reshape(sigma_full, {rays.ray_count(), 32}), reshape(color_full, {rays.ray_count(), 32, 3}), delta, bg);
  (void)colors; (void)opacity;
  tick("composite");
  }
  return 0;
}
