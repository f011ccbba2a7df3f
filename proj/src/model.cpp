#include "hummorph/model.hpp"

#include <cmath>

namespace hummorph {

std::vector<std::pair<Tensor, Tensor>> SceneEncoding::boundary() const {
  std::vector<std::pair<Tensor, Tensor>> out;
  if (!two_stage) return out;
  out.push_back({w, w_rt});
  out.push_back({v, v_rt});
  for (int p = 0; p < 3; ++p) out.push_back({planes[p], planes_rt[p]});
  for (size_t i = 0; i < featmaps.size(); ++i) out.push_back({featmaps[i], featmaps_rt[i]});
  return out;
}

PatchRays build_patch_rays(const Camera& cam, const Aabb& box, int x0, int y0, int w,
                           int h, int m, Rng* jitter) {
  PatchRays out;
  out.x0 = x0;
  out.y0 = y0;
  out.w = w;
  out.h = h;
  out.m = m;
  for (int row = 0; row < h; ++row)
    for (int col = 0; col < w; ++col) {
      Ray ray = ray_for_pixel(x0 + col + 0.5, y0 + row + 0.5, cam);
      RaySamples s = sample_ray_in_box(ray, box, m, jitter);
      if (!s.hit) continue;
      out.hit_pixels.push_back((int64_t)row * w + col);
      out.dirs.push_back(ray.dir);
      for (const Vec3& p : s.points) out.points.push_back(p);
      out.samples.push_back(std::move(s));
    }
  return out;
}

HumMorphModel::HumMorphModel(const ModelConfig& cfg, const Skeleton& skel, DType dt,
                             uint64_t seed)
    : cfg_(cfg), skel_(skel), params_(dt, seed) {
  validate(skel_);
  spec_ = canonical_grid_spec(skel_, cfg.bbox_margin, cfg.grid_nx, cfg.grid_ny,
                              cfg.grid_nz);
  w0_ = init_heuristic(skel_, spec_, cfg.sigma_perp, dt, cfg.w0_floor);
  log_w0_ = Tensor(w0_.shape(), dt);
  for (int64_t i = 0; i < w0_.numel(); ++i) log_w0_.set(i, std::log(w0_.get(i)));

  int k = skel_.joint_count();
  near_dist_ = Tensor({k, spec_.nz, spec_.ny, spec_.nx}, dt);
  int64_t vox = spec_.voxel_count();
  for (int iz = 0; iz < spec_.nz; ++iz)
    for (int iy = 0; iy < spec_.ny; ++iy)
      for (int ix = 0; ix < spec_.nx; ++ix) {
        Vec3 x = spec_.voxel_center(ix, iy, iz);
        int64_t at = (int64_t)(iz * spec_.ny + iy) * spec_.nx + ix;
        for (int c = 0; c < k; ++c)
          near_dist_.set(c * vox + at, channel_distance(skel_, c, x));
      }
  voxel_centers_ = grid_voxel_centers(spec_, dt);

  int featmap_ch = cfg.feature_dim + 3;
  cnn = Cnn2dEncoder(params_, "cnn2d", cfg.cnn2d_width, cfg.feature_dim);
  bias_gen = BiasGenerator(params_, "motion_weights.bias_gen", k, cfg.grid_nz,
                           cfg.grid_ny, cfg.grid_nx, mix_seed(seed, fnv1a("bias_latent")));
  if (cfg.use_delta_w) {
    unet_dw = Unet3dAggregator(params_, "volumorph_dw.unet", featmap_ch,
                               cfg.unet3d_widths, cfg.feature_dim);
    dw_head = Conv3dLayer(params_, "volumorph_dw.head", cfg.feature_dim, k, {1, 1, 1},
                          {1, 1, 1}, {0, 0, 0}, Init::Zero);
  }
  unet_v = Unet3dAggregator(params_, "volumorph_v.unet", featmap_ch, cfg.unet3d_widths,
                            cfg.feature_dim);
  int64_t bottleneck_dim = (int64_t)cfg.unet3d_widths[2] * (cfg.grid_nz / 4) *
                           (cfg.grid_ny / 4) * (cfg.grid_nx / 4);
  latent_head = GlobalLatentHead(params_, "volumorph_v.latent", bottleneck_dim,
                                 cfg.latent_dim);
  triplane_dec = TriplaneDecoder(params_, "triplane_dec", cfg.latent_dim,
                                 cfg.triplane_res, cfg.feature_dim);
  fusion = FusionModule(params_, "fusion", cfg, k, featmap_ch);
  decoder = RadianceDecoder(params_, "nerf_mlp", cfg);
}

SceneEncoding HumMorphModel::encode(const std::vector<Observation>& obs, bool two_stage) {
  check(!obs.empty(), "encode: need at least one observed view");
  SceneEncoding enc;
  enc.two_stage = two_stage;
  DType dt = dtype();
  for (const Observation& o : obs) {
    validate(o.cam);
    enc.featmaps.push_back(cnn.forward(o.image));
    enc.obs_lbs.push_back(
        make_lbs_constants(canonicalizing_transforms(skel_, o.pose), dt));
    enc.obs_cams.push_back(o.cam);
  }
  Tensor bias = bias_gen.forward();
  enc.biased_log_w0 = add(log_w0_, bias);
  enc.w_init = softmax(enc.biased_log_w0, 0);

  if (cfg_.use_delta_w) {
    std::vector<Tensor> vols, masks;
    for (size_t t = 0; t < obs.size(); ++t) {
      UnprojectedView uv = unproject_undeform(enc.featmaps[t], enc.obs_cams[t],
                                              enc.obs_lbs[t], enc.w_init, spec_,
                                              voxel_centers_);
      vols.push_back(uv.volume);
      masks.push_back(uv.mask);
    }
    Unet3dAggregator::Result r = unet_dw.forward(vols, masks);
    enc.delta_w = dw_head.forward(r.combined);
    enc.w = combine_correction(enc.biased_log_w0, enc.delta_w);
  } else {
    enc.w = enc.w_init;
  }

  std::vector<Tensor> vols, masks;
  for (size_t t = 0; t < obs.size(); ++t) {
    UnprojectedView uv = unproject_undeform(enc.featmaps[t], enc.obs_cams[t],
                                            enc.obs_lbs[t], enc.w, spec_, voxel_centers_);
    vols.push_back(uv.volume);
    masks.push_back(uv.mask);
  }
  Unet3dAggregator::Result r = unet_v.forward(vols, masks);
  enc.v = r.combined;
  enc.z = latent_head.forward(r.bottlenecks);
  enc.planes = triplane_dec.forward(enc.z);

  if (two_stage) {
    enc.w_rt = enc.w.detach(true);
    enc.v_rt = enc.v.detach(true);
    for (int p = 0; p < 3; ++p) enc.planes_rt[p] = enc.planes[p].detach(true);
    for (const Tensor& f : enc.featmaps) enc.featmaps_rt.push_back(f.detach(true));
  } else {
    enc.w_rt = enc.w;
    enc.v_rt = enc.v;
    enc.planes_rt = enc.planes;
    enc.featmaps_rt = enc.featmaps;
  }
  return enc;
}

namespace {

Tensor unit_rows(const Tensor& v) {
  Tensor n = sqrt(add_scalar(sum(mul(v, v), 1), 1e-12));
  return scale_rows(v, reciprocal(n));
}

Tensor camera_constants_rot(const Camera& cam, DType dt) {
  Tensor rot({3, 3}, dt);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) rot.set(a * 3 + b, cam.extr.rot(a, b));
  return rot;
}

Tensor bg_patch(const std::array<double, 3>& bg, int64_t pixels, DType dt) {
  Tensor t({pixels, 3}, dt);
  for (int64_t i = 0; i < pixels; ++i)
    for (int d = 0; d < 3; ++d) t.set(i * 3 + d, bg[d]);
  return t;
}

}  // namespace

Aabb HumMorphModel::target_bbox(const Pose& p) const {
  return skeleton_bbox(skel_, p, cfg_.bbox_margin);
}

std::vector<uint8_t> HumMorphModel::support_flags(const SceneEncoding& enc,
                                                  const Pose& target,
                                                  const std::vector<Vec3>& x_p) const {
  NoGradGuard ng;
  LbsConstants lbs = make_lbs_constants(canonicalizing_transforms(skel_, target), dtype());
  PosedWeights pw = posed_weights(enc.w_rt, spec_, x_p, lbs);
  return pw.flags;
}

PatchRender HumMorphModel::render_patch(const SceneEncoding& enc, const Pose& target,
                                        const PatchRays& rays, bool with_consis) const {
  DType dt = dtype();
  int64_t pixels = (int64_t)rays.w * rays.h;
  PatchRender out;
  int64_t r = rays.ray_count();
  if (r == 0) {
    out.rgb = bg_patch(cfg_.bg_color, pixels, dt);
    out.opacity = Tensor::zeros({pixels}, dt);
    return out;
  }
  int64_t m = rays.m;
  int64_t n = r * m;
  LbsConstants lbs_t = make_lbs_constants(canonicalizing_transforms(skel_, target), dt);

  BackwardDeformed bd = backward_deform(rays.points, lbs_t, enc.w_rt, spec_);
  std::vector<int64_t> valid_idx;
  for (int64_t i = 0; i < n; ++i)
    if (bd.flags[(size_t)i]) valid_idx.push_back(i);
  int64_t nv = (int64_t)valid_idx.size();

  Tensor sigma_full, color_full;
  if (nv == 0) {
    sigma_full = Tensor::zeros({n, 1}, dt);
    color_full = Tensor::zeros({n, 3}, dt);
  } else {
    Tensor x_c = index_select(bd.x_c, valid_idx);
    Tensor w_p = index_select(bd.w_p, valid_idx);
    Tensor w_c = sample_canonical(enc.w_rt, spec_, x_c);
    Tensor w_c_sum = sum(w_c, 1);
    Tensor f_vox = sample_volume(enc.v_rt, spec_, x_c);
    Tensor f_glob = sample_triplane(enc.planes_rt, x_c, spec_);

    Tensor zero_trans = Tensor::zeros({(int64_t)skel_.joint_count(), 3}, dt);
    // target view directions blended into canonical space
    Tensor dirs_full({n, 3}, dt);
    for (int64_t ri = 0; ri < r; ++ri)
      for (int64_t mi = 0; mi < m; ++mi)
        for (int d = 0; d < 3; ++d)
          dirs_full.set((ri * m + mi) * 3 + d, rays.dirs[(size_t)ri][d]);
    Tensor view_dir =
        unit_rows(lbs_blend(index_select(dirs_full, valid_idx), w_p, lbs_t.rot, zero_trans));

    // vector to nearest joint, selection from values
    Tensor jpos({nv, 3}, dt);
    for (int64_t i = 0; i < nv; ++i) {
      Vec3 p(x_c.get(i * 3), x_c.get(i * 3 + 1), x_c.get(i * 3 + 2));
      const Vec3& j = skel_.rest_positions[(size_t)nearest_joint(skel_, p)];
      for (int d = 0; d < 3; ++d) jpos.set(i * 3 + d, j[d]);
    }
    QueryContext ctx;
    ctx.x_c_norm = normalize_points(x_c, spec_);
    ctx.view_dir = view_dir;
    ctx.nearest_joint = sub(jpos, x_c);
    ctx.weights = w_c;

    std::vector<Tensor> f_pix, obs_dirs, avails;
    for (size_t t = 0; t < enc.featmaps_rt.size(); ++t) {
      const Camera& ocam = enc.obs_cams[t];
      Tensor x_o = lbs_blend(x_c, w_c, enc.obs_lbs[t].rot_inv, enc.obs_lbs[t].trans_inv);
      Tensor rot = camera_constants_rot(ocam, dt);
      Tensor tr({3}, dt);
      for (int d = 0; d < 3; ++d) tr.set(d, ocam.extr.trans[d]);
      auto [uv, depth] = project_points(x_o, rot, tr, ocam.intr.fx, ocam.intr.fy,
                                        ocam.intr.cx, ocam.intr.cy);
      Tensor avail({nv}, dt);
      for (int64_t i = 0; i < nv; ++i) {
        double z = depth.get(i), u = uv.get(i * 2), v = uv.get(i * 2 + 1);
        bool ok = z > 1e-6 && u >= 0 && u <= ocam.intr.width && v >= 0 &&
                  v <= ocam.intr.height && w_c_sum.get(i) >= 1e-6;
        avail.set(i, ok ? 1.0 : 0.0);
      }
      f_pix.push_back(scale_rows(grid_sample_2d(enc.featmaps_rt[t], mul_scalar(uv, 0.25)),
                                 avail));
      Vec3 cc = ocam.center();
      Tensor center({3}, dt);
      for (int d = 0; d < 3; ++d) center.set(d, cc[d]);
      Tensor d_obs = unit_rows(sub(x_o, center));
      obs_dirs.push_back(unit_rows(lbs_blend(d_obs, w_c, enc.obs_lbs[t].rot, zero_trans)));
      avails.push_back(avail);
    }

    Tensor f = fusion.forward(f_glob, f_vox, f_pix, obs_dirs, avails, ctx);
    RadianceDecoder::Out dec = decoder.decode(ctx.x_c_norm, f);
    sigma_full = expand_rows(dec.sigma, valid_idx, n);
    color_full = expand_rows(dec.color, valid_idx, n);

    if (with_consis) {
      Tensor x_back = lbs_blend(x_c, w_c, lbs_t.rot_inv, lbs_t.trans_inv);
      Tensor x_p_v = index_select(points_to_tensor(rays.points, dt), valid_idx);
      Tensor diff = sub(x_p_v, x_back);
      out.consis_d = sum(mul(diff, diff), 1);
    }
  }
  out.n_points = nv;

  Tensor delta({r, m}, dt);
  for (int64_t ri = 0; ri < r; ++ri)
    for (int64_t mi = 0; mi < m; ++mi)
      delta.set(ri * m + mi, rays.samples[(size_t)ri].delta[(size_t)mi]);
  Tensor bg = Tensor::from_data({3}, {cfg_.bg_color[0], cfg_.bg_color[1], cfg_.bg_color[2]},
                                dt);
  auto [colors, opacity] = composite_rays(reshape(sigma_full, {r, m}),
                                          reshape(color_full, {r, m, 3}), delta, bg);

  // scatter hit rays into the patch; missed pixels keep the background
  Tensor missed({pixels, 3}, dt);
  std::vector<uint8_t> is_hit((size_t)pixels, 0);
  for (int64_t px : rays.hit_pixels) is_hit[(size_t)px] = 1;
  for (int64_t i = 0; i < pixels; ++i)
    for (int d = 0; d < 3; ++d)
      missed.set(i * 3 + d, is_hit[(size_t)i] ? 0.0 : cfg_.bg_color[(size_t)d]);
  out.rgb = add(expand_rows(colors, rays.hit_pixels, pixels), missed);
  out.opacity = expand_rows(opacity, rays.hit_pixels, pixels);
  return out;
}

Tensor HumMorphModel::render_image(const SceneEncoding& enc, const Pose& target,
                                   const Camera& cam, int samples, int tile) const {
  NoGradGuard ng;
  int w = cam.intr.width, h = cam.intr.height;
  Tensor out({(int64_t)w * h, 3}, dtype());
  Aabb box = target_bbox(target);
  for (int y0 = 0; y0 < h; y0 += tile)
    for (int x0 = 0; x0 < w; x0 += tile) {
      int tw = std::min(tile, w - x0), th = std::min(tile, h - y0);
      PatchRays rays = build_patch_rays(cam, box, x0, y0, tw, th, samples, nullptr);
      PatchRender pr = render_patch(enc, target, rays, false);
      for (int row = 0; row < th; ++row)
        for (int col = 0; col < tw; ++col) {
          int64_t src = (int64_t)row * tw + col;
          int64_t dst = (int64_t)(y0 + row) * w + (x0 + col);
          for (int d = 0; d < 3; ++d) out.set(dst * 3 + d, pr.rgb.get(src * 3 + d));
        }
    }
  return out;
}

}  // namespace hummorph
