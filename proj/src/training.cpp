#include "hummorph/training.hpp"

#include <chrono>
#include <cmath>

namespace hummorph {

Tensor loss_mse(const Tensor& render, const Tensor& gt) {
  check(render.shape() == gt.shape(), "loss_mse: shapes " + shape_str(render.shape()) +
                                          " vs " + shape_str(gt.shape()));
  check(render.rank() == 2 && render.dim(1) == 3, "loss_mse: expected [P,3] colors");
  Tensor diff = sub(render, gt);
  return mul_scalar(sum_all(mul(diff, diff)), 1.0 / (double)render.dim(0));
}

Tensor loss_consistency(const Tensor& d, double eta, int64_t n) {
  check(d.rank() == 1, "loss_consistency: expected a vector of residuals");
  check(n > 0, "loss_consistency: empty point set");
  Tensor mask({d.dim(0)}, d.dtype());
  for (int64_t i = 0; i < d.dim(0); ++i) mask.set(i, d.get(i) >= eta ? 1.0 : 0.0);
  return mul_scalar(sum_all(mul(d, mask)), 1.0 / (double)n);
}

Tensor loss_near(const Tensor& w, const Tensor& bone_dist) {
  check(w.shape() == bone_dist.shape(), "loss_near: weight grid " + shape_str(w.shape()) +
                                            " vs distances " +
                                            shape_str(bone_dist.shape()));
  int64_t vox = w.numel() / w.dim(0);
  return mul_scalar(sum_all(mul(w, bone_dist)), 1.0 / (double)vox);
}

Tensor gradient_difference(const Tensor& render, const Tensor& gt, int h, int w) {
  auto planes = [&](const Tensor& img) {  // [P,3] -> [3,h,w]
    return permute(reshape(img, {h, w, 3}), {2, 0, 1});
  };
  Tensor r = planes(render), g = planes(gt);
  Tensor total = Tensor::zeros({}, render.dtype());
  for (int scale = 0; scale < 2; ++scale) {
    if (r.dim(1) < 2 || r.dim(2) < 2) break;
    int64_t hh = r.dim(1), ww = r.dim(2);
    Tensor rdx = sub(slice(r, 2, 1, ww - 1), slice(r, 2, 0, ww - 1));
    Tensor gdx = sub(slice(g, 2, 1, ww - 1), slice(g, 2, 0, ww - 1));
    Tensor rdy = sub(slice(r, 1, 1, hh - 1), slice(r, 1, 0, hh - 1));
    Tensor gdy = sub(slice(g, 1, 1, hh - 1), slice(g, 1, 0, hh - 1));
    total = add(total, add(mean_all(abs(sub(rdx, gdx))), mean_all(abs(sub(rdy, gdy)))));
    r = avg_pool2d(r, {2, 2}, {2, 2});
    g = avg_pool2d(g, {2, 2}, {2, 2});
  }
  return total;
}

double psnr(const Tensor& render, const Tensor& gt) {
  check(render.shape() == gt.shape(), "psnr: shape mismatch");
  double mse = 0;
  for (int64_t i = 0; i < render.numel(); ++i) {
    double d = render.get(i) - gt.get(i);
    mse += d * d;
  }
  mse /= (double)render.numel();
  if (mse < 1e-10) return 99.0;
  return 10.0 * std::log10(1.0 / mse);
}

Pose perturb_pose(const Pose& pose, double magnitude_deg, uint64_t seed) {
  check(magnitude_deg >= 0, "perturb_pose: negative magnitude");
  if (magnitude_deg == 0) return pose;
  Rng rng(seed);
  Pose out = pose;
  double sigma = magnitude_deg * M_PI / 180.0;
  for (Quat& q : out.local_rotations) {
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    double len = axis.norm();
    if (len < 1e-12) axis = Vec3(1, 0, 0);
    else axis /= len;
    double angle = rng.normal(0, sigma);
    q = (Quat(Eigen::AngleAxisd(angle, axis)) * q).normalized();
  }
  for (int d = 0; d < 3; ++d) out.root_translation[d] += rng.normal(0, 0.01);
  return out;
}

Adam::Adam(ParamStore& params, const TrainConfig& cfg) : params_(params), cfg_(cfg) {
  for (const auto& [name, t] : params.all()) {
    m_.push_back(Tensor::zeros(t.shape(), t.dtype()));
    v_.push_back(Tensor::zeros(t.shape(), t.dtype()));
    motion_group_.push_back(name.rfind("volumorph_dw.", 0) == 0);
    steps_.push_back(0);
  }
}

double Adam::step(int iter) {
  // global pre-clip norm across every gradient
  double norm_sq = 0;
  const auto& all = params_.all();
  for (const auto& [name, t] : all) {
    if (!t.has_grad()) continue;
    Tensor g = t.grad();
    for (int64_t i = 0; i < g.numel(); ++i) {
      double x = g.get(i);
      norm_sq += x * x;
    }
  }
  double norm = std::sqrt(norm_sq);
  double scale = (cfg_.grad_clip_l2 > 0 && norm > cfg_.grad_clip_l2)
                     ? cfg_.grad_clip_l2 / norm
                     : 1.0;
  for (size_t p = 0; p < all.size(); ++p) {
    Tensor t = all[p].second;
    if (!t.has_grad()) continue;
    if (motion_group_[p] && iter < cfg_.motion_delay_iters) continue;
    double lr = motion_group_[p] ? cfg_.lr_motion : cfg_.lr_main;
    Tensor g = t.grad();
    int step_no = ++steps_[p];
    double bc1 = 1.0 - std::pow(cfg_.adam_beta1, step_no);
    double bc2 = 1.0 - std::pow(cfg_.adam_beta2, step_no);
    for (int64_t i = 0; i < t.numel(); ++i) {
      double gi = g.get(i) * scale;
      double mi = cfg_.adam_beta1 * m_[p].get(i) + (1 - cfg_.adam_beta1) * gi;
      double vi = cfg_.adam_beta2 * v_[p].get(i) + (1 - cfg_.adam_beta2) * gi * gi;
      m_[p].set(i, mi);
      v_[p].set(i, vi);
      double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.adam_eps);
      t.set(i, t.get(i) - update);
    }
  }
  return norm;
}

namespace {

// Patch placement biased toward the projected skeleton: the patch always
// overlaps the body's image-space bounding rectangle.
std::pair<int, int> pick_patch_origin(const Skeleton& skel, const Pose& pose,
                                      const Camera& cam, int patch, Rng& rng) {
  double umin = 1e9, umax = -1e9, vmin = 1e9, vmax = -1e9;
  for (const Vec3& j : posed_joint_positions(skel, pose)) {
    Projection p = project(j, cam);
    if (p.depth <= 0) continue;
    umin = std::min(umin, p.u);
    umax = std::max(umax, p.u);
    vmin = std::min(vmin, p.v);
    vmax = std::max(vmax, p.v);
  }
  int w = cam.intr.width, h = cam.intr.height;
  if (umax < umin) {  // body fully behind the camera
    return {(int)rng.uniform_int(std::max(1, w - patch)),
            (int)rng.uniform_int(std::max(1, h - patch))};
  }
  auto range = [&](double lo, double hi, int size) {
    int a = std::clamp((int)std::floor(lo) - patch / 2, 0, std::max(0, size - patch));
    int b = std::clamp((int)std::ceil(hi) - patch / 2, a, std::max(0, size - patch));
    return std::pair<int, int>(a, b);
  };
  auto [ax, bx] = range(umin, umax, w);
  auto [ay, by] = range(vmin, vmax, h);
  return {ax + (int)rng.uniform_int(bx - ax + 1), ay + (int)rng.uniform_int(by - ay + 1)};
}

Tensor image_patch(const Tensor& image, int x0, int y0, int w, int h) {
  int64_t ih = image.dim(1), iw = image.dim(2);
  (void)ih;
  Tensor out({(int64_t)w * h, 3}, image.dtype());
  for (int row = 0; row < h; ++row)
    for (int col = 0; col < w; ++col)
      for (int d = 0; d < 3; ++d)
        out.set(((int64_t)row * w + col) * 3 + d,
                image.get((d * ih + (y0 + row)) * iw + (x0 + col)));
  return out;
}

}  // namespace

LossBreakdown train_step(HumMorphModel& model, Adam& opt, const TrainBatch& batch,
                         const TrainConfig& cfg, int iter, Rng& rng) {
  auto t0 = std::chrono::steady_clock::now();
  LossBreakdown out;
  const int g_patches = cfg.patches_per_step;
  const int patch = cfg.patch_size;
  const int m = model.config().samples_per_ray;

  SceneEncoding enc = model.encode(batch.observed, /*two_stage=*/true);
  Aabb box = model.target_bbox(batch.target_pose);

  // geometry pass: patch placement, rays, and the total count of supported
  // query points (the consistency-loss denominator)
  std::vector<PatchRays> rays(g_patches);
  int64_t n_points_total = 0;
  for (int g = 0; g < g_patches; ++g) {
    auto [x0, y0] =
        pick_patch_origin(model.skeleton(), batch.target_pose, batch.target_cam, patch, rng);
    Rng jitter = rng.fork((uint64_t)g + 1);
    rays[g] = build_patch_rays(batch.target_cam, box, x0, y0, patch, patch, m, &jitter);
    if (rays[g].ray_count() == 0) continue;
    for (uint8_t f : model.support_flags(enc, batch.target_pose, rays[g].points))
      n_points_total += f;
  }

  double denom_pixels = (double)g_patches * patch * patch;
  for (int g = 0; g < g_patches; ++g) {
    PatchRender pr = model.render_patch(enc, batch.target_pose, rays[g],
                                        /*with_consis=*/true);
    Tensor gt = image_patch(batch.target_image, rays[g].x0, rays[g].y0, patch, patch);
    Tensor diff = sub(pr.rgb, gt);
    Tensor sse = sum_all(mul(diff, diff));
    out.mse += sse.item() / denom_pixels;
    Tensor patch_loss = mul_scalar(sse, cfg.lambda_mse / denom_pixels);
    if (pr.consis_d.defined() && n_points_total > 0) {
      Tensor consis = loss_consistency(pr.consis_d, cfg.eta_consis, n_points_total);
      out.consis += consis.item();
      patch_loss = add(patch_loss, mul_scalar(consis, cfg.lambda_consis));
    }
    if (cfg.use_gradient_proxy) {
      Tensor proxy = gradient_difference(pr.rgb, gt, patch, patch);
      out.proxy += proxy.item() / (double)g_patches;
      patch_loss = add(patch_loss, mul_scalar(proxy, 1.0 / (double)g_patches));
    }
    backward(patch_loss);
  }

  Tensor near = loss_near(enc.w, model.near_distances());
  out.near = near.item();
  Tensor near_scaled = mul_scalar(near, cfg.lambda_near);

  std::vector<std::pair<Tensor, Tensor>> seeds;
  seeds.push_back({near_scaled, Tensor::full({}, 1.0, near_scaled.dtype())});
  for (const auto& [orig, leaf] : enc.boundary())
    if (leaf.has_grad()) seeds.push_back({orig, leaf.grad()});
  backward_multi(seeds);

  out.grad_norm = opt.step(iter);
  model.params().zero_grads();

  out.total = out.proxy + cfg.lambda_mse * out.mse + cfg.lambda_consis * out.consis +
              cfg.lambda_near * out.near;
  out.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
  return out;
}

std::vector<int> observed_frame_indices(int n_observed, int sequence_length) {
  check(n_observed >= 1 && n_observed <= 4, "observed_frame_indices: 1..4 views");
  std::vector<int> all = {0, sequence_length / 4, sequence_length * 3 / 8,
                          sequence_length / 8};
  return std::vector<int>(all.begin(), all.begin() + n_observed);
}

int split_frame(int sequence_length) { return (sequence_length + 1) / 2; }

}  // namespace hummorph
