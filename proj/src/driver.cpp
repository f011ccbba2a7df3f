#include "hummorph/driver.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace hummorph {

Checkpoint make_checkpoint(const HumMorphModel& model, const RunConfig& rc,
                           uint64_t iteration) {
  Checkpoint ckpt;
  ckpt.iteration = iteration;
  ckpt.config_json = rc.to_json();
  for (const auto& [name, t] : model.params().all())
    ckpt.tensors.emplace_back(name, t.cast(DType::F32));
  return ckpt;
}

void apply_checkpoint(HumMorphModel& model, const Checkpoint& ckpt) {
  check(ckpt.tensors.size() == model.params().all().size(),
        "checkpoint: parameter count mismatch (" + std::to_string(ckpt.tensors.size()) +
            " vs " + std::to_string(model.params().all().size()) + ")");
  for (const auto& [name, src] : ckpt.tensors) {
    Tensor dst = model.params().get(name);
    check(dst.shape() == src.shape(), "checkpoint: shape mismatch for " + name + ": " +
                                          shape_str(src.shape()) + " vs " +
                                          shape_str(dst.shape()));
    for (int64_t i = 0; i < dst.numel(); ++i) dst.set(i, src.get(i));
  }
}

uint64_t frame_noise_seed(uint64_t base, int subject, int camera, int frame) {
  return mix_seed(mix_seed(mix_seed(base ^ fnv1a("pose-noise"), (uint64_t)subject),
                           (uint64_t)camera),
                  (uint64_t)frame);
}

void run_training(HumMorphModel& model, const std::vector<SceneSequence>& scenes,
                  const RunConfig& rc, const TrainDriverOptions& opts) {
  check(!scenes.empty(), "train: no scenes");
  const TrainConfig& cfg = rc.train;
  DType dt = model.dtype();

  // the corpus is tiny; keep every frame image resident
  std::vector<std::vector<Tensor>> images(scenes.size());
  for (size_t s = 0; s < scenes.size(); ++s)
    for (const FrameRecord& r : scenes[s].records)
      images[s].push_back(load_frame_image(scenes[s], r, dt));

  Adam opt(model.params(), cfg);
  std::ofstream log;
  if (!opts.log_path.empty()) {
    log.open(opts.log_path, std::ios::app);
    check(log.good(), "train: cannot open log " + opts.log_path);
  }

  for (int iter = 0; iter < cfg.iters; ++iter) {
    Rng rng(mix_seed(cfg.seed, (uint64_t)iter));
    int s = (int)rng.uniform_int((int64_t)scenes.size());
    const SceneSequence& seq = scenes[(size_t)s];
    int cam = (int)rng.uniform_int((int64_t)seq.cameras.size());
    int target = (int)rng.uniform_int(seq.frame_count);

    TrainBatch batch;
    batch.target_pose = seq.find(cam, target)->pose;
    batch.target_cam = seq.cameras[(size_t)cam];
    bool noisy = rng.uniform() < cfg.noise_probability(iter);
    std::vector<int> chosen;
    while ((int)chosen.size() < cfg.observed_views_per_step) {
      int f = (int)rng.uniform_int(seq.frame_count);
      if (f == target) continue;
      bool dup = false;
      for (int c : chosen) dup |= (c == f);
      if (dup && seq.frame_count > cfg.observed_views_per_step) continue;
      chosen.push_back(f);
    }
    for (int f : chosen) {
      const FrameRecord* rec = seq.find(cam, f);
      check(rec != nullptr, "train: missing record");
      Observation obs;
      obs.cam = seq.cameras[(size_t)cam];
      obs.pose = noisy ? perturb_pose(rec->pose, cfg.noise_deg,
                                      frame_noise_seed(cfg.seed, s, cam, f))
                       : rec->pose;
      obs.image = images[(size_t)s][(size_t)(rec - seq.records.data())];
      batch.observed.push_back(std::move(obs));
    }
    int target_record = (int)(seq.find(cam, target) - seq.records.data());
    batch.target_image = images[(size_t)s][(size_t)target_record];

    Rng step_rng(mix_seed(cfg.seed ^ fnv1a("step"), (uint64_t)iter));
    LossBreakdown loss = train_step(model, opt, batch, cfg, iter, step_rng);

    if (log.is_open()) {
      char line[256];
      std::snprintf(line, sizeof(line),
                    "iter %d mse %.6g consis %.6g near %.6g proxy %.6g total %.6g "
                    "grad_norm %.6g wall_ms %.1f\n",
                    iter, loss.mse, loss.consis, loss.near, loss.proxy, loss.total,
                    loss.grad_norm, loss.wall_ms);
      log << line;
      log.flush();
    }
    if (!opts.quiet && (iter % 25 == 0 || iter + 1 == cfg.iters)) {
      std::printf("iter %5d  total %.5f  mse %.5f  consis %.5f  near %.5f  |g| %.3f  %.0f ms\n",
                  iter, loss.total, loss.mse, loss.consis, loss.near, loss.grad_norm,
                  loss.wall_ms);
      std::fflush(stdout);
    }
    if (!opts.checkpoint_path.empty() && opts.checkpoint_every > 0 &&
        (iter + 1) % opts.checkpoint_every == 0) {
      save_checkpoint(opts.checkpoint_path, make_checkpoint(model, rc, (uint64_t)iter + 1));
    }
  }
  if (!opts.checkpoint_path.empty())
    save_checkpoint(opts.checkpoint_path, make_checkpoint(model, rc, (uint64_t)cfg.iters));
}

EvalResult evaluate(HumMorphModel& model, const std::vector<SceneSequence>& scenes,
                    const EvalOptions& opts) {
  check(!scenes.empty(), "eval: no test scenes");
  NoGradGuard ng;
  DType dt = model.dtype();
  EvalResult out;
  double sum = 0;
  for (size_t s = 0; s < scenes.size(); ++s) {
    const SceneSequence& seq = scenes[s];
    int cams = (int)seq.cameras.size();
    if (opts.max_cameras > 0) cams = std::min(cams, opts.max_cameras);
    std::vector<int> obs_idx = observed_frame_indices(opts.views, seq.frame_count);
    for (int cam = 0; cam < cams; ++cam) {
      std::vector<Observation> observed;
      for (int f : obs_idx) {
        const FrameRecord* rec = seq.find(cam, f);
        check(rec != nullptr, "eval: missing observed frame");
        Observation o;
        o.cam = seq.cameras[(size_t)cam];
        o.pose = opts.noise_deg > 0
                     ? perturb_pose(rec->pose, opts.noise_deg,
                                    frame_noise_seed(opts.seed, (int)s, cam, f))
                     : rec->pose;
        o.image = load_frame_image(seq, *rec, dt);
        observed.push_back(std::move(o));
      }
      SceneEncoding enc = model.encode(observed);
      int first = split_frame(seq.frame_count);
      int used = 0;
      for (int f = first; f < seq.frame_count; f += opts.target_stride) {
        if (opts.max_targets_per_seq > 0 && used >= opts.max_targets_per_seq) break;
        const FrameRecord* rec = seq.find(cam, f);
        if (!rec) continue;
        Tensor render = model.render_image(enc, rec->pose, seq.cameras[(size_t)cam],
                                           model.config().samples_per_ray);
        Tensor gt = image_rows(load_ppm((std::filesystem::path(seq.root) / rec->image)
                                            .string()),
                               dt);
        sum += psnr(render, gt);
        ++out.renders;
        ++used;
      }
    }
  }
  check(out.renders > 0, "eval: no target frames rendered");
  out.mean_psnr = sum / out.renders;
  return out;
}

}  // namespace hummorph
