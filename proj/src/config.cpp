#include "hummorph/config.hpp"

#include <fstream>
#include <json.hpp>

namespace hummorph {

using nlohmann::json;

namespace {

json model_to_json(const ModelConfig& m) {
  json j;
  j["grid_nx"] = m.grid_nx;
  j["grid_ny"] = m.grid_ny;
  j["grid_nz"] = m.grid_nz;
  j["bbox_margin"] = m.bbox_margin;
  j["sigma_perp"] = m.sigma_perp;
  j["w0_floor"] = m.w0_floor;
  j["feature_dim"] = m.feature_dim;
  j["cnn2d_width"] = m.cnn2d_width;
  j["unet3d_widths"] = m.unet3d_widths;
  j["latent_dim"] = m.latent_dim;
  j["triplane_res"] = m.triplane_res;
  j["fusion_dim"] = m.fusion_dim;
  j["fusion_hidden"] = m.fusion_hidden;
  j["fusion_heads"] = m.fusion_heads;
  j["pe_freq_pos"] = m.pe_freq_pos;
  j["pe_freq_dir"] = m.pe_freq_dir;
  j["pe_freq_xc"] = m.pe_freq_xc;
  j["nerf_layers"] = m.nerf_layers;
  j["nerf_width"] = m.nerf_width;
  j["nerf_skip"] = m.nerf_skip;
  j["samples_per_ray"] = m.samples_per_ray;
  j["bg_color"] = m.bg_color;
  j["use_delta_w"] = m.use_delta_w;
  return j;
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  m.grid_nx = j.value("grid_nx", m.grid_nx);
  m.grid_ny = j.value("grid_ny", m.grid_ny);
  m.grid_nz = j.value("grid_nz", m.grid_nz);
  m.bbox_margin = j.value("bbox_margin", m.bbox_margin);
  m.sigma_perp = j.value("sigma_perp", m.sigma_perp);
  m.w0_floor = j.value("w0_floor", m.w0_floor);
  m.feature_dim = j.value("feature_dim", m.feature_dim);
  m.cnn2d_width = j.value("cnn2d_width", m.cnn2d_width);
  m.unet3d_widths = j.value("unet3d_widths", m.unet3d_widths);
  m.latent_dim = j.value("latent_dim", m.latent_dim);
  m.triplane_res = j.value("triplane_res", m.triplane_res);
  m.fusion_dim = j.value("fusion_dim", m.fusion_dim);
  m.fusion_hidden = j.value("fusion_hidden", m.fusion_hidden);
  m.fusion_heads = j.value("fusion_heads", m.fusion_heads);
  m.pe_freq_pos = j.value("pe_freq_pos", m.pe_freq_pos);
  m.pe_freq_dir = j.value("pe_freq_dir", m.pe_freq_dir);
  m.pe_freq_xc = j.value("pe_freq_xc", m.pe_freq_xc);
  m.nerf_layers = j.value("nerf_layers", m.nerf_layers);
  m.nerf_width = j.value("nerf_width", m.nerf_width);
  m.nerf_skip = j.value("nerf_skip", m.nerf_skip);
  m.samples_per_ray = j.value("samples_per_ray", m.samples_per_ray);
  m.bg_color = j.value("bg_color", m.bg_color);
  m.use_delta_w = j.value("use_delta_w", m.use_delta_w);
  return m;
}

json train_to_json(const TrainConfig& t) {
  json j;
  j["lr_main"] = t.lr_main;
  j["lr_motion"] = t.lr_motion;
  j["motion_delay_iters"] = t.motion_delay_iters;
  j["grad_clip_l2"] = t.grad_clip_l2;
  j["patches_per_step"] = t.patches_per_step;
  j["patch_size"] = t.patch_size;
  j["observed_views_per_step"] = t.observed_views_per_step;
  j["iters"] = t.iters;
  j["lambda_mse"] = t.lambda_mse;
  j["lambda_consis"] = t.lambda_consis;
  j["lambda_near"] = t.lambda_near;
  j["eta_consis"] = t.eta_consis;
  j["use_gradient_proxy"] = t.use_gradient_proxy;
  j["noise_p_max"] = t.noise_p_max;
  j["noise_deg"] = t.noise_deg;
  j["noise_enabled"] = t.noise_enabled;
  j["adam_beta1"] = t.adam_beta1;
  j["adam_beta2"] = t.adam_beta2;
  j["adam_eps"] = t.adam_eps;
  j["seed"] = t.seed;
  return j;
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.lr_main = j.value("lr_main", t.lr_main);
  t.lr_motion = j.value("lr_motion", t.lr_motion);
  t.motion_delay_iters = j.value("motion_delay_iters", t.motion_delay_iters);
  t.grad_clip_l2 = j.value("grad_clip_l2", t.grad_clip_l2);
  t.patches_per_step = j.value("patches_per_step", t.patches_per_step);
  t.patch_size = j.value("patch_size", t.patch_size);
  t.observed_views_per_step = j.value("observed_views_per_step", t.observed_views_per_step);
  t.iters = j.value("iters", t.iters);
  t.lambda_mse = j.value("lambda_mse", t.lambda_mse);
  t.lambda_consis = j.value("lambda_consis", t.lambda_consis);
  t.lambda_near = j.value("lambda_near", t.lambda_near);
  t.eta_consis = j.value("eta_consis", t.eta_consis);
  t.use_gradient_proxy = j.value("use_gradient_proxy", t.use_gradient_proxy);
  t.noise_p_max = j.value("noise_p_max", t.noise_p_max);
  t.noise_deg = j.value("noise_deg", t.noise_deg);
  t.noise_enabled = j.value("noise_enabled", t.noise_enabled);
  t.adam_beta1 = j.value("adam_beta1", t.adam_beta1);
  t.adam_beta2 = j.value("adam_beta2", t.adam_beta2);
  t.adam_eps = j.value("adam_eps", t.adam_eps);
  t.seed = j.value("seed", t.seed);
  return t;
}

}  // namespace

std::string ModelConfig::to_json() const { return model_to_json(*this).dump(2); }

ModelConfig ModelConfig::from_json(const std::string& text) {
  return model_from_json(json::parse(text));
}

std::string TrainConfig::to_json() const { return train_to_json(*this).dump(2); }

TrainConfig TrainConfig::from_json(const std::string& text) {
  return train_from_json(json::parse(text));
}

std::string RunConfig::to_json() const {
  json j;
  j["model"] = model_to_json(model);
  j["train"] = train_to_json(train);
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  RunConfig rc;
  if (j.contains("model")) rc.model = model_from_json(j["model"]);
  if (j.contains("train")) rc.train = train_from_json(j["train"]);
  return rc;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

}  // namespace hummorph
