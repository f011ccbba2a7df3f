#include "hummorph/fusion.hpp"

namespace hummorph {

Tensor normalize_points(const Tensor& x_c, const WeightGridSpec& spec) {
  Vec3 c = 0.5 * (spec.bbox.min + spec.bbox.max);
  Vec3 h = 0.5 * spec.bbox.extent();
  DType dt = x_c.dtype();
  Tensor shift = Tensor::from_data({3}, {-c.x(), -c.y(), -c.z()}, dt);
  Tensor scale = Tensor::from_data({3}, {1.0 / h.x(), 1.0 / h.y(), 1.0 / h.z()}, dt);
  return mul(add(x_c, shift), scale);
}

namespace {

int encoded_dim(int d, int n_freq) { return d * (1 + 2 * n_freq); }

}  // namespace

FusionModule::FusionModule(ParamStore& ps, const std::string& prefix,
                           const ModelConfig& cfg, int joint_count, int pixel_feat_dim) {
  dim = cfg.fusion_dim;
  heads = cfg.fusion_heads;
  pe_pos = cfg.pe_freq_pos;
  pe_dir = cfg.pe_freq_dir;
  int ctx = encoded_dim(3, pe_pos) + encoded_dim(3, pe_dir) + encoded_dim(3, pe_pos) +
            joint_count;
  int coarse_in = cfg.feature_dim + ctx;
  int pixel_in = pixel_feat_dim + ctx + encoded_dim(3, pe_dir);
  align_coarse = Mlp(ps, prefix + ".align_coarse", {coarse_in, cfg.fusion_hidden, dim});
  align_pixel = Mlp(ps, prefix + ".align_pixel", {pixel_in, cfg.fusion_hidden, dim});
  align_query = Mlp(ps, prefix + ".align_query", {ctx, cfg.fusion_hidden, dim});
  encoder = TransformerLayer(ps, prefix + ".encoder", dim, heads, cfg.fusion_hidden);
  final_key = Linear(ps, prefix + ".final_key", dim, dim);
  final_value = Linear(ps, prefix + ".final_value", dim, dim);
}

Tensor FusionModule::context_encoding(const QueryContext& ctx) const {
  return concat({positional_encode(ctx.x_c_norm, pe_pos),
                 positional_encode(ctx.view_dir, pe_dir),
                 positional_encode(ctx.nearest_joint, pe_pos), ctx.weights},
                1);
}

Tensor FusionModule::forward(const Tensor& f_glob, const Tensor& f_vox,
                             const std::vector<Tensor>& f_pix,
                             const std::vector<Tensor>& obs_dir,
                             const std::vector<Tensor>& avail,
                             const QueryContext& ctx) const {
  check(f_pix.size() == obs_dir.size() && f_pix.size() == avail.size(),
        "fusion: per-view inputs differ in count");
  int64_t n = f_glob.dim(0);
  int64_t t = (int64_t)f_pix.size();
  Tensor ctx_enc = context_encoding(ctx);

  std::vector<Tensor> tokens;
  tokens.push_back(reshape(align_coarse.forward(concat({f_glob, ctx_enc}, 1)), {n, 1, dim}));
  tokens.push_back(reshape(align_coarse.forward(concat({f_vox, ctx_enc}, 1)), {n, 1, dim}));
  for (int64_t i = 0; i < t; ++i) {
    Tensor in = concat({f_pix[(size_t)i], ctx_enc,
                        positional_encode(obs_dir[(size_t)i], pe_dir)}, 1);
    tokens.push_back(reshape(align_pixel.forward(in), {n, 1, dim}));
  }
  Tensor seq = concat(tokens, 1);  // [N, 2+T, dim]

  Tensor mask({n, 2 + t}, f_glob.dtype());
  for (int64_t i = 0; i < n; ++i) {
    mask.set(i * (2 + t) + 0, 1.0);
    mask.set(i * (2 + t) + 1, 1.0);
    for (int64_t v = 0; v < t; ++v)
      mask.set(i * (2 + t) + 2 + v, avail[(size_t)v].get(i) > 0 ? 1.0 : 0.0);
  }

  Tensor enc = encoder.forward(seq, mask);
  Tensor flat = reshape(enc, {n * (2 + t), dim});
  Tensor k = reshape(final_key.forward(flat), {n, 2 + t, dim});
  Tensor v = reshape(final_value.forward(flat), {n, 2 + t, dim});
  Tensor q = reshape(align_query.forward(ctx_enc), {n, 1, dim});
  return reshape(attend_small(q, k, v, mask, heads), {n, dim});
}

}  // namespace hummorph
