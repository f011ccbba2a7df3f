#include "hummorph/networks.hpp"

#include <cmath>

namespace hummorph {

int norm_groups(int channels) {
  for (int g = std::min(8, channels); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

Linear::Linear(ParamStore& ps, const std::string& prefix, int in, int out, Init init,
               bool bias) {
  if (init == Init::HeNormal) {
    w = ps.create(prefix + ".w", {in, out}, Init::Normal01, std::sqrt(2.0 / in));
  } else {
    w = ps.create(prefix + ".w", {in, out}, init,
                  init == Init::Normal01 ? std::sqrt(1.0 / in) : 1.0);
  }
  if (bias) b = ps.create(prefix + ".b", {out}, Init::Zero);
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, w);
  return b.defined() ? add(y, b) : y;
}

GroupNormLayer::GroupNormLayer(ParamStore& ps, const std::string& prefix, int channels) {
  gain = ps.create(prefix + ".gain", {channels}, Init::Zero);
  gain.fill(1.0);
  bias = ps.create(prefix + ".bias", {channels}, Init::Zero);
  groups = norm_groups(channels);
}

Tensor GroupNormLayer::forward(const Tensor& x) const {
  int64_t c = x.dim(0);
  int64_t spatial = x.numel() / c;
  Tensor grouped = reshape(x, {groups, (c / groups) * spatial});
  Tensor normed = layer_norm(grouped, Tensor(), Tensor());
  Tensor rows = permute(reshape(normed, {c, spatial}), {1, 0});  // [S,C]
  rows = add(mul(rows, gain), bias);
  return reshape(permute(rows, {1, 0}), x.shape());
}

Conv3dLayer::Conv3dLayer(ParamStore& ps, const std::string& prefix, int in, int out,
                         std::array<int, 3> kernel, std::array<int, 3> stride_,
                         std::array<int, 3> pad_, Init init) {
  int64_t fan = (int64_t)in * kernel[0] * kernel[1] * kernel[2];
  if (init == Init::HeNormal) {
    w = ps.create(prefix + ".w", {out, in, kernel[0], kernel[1], kernel[2]}, Init::Normal01,
                  std::sqrt(2.0 / (double)fan));
  } else {
    w = ps.create(prefix + ".w", {out, in, kernel[0], kernel[1], kernel[2]}, init);
  }
  b = ps.create(prefix + ".b", {out}, Init::Zero);
  stride = stride_;
  pad = pad_;
}

Tensor Conv3dLayer::forward(const Tensor& x) const { return conv3d(x, w, b, stride, pad); }

ConvT3dLayer::ConvT3dLayer(ParamStore& ps, const std::string& prefix, int in, int out,
                           std::array<int, 3> kernel, std::array<int, 3> stride_,
                           std::array<int, 3> pad_, Init init) {
  int64_t fan = (int64_t)in * kernel[0] * kernel[1] * kernel[2];
  if (init == Init::HeNormal) {
    w = ps.create(prefix + ".w", {in, out, kernel[0], kernel[1], kernel[2]}, Init::Normal01,
                  std::sqrt(2.0 / (double)fan));
  } else {
    w = ps.create(prefix + ".w", {in, out, kernel[0], kernel[1], kernel[2]}, init);
  }
  b = ps.create(prefix + ".b", {out}, Init::Zero);
  stride = stride_;
  pad = pad_;
}

Tensor ConvT3dLayer::forward(const Tensor& x) const {
  return conv_transpose3d(x, w, b, stride, pad);
}

Mlp::Mlp(ParamStore& ps, const std::string& prefix, const std::vector<int>& dims) {
  for (size_t i = 0; i + 1 < dims.size(); ++i)
    layers.emplace_back(ps, prefix + ".l" + std::to_string(i), dims[i], dims[i + 1]);
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

AttentionBlock::AttentionBlock(ParamStore& ps, const std::string& prefix, int dim,
                               int heads_, bool output_proj) {
  q = Linear(ps, prefix + ".q", dim, dim);
  k = Linear(ps, prefix + ".k", dim, dim);
  v = Linear(ps, prefix + ".v", dim, dim);
  if (output_proj) out = Linear(ps, prefix + ".o", dim, dim);
  heads = heads_;
}

Tensor AttentionBlock::forward(const Tensor& tokens_q, const Tensor& tokens_kv,
                               const Tensor& mask) const {
  int64_t bq = tokens_q.dim(0), tq = tokens_q.dim(1), c = tokens_q.dim(2);
  int64_t tk = tokens_kv.dim(1);
  Tensor pq = reshape(q.forward(reshape(tokens_q, {bq * tq, c})), {bq, tq, c});
  Tensor pk = reshape(k.forward(reshape(tokens_kv, {bq * tk, c})), {bq, tk, c});
  Tensor pv = reshape(v.forward(reshape(tokens_kv, {bq * tk, c})), {bq, tk, c});
  Tensor att = attend_small(pq, pk, pv, mask, heads);
  if (!out) return att;
  return reshape(out->forward(reshape(att, {bq * tq, c})), {bq, tq, c});
}

TransformerLayer::TransformerLayer(ParamStore& ps, const std::string& prefix, int dim,
                                   int heads, int ff_hidden) {
  attn = AttentionBlock(ps, prefix + ".attn", dim, heads, true);
  ln1_gain = ps.create(prefix + ".ln1.gain", {dim}, Init::Zero);
  ln1_gain.fill(1.0);
  ln1_bias = ps.create(prefix + ".ln1.bias", {dim}, Init::Zero);
  ln2_gain = ps.create(prefix + ".ln2.gain", {dim}, Init::Zero);
  ln2_gain.fill(1.0);
  ln2_bias = ps.create(prefix + ".ln2.bias", {dim}, Init::Zero);
  ff1 = Linear(ps, prefix + ".ff1", dim, ff_hidden);
  ff2 = Linear(ps, prefix + ".ff2", ff_hidden, dim);
}

Tensor TransformerLayer::forward(const Tensor& tokens, const Tensor& mask) const {
  int64_t b = tokens.dim(0), t = tokens.dim(1), c = tokens.dim(2);
  Tensor att = attn.forward(tokens, tokens, mask);
  Tensor h = layer_norm(add(tokens, att), ln1_gain, ln1_bias);
  Tensor ff = reshape(ff2.forward(relu(ff1.forward(reshape(h, {b * t, c})))), {b, t, c});
  return layer_norm(add(h, ff), ln2_gain, ln2_bias);
}

namespace {

Tensor as_depth1(const Tensor& img) {  // [C,H,W] -> [C,1,H,W]
  return reshape(img, {img.dim(0), 1, img.dim(1), img.dim(2)});
}

Tensor drop_depth(const Tensor& vol) {  // [C,1,H,W] -> [C,H,W]
  return reshape(vol, {vol.dim(0), vol.dim(2), vol.dim(3)});
}

// Nearest upsample by 2 in H,W then crop to the skip's spatial size.
Tensor up2_to(const Tensor& x, const Tensor& skip) {
  Tensor u = upsample_nearest3d(x, {1, 2, 2});
  if (u.dim(2) != skip.dim(2)) u = slice(u, 2, 0, skip.dim(2));
  if (u.dim(3) != skip.dim(3)) u = slice(u, 3, 0, skip.dim(3));
  return u;
}

}  // namespace

Cnn2dEncoder::Cnn2dEncoder(ParamStore& ps, const std::string& prefix, int base_,
                           int out_ch_) {
  base = base_;
  out_ch = out_ch_;
  int b = base;
  auto k3 = std::array<int, 3>{1, 3, 3};
  auto s1 = std::array<int, 3>{1, 1, 1};
  auto s2 = std::array<int, 3>{1, 2, 2};
  auto p1 = std::array<int, 3>{0, 1, 1};
  stem_a = Conv3dLayer(ps, prefix + ".stem_a", 3, b, k3, s1, p1);
  stem_b = Conv3dLayer(ps, prefix + ".stem_b", b, b, k3, s1, p1);
  down1 = Conv3dLayer(ps, prefix + ".down1", b, 2 * b, k3, s2, p1);
  down1_b = Conv3dLayer(ps, prefix + ".down1_b", 2 * b, 2 * b, k3, s1, p1);
  down2 = Conv3dLayer(ps, prefix + ".down2", 2 * b, 4 * b, k3, s2, p1);
  down2_b = Conv3dLayer(ps, prefix + ".down2_b", 4 * b, 4 * b, k3, s1, p1);
  down3 = Conv3dLayer(ps, prefix + ".down3", 4 * b, 4 * b, k3, s2, p1);
  down3_b = Conv3dLayer(ps, prefix + ".down3_b", 4 * b, 4 * b, k3, s1, p1);
  up2 = Conv3dLayer(ps, prefix + ".up2", 8 * b, 2 * b, k3, s1, p1);
  up1 = Conv3dLayer(ps, prefix + ".up1", 4 * b, b, k3, s1, p1);
  up0 = Conv3dLayer(ps, prefix + ".up0", 2 * b, b, k3, s1, p1);
  head = Conv3dLayer(ps, prefix + ".head", b, out_ch, {1, 1, 1}, s1, {0, 0, 0});
  gn_stem_a = GroupNormLayer(ps, prefix + ".gn_stem_a", b);
  gn_stem_b = GroupNormLayer(ps, prefix + ".gn_stem_b", b);
  gn_d1 = GroupNormLayer(ps, prefix + ".gn_d1", 2 * b);
  gn_d1b = GroupNormLayer(ps, prefix + ".gn_d1b", 2 * b);
  gn_d2 = GroupNormLayer(ps, prefix + ".gn_d2", 4 * b);
  gn_d2b = GroupNormLayer(ps, prefix + ".gn_d2b", 4 * b);
  gn_d3 = GroupNormLayer(ps, prefix + ".gn_d3", 4 * b);
  gn_d3b = GroupNormLayer(ps, prefix + ".gn_d3b", 4 * b);
  gn_u2 = GroupNormLayer(ps, prefix + ".gn_u2", 2 * b);
  gn_u1 = GroupNormLayer(ps, prefix + ".gn_u1", b);
  gn_u0 = GroupNormLayer(ps, prefix + ".gn_u0", b);
}

Tensor Cnn2dEncoder::forward(const Tensor& image) const {
  check(image.rank() == 3 && image.dim(0) == 3,
        "cnn2d: expected [3,H,W] image, got " + shape_str(image.shape()));
  check(image.dim(1) >= 32 && image.dim(2) >= 32,
        "cnn2d: image " + shape_str(image.shape()) + " smaller than 32x32");
  Tensor img4 = avg_pool3d(as_depth1(image), {1, 4, 4}, {1, 4, 4});
  Tensor e0 = relu(gn_stem_a.forward(stem_a.forward(img4)));
  e0 = relu(gn_stem_b.forward(stem_b.forward(e0)));
  Tensor e1 = relu(gn_d1.forward(down1.forward(e0)));
  e1 = relu(gn_d1b.forward(down1_b.forward(e1)));
  Tensor e2 = relu(gn_d2.forward(down2.forward(e1)));
  e2 = relu(gn_d2b.forward(down2_b.forward(e2)));
  Tensor e3 = relu(gn_d3.forward(down3.forward(e2)));
  e3 = relu(gn_d3b.forward(down3_b.forward(e3)));
  Tensor u2 = relu(gn_u2.forward(up2.forward(concat({up2_to(e3, e2), e2}, 0))));
  Tensor u1 = relu(gn_u1.forward(up1.forward(concat({up2_to(u2, e1), e1}, 0))));
  Tensor u0 = relu(gn_u0.forward(up0.forward(concat({up2_to(u1, e0), e0}, 0))));
  Tensor learned = head.forward(u0);
  return drop_depth(concat({learned, img4}, 0));
}

Unet3dAggregator::Unet3dAggregator(ParamStore& ps, const std::string& prefix, int in_ch,
                                   std::vector<int> widths_, int out_ch) {
  widths = std::move(widths_);
  check(widths.size() == 3, "unet3d: expected three widths");
  int w0 = widths[0], w1 = widths[1], w2 = widths[2];
  auto k3 = std::array<int, 3>{3, 3, 3};
  auto s1 = std::array<int, 3>{1, 1, 1};
  auto s2 = std::array<int, 3>{2, 2, 2};
  auto p1 = std::array<int, 3>{1, 1, 1};
  enc0 = Conv3dLayer(ps, prefix + ".enc0", in_ch + 1, w0, k3, s1, p1);
  enc1 = Conv3dLayer(ps, prefix + ".enc1", w0, w1, k3, s2, p1);
  enc2 = Conv3dLayer(ps, prefix + ".enc2", w1, w2, k3, s2, p1);
  gn0 = GroupNormLayer(ps, prefix + ".gn0", w0);
  gn1 = GroupNormLayer(ps, prefix + ".gn1", w1);
  gn2 = GroupNormLayer(ps, prefix + ".gn2", w2);
  xattn0 = AttentionBlock(ps, prefix + ".xattn0", w0, 4, true);
  xattn1 = AttentionBlock(ps, prefix + ".xattn1", w1, 4, true);
  xattn2 = AttentionBlock(ps, prefix + ".xattn2", w2, 4, true);
  dec1 = Conv3dLayer(ps, prefix + ".dec1", w2 + w1, w1, k3, s1, p1);
  dec0 = Conv3dLayer(ps, prefix + ".dec0", w1 + w0, w0, k3, s1, p1);
  out_conv = Conv3dLayer(ps, prefix + ".out", w0, out_ch, {1, 1, 1}, s1, {0, 0, 0});
  gn_dec1 = GroupNormLayer(ps, prefix + ".gn_dec1", w1);
  gn_dec0 = GroupNormLayer(ps, prefix + ".gn_dec0", w0);
}

namespace {

// [C,Z,Y,X] per view -> tokens [N, T, C]
Tensor view_tokens(const std::vector<Tensor>& vols) {
  std::vector<Tensor> rows;
  for (const Tensor& v : vols) {
    int64_t c = v.dim(0), n = v.numel() / c;
    rows.push_back(reshape(permute(reshape(v, {c, n}), {1, 0}), {n, 1, c}));
  }
  return concat(rows, 1);
}

Tensor tokens_to_volume(const Tensor& rows, const Shape& like) {  // [N,C] -> [C,Z,Y,X]
  int64_t c = rows.dim(1);
  return reshape(permute(rows, {1, 0}), {c, like[1], like[2], like[3]});
}

// constant [N, T] attention mask from per-view [1,Z,Y,X] masks
Tensor attention_mask(const std::vector<Tensor>& masks, DType dt) {
  int64_t t = (int64_t)masks.size();
  int64_t n = masks[0].numel();
  Tensor m({n, t}, dt);
  for (int64_t v = 0; v < t; ++v)
    for (int64_t i = 0; i < n; ++i) m.set(i * t + v, masks[(size_t)v].get(i) > 0 ? 1 : 0);
  return m;
}

Tensor downsample_mask(const Tensor& m) {  // [1,Z,Y,X] 0/1 -> half resolution
  NoGradGuard ng;
  Tensor pooled = avg_pool3d(m, {2, 2, 2}, {2, 2, 2});
  Tensor out(pooled.shape(), pooled.dtype());
  for (int64_t i = 0; i < out.numel(); ++i) out.set(i, pooled.get(i) > 0 ? 1 : 0);
  return out;
}

}  // namespace

Unet3dAggregator::Result Unet3dAggregator::forward(const std::vector<Tensor>& volumes,
                                                   const std::vector<Tensor>& masks) const {
  check(!volumes.empty(), "unet3d: no views to aggregate");
  check(volumes.size() == masks.size(), "unet3d: views and masks differ in count");
  size_t t = volumes.size();
  std::vector<Tensor> e0(t), e1(t), e2(t), m1(t), m2(t);
  for (size_t i = 0; i < t; ++i) {
    const Tensor& mask = masks[i];
    Tensor masked = mul(volumes[i], reshape(mask, {mask.dim(1), mask.dim(2), mask.dim(3)}));
    Tensor x = concat({masked, mask}, 0);
    e0[i] = relu(gn0.forward(enc0.forward(x)));
    e1[i] = relu(gn1.forward(enc1.forward(e0[i])));
    e2[i] = relu(gn2.forward(enc2.forward(e1[i])));
    m1[i] = downsample_mask(mask);
    m2[i] = downsample_mask(m1[i]);
  }
  DType dt = volumes[0].dtype();
  auto aggregate = [&](const std::vector<Tensor>& vols, const std::vector<Tensor>& ms,
                       const AttentionBlock& attn) {
    Tensor tokens = view_tokens(vols);
    Tensor amask = attention_mask(ms, dt);
    Tensor att = attn.forward(tokens, tokens, amask);
    Tensor agg = mean_sorted(add(tokens, att), 1);
    return tokens_to_volume(agg, vols[0].shape());
  };
  Tensor a0 = aggregate(e0, masks, xattn0);
  Tensor a1 = aggregate(e1, m1, xattn1);
  Tensor b = aggregate(e2, m2, xattn2);

  Tensor d1 = concat({upsample_nearest3d(b, {2, 2, 2}), a1}, 0);
  d1 = relu(gn_dec1.forward(dec1.forward(d1)));
  Tensor d0 = concat({upsample_nearest3d(d1, {2, 2, 2}), a0}, 0);
  d0 = relu(gn_dec0.forward(dec0.forward(d0)));
  Result res;
  res.combined = out_conv.forward(d0);
  res.bottlenecks = std::move(e2);
  return res;
}

BiasGenerator::BiasGenerator(ParamStore& ps, const std::string& prefix, int k, int nz,
                             int ny, int nx, uint64_t latent_seed) {
  check(nz % 8 == 0 && ny % 8 == 0 && nx % 8 == 0,
        "bias generator: grid dims must be divisible by 8");
  latent = Tensor({64, nz / 8, ny / 8, nx / 8}, ps.dtype());
  Rng rng(latent_seed);
  for (int64_t i = 0; i < latent.numel(); ++i) latent.set(i, rng.normal());
  auto k4 = std::array<int, 3>{4, 4, 4};
  auto s2 = std::array<int, 3>{2, 2, 2};
  auto p1 = std::array<int, 3>{1, 1, 1};
  up1 = ConvT3dLayer(ps, prefix + ".up1", 64, 32, k4, s2, p1);
  up2 = ConvT3dLayer(ps, prefix + ".up2", 32, 16, k4, s2, p1);
  up3 = ConvT3dLayer(ps, prefix + ".up3", 16, k, k4, s2, p1, Init::Zero);
  gn1 = GroupNormLayer(ps, prefix + ".gn1", 32);
  gn2 = GroupNormLayer(ps, prefix + ".gn2", 16);
}

Tensor BiasGenerator::forward() const {
  Tensor h = relu(gn1.forward(up1.forward(latent)));
  h = relu(gn2.forward(up2.forward(h)));
  return up3.forward(h);
}

TriplaneDecoder::TriplaneDecoder(ParamStore& ps, const std::string& prefix, int latent_dim,
                                 int res_, int channels_) {
  res = res_;
  channels = channels_;
  check(res % 8 == 0, "triplane decoder: resolution must be divisible by 8");
  int s = res / 8;
  seed = Linear(ps, prefix + ".seed", latent_dim, 3 * 64 * s * s);
  auto k4 = std::array<int, 3>{1, 4, 4};
  auto s2 = std::array<int, 3>{1, 2, 2};
  auto p1 = std::array<int, 3>{0, 1, 1};
  const char* names[3] = {"xy", "xz", "yz"};
  for (int p = 0; p < 3; ++p) {
    std::string base = prefix + "." + names[p];
    up1[p] = ConvT3dLayer(ps, base + ".up1", 64, 48, k4, s2, p1);
    up2[p] = ConvT3dLayer(ps, base + ".up2", 48, channels, k4, s2, p1);
    up3[p] = ConvT3dLayer(ps, base + ".up3", channels, channels, k4, s2, p1);
    gn1[p] = GroupNormLayer(ps, base + ".gn1", 48);
    gn2[p] = GroupNormLayer(ps, base + ".gn2", channels);
  }
}

std::array<Tensor, 3> TriplaneDecoder::forward(const Tensor& z) const {
  int s = res / 8;
  Tensor seeded = relu(seed.forward(reshape(z, {1, z.numel()})));
  std::array<Tensor, 3> planes;
  for (int p = 0; p < 3; ++p) {
    Tensor plane = slice(seeded, 1, (int64_t)p * 64 * s * s, 64 * s * s);
    Tensor h = reshape(plane, {64, 1, s, s});
    h = relu(gn1[p].forward(up1[p].forward(h)));
    h = relu(gn2[p].forward(up2[p].forward(h)));
    h = up3[p].forward(h);
    planes[p] = drop_depth(h);
  }
  return planes;
}

NerfMlp::NerfMlp(ParamStore& ps, const std::string& prefix, int in_dim, int width,
                 int layers, int skip_) {
  skip = skip_;
  for (int i = 0; i < layers; ++i) {
    int in = i == 0 ? in_dim : width;
    if (i + 1 == skip) in += in_dim;  // the skip layer re-reads the encoded input
    hidden.emplace_back(ps, prefix + ".h" + std::to_string(i), in, width);
  }
  sigma_head = Linear(ps, prefix + ".sigma", width, 1);
  color_head = Linear(ps, prefix + ".color", width, 3);
  // start mostly transparent
  sigma_head.b.set(0, -1.0);
}

NerfMlp::Out NerfMlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (size_t i = 0; i < hidden.size(); ++i) {
    if ((int)i + 1 == skip) h = concat({h, x}, 1);
    h = relu(hidden[i].forward(h));
  }
  return {sigma_head.forward(h), color_head.forward(h)};
}

Tensor positional_encode(const Tensor& v, int n_freq) {
  check(n_freq >= 0, "positional_encode: negative frequency count");
  std::vector<Tensor> parts = {v};
  double f = M_PI;
  for (int j = 0; j < n_freq; ++j) {
    Tensor scaled = mul_scalar(v, f);
    parts.push_back(sin(scaled));
    parts.push_back(cos(scaled));
    f *= 2;
  }
  return concat(parts, v.rank() - 1);
}

}  // namespace hummorph
