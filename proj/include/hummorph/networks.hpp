#pragma once

#include <array>
#include <optional>

#include "hummorph/config.hpp"
#include "hummorph/ops.hpp"
#include "hummorph/params.hpp"

namespace hummorph {

int norm_groups(int channels);  // largest divisor of channels that is <= 8

struct Linear {
  Tensor w, b;
  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, int in, int out,
         Init init = Init::HeNormal, bool bias = true);
  Tensor forward(const Tensor& x) const;  // [N,in] -> [N,out]
};

struct GroupNormLayer {
  Tensor gain, bias;
  int groups = 1;
  GroupNormLayer() = default;
  GroupNormLayer(ParamStore& ps, const std::string& prefix, int channels);
  Tensor forward(const Tensor& x) const;  // [C,spatial...]
};

struct Conv3dLayer {
  Tensor w, b;
  std::array<int, 3> stride{1, 1, 1}, pad{0, 0, 0};
  Conv3dLayer() = default;
  Conv3dLayer(ParamStore& ps, const std::string& prefix, int in, int out,
              std::array<int, 3> kernel, std::array<int, 3> stride,
              std::array<int, 3> pad, Init init = Init::HeNormal);
  Tensor forward(const Tensor& x) const;
};

struct ConvT3dLayer {
  Tensor w, b;
  std::array<int, 3> stride{1, 1, 1}, pad{0, 0, 0};
  ConvT3dLayer() = default;
  ConvT3dLayer(ParamStore& ps, const std::string& prefix, int in, int out,
               std::array<int, 3> kernel, std::array<int, 3> stride,
               std::array<int, 3> pad, Init init = Init::HeNormal);
  Tensor forward(const Tensor& x) const;
};

struct Mlp {
  std::vector<Linear> layers;  // relu between layers, none after the last
  Mlp() = default;
  Mlp(ParamStore& ps, const std::string& prefix, const std::vector<int>& dims);
  Tensor forward(const Tensor& x) const;
};

// Multi-head attention block with q/k/v (and optional output) projections.
struct AttentionBlock {
  Linear q, k, v;
  std::optional<Linear> out;
  int heads = 4;
  AttentionBlock() = default;
  AttentionBlock(ParamStore& ps, const std::string& prefix, int dim, int heads,
                 bool output_proj);
  // tokens_q [B,Tq,C], tokens_kv [B,Tk,C], mask [B,Tk] or undefined
  Tensor forward(const Tensor& tokens_q, const Tensor& tokens_kv, const Tensor& mask) const;
};

// Post-norm transformer encoder layer; masked tokens cannot influence others.
struct TransformerLayer {
  AttentionBlock attn;
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Linear ff1, ff2;
  TransformerLayer() = default;
  TransformerLayer(ParamStore& ps, const std::string& prefix, int dim, int heads,
                   int ff_hidden);
  Tensor forward(const Tensor& tokens, const Tensor& mask) const;  // [B,T,C]
};

// Image feature extractor: a U-Net over the quarter-resolution image with
// three down/up levels; output is the learned map concatenated with the
// quarter-resolution image itself.
struct Cnn2dEncoder {
  int base = 32, out_ch = 32;
  Conv3dLayer stem_a, stem_b;
  Conv3dLayer down1, down1_b, down2, down2_b, down3, down3_b;
  Conv3dLayer up2, up1, up0;
  Conv3dLayer head;
  GroupNormLayer gn_stem_a, gn_stem_b, gn_d1, gn_d1b, gn_d2, gn_d2b, gn_d3, gn_d3b,
      gn_u2, gn_u1, gn_u0;
  Cnn2dEncoder() = default;
  Cnn2dEncoder(ParamStore& ps, const std::string& prefix, int base, int out_ch);
  // image [3,H,W] in [0,1], H,W >= 32 -> [out_ch+3, ceil(H/4), ceil(W/4)]
  Tensor forward(const Tensor& image) const;
};

// 3D U-Net over per-view canonical volumes with cross-view attention at every
// encoder level and the bottleneck, followed by an order-insensitive mean.
struct Unet3dAggregator {
  std::vector<int> widths;  // {w0, w1, w2}
  Conv3dLayer enc0, enc1, enc2;
  GroupNormLayer gn0, gn1, gn2;
  AttentionBlock xattn0, xattn1, xattn2;
  Conv3dLayer dec1, dec0, out_conv;
  GroupNormLayer gn_dec1, gn_dec0;
  Unet3dAggregator() = default;
  Unet3dAggregator(ParamStore& ps, const std::string& prefix, int in_ch,
                   std::vector<int> widths, int out_ch);

  struct Result {
    Tensor combined;                  // [out_ch, Z, Y, X]
    std::vector<Tensor> bottlenecks;  // per view, pre-aggregation
  };
  Result forward(const std::vector<Tensor>& volumes,
                 const std::vector<Tensor>& masks) const;
};

// Learned motion-weight bias: transposed-convolution stack expanding a fixed
// seeded latent to the K-channel grid. The final layer starts at zero.
struct BiasGenerator {
  Tensor latent;  // constant, not learned
  ConvT3dLayer up1, up2, up3;
  GroupNormLayer gn1, gn2;
  BiasGenerator() = default;
  BiasGenerator(ParamStore& ps, const std::string& prefix, int k, int nz, int ny, int nx,
                uint64_t latent_seed);
  Tensor forward() const;  // [K, nz, ny, nx]
};

// Global-latent triplane decoder: MLP seed + transposed 2D convolutions.
struct TriplaneDecoder {
  int res = 32, channels = 32;
  Linear seed;
  std::array<ConvT3dLayer, 3> up1, up2, up3;
  std::array<GroupNormLayer, 3> gn1, gn2;
  TriplaneDecoder() = default;
  TriplaneDecoder(ParamStore& ps, const std::string& prefix, int latent_dim, int res,
                  int channels);
  std::array<Tensor, 3> forward(const Tensor& z) const;  // XY, XZ, YZ planes [C,res,res]
};

// Canonical radiance decoder MLP with a skip connection into a middle layer.
struct NerfMlp {
  std::vector<Linear> hidden;
  Linear sigma_head, color_head;
  int skip = 5;
  NerfMlp() = default;
  NerfMlp(ParamStore& ps, const std::string& prefix, int in_dim, int width, int layers,
          int skip);
  struct Out {
    Tensor sigma;  // [N,1] pre-activation
    Tensor color;  // [N,3] pre-activation
  };
  Out forward(const Tensor& x) const;
};

// [N,D] -> [N, D*(1+2*n_freq)]: identity, then sin/cos of 2^j * pi * v.
Tensor positional_encode(const Tensor& v, int n_freq);

}  // namespace hummorph
