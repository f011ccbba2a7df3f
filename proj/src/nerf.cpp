#include "hummorph/nerf.hpp"

namespace hummorph {

RadianceDecoder::RadianceDecoder(ParamStore& ps, const std::string& prefix,
                                 const ModelConfig& cfg) {
  pe_freq = cfg.pe_freq_xc;
  int in_dim = 3 * (1 + 2 * pe_freq) + cfg.fusion_dim;
  mlp = NerfMlp(ps, prefix, in_dim, cfg.nerf_width, cfg.nerf_layers, cfg.nerf_skip);
}

RadianceDecoder::Out RadianceDecoder::decode(const Tensor& x_c_norm, const Tensor& f) const {
  Tensor in = concat({positional_encode(x_c_norm, pe_freq), f}, 1);
  NerfMlp::Out raw = mlp.forward(in);
  return {softplus(raw.sigma), sigmoid(raw.color)};
}

}  // namespace hummorph
