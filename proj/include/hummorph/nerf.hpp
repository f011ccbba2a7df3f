#pragma once

#include "hummorph/networks.hpp"

namespace hummorph {

// Canonical radiance decoder: positional encoding of the query point plus the
// fused conditioning feature through the NeRF MLP.
struct RadianceDecoder {
  NerfMlp mlp;
  int pe_freq = 6;
  RadianceDecoder() = default;
  RadianceDecoder(ParamStore& ps, const std::string& prefix, const ModelConfig& cfg);

  struct Out {
    Tensor sigma;  // [N,1], softplus-activated
    Tensor color;  // [N,3], sigmoid-activated
  };
  // x_c_norm [N,3] in [-1,1]; f [N,fusion_dim]; callers pass only points with
  // body support, so the MLP never runs on free space.
  Out decode(const Tensor& x_c_norm, const Tensor& f) const;
};

}  // namespace hummorph
