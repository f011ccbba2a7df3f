#pragma once

#include <doctest.h>

#include <vector>

#include "hummorph/ops.hpp"
#include "hummorph/rng.hpp"

namespace testutil {

inline hummorph::Tensor random_tensor(hummorph::Shape shape, hummorph::Rng& rng,
                                      double scale = 1.0,
                                      hummorph::DType dt = hummorph::DType::F64) {
  hummorph::Tensor t(std::move(shape), dt);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.normal() * scale);
  return t;
}

inline bool bitwise_equal(const hummorph::Tensor& a, const hummorph::Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  if (a.dtype() == hummorph::DType::F64) {
    const double* pa = a.data<double>();
    const double* pb = b.data<double>();
    for (int64_t i = 0; i < a.numel(); ++i)
      if (std::memcmp(&pa[i], &pb[i], 8) != 0) return false;
  } else {
    const float* pa = a.data<float>();
    const float* pb = b.data<float>();
    for (int64_t i = 0; i < a.numel(); ++i)
      if (std::memcmp(&pa[i], &pb[i], 4) != 0) return false;
  }
  return true;
}

inline double max_abs_diff(const hummorph::Tensor& a, const hummorph::Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(a.get(i) - b.get(i)));
  return m;
}

}  // namespace testutil
