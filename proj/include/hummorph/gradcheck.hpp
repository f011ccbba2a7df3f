#pragma once

#include <functional>
#include <vector>

#include "hummorph/tensor.hpp"

namespace hummorph {

// Central-difference check of reverse-mode gradients. `fn` must build a fresh
// graph and return a scalar loss; `inputs` are the leaves to differentiate
// (their requires_grad flags are forced on). Returns
//   max over coordinates of |analytic - numeric| / max(1, |analytic|).
// Meaningful only in 64-bit mode; 32-bit differences drown in rounding.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                  std::vector<Tensor> inputs, double step = 1e-5);

}  // namespace hummorph
