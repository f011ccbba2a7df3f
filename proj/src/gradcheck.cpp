#include "hummorph/gradcheck.hpp"

#include <cmath>

namespace hummorph {

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                  std::vector<Tensor> inputs, double step) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.drop_grad();
  }
  Tensor loss = fn(inputs);
  check(loss.numel() == 1, "grad_check: function must return a scalar");
  backward(loss);

  double max_err = 0;
  for (auto& t : inputs) {
    Tensor analytic = t.grad();
    for (int64_t i = 0; i < t.numel(); ++i) {
      double saved = t.get(i);
      double numeric;
      {
        NoGradGuard ng;
        t.set(i, saved + step);
        double hi = fn(inputs).item();
        t.set(i, saved - step);
        double lo = fn(inputs).item();
        t.set(i, saved);
        numeric = (hi - lo) / (2 * step);
      }
      double a = analytic.defined() ? analytic.get(i) : 0.0;
      double err = std::fabs(a - numeric) / std::max(1.0, std::fabs(a));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace hummorph
