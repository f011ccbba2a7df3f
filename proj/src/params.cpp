#include "hummorph/params.hpp"

#include <cmath>

namespace hummorph {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= (uint64_t)(unsigned char)c;
    h *= 1099511628211ull;
  }
  return h;
}

Tensor ParamStore::create(const std::string& name, Shape shape, Init init, double scale) {
  check(!index_.count(name), "params: duplicate name " + name);
  Tensor t(shape, dtype_);
  Rng rng(mix_seed(seed_, fnv1a(name)));
  switch (init) {
    case Init::Zero:
      break;
    case Init::HeNormal: {
      // fan-in = everything but the leading (output) extent
      int64_t fan = t.numel() / std::max<int64_t>(1, shape.empty() ? 1 : shape[0]);
      double std = std::sqrt(2.0 / (double)fan) * scale;
      for (int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.normal() * std);
      break;
    }
    case Init::Normal01:
      for (int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.normal() * scale);
      break;
    case Init::Uniform:
      for (int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(-scale, scale));
      break;
  }
  t.set_requires_grad(true);
  index_[name] = params_.size();
  params_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  check(it != index_.end(), "params: unknown name " + name);
  return params_[it->second].second;
}

int64_t ParamStore::total_scalars() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : params_) t.drop_grad();
}

}  // namespace hummorph
