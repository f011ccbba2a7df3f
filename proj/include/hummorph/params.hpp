#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "hummorph/rng.hpp"
#include "hummorph/tensor.hpp"

namespace hummorph {

enum class Init { Zero, HeNormal, Normal01, Uniform };

// Named learnable tensors in registration order. Initialization is seeded by
// (seed, name) so it does not depend on registration order.
class ParamStore {
 public:
  ParamStore(DType dt, uint64_t seed) : dtype_(dt), seed_(seed) {}

  Tensor create(const std::string& name, Shape shape, Init init, double scale = 1.0);
  Tensor get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::pair<std::string, Tensor>>& all() const { return params_; }
  DType dtype() const { return dtype_; }
  uint64_t seed() const { return seed_; }

  int64_t total_scalars() const;
  void zero_grads();

 private:
  DType dtype_;
  uint64_t seed_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::unordered_map<std::string, size_t> index_;
};

uint64_t fnv1a(const std::string& s);

}  // namespace hummorph
