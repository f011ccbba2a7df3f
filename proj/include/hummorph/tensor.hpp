#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace hummorph {

enum class DType : uint8_t { F32, F64 };

inline size_t dtype_size(DType dt) { return dt == DType::F32 ? 4 : 8; }
inline const char* dtype_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }

[[noreturn]] void fail(const std::string& msg);
void check(bool cond, const std::string& msg);

// Flat scalar buffer. Element type is a runtime property so the same graph
// code can run in 32-bit (training) or 64-bit (gradient checking) mode.
class Storage {
 public:
  Storage() = default;
  Storage(DType dt, int64_t n) : dtype_(dt), bytes_(n * dtype_size(dt)) {}

  DType dtype() const { return dtype_; }
  int64_t size() const { return dtype_ == DType::F32 ? (int64_t)(bytes_.size() / 4)
                                                     : (int64_t)(bytes_.size() / 8); }

  template <typename S>
  S* data() { return reinterpret_cast<S*>(bytes_.data()); }
  template <typename S>
  const S* data() const { return reinterpret_cast<const S*>(bytes_.data()); }

  double get(int64_t i) const {
    return dtype_ == DType::F32 ? (double)data<float>()[i] : data<double>()[i];
  }
  void set(int64_t i, double v) {
    if (dtype_ == DType::F32)
      data<float>()[i] = (float)v;
    else
      data<double>()[i] = v;
  }
  void fill(double v);

 private:
  DType dtype_ = DType::F32;
  std::vector<std::byte> bytes_;
};

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;

// One recorded operation. Backward receives the output gradients (undefined
// Tensor where an output never received one) and accumulates into the inputs.
struct Node {
  const char* name = "";
  std::vector<Tensor> inputs;
  std::vector<std::weak_ptr<struct TensorImpl>> outputs;
  std::function<void(const std::vector<Tensor>& out_grads)> backward;
};

struct TensorImpl {
  Shape shape;
  std::shared_ptr<Storage> data;
  bool requires_grad = false;
  std::shared_ptr<TensorImpl> grad;       // same shape, allocated on demand
  std::shared_ptr<Node> producer;         // null for leaves
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, DType dt, bool requires_grad = false);

  static Tensor zeros(Shape shape, DType dt = DType::F32);
  static Tensor full(Shape shape, double value, DType dt = DType::F32);
  static Tensor scalar(double value, DType dt = DType::F32);
  static Tensor from_data(Shape shape, const std::vector<double>& values,
                          DType dt = DType::F32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return (int)impl_->shape.size(); }
  int64_t dim(int i) const { return impl_->shape[i]; }
  int64_t numel() const { return shape_numel(impl_->shape); }
  DType dtype() const { return impl_->data->dtype(); }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    impl_->requires_grad = b;
    return *this;
  }
  bool is_leaf() const { return !impl_->producer; }

  template <typename S>
  S* data() { return impl_->data->template data<S>(); }
  template <typename S>
  const S* data() const { return impl_->data->template data<S>(); }

  double get(int64_t flat) const { return impl_->data->get(flat); }
  void set(int64_t flat, double v) { impl_->data->set(flat, v); }
  double item() const;
  std::vector<double> to_vector() const;
  void fill(double v) { impl_->data->fill(v); }

  bool has_grad() const { return impl_ && impl_->grad != nullptr; }
  Tensor grad() const;          // undefined if no grad accumulated
  void zero_grad();             // keeps buffer
  void drop_grad();             // releases buffer
  void accumulate_grad(const Tensor& g);

  // New leaf sharing this tensor's storage; drops the producer edge.
  Tensor detach(bool requires_grad = false) const;
  // Deep copy as a leaf.
  Tensor clone() const;
  Tensor cast(DType dt) const;  // non-graph value copy

  Storage& storage() { return *impl_->data; }
  const Storage& storage() const { return *impl_->data; }
  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Graph recording is on by default; disable around evaluation-only passes.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

// Op construction helper: wires producer/outputs and propagates requires_grad.
// `backward` may be empty for ops used only under NoGrad.
std::shared_ptr<Node> make_node(const char* name, std::vector<Tensor> inputs,
                                const std::vector<Tensor>& outputs);

// Accumulate `values` (same shape) into t's grad buffer if t requires grad.
void add_to_grad(const Tensor& t, const Tensor& values);

// Reverse-mode sweep from a scalar loss. Leaf grads accumulate across calls;
// interior grads are released as soon as they have been consumed.
void backward(const Tensor& loss);
// Generalized entry: seed several (tensor, gradient) pairs at once.
void backward_multi(const std::vector<std::pair<Tensor, Tensor>>& seeds);

}  // namespace hummorph
