#include "hummorph/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace hummorph {

void fail(const std::string& msg) { throw std::runtime_error(msg); }

void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

void Storage::fill(double v) {
  int64_t n = size();
  if (dtype_ == DType::F32) {
    float f = (float)v;
    std::fill(data<float>(), data<float>() + n, f);
  } else {
    std::fill(data<double>(), data<double>() + n, v);
  }
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, DType dt, bool requires_grad) {
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::make_shared<Storage>(dt, shape_numel(impl_->shape));
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, DType dt) { return Tensor(std::move(shape), dt); }

Tensor Tensor::full(Shape shape, double value, DType dt) {
  Tensor t(std::move(shape), dt);
  t.fill(value);
  return t;
}

Tensor Tensor::scalar(double value, DType dt) { return full({}, value, dt); }

Tensor Tensor::from_data(Shape shape, const std::vector<double>& values, DType dt) {
  Tensor t(std::move(shape), dt);
  check((int64_t)values.size() == t.numel(),
        "from_data: " + std::to_string(values.size()) + " values for shape " +
            shape_str(t.shape()));
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, values[i]);
  return t;
}

double Tensor::item() const {
  check(numel() == 1, "item: tensor has " + std::to_string(numel()) + " elements");
  return get(0);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out((size_t)numel());
  for (int64_t i = 0; i < numel(); ++i) out[(size_t)i] = get(i);
  return out;
}

Tensor Tensor::grad() const {
  if (!impl_->grad) return Tensor();
  return Tensor(impl_->grad);
}

void Tensor::zero_grad() {
  if (impl_->grad) impl_->grad->data->fill(0.0);
}

void Tensor::drop_grad() { impl_->grad.reset(); }

void Tensor::accumulate_grad(const Tensor& g) {
  check(g.shape() == shape(), "accumulate_grad: shape " + shape_str(g.shape()) +
                                  " vs tensor " + shape_str(shape()));
  if (!impl_->grad) {
    auto gi = std::make_shared<TensorImpl>();
    gi->shape = shape();
    gi->data = std::make_shared<Storage>(dtype(), numel());
    impl_->grad = gi;
  }
  int64_t n = numel();
  if (dtype() == DType::F32) {
    float* dst = impl_->grad->data->data<float>();
    const float* src = g.data<float>();
    for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
  } else {
    double* dst = impl_->grad->data->data<double>();
    const double* src = g.data<double>();
    for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
  }
}

Tensor Tensor::detach(bool requires_grad) const {
  auto ni = std::make_shared<TensorImpl>();
  ni->shape = impl_->shape;
  ni->data = impl_->data;
  ni->requires_grad = requires_grad;
  return Tensor(ni);
}

Tensor Tensor::clone() const {
  Tensor t(shape(), dtype());
  *t.impl_->data = *impl_->data;
  return t;
}

Tensor Tensor::cast(DType dt) const {
  if (dt == dtype()) return clone();
  Tensor t(shape(), dt);
  for (int64_t i = 0; i < numel(); ++i) t.set(i, get(i));
  return t;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

std::shared_ptr<Node> make_node(const char* name, std::vector<Tensor> inputs,
                                const std::vector<Tensor>& outputs) {
  bool needs = false;
  for (const auto& in : inputs)
    if (in.defined() && in.requires_grad()) needs = true;
  if (!g_grad_enabled || !needs) return nullptr;
  auto node = std::make_shared<Node>();
  node->name = name;
  node->inputs = std::move(inputs);
  for (const auto& out : outputs) {
    out.impl()->producer = node;
    out.impl()->requires_grad = true;
    node->outputs.push_back(out.impl());
  }
  return node;
}

void add_to_grad(const Tensor& t, const Tensor& values) {
  if (t.defined() && t.requires_grad()) const_cast<Tensor&>(t).accumulate_grad(values);
}

namespace {

// Post-order DFS over producers; reverse gives a valid backward order.
std::vector<Node*> topo_from(const std::vector<std::shared_ptr<TensorImpl>>& roots) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* node;
    size_t next = 0;
  };
  std::vector<Frame> stack;
  for (const auto& root : roots) {
    Node* p = root->producer.get();
    if (!p || seen.count(p)) continue;
    seen.insert(p);
    stack.push_back({p});
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.node->inputs.size()) {
        const Tensor& in = f.node->inputs[f.next++];
        Node* q = in.defined() ? in.impl()->producer.get() : nullptr;
        if (q && !seen.count(q)) {
          seen.insert(q);
          stack.push_back({q});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
  }
  return order;
}

}  // namespace

void backward_multi(const std::vector<std::pair<Tensor, Tensor>>& seeds) {
  NoGradGuard ng;  // gradient computation itself is not recorded
  std::vector<std::shared_ptr<TensorImpl>> roots;
  for (const auto& [t, g] : seeds) {
    check(t.defined() && g.defined(), "backward: undefined seed");
    check(t.shape() == g.shape(), "backward: seed gradient shape " + shape_str(g.shape()) +
                                      " vs tensor " + shape_str(t.shape()));
    check(t.dtype() == g.dtype(), "backward: seed dtype mismatch");
    const_cast<Tensor&>(t).accumulate_grad(g);
    roots.push_back(t.impl());
  }
  std::vector<Node*> order = topo_from(roots);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    std::vector<Tensor> out_grads(node->outputs.size());
    bool any = false;
    for (size_t i = 0; i < node->outputs.size(); ++i) {
      if (auto impl = node->outputs[i].lock(); impl && impl->grad) {
        out_grads[i] = Tensor(impl->grad);
        any = true;
       }
    }
    if (any && node->backward) node->backward(out_grads);
    // Interior gradients are consumed exactly once, by this node.
    for (auto& weak : node->outputs)
      if (auto impl = weak.lock(); impl && impl->producer) impl->grad.reset();
  }
}

void backward(const Tensor& loss) {
  check(loss.defined(), "backward: undefined loss");
  check(loss.numel() == 1, "backward: loss must be scalar, got shape " +
                               shape_str(loss.shape()));
  backward_multi({{loss, Tensor::full(loss.shape(), 1.0, loss.dtype())}});
}

}  // namespace hummorph
