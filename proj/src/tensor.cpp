#include "hopa/tensor.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace hopa {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                to_string(a) + " vs " + to_string(b));
  }
}

namespace detail {

std::vector<double>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

}  // namespace detail

Tensor::Tensor() = default;

Tensor::Tensor(std::shared_ptr<detail::TensorImpl> impl)
    : impl_(std::move(impl)) {}

Tensor::Tensor(Shape shape, bool requires_grad)
    : Tensor(shape, std::vector<double>(shape.numel(), 0.0), requires_grad) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw std::invalid_argument("Tensor: negative dimension in " +
                                to_string(shape));
  }
  if (values.size() != shape.numel()) {
    throw std::invalid_argument("Tensor: " + std::to_string(values.size()) +
                                " values for shape " + to_string(shape));
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = shape;
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(shape, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape.numel(), value),
                requires_grad);
}

Tensor Tensor::scalar(double value) { return full({1, 1, 1, 1}, value); }

const Shape& Tensor::shape() const {
  static const Shape kEmpty{};
  return impl_ ? impl_->shape : kEmpty;
}

std::span<double> Tensor::data() { return impl_->data; }
std::span<const double> Tensor::data() const { return impl_->data; }

double& Tensor::at(int n, int c, int h, int w) {
  const Shape& s = impl_->shape;
  return impl_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) *
                         s.w + w];
}

double Tensor::at(int n, int c, int h, int w) const {
  const Shape& s = impl_->shape;
  return impl_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) *
                         s.w + w];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item: tensor of shape " + to_string(shape()) +
                                " is not a scalar");
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }
bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
std::span<double> Tensor::mutable_grad() { return impl_->grad_buffer(); }

void Tensor::zero_grad() {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

bool Tensor::has_grad_fn() const { return impl_ && impl_->grad_fn; }

Tensor Tensor::detach() const {
  return Tensor(impl_->shape, impl_->data, false);
}

Tensor make_op_result(Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs,
                      std::function<void(const detail::TensorImpl&)> backward) {
  Tensor out(shape, std::move(values), false);
  const bool track = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) {
                                   return t.defined() && t.impl()->tracks_grad();
                                 });
  if (track) {
    auto node = std::make_shared<detail::GradNode>();
    for (const Tensor& t : inputs) {
      if (t.defined()) node->inputs.push_back(t.impl());
    }
    node->backward = std::move(backward);
    out.impl_->grad_fn = std::move(node);
  }
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || !(loss.shape() == Shape{1, 1, 1, 1})) {
    throw std::invalid_argument("backward: loss must have shape (1,1,1,1), got " +
                                to_string(loss.shape()));
  }
  detail::TensorImpl* root = loss.impl().get();
  if (!root->tracks_grad()) {
    throw std::invalid_argument("backward: loss has no recorded graph");
  }

  // Iterative post-order DFS; reversed it is a topological order.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* fn = node->grad_fn.get();
    if (fn && next < fn->inputs.size()) {
      detail::TensorImpl* child = fn->inputs[next++].get();
      if (child->tracks_grad() && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (detail::TensorImpl* t : order) {
    if (t->grad_fn) t->grad.assign(t->data.size(), 0.0);
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* t = *it;
    if (t->grad_fn) t->grad_fn->backward(*t);
  }
}

}  // namespace hopa
