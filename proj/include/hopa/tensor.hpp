#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hopa {

/// Dimensions of a rank-4 (batch, channel, height, width) array.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

namespace detail {

struct TensorImpl;

// A recorded operation: accumulates the output's gradient into its inputs.
struct GradNode {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<GradNode> grad_fn;

  bool tracks_grad() const { return requires_grad || grad_fn != nullptr; }
  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense float64 NCHW tensor with optional reverse-mode gradient tracking.
///
/// Copies share storage (handle semantics, like a framework tensor). Use
/// `clone()` or `detach()` for an independent copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }

  std::span<double> data();
  std::span<const double> data() const;
  double& at(int n, int c, int h, int w);
  double at(int n, int c, int h, int w) const;
  /// Value of a (1,1,1,1) tensor.
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  /// Accumulated gradient; empty span if none has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// True when this tensor was produced by a recorded operation.
  bool has_grad_fn() const;

  /// Same values, no graph, no gradient, independent storage.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl);
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_op_result(Shape, std::vector<double>,
                               std::vector<Tensor>,
                               std::function<void(const detail::TensorImpl&)>);
};

/// Builds the output of a differentiable operation. The backward callback is
/// only recorded when at least one input tracks gradients; it receives the
/// output impl (whose `grad` is populated) and must accumulate into the
/// `grad_buffer()` of each input that `tracks_grad()`.
Tensor make_op_result(Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs,
                      std::function<void(const detail::TensorImpl&)> backward);

/// Reverse-mode pass from a scalar (1,1,1,1) loss. Leaf gradients accumulate
/// across calls; intermediate gradients are recomputed each call.
void backward(const Tensor& loss);

/// Throws std::invalid_argument unless `a` and `b` have identical shapes.
void require_same_shape(const Shape& a, const Shape& b, const char* op);

}  // namespace hopa
