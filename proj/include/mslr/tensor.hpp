#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mslr {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the first accumulation
  bool requires_grad = false;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

// Dense row-major float64 array. Copies share storage; values are fixed after
// construction except through assign()/mutable_data() on leaf parameters and
// gradient accumulation during backward().
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  double operator[](std::size_t flat) const { return impl_->data[flat]; }
  double item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool on);

  // Gradient buffer; all zeros when nothing has been accumulated.
  std::span<const double> grad() const;
  void zero_grad();

  // In-place overwrite for parameters (optimizer updates, checkpoint loads).
  std::span<double> mutable_data();
  void assign(std::span<const double> values);

  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Records differentiable operations executed on this thread while it is alive.
// Tapes nest; the innermost one records. One tape per forward pass.
class GradientTape {
 public:
  using BackwardFn = std::function<void(const std::vector<double>& grad_out)>;

  GradientTape();
  ~GradientTape();
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  // Seeds d(loss)/d(loss) = 1 and replays the recorded operations in reverse.
  // The tape is consumed: recorded nodes are released afterwards.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

  static GradientTape* active();
  void record(const std::shared_ptr<TensorImpl>& out, BackwardFn fn);

 private:
  struct Node {
    std::shared_ptr<TensorImpl> out;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  GradientTape* previous_ = nullptr;
};

// backward() on the innermost active tape of this thread.
void backward(const Tensor& loss);

}  // namespace mslr
