#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace croma {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

// Post-op NaN/Inf assertions. On by default (tests); the training hot loop
// switches them off and checks the loss scalar instead.
void set_finite_checks(bool on);
bool finite_checks_enabled();

// While alive, ops produce plain constants (no graph, no grad propagation).
// Evaluation paths use this; nesting is fine.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};
bool grad_enabled();

class Tensor;

// Per-parent gradient buffers handed to an op's backprop; nullptr entries mark
// parents that do not require grad.
using GradSinks = std::vector<std::vector<double>*>;

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<double> grad;  // persistent accumulator, leaves only
  std::vector<Tensor> parents;
  std::function<void(const TensorNode& self, const std::vector<double>& out_grad,
                     const GradSinks& sinks)>
      backprop;
  const char* op = "leaf";

  bool is_leaf() const { return parents.empty(); }
};

// Dense row-major f64 tensor with define-by-run reverse-mode gradients.
// Values are immutable once created except for leaf mutation through
// mutable_value() (optimizer updates, finite-difference probes).
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> data);
  static Tensor scalar(double v);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor param(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t rows() const;  // 2-D only
  std::size_t cols() const;  // 2-D only
  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& mutable_value();  // leaves only
  double item() const;                   // numel == 1 only
  bool requires_grad() const { return node_->requires_grad; }
  const std::vector<double>& grad() const;
  void zero_grad();
  Tensor detached() const;  // constant copy of the value

  TensorNode* node() const { return node_.get(); }

  // Internal: used by op constructors.
  static Tensor make_op(const char* op, Shape shape, std::vector<double> value,
                        std::vector<Tensor> parents,
                        std::function<void(const TensorNode&, const std::vector<double>&,
                                           const GradSinks&)>
                            backprop);

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;
};

// Elementwise (shapes must match exactly; no implicit broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);
Tensor exp_op(const Tensor& x);
Tensor log_op(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

// Linear algebra / NN building blocks.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor softmax_lastdim(const Tensor& x);
Tensor log_softmax_lastdim(const Tensor& x);
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor mean_lastaxis(const Tensor& x);
Tensor mean_rows(const Tensor& x);
Tensor sum_all(const Tensor& x);
Tensor l2_normalize(const Tensor& x);
Tensor mul_scalar_tensor(const Tensor& x, const Tensor& s);

// Structural ops.
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor stack_rows(std::span<const Tensor> rows);
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx);
Tensor diag_part(const Tensor& x);

// Reverse-mode sweep from a scalar root. Gradients accumulate into the
// persistent .grad of every requires_grad leaf; repeated calls without
// zero_grad() keep accumulating.
void backward(const Tensor& loss);

}  // namespace croma
