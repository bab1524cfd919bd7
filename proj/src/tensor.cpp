#include "croma/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace croma {

namespace {

std::atomic<bool> g_finite_checks{true};
thread_local bool g_grad_enabled = true;

constexpr double kLayernormEps = 1e-5;
constexpr double kL2Floor = 1e-12;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_finite(const char* op, const std::vector<double>& v) {
  if (!g_finite_checks.load(std::memory_order_relaxed)) return;
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
    }
  }
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Rows/cols view of a tensor treated as a stack of rows over its last axis.
std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }
std::size_t outer_dim(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

void set_finite_checks(bool on) { g_finite_checks.store(on, std::memory_order_relaxed); }
bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::constant(Shape shape, std::vector<double> data) {
  require(numel_of(shape) == data.size(),
          "tensor: data length " + std::to_string(data.size()) + " does not match shape " +
              shape_str(shape));
  check_finite("constant", data);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->op = "constant";
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->value.assign(numel_of(shape), v);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  node->op = "leaf";
  return Tensor(std::move(node));
}

Tensor Tensor::param(Shape shape, std::vector<double> data) {
  Tensor t = constant(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  t.node_->op = "param";
  return t;
}

std::size_t Tensor::rows() const {
  require(rank() == 2, "rows(): tensor is not 2-D");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require(rank() == 2, "cols(): tensor is not 2-D");
  return node_->shape[1];
}

std::vector<double>& Tensor::mutable_value() {
  require(node_->is_leaf(), "mutable_value(): only leaves may be mutated");
  return node_->value;
}

double Tensor::item() const {
  require(numel() == 1, "item(): tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

const std::vector<double>& Tensor::grad() const {
  static const std::vector<double> empty;
  return node_->grad.empty() ? empty : node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(numel(), 0.0); }

Tensor Tensor::detached() const { return constant(shape(), value()); }

Tensor Tensor::make_op(const char* op, Shape shape, std::vector<double> value,
                       std::vector<Tensor> parents,
                       std::function<void(const TensorNode&, const std::vector<double>&,
                                          const GradSinks&)>
                           backprop) {
  check_finite(op, value);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (g_grad_enabled) {
    node->parents = std::move(parents);
    for (const Tensor& p : node->parents) {
      if (p.requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) node->backprop = std::move(backprop);
    if (!node->requires_grad) node->parents.clear();  // constants need no history
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return Tensor::make_op(
      "add", a.shape(), std::move(out), {a, b},
      [](const TensorNode&, const std::vector<double>& g, const GradSinks& sinks) {
        for (int p = 0; p < 2; ++p) {
          if (!sinks[p]) continue;
          for (std::size_t i = 0; i < g.size(); ++i) (*sinks[p])[i] += g[i];
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return Tensor::make_op(
      "sub", a.shape(), std::move(out), {a, b},
      [](const TensorNode&, const std::vector<double>& g, const GradSinks& sinks) {
        if (sinks[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*sinks[0])[i] += g[i];
        if (sinks[1])
          for (std::size_t i = 0; i < g.size(); ++i) (*sinks[1])[i] -= g[i];
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return Tensor::make_op(
      "mul", a.shape(), std::move(out), {a, b},
      [](const TensorNode& self, const std::vector<double>& g, const GradSinks& sinks) {
        const auto& av = self.parents[0].value();
        const auto& bv = self.parents[1].value();
        if (sinks[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*sinks[0])[i] += g[i] * bv[i];
        if (sinks[1])
          for (std::size_t i = 0; i < g.size(); ++i) (*sinks[1])[i] += g[i] * av[i];
      });
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * c;
  return Tensor::make_op(
      "scale", x.shape(), std::move(out), {x},
      [c](const TensorNode&, const std::vector<double>& g, const GradSinks& sinks) {
        if (sinks[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*sinks[0])[i] += g[i] * c;
      });
}

Tensor add_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] + c;
  return Tensor::make_op(
      "add_scalar", x.shape(), std::move(out), {x},
      [](const TensorNode&, const std::vector<double>& g, const GradSinks& sinks) {
        if (sinks[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*sinks[0])[i] += g[i];
      });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp_op(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.value()[i]);
  return Tensor::make_op(
      "exp", x.shape(), std::move(out), {x},
      [](const TensorNode& self, const std::vector<double>& g, const GradSinks& sinks) {
        if (!sinks[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) (*sinks[0])[i] += g[i] * self.value[i];
      });
}

Tensor log_op(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.value()[i]);
  return Tensor::make_op(
      "log", x.shape(), std::move(out), {x},
      [](const TensorNode& self, const std::vector<double>& g, const GradSinks& sinks) {
        if (!sinks[0]) return;
        const auto& xv = self.parents[0].value();
        for (std::size_t i = 0; i < g.size(); ++i) (*sinks[0])[i] += g[i] / xv[i];
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  require(lo <= hi, "clamp: lo > hi");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, x.value()[i]));
  return Tensor::make_op(
      "clamp", x.shape(), std::move(out), {x},
      [lo, hi](const TensorNode& self, const std::vector<double>& g, const GradSinks& sinks) {
        if (!sinks[0]) return;
        const auto& xv = self.parents[0].value();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (xv[i] >= lo && xv[i] <= hi) (*sinks[0])[i] += g[i];
        }
      });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

namespace {

// c += a[m×k] · b[k×n], optionally transposing either input view.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n, bool trans_a, bool trans_b) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = trans_a ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = trans_b ? nullptr : b + p * n;
      if (trans_b) {
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * b[j * k + p];
      } else {
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: both inputs must be 2-D");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, "matmul: inner extents disagree, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.value().data(), b.value().data(), out.data(), m, k, n, false, false);
  return Tensor::make_op(
      "matmul", {m, n}, std::move(out), {a, b},
      [m, k, n](const TensorNode& self, const std::vector<double>& g, const GradSinks& sinks) {
        const auto& av = self.parents[0].value();
        const auto& bv = self.parents[1].value();
        // dA = G · Bᵀ ; dB = Aᵀ · G
        if (sinks[0]) gemm_acc(g.data(), bv.data(), sinks[0]->data(), m, n, k, false, true);
        if (sinks[1]) gemm_acc(av.data(), g.data(), sinks[1]->data(), k, m, n, true, false);
      });
}

Tensor transpose(const Tensor& x) {
  require(x.rank() == 2, "transpose: input must be 2-D");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.value()[i * c + j];
  return Tensor::make_op(
      "transpose", {c, r}, std::move(out), {x},
      [r, c](const TensorNode&, const std::vector<double>& g, const GradSinks& sinks) {
        if (!sinks[0]) return;
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) (*sinks[0])[i * c + j] += g[j * r + i];
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(w.rank() == 2, "linear: weight must be 2-D [in×out]");
  const std::size_t in = w.rows(), out_dim = w.cols();
  require(b.rank() == 1 && b.shape()[0] == out_dim, "linear: bias shape mismatch");
  const bool vec_input = (x.rank() == 1);
  require(vec_input ? x.shape()[0] == in : (x.rank() == 2 && x.cols() == in),
          "linear: input width " + shape_str(x.shape()) + " does not match weight " +
              shape_str(w.shape()));
  const std::size_t r = vec_input ? 1 : x.rows();
  std::vector<double> out(r * out_dim);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < out_dim; ++j) out[i * out_dim + j] = b.value()[j];
  gemm_acc(x.value().data(), w.value().data(), out.data(), r, in, out_dim, false, false);
  Shape oshape = vec_input ? Shape{out_dim} : Shape{r, out_dim};
  return Tensor::make_op(
      "linear", std::move(oshape), std::move(out), {x, w, b},
      [r, in, out_dim](const TensorNode& self, const std::vector<double>& g,
                       const GradSinks& sinks) {
        const auto& xv = self.parents[0].value();
        const auto& wv = self.parents[1].value();
        if (sinks[0]) gemm_acc(g.data(), wv.data(), sinks[0]->data(), r, out_dim, in, false, true);
        if (sinks[1]) gemm_acc(xv.data(), g.data(), sinks[1]->data(), in, r, out_dim, true, false);
        if (sinks[2]) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < out_dim; ++j) (*sinks[2])[j] += g[i * out_dim + j];
        }
      });
}

Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t c = last_dim(x.shape()), r = outer_dim(x.shape());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.value().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      sum += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= sum;
  }
  return Tensor::make_op(
      "softmax", x.shape(), std::move(out), {x},
      [r, c](const TensorNode& self, const std::vector<double>& g, const GradSinks& sinks) {
        if (!sinks[0]) return;
        for (std::size_t i = 0; i < r; ++i) {
          const double* y = self.value.data() + i * c;
          const double* gy = g.data() + i * c;
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
          double* gx = sinks[0]->data() + i * c;
          for (std::size_t j = 0; j < c; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
      });
}

Tensor log_softmax_lastdim(const Tensor& x) {
  const std::size_t c = last_dim(x.shape()), r = outer_dim(x.shape());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.value().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  return Tensor::make_op(
      "log_softmax", x.shape(), std::move(out), {x},
      [r, c](const TensorNode& self, const std::vector<double>& g, const GradSinks& sinks) {
        if (!sinks[0]) return;
        for (std::size_t i = 0; i < r; ++i) {
          const double* y = self.value.data() + i * c;
          const double* gy = g.data() + i * c;
          double gsum = 0.0;
          for (std::size_t j = 0; j < c; ++j) gsum += gy[j];
          double* gx = sinks[0]->data() + i * c;
          for (std::size_t j = 0; j < c; ++j) gx[j] += gy[j] - std::exp(y[j]) * gsum;
        }
      });
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t c = last_dim(x.shape()), r = outer_dim(x.shape());
  require(gain.rank() == 1 && gain.shape()[0] == c, "layernorm: gain shape mismatch");
  require(bias.rank() == 1 && bias.shape()[0] == c, "layernorm: bias shape mismatch");
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.value().data() + i * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + kLayernormEps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mean) * is;
      out[i * c + j] = xhat[i * c + j] * gain.value()[j] + bias.value()[j];
    }
  }
  return Tensor::make_op(
      "layernorm", x.shape(), std::move(out), {x, gain, bias},
      [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const TensorNode& self, const std::vector<double>& g, const GradSinks& sinks) {
        const auto& gv = self.parents[1].value();
        for (std::size_t i = 0; i < r; ++i) {
          const double* gy = g.data() + i * c;
          const double* xh = xhat.data() + i * c;
          if (sinks[0]) {
            double mean_gxh = 0.0, mean_gxh_xh = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double gxh = gy[j] * gv[j];
              mean_gxh += gxh;
              mean_gxh_xh += gxh * xh[j];
            }
            mean_gxh /= static_cast<double>(c);
            mean_gxh_xh /= static_cast<double>(c);
            double* gx = sinks[0]->data() + i * c;
            for (std::size_t j = 0; j < c; ++j) {
              const double gxh = gy[j] * gv[j];
              gx[j] += inv_std[i] * (gxh - mean_gxh - xh[j] * mean_gxh_xh);
            }
          }
          if (sinks[1])
            for (std::size_t j = 0; j < c; ++j) (*sinks[1])[j] += gy[j] * xh[j];
          if (sinks[2])
            for (std::size_t j = 0; j < c; ++j) (*sinks[2])[j] += gy[j];
        }
      });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.value()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  return Tensor::make_op(
      "gelu", x.shape(), std::move(out), {x},
      [](const TensorNode& self, const std::vector<double>& g, const GradSinks& sinks) {
        if (!sinks[0]) return;
        const auto& xv = self.parents[0].value();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double v = xv[i];
          const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
          (*sinks[0])[i] += g[i] * (cdf + v * pdf);
        }
      });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.value()[i]);
  return Tensor::make_op(
      "relu", x.shape(), std::move(out), {x},
      [](const TensorNode& self, const std::vector<double>& g, const GradSinks& sinks) {
        if (!sinks[0]) return;
        const auto& xv = self.parents[0].value();
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xv[i] > 0.0) (*sinks[0])[i] += g[i];
      });
}

Tensor mean_lastaxis(const Tensor& x) {
  const std::size_t c = last_dim(x.shape()), r = outer_dim(x.shape());
  require(c >= 1, "mean_lastaxis: empty axis");
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i] += x.value()[i * c + j];
    out[i] /= static_cast<double>(c);
  }
  Shape oshape = x.rank() <= 1 ? Shape{1} : Shape(x.shape().begin(), x.shape().end() - 1);
  return Tensor::make_op(
      "mean_lastaxis", std::move(oshape), std::move(out), {x},
      [r, c](const TensorNode&, const std::vector<double>& g, const GradSinks& sinks) {
        if (!sinks[0]) return;
        for (std::size_t i = 0; i < r; ++i) {
          const double gi = g[i] / static_cast<double>(c);
          for (std::size_t j = 0; j < c; ++j) (*sinks[0])[i * c + j] += gi;
        }
      });
}

Tensor mean_rows(const Tensor& x) {
  require(x.rank() == 2, "mean_rows: input must be 2-D");
  const std::size_t r = x.rows(), c = x.cols();
  require(r >= 1, "mean_rows: empty sequence");
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += x.value()[i * c + j];
  for (std::size_t j = 0; j < c; ++j) out[j] /= static_cast<double>(r);
  return Tensor::make_op(
      "mean_rows", {c}, std::move(out), {x},
      [r, c](const TensorNode&, const std::vector<double>& g, const GradSinks& sinks) {
        if (!sinks[0]) return;
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            (*sinks[0])[i * c + j] += g[j] / static_cast<double>(r);
      });
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.value()) s += v;
  return Tensor::make_op(
      "sum_all", {1}, {s}, {x},
      [](const TensorNode&, const std::vector<double>& g, const GradSinks& sinks) {
        if (!sinks[0]) return;
        for (double& gi : *sinks[0]) gi += g[0];
      });
}

Tensor l2_normalize(const Tensor& x) {
  const std::size_t c = last_dim(x.shape()), r = outer_dim(x.shape());
  std::vector<double> out(x.numel());
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += x.value()[i * c + j] * x.value()[i * c + j];
    norms[i] = std::max(std::sqrt(ss), kL2Floor);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.value()[i * c + j] / norms[i];
  }
  return Tensor::make_op(
      "l2_normalize", x.shape(), std::move(out), {x},
      [r, c, norms = std::move(norms)](const TensorNode& self, const std::vector<double>& g,
                                       const GradSinks& sinks) {
        if (!sinks[0]) return;
        const auto& xv = self.parents[0].value();
        for (std::size_t i = 0; i < r; ++i) {
          const double n = norms[i];
          const bool floored = n <= kL2Floor;
          double dot = 0.0;
          if (!floored) {
            for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * xv[i * c + j];
          }
          for (std::size_t j = 0; j < c; ++j) {
            double gx = g[i * c + j] / n;
            if (!floored) gx -= xv[i * c + j] * dot / (n * n * n);
            (*sinks[0])[i * c + j] += gx;
          }
        }
      });
}

Tensor mul_scalar_tensor(const Tensor& x, const Tensor& s) {
  require(s.numel() == 1, "mul_scalar_tensor: scale must have one element");
  const double sv = s.value()[0];
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * sv;
  return Tensor::make_op(
      "mul_scalar_tensor", x.shape(), std::move(out), {x, s},
      [](const TensorNode& self, const std::vector<double>& g, const GradSinks& sinks) {
        const auto& xv = self.parents[0].value();
        const double sv2 = self.parents[1].value()[0];
        if (sinks[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*sinks[0])[i] += g[i] * sv2;
        if (sinks[1]) {
          double acc = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
          (*sinks[1])[0] += acc;
        }
      });
}

// ---------------------------------------------------------------------------
// structural
// ---------------------------------------------------------------------------

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  require(x.rank() == 2, "slice_cols: input must be 2-D");
  const std::size_t r = x.rows(), c = x.cols();
  require(c0 < c1 && c1 <= c, "slice_cols: bad column range");
  const std::size_t w = c1 - c0;
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x.value()[i * c + c0 + j];
  return Tensor::make_op(
      "slice_cols", {r, w}, std::move(out), {x},
      [r, c, c0, w](const TensorNode&, const std::vector<double>& g, const GradSinks& sinks) {
        if (!sinks[0]) return;
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) (*sinks[0])[i * c + c0 + j] += g[i * w + j];
      });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  widths.reserve(parts.size());
  for (const Tensor& p : parts) {
    require(p.rank() == 2 && p.rows() == r, "concat_cols: row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = widths[k];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * total + off + j] = parts[k].value()[i * w + j];
    off += w;
  }
  return Tensor::make_op(
      "concat_cols", {r, total}, std::move(out),
      std::vector<Tensor>(parts.begin(), parts.end()),
      [r, total, widths = std::move(widths)](const TensorNode&, const std::vector<double>& g,
                                             const GradSinks& sinks) {
        std::size_t off2 = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          const std::size_t w = widths[k];
          if (sinks[k]) {
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < w; ++j)
                (*sinks[k])[i * w + j] += g[i * total + off2 + j];
          }
          off2 += w;
        }
      });
}

Tensor stack_rows(std::span<const Tensor> rows) {
  require(!rows.empty(), "stack_rows: no inputs");
  const std::size_t c = rows[0].numel();
  for (const Tensor& t : rows)
    require(t.rank() == 1 && t.numel() == c, "stack_rows: rows must be 1-D of equal length");
  std::vector<double> out;
  out.reserve(rows.size() * c);
  for (const Tensor& t : rows) out.insert(out.end(), t.value().begin(), t.value().end());
  return Tensor::make_op(
      "stack_rows", {rows.size(), c}, std::move(out),
      std::vector<Tensor>(rows.begin(), rows.end()),
      [c](const TensorNode&, const std::vector<double>& g, const GradSinks& sinks) {
        for (std::size_t k = 0; k < sinks.size(); ++k) {
          if (!sinks[k]) continue;
          for (std::size_t j = 0; j < c; ++j) (*sinks[k])[j] += g[k * c + j];
        }
      });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  require(x.rank() == 2, "gather_rows: input must be 2-D");
  const std::size_t r = x.rows(), c = x.cols();
  for (std::size_t i : idx) require(i < r, "gather_rows: index out of range");
  std::vector<double> out(idx.size() * c);
  for (std::size_t k = 0; k < idx.size(); ++k)
    for (std::size_t j = 0; j < c; ++j) out[k * c + j] = x.value()[idx[k] * c + j];
  return Tensor::make_op(
      "gather_rows", {idx.size(), c}, std::move(out), {x},
      [c, idx](const TensorNode&, const std::vector<double>& g, const GradSinks& sinks) {
        if (!sinks[0]) return;
        for (std::size_t k = 0; k < idx.size(); ++k)
          for (std::size_t j = 0; j < c; ++j) (*sinks[0])[idx[k] * c + j] += g[k * c + j];
      });
}

Tensor diag_part(const Tensor& x) {
  require(x.rank() == 2 && x.rows() == x.cols(), "diag_part: input must be square");
  const std::size_t n = x.rows();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.value()[i * n + i];
  return Tensor::make_op(
      "diag_part", {n}, std::move(out), {x},
      [n](const TensorNode&, const std::vector<double>& g, const GradSinks& sinks) {
        if (!sinks[0]) return;
        for (std::size_t i = 0; i < n; ++i) (*sinks[0])[i * n + i] += g[i];
      });
}

// ---------------------------------------------------------------------------
// reverse sweep
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: root must be a defined scalar tensor");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; each node appears once, after all nodes that
  // consume it have been emitted in the reversed order.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].node();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  // Scratch gradients live per sweep; only leaves keep persistent grad, so
  // repeated backward calls accumulate on leaves without double counting.
  std::unordered_map<TensorNode*, std::vector<double>> scratch;
  scratch.reserve(order.size());
  for (TensorNode* n : order) scratch.emplace(n, std::vector<double>(n->value.size(), 0.0));
  scratch[loss.node()][0] = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->is_leaf() || !n->backprop) continue;
    GradSinks sinks(n->parents.size(), nullptr);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      TensorNode* p = n->parents[i].node();
      if (p->requires_grad) sinks[i] = &scratch.at(p);
    }
    n->backprop(*n, scratch.at(n), sinks);
  }

  for (TensorNode* n : order) {
    if (!n->is_leaf() || !n->requires_grad) continue;
    auto& acc = n->grad;
    const auto& src = scratch.at(n);
    if (acc.empty()) acc.assign(n->value.size(), 0.0);
    for (std::size_t i = 0; i < src.size(); ++i) acc[i] += src[i];
  }
}

}  // namespace croma
