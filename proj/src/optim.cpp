#include "croma/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace croma {

AdamW::AdamW(std::vector<Tensor> params) : AdamW(std::move(params), Options()) {}

AdamW::AdamW(std::vector<Tensor> params, Options opts)
    : params_(std::move(params)), opts_(opts) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    if (!p.requires_grad() || !p.node()->is_leaf())
      throw std::invalid_argument("AdamW: parameters must be requires_grad leaves");
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    auto& value = p.mutable_value();
    const auto& g = p.grad();
    if (g.empty()) continue;  // leaf never touched a graph; leave it alone
    for (double gi : g) {
      if (!std::isfinite(gi)) throw std::runtime_error("AdamW: non-finite gradient");
    }
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] -= lr * (mhat / (std::sqrt(vhat) + opts_.eps) + opts_.weight_decay * value[i]);
    }
  }
  for (Tensor& p : params_) p.zero_grad();
}

std::int64_t LrSchedule::warmup_steps() const {
  if (warmup_frac <= 0.0) return 0;
  auto w = static_cast<std::int64_t>(std::floor(warmup_frac * static_cast<double>(total_steps)));
  return std::min(std::max<std::int64_t>(w, 1), total_steps);
}

double LrSchedule::at(std::int64_t step) const {
  if (step < 0 || step > total_steps)
    throw std::out_of_range("LrSchedule: step outside [0, total_steps]");
  const std::int64_t w = warmup_steps();
  if (step < w) return base_rate * static_cast<double>(step) / static_cast<double>(w);
  if (total_steps == w) return base_rate;
  const double progress =
      static_cast<double>(step - w) / static_cast<double>(total_steps - w);
  return base_rate * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace croma
