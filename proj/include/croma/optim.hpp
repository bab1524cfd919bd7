#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "croma/tensor.hpp"

namespace croma {

// Decoupled-weight-decay Adam over a fixed list of parameter leaves.
// Moment buffers are keyed by position, so the parameter list must not be
// reordered between steps.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.01;
    double eps = 1e-8;  // unspecified upstream; standard default
  };

  explicit AdamW(std::vector<Tensor> params);
  AdamW(std::vector<Tensor> params, Options opts);

  // One update using each parameter's accumulated .grad; clears grads after.
  void step(double lr);

  std::int64_t step_count() const { return t_; }
  const Options& options() const { return opts_; }
  const std::vector<Tensor>& params() const { return params_; }

  // Moment buffers, exposed for checkpointing.
  std::vector<double>& first_moment(std::size_t i) { return m_[i]; }
  std::vector<double>& second_moment(std::size_t i) { return v_[i]; }
  void set_step_count(std::int64_t t) { t_ = t; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
  Options opts_;
};

// Linear warmup to the base rate, then cosine decay to zero.
struct LrSchedule {
  double base_rate = 1e-3;
  double warmup_frac = 0.05;
  std::int64_t total_steps = 0;

  std::int64_t warmup_steps() const;
  double at(std::int64_t step) const;
};

}  // namespace croma
