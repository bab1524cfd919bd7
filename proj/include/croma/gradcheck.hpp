#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "croma/tensor.hpp"

namespace croma {

struct GradCheckOptions {
  double step = 1e-5;              // central-difference half step
  double tolerance = 1e-4;         // max allowed relative error
  std::size_t coord_limit = 8;     // numel <= limit: probe every coordinate
  std::size_t probes_per_param = 4;  // larger tensors: random +/-1 directions
  std::uint64_t seed = 0x5eed;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_param;
  double max_rel_error = 0.0;
  bool pass = true;

  std::string summary() const;
};

// Compares reverse-mode gradients of a deterministic scalar function against
// central finite differences. Small tensors are probed along every coordinate
// axis; larger ones along random Rademacher directions, where the analytic
// directional derivative v'g is checked against (f(x+hv) - f(x-hv)) / 2h.
// Relative error is |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
GradCheckReport check_gradients(const std::function<Tensor()>& f,
                                const std::vector<std::pair<std::string, Tensor>>& params,
                                const GradCheckOptions& opts = {});

}  // namespace croma
