#include "croma/gradcheck.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "croma/rng.hpp"

namespace croma {

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
  const Tensor out = f();
  if (out.numel() != 1) throw std::invalid_argument("check_gradients: f must return a scalar");
  const double v = out.item();
  if (!std::isfinite(v)) throw std::runtime_error("check_gradients: non-finite f evaluation");
  return v;
}

double rel_error(double g_ad, double g_fd) {
  const double denom = std::max({std::fabs(g_ad), std::fabs(g_fd), 1e-8});
  return std::fabs(g_ad - g_fd) / denom;
}

}  // namespace

GradCheckReport check_gradients(const std::function<Tensor()>& f,
                                const std::vector<std::pair<std::string, Tensor>>& params,
                                const GradCheckOptions& opts) {
  GradCheckReport report;

  for (const auto& [name, p] : params) {
    if (!p.requires_grad() || !p.node()->is_leaf())
      throw std::invalid_argument("check_gradients: '" + name + "' is not a parameter leaf");
  }

  // One reverse sweep gives the analytic gradient for every parameter.
  for (const auto& [name, p] : params) const_cast<Tensor&>(p).zero_grad();
  {
    Tensor loss = f();
    if (loss.numel() != 1) throw std::invalid_argument("check_gradients: f must return a scalar");
    if (!std::isfinite(loss.item()))
      throw std::runtime_error("check_gradients: non-finite f evaluation");
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params) {
    analytic.push_back(p.grad().empty() ? std::vector<double>(p.numel(), 0.0) : p.grad());
    const_cast<Tensor&>(p).zero_grad();
  }

  Rng rng(opts.seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& p = params[k].second;
    GradCheckEntry entry;
    entry.name = params[k].first;
    auto& value = const_cast<Tensor&>(p).mutable_value();
    const std::size_t n = value.size();

    auto probe = [&](const std::vector<double>& dir, double g_ad) {
      const std::vector<double> saved = value;
      for (std::size_t i = 0; i < n; ++i) value[i] = saved[i] + opts.step * dir[i];
      const double f_plus = eval_scalar(f);
      for (std::size_t i = 0; i < n; ++i) value[i] = saved[i] - opts.step * dir[i];
      const double f_minus = eval_scalar(f);
      value = saved;
      const double g_fd = (f_plus - f_minus) / (2.0 * opts.step);
      entry.max_rel_error = std::max(entry.max_rel_error, rel_error(g_ad, g_fd));
      ++entry.probes;
    };

    if (n <= opts.coord_limit) {
      std::vector<double> dir(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        dir[i] = 1.0;
        probe(dir, analytic[k][i]);
        dir[i] = 0.0;
      }
    } else {
      for (std::size_t q = 0; q < opts.probes_per_param; ++q) {
        std::vector<double> dir(n);
        double g_ad = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          dir[i] = (rng.next_u64() & 1) ? 1.0 : -1.0;
          g_ad += dir[i] * analytic[k][i];
        }
        probe(dir, g_ad);
      }
    }

    entry.pass = entry.max_rel_error <= opts.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.pass = report.pass && entry.pass;
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  for (const auto& e : per_param) {
    os << (e.pass ? "  ok   " : "  FAIL ") << e.name << "  max_rel_err=" << e.max_rel_error
       << "  probes=" << e.probes << "\n";
  }
  os << (pass ? "PASS" : "FAIL") << "  overall max_rel_err=" << max_rel_error << "\n";
  return os.str();
}

}  // namespace croma
