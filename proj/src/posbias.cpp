#include "croma/posbias.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <stdexcept>
#include <tuple>

namespace croma {

Tensor BiasStack::head_tensor(std::size_t h) const {
  if (h >= heads) throw std::out_of_range("BiasStack: head index out of range");
  std::vector<double> v(data.begin() + static_cast<std::ptrdiff_t>(h * lq * lk),
                        data.begin() + static_cast<std::ptrdiff_t>((h + 1) * lq * lk));
  return Tensor::constant({lq, lk}, std::move(v));
}

std::vector<double> slopes(std::size_t n_heads) {
  if (n_heads == 0) throw std::invalid_argument("slopes: n_heads must be >= 1");
  std::vector<double> m(n_heads);
  for (std::size_t h = 1; h <= n_heads; ++h) {
    m[h - 1] = std::pow(2.0, -8.0 * static_cast<double>(h) / static_cast<double>(n_heads));
  }
  return m;
}

double grid_distance(const GridSpec& spec, std::size_t i, std::size_t j) {
  if (i >= spec.length() || j >= spec.length())
    throw std::out_of_range("grid_distance: index out of range");
  const double dr = static_cast<double>(spec.row_of(i)) - static_cast<double>(spec.row_of(j));
  const double dc = static_cast<double>(spec.col_of(i)) - static_cast<double>(spec.col_of(j));
  return std::sqrt(dr * dr + dc * dc);
}

namespace {

BiasStack build_full(const GridSpec& spec, std::size_t n_heads, BiasProvenance prov) {
  const std::size_t l = spec.length();
  BiasStack stack;
  stack.heads = n_heads;
  stack.lq = l;
  stack.lk = l;
  stack.slopes_m = slopes(n_heads);
  stack.provenance = prov;
  stack.data.resize(n_heads * l * l);
  // Distances depend only on the grid; compute once and scale per head.
  std::vector<double> dist(l * l);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j) dist[i * l + j] = grid_distance(spec, i, j);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const double m = stack.slopes_m[h];
    double* out = stack.data.data() + h * l * l;
    for (std::size_t e = 0; e < l * l; ++e) out[e] = -dist[e] * m;
  }
  return stack;
}

void validate_kept(const std::vector<std::size_t>& kept, std::size_t limit, const char* what) {
  for (std::size_t k = 0; k < kept.size(); ++k) {
    if (kept[k] >= limit)
      throw std::out_of_range(std::string("mask_bias: ") + what + " index out of range");
    if (k > 0 && kept[k] <= kept[k - 1])
      throw std::invalid_argument(std::string("mask_bias: ") + what +
                                  " indices must be sorted and unique");
  }
}

}  // namespace

BiasStack build_2d_alibi(const GridSpec& spec, std::size_t n_heads) {
  return build_full(spec, n_heads, BiasProvenance::kSelf);
}

BiasStack build_x_alibi(const GridSpec& spec, std::size_t n_heads) {
  return build_full(spec, n_heads, BiasProvenance::kCross);
}

BiasStack mask_bias(const BiasStack& stack, const std::vector<std::size_t>& kept_rows,
                    const std::vector<std::size_t>& kept_cols) {
  validate_kept(kept_rows, stack.lq, "row");
  validate_kept(kept_cols, stack.lk, "col");
  BiasStack out;
  out.heads = stack.heads;
  out.lq = kept_rows.size();
  out.lk = kept_cols.size();
  out.slopes_m = stack.slopes_m;
  out.provenance = stack.provenance;
  out.data.resize(out.heads * out.lq * out.lk);
  for (std::size_t h = 0; h < out.heads; ++h)
    for (std::size_t i = 0; i < out.lq; ++i)
      for (std::size_t j = 0; j < out.lk; ++j)
        out.data[(h * out.lq + i) * out.lk + j] = stack.at(h, kept_rows[i], kept_cols[j]);
  return out;
}

namespace {

struct BiasKey {
  std::size_t rows, cols, heads;
  std::vector<std::size_t> kept_q, kept_k;
  BiasProvenance prov;

  bool operator<(const BiasKey& o) const {
    return std::tie(rows, cols, heads, kept_q, kept_k, prov) <
           std::tie(o.rows, o.cols, o.heads, o.kept_q, o.kept_k, o.prov);
  }
};

std::shared_mutex g_cache_mutex;
std::map<BiasKey, BiasStack> g_cache;

}  // namespace

const BiasStack& cached_bias(const GridSpec& spec, std::size_t n_heads,
                             const std::vector<std::size_t>& kept_rows,
                             const std::vector<std::size_t>& kept_cols,
                             BiasProvenance provenance) {
  BiasKey key{spec.rows, spec.cols, n_heads, kept_rows, kept_cols, provenance};
  {
    std::shared_lock lock(g_cache_mutex);
    auto it = g_cache.find(key);
    if (it != g_cache.end()) return it->second;
  }
  BiasStack built = mask_bias(build_full(spec, n_heads, provenance), kept_rows, kept_cols);
  std::unique_lock lock(g_cache_mutex);
  auto [it, inserted] = g_cache.emplace(std::move(key), std::move(built));
  return it->second;
}

void clear_bias_cache() {
  std::unique_lock lock(g_cache_mutex);
  g_cache.clear();
}

std::size_t bias_cache_size() {
  std::shared_lock lock(g_cache_mutex);
  return g_cache.size();
}

Tensor sinusoidal_2d(const GridSpec& spec, std::size_t dim) {
  if (dim % 4 != 0) throw std::invalid_argument("sinusoidal_2d: dim must be divisible by 4");
  const std::size_t l = spec.length();
  const std::size_t half = dim / 2;     // channels per axis
  const std::size_t pairs = half / 2;   // sin/cos pairs per axis
  std::vector<double> out(l * dim);
  for (std::size_t i = 0; i < l; ++i) {
    const auto encode_axis = [&](double pos, std::size_t offset) {
      for (std::size_t p = 0; p < pairs; ++p) {
        const double freq =
            std::pow(10000.0, -2.0 * static_cast<double>(p) / static_cast<double>(half));
        out[i * dim + offset + 2 * p] = std::sin(pos * freq);
        out[i * dim + offset + 2 * p + 1] = std::cos(pos * freq);
      }
    };
    encode_axis(static_cast<double>(spec.row_of(i)), 0);
    encode_axis(static_cast<double>(spec.col_of(i)), half);
  }
  return Tensor::constant({l, dim}, std::move(out));
}

std::string format_distance_grid(const GridSpec& spec) {
  const std::size_t l = spec.length();
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t j = 0; j < l; ++j) {
      std::snprintf(buf, sizeof(buf), "%s%.1f", j ? " " : "", grid_distance(spec, i, j));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace croma
