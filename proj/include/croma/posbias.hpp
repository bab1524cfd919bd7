#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "croma/tensor.hpp"

namespace croma {

// Patch grid with row-major flattening: index i <-> (i / cols, i % cols).
struct GridSpec {
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t length() const { return rows * cols; }
  std::size_t row_of(std::size_t i) const { return i / cols; }
  std::size_t col_of(std::size_t i) const { return i % cols; }
};

enum class BiasProvenance { kSelf, kCross };

// Per-head additive attention-bias stack: entry[h][i][j] = -distance(i,j) * slope[h].
struct BiasStack {
  std::size_t heads = 0;
  std::size_t lq = 0;
  std::size_t lk = 0;
  std::vector<double> slopes_m;
  std::vector<double> data;  // heads x lq x lk
  BiasProvenance provenance = BiasProvenance::kSelf;

  double at(std::size_t h, std::size_t i, std::size_t j) const {
    return data[(h * lq + i) * lk + j];
  }
  // Constant [lq x lk] tensor view of one head, for use as an attention bias.
  Tensor head_tensor(std::size_t h) const;
};

// Geometric slope sequence 2^(-8h/n) for h = 1..n; reproduces the published
// 16-head sequence starting at 1/sqrt(2).
std::vector<double> slopes(std::size_t n_heads);

// Euclidean distance between patches i and j in patch units.
double grid_distance(const GridSpec& spec, std::size_t i, std::size_t j);

BiasStack build_2d_alibi(const GridSpec& spec, std::size_t n_heads);

// Cross-attention variant; identical values for aligned sensors, with rows
// indexing the query modality and columns the key modality.
BiasStack build_x_alibi(const GridSpec& spec, std::size_t n_heads);

// Submatrix selection after masking: rows/cols restricted to the kept index
// sets (sorted ascending, unique, in range).
BiasStack mask_bias(const BiasStack& stack, const std::vector<std::size_t>& kept_rows,
                    const std::vector<std::size_t>& kept_cols);

// Memoized build + mask in one step, keyed by (grid, heads, kept sets,
// provenance). Safe for concurrent readers with exclusive insert.
const BiasStack& cached_bias(const GridSpec& spec, std::size_t n_heads,
                             const std::vector<std::size_t>& kept_rows,
                             const std::vector<std::size_t>& kept_cols,
                             BiasProvenance provenance);
void clear_bias_cache();
std::size_t bias_cache_size();

// Fixed 2-D sinusoidal table [L x dim]: first dim/2 channels encode the row
// with standard 1-D sinusoids, the rest encode the column. dim % 4 == 0.
Tensor sinusoidal_2d(const GridSpec& spec, std::size_t dim);

// Fig-style human-readable dump: per-head-free distance grid at one decimal.
std::string format_distance_grid(const GridSpec& spec);

}  // namespace croma
