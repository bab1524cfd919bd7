#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "croma/model.hpp"
#include "croma/synthdata.hpp"

namespace croma {

struct EmbeddingTable {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> features;  // n x dim
  std::vector<int> labels;       // single-label targets
  std::string split;             // "train" | "val"
  std::string source;            // "R" | "O" | "RO" | "concat" | task tag

  const double* row(std::size_t i) const { return features.data() + i * dim; }
  void validate() const;  // row count matches labels, finite features
};

enum class EmbedSource { kRadar, kOptical, kFused, kConcat };
EmbedSource embed_source_from_string(const std::string& s);
std::string to_string(EmbedSource s);

// Unmasked full-image forward; one row per sample from the pooled
// representations (concat = [R_R | R_O | R_RO], width 3D).
EmbeddingTable embed_dataset(const CromaModel& model, const Dataset& ds, EmbedSource source,
                             const std::string& split);

// One row per patch from the optical patch encodings, labeled with the
// patch-majority synthetic band; used by segmentation-style evaluations.
EmbeddingTable embed_patches(const CromaModel& model, const Dataset& ds,
                             bool interpolate_sinusoids, const std::string& split);

// ---------------------------------------------------------------------------
// probes
// ---------------------------------------------------------------------------

struct ProbeOptions {
  std::size_t epochs = 150;
  std::vector<double> lr_grid = {1e-3, 3e-3, 1e-2};  // desk-scale subset
  bool full_lr_grid = false;  // expands to {1..9}e{-4,-3,-2}
  double weight_decay = 0.0;
  std::uint64_t seed = 17;
  std::size_t mlp_hidden_cap = 2048;  // hidden = min(cap, 4 * dim)

  std::vector<double> effective_lr_grid() const;
};

struct ProbeResult {
  double metric = 0.0;  // accuracy (single-label) or mAP (multi-label)
  double best_lr = 0.0;
  std::vector<int> predictions;  // over the validation table
};

ProbeResult fit_linear_probe(const EmbeddingTable& train, const EmbeddingTable& val,
                             const ProbeOptions& opts = {});
ProbeResult fit_mlp_probe(const EmbeddingTable& train, const EmbeddingTable& val,
                          const ProbeOptions& opts = {});

// Multi-label variant: targets as n x c {0,1} rows, per-class sigmoid scores,
// metric = mean average precision.
ProbeResult fit_linear_probe_multilabel(const EmbeddingTable& train,
                                        const std::vector<std::vector<int>>& train_targets,
                                        const EmbeddingTable& val,
                                        const std::vector<std::vector<int>>& val_targets,
                                        const ProbeOptions& opts = {});

double mean_average_precision(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::vector<int>>& targets);

// ---------------------------------------------------------------------------
// non-parametric evaluations
// ---------------------------------------------------------------------------

// Cosine-similarity kNN with majority vote; ties break on summed similarity.
std::vector<int> knn_classify(const EmbeddingTable& train, const EmbeddingTable& query,
                              std::size_t k = 20);

struct KMeansResult {
  std::vector<std::size_t> assignments;
  std::vector<double> centroids;  // k x dim
  double inertia = 0.0;
  std::vector<std::vector<double>> inertia_per_restart;  // Lloyd curve per restart
};

KMeansResult kmeans_cluster(const EmbeddingTable& table, std::size_t k, std::size_t restarts = 10,
                            std::uint64_t seed = 23);

// Exact minimum-cost assignment on a square cost matrix, O(k^3).
std::vector<std::size_t> hungarian_match(const std::vector<double>& cost, std::size_t k);

// Cluster -> class mapping by Hungarian matching on negated co-occurrence.
double clustering_accuracy(const std::vector<std::size_t>& assignments,
                           const std::vector<int>& labels, std::size_t k);

// ---------------------------------------------------------------------------
// sparse probing
// ---------------------------------------------------------------------------

struct SparseProbeReport {
  std::vector<std::size_t> ranking;  // permutation of 0..dim-1 by |mean diff|
  std::vector<std::size_t> k_values;
  std::vector<double> f1_at_k;
};

SparseProbeReport sparse_probe(const EmbeddingTable& train, const EmbeddingTable& val,
                               int positive_class, const std::vector<std::size_t>& k_list,
                               const ProbeOptions& opts = {});

// ---------------------------------------------------------------------------
// extrapolation + diagnostics
// ---------------------------------------------------------------------------

struct ExtrapolationPoint {
  std::size_t grid_side = 0;
  double accuracy = 0.0;
  bool finite = true;
};

struct ExtrapolationOptions {
  std::size_t n_train = 48;
  std::size_t n_val = 24;
  bool interpolate_sinusoids = false;
  std::uint64_t data_seed_offset = 1000;  // validation draws sit past training indices
  ProbeOptions probe;
};

// Frozen-probe metric per grid: a linear probe fit once on patch encodings at
// the model's training grid, then applied unmodified at each requested grid.
std::vector<ExtrapolationPoint> extrapolation_eval(const CromaModel& model,
                                                   const WorldConfig& world,
                                                   const std::vector<std::size_t>& grid_sides,
                                                   const ExtrapolationOptions& opts = {});

// Mean cosine between pooled optical representations of original and
// transformed inputs, per transform.
std::map<std::string, double> invariance_diagnostic(const CromaModel& model, const Dataset& ds,
                                                    const std::vector<std::string>& transforms);

struct CollapseReport {
  double mean_patch_cosine = 0.0;       // inter-patch cosine, averaged over images
  double position_probe_ce = 0.0;       // cross-entropy of an MLP position probe
};

CollapseReport collapse_diagnostic(const CromaModel& model, const Dataset& train,
                                   const Dataset& val, const ProbeOptions& opts = {});

}  // namespace croma
