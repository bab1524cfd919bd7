#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "croma/evalkit.hpp"
#include "croma/gradcheck.hpp"
#include "croma/model.hpp"
#include "croma/objectives.hpp"
#include "croma/synthdata.hpp"

namespace croma {

struct RunConfig {
  ModelConfig model;
  std::size_t steps = 500;
  std::size_t batch_size = 32;
  double base_lr = 1e-3;  // scaled by batch/256 (linear scaling rule)
  double warmup_frac = 0.05;
  double weight_decay = 0.01;
  std::uint64_t seed = 42;
  std::string dataset_dir;
  std::string out_dir;
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only
  AugmentConfig augment;

  double effective_lr() const {
    return base_lr * static_cast<double>(batch_size) / 256.0;
  }
  void validate() const;
};

// JSON round trip; unknown keys are rejected. CLI flag overrides are applied
// on top of the parsed file by the tool.
RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& cfg);

struct MetricsRow {
  std::size_t step = 0;
  double lr = 0.0;
  double l_con = 0.0;
  double l_mae_optical = 0.0;
  double l_mae_radar = 0.0;
  double total = 0.0;
  double sigma = 0.0;
};

// Fixed, versioned CSV schema; doubles printed with 17 significant digits so
// identical runs emit identical bytes.
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRow& row);

struct PretrainOutput {
  std::vector<MetricsRow> history;
  std::string checkpoint_dir;  // empty when out_dir empty
};

// Full pretraining loop: shuffled batch stream, paired augmentation, per-slot
// mask plans, combined objective, AdamW with warmup+cosine schedule. Training
// state is fully determined by (config, dataset).
PretrainOutput pretrain(const RunConfig& cfg, const Dataset& dataset, CromaModel& model);

// Convenience: fresh model from cfg.seed, dataset loaded from cfg.dataset_dir.
PretrainOutput pretrain(const RunConfig& cfg);

// Writes table.crma (n x dim) and table.json (labels + tags) under out_prefix.
void write_embedding_table(const EmbeddingTable& table, const std::string& out_prefix);
EmbeddingTable read_embedding_table(const std::string& out_prefix);

// Finite-difference audit of the full combined loss on a toy batch.
GradCheckReport gradcheck_full_model(const ModelConfig& cfg, std::size_t batch,
                                     std::uint64_t seed, const GradCheckOptions& opts = {});

}  // namespace croma
