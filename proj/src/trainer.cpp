#include "croma/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "croma/container.hpp"
#include "croma/optim.hpp"

namespace croma {

using nlohmann::json;
namespace fs = std::filesystem;

void RunConfig::validate() const {
  model.validate();
  if (steps == 0 && checkpoint_every != 0)
    throw std::invalid_argument("run config: checkpoint cadence without steps");
  if (batch_size == 0) throw std::invalid_argument("run config: batch size must be positive");
  if (base_lr <= 0.0) throw std::invalid_argument("run config: base lr must be positive");
  if (warmup_frac < 0.0 || warmup_frac >= 1.0)
    throw std::invalid_argument("run config: warmup fraction must be in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("run config: negative weight decay");
}

RunConfig run_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  static const std::vector<std::string> known = {
      "model",       "steps",   "batch_size",  "base_lr", "warmup_frac", "weight_decay",
      "seed",        "dataset", "out_dir",     "checkpoint_every",       "augment"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::invalid_argument("run config: unknown key '" + it.key() + "'");
  }
  RunConfig cfg;
  if (j.contains("model")) cfg.model = model_config_from_json(j.at("model").dump());
  cfg.steps = j.value("steps", cfg.steps);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.base_lr = j.value("base_lr", cfg.base_lr);
  cfg.warmup_frac = j.value("warmup_frac", cfg.warmup_frac);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.dataset_dir = j.value("dataset", cfg.dataset_dir);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    static const std::vector<std::string> aknown = {"enabled", "crop_min_frac", "flips",
                                                    "rotations", "mixup_alpha"};
    for (auto it = a.begin(); it != a.end(); ++it) {
      if (std::find(aknown.begin(), aknown.end(), it.key()) == aknown.end())
        throw std::invalid_argument("run config: unknown augment key '" + it.key() + "'");
    }
    cfg.augment.enabled = a.value("enabled", cfg.augment.enabled);
    cfg.augment.crop_min_frac = a.value("crop_min_frac", cfg.augment.crop_min_frac);
    cfg.augment.flips = a.value("flips", cfg.augment.flips);
    cfg.augment.rotations = a.value("rotations", cfg.augment.rotations);
    cfg.augment.mixup_alpha = a.value("mixup_alpha", cfg.augment.mixup_alpha);
  }
  return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["model"] = json::parse(model_config_to_json(cfg.model));
  j["steps"] = cfg.steps;
  j["batch_size"] = cfg.batch_size;
  j["base_lr"] = cfg.base_lr;
  j["warmup_frac"] = cfg.warmup_frac;
  j["weight_decay"] = cfg.weight_decay;
  j["seed"] = cfg.seed;
  j["dataset"] = cfg.dataset_dir;
  j["out_dir"] = cfg.out_dir;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["augment"] = {{"enabled", cfg.augment.enabled},
                  {"crop_min_frac", cfg.augment.crop_min_frac},
                  {"flips", cfg.augment.flips},
                  {"rotations", cfg.augment.rotations},
                  {"mixup_alpha", cfg.augment.mixup_alpha}};
  return j.dump(2);
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string metrics_csv_header() {
  return "# croma-metrics-v1\nstep,lr,l_con,l_mae_optical,l_mae_radar,total,sigma\n";
}

std::string metrics_csv_row(const MetricsRow& r) {
  std::string out = std::to_string(r.step);
  for (double v : {r.lr, r.l_con, r.l_mae_optical, r.l_mae_radar, r.total, r.sigma}) {
    out += ',';
    out += fmt_double(v);
  }
  out += '\n';
  return out;
}

PretrainOutput pretrain(const RunConfig& cfg, const Dataset& dataset, CromaModel& model) {
  cfg.validate();
  if (dataset.size() == 0) throw std::invalid_argument("pretrain: empty dataset");
  if (dataset.image_size != cfg.model.image_size)
    throw std::invalid_argument("pretrain: dataset image size does not match model config");

  const bool write_outputs = !cfg.out_dir.empty();
  std::ofstream metrics;
  if (write_outputs) {
    fs::create_directories(cfg.out_dir);
    std::ofstream resolved(fs::path(cfg.out_dir) / "config.json", std::ios::trunc);
    resolved << run_config_to_json(cfg) << "\n";
    metrics.open(fs::path(cfg.out_dir) / "metrics.csv", std::ios::trunc);
    if (!metrics) throw std::runtime_error("pretrain: cannot open metrics.csv");
    metrics << metrics_csv_header();
  }

  AdamW::Options aopts;
  aopts.weight_decay = cfg.weight_decay;
  AdamW optimizer(model.params().tensors(), aopts);
  LrSchedule schedule{cfg.effective_lr(), cfg.warmup_frac,
                      static_cast<std::int64_t>(cfg.steps)};

  // Deterministic substreams: batch order, augmentation, and masks never
  // share draws, so toggling one knob does not shift the others.
  Rng order_rng = Rng::derive(cfg.seed, 1);
  const std::uint64_t augment_stream = cfg.seed ^ 0xa46d17ULL;
  const std::uint64_t mask_stream = cfg.seed ^ 0x3a53ULL;

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  order_rng.shuffle(order);
  std::size_t cursor = 0;
  const auto next_index = [&]() {
    if (cursor == order.size()) {
      order_rng.shuffle(order);
      cursor = 0;
    }
    return order[cursor++];
  };

  PretrainOutput output;
  const std::size_t l = cfg.model.patches();
  const bool checks_were_on = finite_checks_enabled();
  set_finite_checks(false);  // the loss scalar is checked every step instead

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<PairedSample> batch;
    batch.reserve(cfg.batch_size);
    for (std::size_t slot = 0; slot < cfg.batch_size; ++slot)
      batch.push_back(dataset.normalized(next_index()));
    Rng aug_rng = Rng::derive(augment_stream, step);
    augment_batch(batch, cfg.model.channels_radar, cfg.model.channels_optical,
                  cfg.model.image_size, aug_rng, cfg.augment);

    std::vector<MaskPlan> plans;
    plans.reserve(cfg.batch_size);
    std::vector<ForwardResult> results;
    results.reserve(cfg.batch_size);
    std::vector<const PairedSample*> sample_ptrs;
    sample_ptrs.reserve(cfg.batch_size);
    for (std::size_t slot = 0; slot < cfg.batch_size; ++slot) {
      Rng mask_rng = Rng::derive(mask_stream, step * cfg.batch_size + slot);
      MaskPlan plan = sample_mask(l, cfg.model.mask_ratio, cfg.model.mask_policy, mask_rng);
      plan.seed = step * cfg.batch_size + slot;
      results.push_back(model.forward_full(batch[slot], plan));
      plans.push_back(std::move(plan));
      sample_ptrs.push_back(&batch[slot]);
    }

    const LossBreakdown loss = combined_loss(model, results, sample_ptrs, plans);
    const double lr = schedule.at(static_cast<std::int64_t>(step));
    const double total_value = loss.total.item();
    if (!std::isfinite(total_value)) {
      set_finite_checks(checks_were_on);
      if (write_outputs)
        model.save_checkpoint((fs::path(cfg.out_dir) / ("abort-step" + std::to_string(step)))
                                  .string(),
                              cfg.seed);
      throw std::runtime_error("pretrain: non-finite loss at step " + std::to_string(step));
    }
    backward(loss.total);
    optimizer.step(lr);

    MetricsRow row{step, lr,         loss.l_con, loss.l_mae_optical,
                   loss.l_mae_radar, total_value, loss.sigma};
    if (write_outputs) metrics << metrics_csv_row(row);
    output.history.push_back(row);

    if (write_outputs && cfg.checkpoint_every != 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 != cfg.steps) {
      model.save_checkpoint(
          (fs::path(cfg.out_dir) / ("step" + std::to_string(step + 1))).string(), cfg.seed);
    }
  }
  set_finite_checks(checks_were_on);

  if (write_outputs) {
    output.checkpoint_dir = (fs::path(cfg.out_dir) / "final").string();
    model.save_checkpoint(output.checkpoint_dir, cfg.seed);
  }
  return output;
}

PretrainOutput pretrain(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.dataset_dir.empty()) throw std::invalid_argument("pretrain: no dataset directory");
  const Dataset dataset = load_dataset(cfg.dataset_dir);
  CromaModel model(cfg.model, cfg.seed);
  return pretrain(cfg, dataset, model);
}

void write_embedding_table(const EmbeddingTable& table, const std::string& out_prefix) {
  write_crma(out_prefix + ".crma", {table.n, table.dim}, table.features);
  json j;
  j["format"] = "croma-embeddings-v1";
  j["n"] = table.n;
  j["dim"] = table.dim;
  j["split"] = table.split;
  j["source"] = table.source;
  j["labels"] = table.labels;
  std::ofstream os(out_prefix + ".json", std::ios::trunc);
  if (!os) throw std::runtime_error("write_embedding_table: cannot write " + out_prefix);
  os << j.dump(2) << "\n";
}

EmbeddingTable read_embedding_table(const std::string& out_prefix) {
  std::ifstream is(out_prefix + ".json");
  if (!is) throw std::runtime_error("read_embedding_table: no sidecar for " + out_prefix);
  json j;
  is >> j;
  if (j.value("format", "") != "croma-embeddings-v1")
    throw std::runtime_error("read_embedding_table: unrecognized format");
  EmbeddingTable table;
  table.n = j.at("n").get<std::size_t>();
  table.dim = j.at("dim").get<std::size_t>();
  table.split = j.at("split").get<std::string>();
  table.source = j.at("source").get<std::string>();
  table.labels = j.at("labels").get<std::vector<int>>();
  CrmaArray arr = read_crma(out_prefix + ".crma");
  if (arr.shape != Shape{table.n, table.dim})
    throw std::runtime_error("read_embedding_table: container shape mismatch");
  table.features = std::move(arr.data);
  table.validate();
  return table;
}

GradCheckReport gradcheck_full_model(const ModelConfig& cfg, std::size_t batch,
                                     std::uint64_t seed, const GradCheckOptions& opts) {
  cfg.validate();
  WorldConfig world;
  world.seed = seed;
  world.image_size = cfg.image_size;
  world.channels_radar = cfg.channels_radar;
  world.channels_optical = cfg.channels_optical;
  const Dataset ds = generate(world, batch);

  CromaModel model(cfg, seed + 1);
  std::vector<PairedSample> samples;
  std::vector<MaskPlan> plans;
  for (std::size_t i = 0; i < batch; ++i) {
    samples.push_back(ds.normalized(i));
    Rng mask_rng = Rng::derive(seed + 2, i);
    plans.push_back(sample_mask(cfg.patches(), cfg.mask_ratio, cfg.mask_policy, mask_rng));
  }

  const auto f = [&]() {
    std::vector<ForwardResult> results;
    std::vector<const PairedSample*> ptrs;
    for (std::size_t i = 0; i < batch; ++i) {
      results.push_back(model.forward_full(samples[i], plans[i]));
      ptrs.push_back(&samples[i]);
    }
    return combined_loss(model, results, ptrs, plans).total;
  };
  return check_gradients(f, model.params().items(), opts);
}

}  // namespace croma
