// croma: synthetic-data pretraining and evaluation toolkit CLI.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "croma/container.hpp"
#include "croma/evalkit.hpp"
#include "croma/posbias.hpp"
#include "croma/synthdata.hpp"
#include "croma/trainer.hpp"

namespace {

using nlohmann::json;
using namespace croma;

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<std::size_t> parse_index_list(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  return out;
}

int cmd_gen(const std::string& out_dir, std::uint64_t seed, std::size_t n, std::size_t size,
            std::size_t classes, double optical_noise, double radar_speckle) {
  WorldConfig world;
  world.seed = seed;
  world.image_size = size;
  world.class_count = classes;
  world.optical_noise = optical_noise;
  world.radar_speckle = radar_speckle;
  const Dataset ds = generate(world, n);
  save_dataset(ds, out_dir);
  std::cout << "wrote " << n << " samples of " << size << "x" << size << " to " << out_dir
            << "\n";
  return 0;
}

int cmd_bias(std::size_t rows, std::size_t cols, std::size_t heads, const std::string& keep_csv,
             const std::string& out_path) {
  const GridSpec spec{rows, cols};
  std::cout << format_distance_grid(spec);
  BiasStack stack = build_2d_alibi(spec, heads);
  if (!keep_csv.empty()) {
    const auto keep = parse_index_list(keep_csv);
    stack = mask_bias(stack, keep, keep);
  }
  if (!out_path.empty()) {
    write_crma(out_path, {stack.heads, stack.lq, stack.lk}, stack.data);
    std::cout << "stack " << stack.heads << "x" << stack.lq << "x" << stack.lk << " -> "
              << out_path << "\n";
  }
  return 0;
}

int cmd_pretrain(RunConfig cfg) {
  if (const char* env_seed = std::getenv("CROMA_SEED")) cfg.seed = std::stoull(env_seed);
  cfg.validate();
  const PretrainOutput out = pretrain(cfg);
  const MetricsRow& last = out.history.back();
  std::cout << "done: " << out.history.size() << " steps, final total=" << last.total
            << " l_con=" << last.l_con << " l_mae=" << last.l_mae_optical + last.l_mae_radar
            << "\n";
  if (!out.checkpoint_dir.empty()) std::cout << "checkpoint: " << out.checkpoint_dir << "\n";
  return 0;
}

int cmd_embed(const std::string& checkpoint, const std::string& dataset_dir,
              const std::string& source, const std::string& split, const std::string& out) {
  const CromaModel model = CromaModel::load_checkpoint(checkpoint);
  const Dataset ds = load_dataset(dataset_dir);
  const EmbeddingTable table = embed_dataset(model, ds, embed_source_from_string(source), split);
  write_embedding_table(table, out);
  std::cout << "wrote " << table.n << "x" << table.dim << " embeddings (" << source << ") to "
            << out << ".crma\n";
  return 0;
}

int cmd_probe(const std::string& train_prefix, const std::string& val_prefix, bool mlp,
              bool full_grid, std::size_t epochs, const std::string& report_path) {
  const EmbeddingTable train = read_embedding_table(train_prefix);
  const EmbeddingTable val = read_embedding_table(val_prefix);
  ProbeOptions opts;
  opts.epochs = epochs;
  opts.full_lr_grid = full_grid;
  const ProbeResult res = mlp ? fit_mlp_probe(train, val, opts) : fit_linear_probe(train, val, opts);
  json report{{"kind", mlp ? "mlp" : "linear"},
              {"metric", res.metric},
              {"best_lr", res.best_lr},
              {"n_train", train.n},
              {"n_val", val.n}};
  std::cout << report.dump(2) << "\n";
  if (!report_path.empty()) std::ofstream(report_path) << report.dump(2) << "\n";
  return 0;
}

int cmd_knn(const std::string& train_prefix, const std::string& val_prefix, std::size_t k,
            const std::string& report_path) {
  const EmbeddingTable train = read_embedding_table(train_prefix);
  const EmbeddingTable val = read_embedding_table(val_prefix);
  const std::vector<int> preds = knn_classify(train, val, k);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == val.labels[i];
  const double acc = static_cast<double>(hits) / static_cast<double>(preds.size());
  json report{{"kind", "knn"}, {"k", k}, {"accuracy", acc}, {"n_val", val.n}};
  std::cout << report.dump(2) << "\n";
  if (!report_path.empty()) std::ofstream(report_path) << report.dump(2) << "\n";
  return 0;
}

int cmd_kmeans(const std::string& train_prefix, const std::string& val_prefix, std::size_t k,
               std::size_t restarts, const std::string& report_path) {
  const EmbeddingTable train = read_embedding_table(train_prefix);
  const std::size_t classes = k;
  const KMeansResult km = kmeans_cluster(train, classes, restarts);
  json report{{"kind", "kmeans"}, {"k", classes}, {"inertia", km.inertia}};
  if (!val_prefix.empty()) {
    const EmbeddingTable val = read_embedding_table(val_prefix);
    std::vector<std::size_t> val_assign(val.n);
    for (std::size_t i = 0; i < val.n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < classes; ++c) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < val.dim; ++j) {
          const double diff = val.row(i)[j] - km.centroids[c * val.dim + j];
          d2 += diff * diff;
        }
        if (d2 < best_d) {
          best_d = d2;
          best = c;
        }
      }
      val_assign[i] = best;
    }
    report["val_accuracy"] = clustering_accuracy(val_assign, val.labels, classes);
  } else {
    report["train_accuracy"] = clustering_accuracy(km.assignments, train.labels, classes);
  }
  std::cout << report.dump(2) << "\n";
  if (!report_path.empty()) std::ofstream(report_path) << report.dump(2) << "\n";
  return 0;
}

int cmd_sparse_probe(const std::string& train_prefix, const std::string& val_prefix,
                     int positive_class, const std::string& ks_csv,
                     const std::string& out_prefix) {
  const EmbeddingTable train = read_embedding_table(train_prefix);
  const EmbeddingTable val = read_embedding_table(val_prefix);
  const auto ks = parse_index_list(ks_csv);
  const SparseProbeReport report = sparse_probe(train, val, positive_class, ks);
  json j{{"kind", "sparse-probe"},
         {"class", positive_class},
         {"ranking", report.ranking},
         {"k", report.k_values},
         {"f1", report.f1_at_k}};
  std::cout << j.dump(2) << "\n";
  if (!out_prefix.empty()) {
    std::ofstream(out_prefix + ".json") << j.dump(2) << "\n";
    std::ofstream csv(out_prefix + ".csv");
    csv << "k,f1\n";
    for (std::size_t i = 0; i < report.k_values.size(); ++i)
      csv << report.k_values[i] << "," << report.f1_at_k[i] << "\n";
  }
  return 0;
}

int cmd_extrapolate(const std::string& checkpoint, const std::string& dataset_dir,
                    const std::string& grids_csv, bool interpolate, std::size_t n_train,
                    std::size_t n_val, const std::string& report_path) {
  const CromaModel model = CromaModel::load_checkpoint(checkpoint);
  const Dataset ds = load_dataset(dataset_dir);
  ExtrapolationOptions opts;
  opts.interpolate_sinusoids = interpolate;
  opts.n_train = n_train;
  opts.n_val = n_val;
  const auto points = extrapolation_eval(model, ds.world, parse_index_list(grids_csv), opts);
  json rows = json::array();
  for (const auto& p : points)
    rows.push_back({{"grid", p.grid_side}, {"accuracy", p.accuracy}, {"finite", p.finite}});
  json report{{"kind", "extrapolation"}, {"interpolate", interpolate}, {"points", rows}};
  std::cout << report.dump(2) << "\n";
  if (!report_path.empty()) std::ofstream(report_path) << report.dump(2) << "\n";
  return 0;
}

int cmd_diagnose(const std::string& checkpoint, const std::string& dataset_dir,
                 std::size_t n_limit, const std::string& report_path) {
  const CromaModel model = CromaModel::load_checkpoint(checkpoint);
  Dataset ds = load_dataset(dataset_dir);
  if (n_limit != 0 && ds.size() > n_limit) ds.samples.resize(n_limit);
  const std::size_t half = ds.size() / 2;
  Dataset train = ds, val = ds;
  train.samples.assign(ds.samples.begin(), ds.samples.begin() + half);
  val.samples.assign(ds.samples.begin() + half, ds.samples.end());

  const auto cosines = invariance_diagnostic(
      model, val, {"h-flip", "v-flip", "rot90", "rot180", "rot270"});
  const CollapseReport collapse = collapse_diagnostic(model, train, val);
  json report{{"kind", "diagnostics"},
              {"invariance_cosine", cosines},
              {"patch_cosine", collapse.mean_patch_cosine},
              {"position_probe_ce", collapse.position_probe_ce}};
  std::cout << report.dump(2) << "\n";
  if (!report_path.empty()) std::ofstream(report_path) << report.dump(2) << "\n";
  return 0;
}

int cmd_gradcheck(std::size_t patch, std::size_t batch, double tol, std::uint64_t seed) {
  ModelConfig cfg = ModelConfig::toy(patch);
  GradCheckOptions opts;
  opts.tolerance = tol;
  const GradCheckReport report = gradcheck_full_model(cfg, batch, seed, opts);
  std::cout << report.summary();
  return report.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"croma: multimodal contrastive + masked-reconstruction toolkit"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic paired dataset");
  std::string gen_out;
  std::uint64_t gen_seed = 7;
  std::size_t gen_n = 256, gen_size = 24, gen_classes = 4;
  double gen_noise = 0.1, gen_speckle = 0.2;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "world seed");
  gen->add_option("--n", gen_n, "sample count");
  gen->add_option("--size", gen_size, "image size in pixels");
  gen->add_option("--classes", gen_classes, "class count");
  gen->add_option("--optical-noise", gen_noise, "additive optical noise scale");
  gen->add_option("--radar-speckle", gen_speckle, "multiplicative radar speckle scale");

  // bias
  auto* bias = app.add_subcommand("bias", "dump a 2D-ALiBi stack and its distance grid");
  std::size_t bias_rows = 3, bias_cols = 3, bias_heads = 16;
  std::string bias_keep, bias_out;
  bias->add_option("--rows", bias_rows, "grid rows");
  bias->add_option("--cols", bias_cols, "grid cols");
  bias->add_option("--heads", bias_heads, "attention heads");
  bias->add_option("--keep", bias_keep, "comma-separated kept indices (rows and cols)");
  bias->add_option("--out", bias_out, "CRMA output path");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "run the combined pretraining loop");
  std::string pre_config;
  RunConfig pre_cfg;
  pre_cfg.model = ModelConfig::toy(4);
  std::string pre_dataset, pre_out, pre_pos, pre_mask_policy, pre_mae_target;
  pre->add_option("--config", pre_config, "JSON run config (flags override file keys)");
  pre->add_option("--dataset", pre_dataset, "dataset directory");
  pre->add_option("--out", pre_out, "run output directory");
  auto* pre_steps = pre->add_option("--steps", pre_cfg.steps, "training steps");
  auto* pre_batch = pre->add_option("--batch", pre_cfg.batch_size, "batch size");
  auto* pre_lr = pre->add_option("--base-lr", pre_cfg.base_lr, "base learning rate");
  auto* pre_seed = pre->add_option("--seed", pre_cfg.seed, "run seed");
  auto* pre_ckpt = pre->add_option("--checkpoint-every", pre_cfg.checkpoint_every,
                                   "checkpoint cadence in steps");
  pre->add_option("--pos-encoding", pre_pos, "2d-alibi+x-alibi | 2d-alibi-only | 2d-sinusoidal");
  pre->add_option("--mask-policy", pre_mask_policy, "independent | shared");
  pre->add_option("--mae-target", pre_mae_target, "both | optical-only | radar-only");
  auto* pre_ratio = pre->add_option("--mask-ratio", pre_cfg.model.mask_ratio, "mask ratio");
  auto* pre_patch = pre->add_option("--patch", pre_cfg.model.patch_size, "patch size");
  auto* pre_image = pre->add_option("--image", pre_cfg.model.image_size, "image size");
  auto* pre_noaug = pre->add_flag("--no-augment", "disable paired augmentation");

  // embed
  auto* emb = app.add_subcommand("embed", "extract pooled representations");
  std::string emb_ckpt, emb_dataset, emb_source = "O", emb_split = "train", emb_out;
  emb->add_option("--checkpoint", emb_ckpt)->required();
  emb->add_option("--dataset", emb_dataset)->required();
  emb->add_option("--source", emb_source, "R | O | RO | concat");
  emb->add_option("--split", emb_split, "split tag");
  emb->add_option("--out", emb_out, "output prefix")->required();

  // probe
  auto* probe = app.add_subcommand("probe", "fit a linear or MLP probe");
  std::string probe_train, probe_val, probe_report;
  bool probe_mlp = false, probe_full = false;
  std::size_t probe_epochs = 150;
  probe->add_option("--train", probe_train)->required();
  probe->add_option("--val", probe_val)->required();
  probe->add_flag("--mlp", probe_mlp, "nonlinear probe with one hidden layer");
  probe->add_flag("--full-grid", probe_full, "use the full 27-point lr grid");
  probe->add_option("--epochs", probe_epochs);
  probe->add_option("--report", probe_report, "JSON report path");

  // knn
  auto* knn = app.add_subcommand("knn", "cosine kNN classification");
  std::string knn_train, knn_val, knn_report;
  std::size_t knn_k = 20;
  knn->add_option("--train", knn_train)->required();
  knn->add_option("--val", knn_val)->required();
  knn->add_option("--k", knn_k);
  knn->add_option("--report", knn_report);

  // kmeans
  auto* km = app.add_subcommand("kmeans", "k-means++ clustering with Hungarian scoring");
  std::string km_train, km_val, km_report;
  std::size_t km_k = 4, km_restarts = 10;
  km->add_option("--train", km_train)->required();
  km->add_option("--val", km_val, "optional table assigned to the learned centroids");
  km->add_option("--k", km_k);
  km->add_option("--restarts", km_restarts);
  km->add_option("--report", km_report);

  // sparse-probe
  auto* sp = app.add_subcommand("sparse-probe", "mean-difference ranked sparse probing");
  std::string sp_train, sp_val, sp_out, sp_ks = "1,2,4,8,16,32";
  int sp_class = 0;
  sp->add_option("--train", sp_train)->required();
  sp->add_option("--val", sp_val)->required();
  sp->add_option("--class", sp_class, "positive class for one-vs-rest");
  sp->add_option("--ks", sp_ks, "comma-separated k values");
  sp->add_option("--out", sp_out, "output prefix (.json and .csv)");

  // extrapolate
  auto* ext = app.add_subcommand("extrapolate", "frozen-probe evaluation across grid sizes");
  std::string ext_ckpt, ext_dataset, ext_grids = "6,12,18", ext_report;
  bool ext_interp = false;
  std::size_t ext_ntrain = 48, ext_nval = 24;
  ext->add_option("--checkpoint", ext_ckpt)->required();
  ext->add_option("--dataset", ext_dataset, "training dataset (provides the world)")->required();
  ext->add_option("--grids", ext_grids, "comma-separated grid sides");
  ext->add_flag("--interp", ext_interp, "bilinear-interpolate sinusoidal tables");
  ext->add_option("--n-train", ext_ntrain);
  ext->add_option("--n-val", ext_nval);
  ext->add_option("--report", ext_report);

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "invariance and collapse diagnostics");
  std::string diag_ckpt, diag_dataset, diag_report;
  std::size_t diag_n = 0;
  diag->add_option("--checkpoint", diag_ckpt)->required();
  diag->add_option("--dataset", diag_dataset)->required();
  diag->add_option("--n", diag_n, "limit sample count (0 = all)");
  diag->add_option("--report", diag_report);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of the full loss");
  std::size_t gc_patch = 8, gc_batch = 4;
  double gc_tol = 1e-4;
  std::uint64_t gc_seed = 99;
  gc->add_option("--patch", gc_patch, "toy patch size (8 -> 3x3 grid)");
  gc->add_option("--batch", gc_batch);
  gc->add_option("--tol", gc_tol);
  gc->add_option("--seed", gc_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen)
      return cmd_gen(gen_out, gen_seed, gen_n, gen_size, gen_classes, gen_noise, gen_speckle);
    if (*bias) return cmd_bias(bias_rows, bias_cols, bias_heads, bias_keep, bias_out);
    if (*pre) {
      RunConfig cfg = pre_cfg;
      if (!pre_config.empty()) {
        cfg = run_config_from_json(read_file(pre_config));
        // Explicit flags win over file keys.
        if (*pre_steps) cfg.steps = pre_cfg.steps;
        if (*pre_batch) cfg.batch_size = pre_cfg.batch_size;
        if (*pre_lr) cfg.base_lr = pre_cfg.base_lr;
        if (*pre_seed) cfg.seed = pre_cfg.seed;
        if (*pre_ckpt) cfg.checkpoint_every = pre_cfg.checkpoint_every;
        if (*pre_ratio) cfg.model.mask_ratio = pre_cfg.model.mask_ratio;
        if (*pre_patch) cfg.model.patch_size = pre_cfg.model.patch_size;
        if (*pre_image) cfg.model.image_size = pre_cfg.model.image_size;
      }
      if (!pre_dataset.empty()) cfg.dataset_dir = pre_dataset;
      if (!pre_out.empty()) cfg.out_dir = pre_out;
      if (!pre_pos.empty()) cfg.model.pos_encoding = pos_encoding_from_string(pre_pos);
      if (!pre_mask_policy.empty())
        cfg.model.mask_policy = mask_policy_from_string(pre_mask_policy);
      if (!pre_mae_target.empty()) cfg.model.mae_target = mae_target_from_string(pre_mae_target);
      if (*pre_noaug) cfg.augment.enabled = false;
      return cmd_pretrain(cfg);
    }
    if (*emb) return cmd_embed(emb_ckpt, emb_dataset, emb_source, emb_split, emb_out);
    if (*probe)
      return cmd_probe(probe_train, probe_val, probe_mlp, probe_full, probe_epochs, probe_report);
    if (*knn) return cmd_knn(knn_train, knn_val, knn_k, knn_report);
    if (*km) return cmd_kmeans(km_train, km_val, km_k, km_restarts, km_report);
    if (*sp) return cmd_sparse_probe(sp_train, sp_val, sp_class, sp_ks, sp_out);
    if (*ext)
      return cmd_extrapolate(ext_ckpt, ext_dataset, ext_grids, ext_interp, ext_ntrain, ext_nval,
                             ext_report);
    if (*diag) return cmd_diagnose(diag_ckpt, diag_dataset, diag_n, diag_report);
    if (*gc) return cmd_gradcheck(gc_patch, gc_batch, gc_tol, gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
