// Acceptance suite: one pass/fail line per criterion, nonzero exit on failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "croma/evalkit.hpp"
#include "croma/objectives.hpp"
#include "croma/posbias.hpp"
#include "croma/rng.hpp"
#include "croma/trainer.hpp"

using namespace croma;
namespace fs = std::filesystem;

namespace {

struct CheckFailure {
  std::string message;
};

void expect(bool cond, const std::string& message) {
  if (!cond) throw CheckFailure{message};
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// shared training fixture for criteria 6-8
// ---------------------------------------------------------------------------

struct SmokeFixture {
  Dataset train_ds;
  std::optional<CromaModel> alibi, sinusoidal;
  std::vector<MetricsRow> alibi_history, sin_history;
};

RunConfig smoke_config(PosEncoding pos) {
  RunConfig cfg;
  cfg.model = ModelConfig::toy(4);  // image 24, patch 4, 6x6 grid
  cfg.model.pos_encoding = pos;
  cfg.steps = 500;
  cfg.batch_size = 32;
  cfg.base_lr = 1e-3;
  cfg.seed = 42;
  return cfg;
}

SmokeFixture& fixture() {
  static SmokeFixture fix = [] {
    SmokeFixture f;
    WorldConfig world;  // the default synthetic world
    f.train_ds = generate(world, 256);

    std::printf("  [setup] pretraining 2d-alibi model (500 steps)...\n");
    std::fflush(stdout);
    RunConfig cfg_a = smoke_config(PosEncoding::k2dAlibiXAlibi);
    f.alibi.emplace(cfg_a.model, cfg_a.seed);
    f.alibi_history = pretrain(cfg_a, f.train_ds, *f.alibi).history;

    std::printf("  [setup] pretraining 2d-sinusoidal model (500 steps)...\n");
    std::fflush(stdout);
    RunConfig cfg_s = smoke_config(PosEncoding::kSinusoidal2d);
    f.sinusoidal.emplace(cfg_s.model, cfg_s.seed);
    f.sin_history = pretrain(cfg_s, f.train_ds, *f.sinusoidal).history;
    return f;
  }();
  return fix;
}

Dataset held_out_like(const Dataset& train_ds, std::size_t n, std::size_t offset,
                      std::size_t image_size) {
  SyntheticWorld w(train_ds.world);
  Dataset ds;
  ds.world = train_ds.world;
  ds.image_size = image_size;
  for (std::size_t i = 0; i < n; ++i) ds.samples.push_back(w.make_sample(offset + i, image_size));
  ds.radar_mean = train_ds.radar_mean;
  ds.radar_std = train_ds.radar_std;
  ds.optical_mean = train_ds.optical_mean;
  ds.optical_std = train_ds.optical_std;
  return ds;
}

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

void criterion1_fig2_golden() {
  const std::vector<std::vector<double>> printed = {
      {0.0, 1.0, 2.0, 1.0, 1.4, 2.2, 2.0, 2.2, 2.8},
      {1.0, 0.0, 1.0, 1.4, 1.0, 1.4, 2.2, 2.0, 2.2},
      {2.0, 1.0, 0.0, 2.2, 1.4, 1.0, 2.8, 2.2, 2.0},
      {1.0, 1.4, 2.2, 0.0, 1.0, 2.0, 1.0, 1.4, 2.2},
      {1.4, 1.0, 1.4, 1.0, 0.0, 1.0, 1.4, 1.0, 1.4},
      {2.2, 1.4, 1.0, 2.0, 1.0, 0.0, 2.2, 1.4, 1.0},
      {2.0, 2.2, 2.8, 1.0, 1.4, 2.2, 0.0, 1.0, 2.0},
      {2.2, 2.0, 2.2, 1.4, 1.0, 1.4, 1.0, 0.0, 1.0},
      {2.8, 2.2, 2.0, 2.2, 1.4, 1.0, 2.0, 1.0, 0.0}};
  const BiasStack stack = build_2d_alibi({3, 3}, 16);
  for (std::size_t h = 0; h < 16; ++h)
    for (std::size_t i = 0; i < 9; ++i)
      for (std::size_t j = 0; j < 9; ++j) {
        const double dist = -stack.at(h, i, j) / stack.slopes_m[h];
        expect(std::fabs(dist - printed[i][j]) <= 0.05,
               "figure grid mismatch at (" + std::to_string(i) + "," + std::to_string(j) + ")");
      }
  const auto m = slopes(16);
  for (std::size_t h = 1; h <= 16; ++h) {
    const double want = std::pow(2.0, -0.5 * double(h));
    expect(m[h - 1] == want, "slope " + std::to_string(h) + " not exact");
  }
  expect(m[0] == std::pow(2.0, -0.5) && m[15] == std::pow(2.0, -8.0),
         "slope endpoints not exact");
}

void criterion2_gradient_suite(std::string& detail) {
  const ModelConfig cfg = ModelConfig::toy(8);  // D=64 H=4 N=4, 3x3 grid
  GradCheckOptions opts;
  opts.tolerance = 1e-4;
  const GradCheckReport report = gradcheck_full_model(cfg, /*batch=*/4, /*seed=*/2024, opts);
  detail = "max_rel_err=" + fmt(report.max_rel_error) + " over " +
           std::to_string(report.per_param.size()) + " parameter groups";
  if (!report.pass) {
    for (const auto& entry : report.per_param)
      if (!entry.pass) detail += " FAIL:" + entry.name + "=" + fmt(entry.max_rel_error);
  }
  expect(report.pass, detail);
}

void criterion3_bias_invariance() {
  // rotation/flip invariance via explicit index permutations
  for (std::size_t rows = 3; rows <= 5; ++rows)
    for (std::size_t cols = 3; cols <= 7; ++cols) {
      const GridSpec g{rows, cols};
      const BiasStack stack = build_2d_alibi(g, 4);
      const auto apply = [&](auto&& map) {
        for (std::size_t h = 0; h < 4; ++h)
          for (std::size_t i = 0; i < g.length(); ++i)
            for (std::size_t j = 0; j < g.length(); ++j) {
              const std::size_t pi = map(g.row_of(i), g.col_of(i));
              const std::size_t pj = map(g.row_of(j), g.col_of(j));
              expect(stack.at(h, pi, pj) == stack.at(h, i, j),
                     "permutation changed a bias entry");
            }
      };
      apply([&](std::size_t r, std::size_t c) { return r * cols + (cols - 1 - c); });
      apply([&](std::size_t r, std::size_t c) { return (rows - 1 - r) * cols + c; });
      apply([&](std::size_t r, std::size_t c) {
        return (rows - 1 - r) * cols + (cols - 1 - c);
      });
      if (rows == cols)
        apply([&](std::size_t r, std::size_t c) { return c * cols + (rows - 1 - r); });

      // translation invariance: entries depend only on the offset
      for (std::size_t i = 0; i < g.length(); ++i)
        for (std::size_t j = 0; j < g.length(); ++j) {
          if (g.row_of(i) + 1 < rows && g.col_of(i) + 1 < cols && g.row_of(j) + 1 < rows &&
              g.col_of(j) + 1 < cols) {
            const std::size_t i2 = (g.row_of(i) + 1) * cols + g.col_of(i) + 1;
            const std::size_t j2 = (g.row_of(j) + 1) * cols + g.col_of(j) + 1;
            expect(stack.at(0, i2, j2) == stack.at(0, i, j), "translation changed an entry");
          }
        }
    }

  // subwindow consistency: the k x k window of a bigger grid equals the
  // k x k grid bias exactly
  for (std::size_t small : {2, 3, 4}) {
    const BiasStack small_stack = build_2d_alibi({small, small}, 3);
    for (std::size_t big : {5, 7}) {
      const BiasStack big_stack = build_2d_alibi({big, big}, 3);
      std::vector<std::size_t> window;
      for (std::size_t r = 0; r < small; ++r)
        for (std::size_t c = 0; c < small; ++c) window.push_back(r * big + c);
      const BiasStack cut = mask_bias(big_stack, window, window);
      expect(cut.data == small_stack.data, "subwindow bias differs from the small grid");
    }
  }

  // mask_bias equals the coordinate-rebuild oracle on 200 random kept-sets
  const GridSpec g{5, 7};
  const BiasStack stack = build_2d_alibi(g, 3);
  Rng rng(33);
  std::size_t checked = 0;
  while (checked < 200) {
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < g.length(); ++i)
      if (rng.uniform01() < 0.4) kept.push_back(i);
    if (kept.size() < 2) continue;
    ++checked;
    const BiasStack cut = mask_bias(stack, kept, kept);
    for (std::size_t h = 0; h < 3; ++h)
      for (std::size_t a = 0; a < kept.size(); ++a)
        for (std::size_t b = 0; b < kept.size(); ++b) {
          const double want = -grid_distance(g, kept[a], kept[b]) * stack.slopes_m[h];
          expect(std::fabs(cut.at(h, a, b) - want) < 1e-15, "oracle mismatch in mask_bias");
        }
  }
}

void criterion4_masked_only_contract() {
  // (a) changing predictions at kept positions changes l_mae by exactly zero
  std::vector<double> target_data(24);
  {
    Rng rng(44);
    for (double& x : target_data) x = rng.normal(0.0, 1.0);
  }
  const Tensor target = Tensor::constant({6, 4}, target_data);
  MaskPlan plan;
  plan.total = 6;
  plan.kept_radar = {0, 3};
  plan.masked_radar = {1, 2, 4, 5};
  plan.kept_optical = {1, 4};
  plan.masked_optical = {0, 2, 3, 5};
  Rng rng(45);
  std::vector<double> pred(24);
  for (double& x : pred) x = rng.normal(0.0, 1.0);
  const MaeTerms base = mae_loss(Tensor::constant({6, 4}, pred), Tensor::constant({6, 4}, pred),
                                 target, target, plan, MaeTarget::kBoth);
  std::vector<double> poked_o = pred, poked_r = pred;
  for (std::size_t row : plan.kept_optical)
    for (std::size_t j = 0; j < 4; ++j) poked_o[row * 4 + j] += 1e6;
  for (std::size_t row : plan.kept_radar)
    for (std::size_t j = 0; j < 4; ++j) poked_r[row * 4 + j] -= 1e6;
  const MaeTerms poked =
      mae_loss(Tensor::constant({6, 4}, poked_o), Tensor::constant({6, 4}, poked_r), target,
               target, plan, MaeTarget::kBoth);
  expect(poked.optical.item() == base.optical.item(), "optical term moved on kept rows");
  expect(poked.radar.item() == base.radar.item(), "radar term moved on kept rows");

  // (b) perturbing masked optical pixels leaves E_RO bit-identical
  ModelConfig cfg = ModelConfig::toy(8);
  const CromaModel model(cfg, 46);
  Rng srng(47);
  PairedSample sample;
  sample.radar.resize(cfg.channels_radar * 24 * 24);
  sample.optical.resize(cfg.channels_optical * 24 * 24);
  for (double& v : sample.radar) v = srng.normal(0.0, 1.0);
  for (double& v : sample.optical) v = srng.normal(0.0, 1.0);
  Rng mrng(48);
  const MaskPlan mplan = sample_mask(9, 0.75, MaskPolicy::kIndependent, mrng);
  const auto base_fwd = model.forward_full(sample, mplan);
  PairedSample poked_sample = sample;
  const std::size_t p = cfg.patch_size, s = cfg.image_size, side = s / p;
  for (std::size_t patch : mplan.masked_optical) {
    const std::size_t pr = patch / side, pc = patch % side;
    for (std::size_t c = 0; c < cfg.channels_optical; ++c)
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          poked_sample.optical[c * s * s + (pr * p + dy) * s + pc * p + dx] = 1e9;
  }
  const auto poked_fwd = model.forward_full(poked_sample, mplan);
  expect(poked_fwd.bundle.e_fused.value() == base_fwd.bundle.e_fused.value(),
         "masked optical pixels leaked into E_RO");
}

void criterion5_infonce_anchors() {
  const Tensor z1 = Tensor::constant({1, 3}, {1, 0, 0});
  expect(info_nce(z1, z1, Tensor::scalar(1.0)).item() == 0.0, "N=1 loss is not exactly zero");

  const Tensor z2 = Tensor::constant({2, 2}, {1, 0, 0, 1});
  const double got = info_nce(z2, z2, Tensor::scalar(1.0)).item();
  const double want = std::log(1.0 + std::exp(-1.0));
  expect(std::fabs(got - want) <= 1e-12,
         "N=2 anchor off by " + fmt(std::fabs(got - want)));
}

void criterion6_training_smoke(std::string& detail) {
  SmokeFixture& f = fixture();
  const auto& hist = f.alibi_history;
  double early = 0.0, late = 0.0;
  for (std::size_t i = 0; i < 10; ++i) early += hist[i].total;
  for (std::size_t i = hist.size() - 10; i < hist.size(); ++i) late += hist[i].total;
  early /= 10.0;
  late /= 10.0;

  // cross-modal retrieval on a held-out batch of 64
  const Dataset held = held_out_like(f.train_ds, 64, 100000, f.train_ds.image_size);
  NoGradGuard no_grad;
  const GridSpec grid = f.alibi->config().grid();
  const MaskPlan keep_all = MaskPlan::keep_all(grid.length());
  std::vector<std::vector<double>> zr, zo;
  for (std::size_t i = 0; i < held.size(); ++i) {
    const PairedSample sample = held.normalized(i);
    const auto out = f.alibi->forward_full(sample, keep_all);
    zr.push_back(out.bundle.z_radar.value());
    zo.push_back(out.bundle.z_optical.value());
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < zr.size(); ++i) {
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t j = 0; j < zo.size(); ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < zr[i].size(); ++k) dot += zr[i][k] * zo[j][k];
      if (dot > best_sim) {
        best_sim = dot;
        best = j;
      }
    }
    hits += best == i;
  }
  const double retrieval = double(hits) / double(zr.size());
  detail = "late/early=" + fmt(late / early) + " (early=" + fmt(early) + ", late=" + fmt(late) +
           "), retrieval=" + fmt(retrieval) + " vs chance " + fmt(1.0 / 64) + " (need > " +
           fmt(5.0 / 64) + ")";
  expect(late < 0.8 * early, "loss did not fall below 0.8x the early average; " + detail);
  expect(retrieval > 5.0 / 64.0, "retrieval below 5x chance; " + detail);
}

void criterion7_extrapolation(std::string& detail) {
  SmokeFixture& f = fixture();
  ExtrapolationOptions opts;
  opts.n_train = 48;
  opts.n_val = 24;
  const std::vector<std::size_t> grids{6, 12, 18};
  const auto alibi_pts = extrapolation_eval(*f.alibi, f.train_ds.world, grids, opts);
  const auto sin_pts = extrapolation_eval(*f.sinusoidal, f.train_ds.world, grids, opts);

  for (const auto& pt : alibi_pts)
    expect(pt.finite, "2d-alibi outputs not finite at grid " + std::to_string(pt.grid_side));
  const double a6 = alibi_pts[0].accuracy, a12 = alibi_pts[1].accuracy,
               a18 = alibi_pts[2].accuracy;
  const double s6 = sin_pts[0].accuracy, s12 = sin_pts[1].accuracy, s18 = sin_pts[2].accuracy;
  detail = "alibi acc 6/12/18 = " + fmt(a6) + "/" + fmt(a12) + "/" + fmt(a18) +
           "; sinusoidal = " + fmt(s6) + "/" + fmt(s12) + "/" + fmt(s18);

  const auto rel_drop = [](double base, double v) { return (base - v) / base; };
  expect(rel_drop(a6, a12) <= 0.10,
         "2d-alibi dropped more than 10 relative points at 12x12; " + detail);
  expect(rel_drop(a6, a18) <= 0.10,
         "2d-alibi dropped more than 10 relative points at 18x18; " + detail);
  expect(rel_drop(s6, s12) > rel_drop(a6, a12),
         "sinusoidal did not degrade strictly more at 12x12; " + detail);
  expect(rel_drop(s6, s18) > rel_drop(a6, a18),
         "sinusoidal did not degrade strictly more at 18x18; " + detail);
}

void criterion8_diagnostics_ordering(std::string& detail) {
  SmokeFixture& f = fixture();
  const Dataset diag_val = held_out_like(f.train_ds, 24, 200000, f.train_ds.image_size);
  const std::vector<std::string> rotations{"rot90", "rot180", "rot270"};
  const auto alibi_cos = invariance_diagnostic(*f.alibi, diag_val, rotations);
  const auto sin_cos = invariance_diagnostic(*f.sinusoidal, diag_val, rotations);
  double alibi_mean = 0.0, sin_mean = 0.0;
  for (const auto& name : rotations) {
    alibi_mean += alibi_cos.at(name);
    sin_mean += sin_cos.at(name);
  }
  alibi_mean /= double(rotations.size());
  sin_mean /= double(rotations.size());

  const Dataset probe_train = held_out_like(f.train_ds, 32, 300000, f.train_ds.image_size);
  ProbeOptions popts;
  popts.epochs = 120;
  popts.lr_grid = {3e-3};
  popts.mlp_hidden_cap = 256;
  const CollapseReport alibi_collapse =
      collapse_diagnostic(*f.alibi, probe_train, diag_val, popts);
  const CollapseReport sin_collapse =
      collapse_diagnostic(*f.sinusoidal, probe_train, diag_val, popts);

  detail = "rotation cosine alibi=" + fmt(alibi_mean) + " vs sinusoidal=" + fmt(sin_mean) +
           "; position CE alibi=" + fmt(alibi_collapse.position_probe_ce) +
           " vs sinusoidal=" + fmt(sin_collapse.position_probe_ce);
  expect(alibi_mean > sin_mean, "rotation-invariance ordering violated; " + detail);
  expect(sin_collapse.position_probe_ce < alibi_collapse.position_probe_ce,
         "position-probe ordering violated; " + detail);
}

void criterion9_evaluation_oracles() {
  // kNN equals an all-pairs brute-force oracle (instances up to n = 200)
  Rng rng(55);
  for (int rep = 0; rep < 3; ++rep) {
    const std::size_t n = 60 + std::size_t(rng.next_below(140));
    EmbeddingTable train;
    train.n = n;
    train.dim = 4;
    train.features.resize(n * 4);
    for (double& v : train.features) v = rng.normal(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) train.labels.push_back(int(rng.next_below(3)));
    EmbeddingTable query;
    query.n = 30;
    query.dim = 4;
    query.features.resize(30 * 4);
    for (double& v : query.features) v = rng.normal(0.0, 1.0);
    query.labels.assign(30, 0);

    for (std::size_t k : {std::size_t(1), std::size_t(7), std::size_t(20)}) {
      const auto got = knn_classify(train, query, k);
      for (std::size_t q = 0; q < query.n; ++q) {
        std::vector<std::pair<double, std::size_t>> sims;
        const auto norm = [&](const double* row) {
          double ss = 0.0;
          for (std::size_t j = 0; j < 4; ++j) ss += row[j] * row[j];
          return std::max(std::sqrt(ss), 1e-12);
        };
        for (std::size_t i = 0; i < n; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < 4; ++j) dot += query.row(q)[j] * train.row(i)[j];
          sims.emplace_back(dot / (norm(query.row(q)) * norm(train.row(i))), i);
        }
        std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
          return a.first > b.first || (a.first == b.first && a.second < b.second);
        });
        std::vector<std::size_t> votes(3, 0);
        std::vector<double> weight(3, 0.0);
        for (std::size_t r = 0; r < k; ++r) {
          ++votes[train.labels[sims[r].second]];
          weight[train.labels[sims[r].second]] += sims[r].first;
        }
        std::size_t best = 0;
        for (std::size_t c = 1; c < 3; ++c)
          if (votes[c] > votes[best] || (votes[c] == votes[best] && weight[c] > weight[best]))
            best = c;
        expect(got[q] == int(best), "knn disagrees with the brute-force oracle");
      }
    }
  }

  // Hungarian equals exhaustive search for K <= 6
  for (std::size_t k = 2; k <= 6; ++k) {
    for (int rep = 0; rep < 10; ++rep) {
      std::vector<double> cost(k * k);
      for (double& v : cost) v = double(rng.next_below(25));
      const auto assignment = hungarian_match(cost, k);
      double got = 0.0;
      for (std::size_t i = 0; i < k; ++i) got += cost[i * k + assignment[i]];
      std::vector<std::size_t> perm(k);
      std::iota(perm.begin(), perm.end(), 0);
      double best = 1e300;
      do {
        double c = 0.0;
        for (std::size_t i = 0; i < k; ++i) c += cost[i * k + perm[i]];
        best = std::min(best, c);
      } while (std::next_permutation(perm.begin(), perm.end()));
      expect(std::fabs(got - best) < 1e-12, "hungarian missed the optimum");
    }
  }

  // sparse-probe ranking equals an independent mean-difference sort
  {
    const std::size_t n = 120, dim = 12;
    std::vector<double> feats(n * dim);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = int(rng.next_below(2));
      for (std::size_t j = 0; j < dim; ++j)
        feats[i * dim + j] = rng.normal(0.0, 1.0) + (j % 3 == 0 ? 0.4 * labels[i] : 0.0);
    }
    EmbeddingTable table;
    table.n = n;
    table.dim = dim;
    table.features = feats;
    table.labels = labels;
    ProbeOptions popts;
    popts.epochs = 30;
    const SparseProbeReport report = sparse_probe(table, table, 1, {1}, popts);

    std::vector<double> mean_pos(dim, 0.0), mean_neg(dim, 0.0);
    double np = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] == 1) {
        ++np;
        for (std::size_t j = 0; j < dim; ++j) mean_pos[j] += feats[i * dim + j];
      } else {
        ++nn;
        for (std::size_t j = 0; j < dim; ++j) mean_neg[j] += feats[i * dim + j];
      }
    }
    std::vector<std::size_t> oracle(dim);
    std::iota(oracle.begin(), oracle.end(), 0);
    std::stable_sort(oracle.begin(), oracle.end(), [&](std::size_t a, std::size_t b) {
      return std::fabs(mean_pos[a] / np - mean_neg[a] / nn) >
             std::fabs(mean_pos[b] / np - mean_neg[b] / nn);
    });
    expect(report.ranking == oracle, "sparse-probe ranking differs from the oracle sort");
  }

  // k-means inertia is non-increasing within every restart
  {
    EmbeddingTable blobs;
    blobs.n = 60;
    blobs.dim = 3;
    for (std::size_t i = 0; i < 60; ++i) {
      const int label = int(i % 3);
      blobs.labels.push_back(label);
      for (std::size_t j = 0; j < 3; ++j)
        blobs.features.push_back(double(label) * 3.0 + 0.3 * rng.normal(0.0, 1.0));
    }
    const KMeansResult km = kmeans_cluster(blobs, 3, 10, 8);
    for (const auto& curve : km.inertia_per_restart)
      for (std::size_t i = 1; i < curve.size(); ++i)
        expect(curve[i] <= curve[i - 1] + 1e-9, "inertia increased within a restart");
  }
}

void criterion10_reproducibility(std::string& detail) {
  WorldConfig world;
  world.seed = 99;
  const Dataset ds = generate(world, 32);

  const fs::path base = fs::temp_directory_path() / "croma_acceptance_repro";
  fs::remove_all(base);
  const auto run_once = [&](const fs::path& dir) {
    RunConfig cfg;
    cfg.model = ModelConfig::toy(4);
    cfg.steps = 25;
    cfg.batch_size = 8;
    cfg.seed = 4242;
    cfg.out_dir = dir.string();
    CromaModel model(cfg.model, cfg.seed);
    pretrain(cfg, ds, model);
  };
  run_once(base / "a");
  run_once(base / "b");

  const auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  };
  expect(slurp(base / "a" / "metrics.csv") == slurp(base / "b" / "metrics.csv"),
         "metrics CSVs differ between identical runs");
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(base / "a" / "final")) {
    const auto name = entry.path().filename();
    expect(slurp(entry.path()) == slurp(base / "b" / "final" / name),
           "checkpoint file differs: " + name.string());
    ++files;
  }
  expect(files > 2, "checkpoint suspiciously small");

  // round trip: two loads of byte-identical checkpoints agree bit for bit
  const CromaModel loaded = CromaModel::load_checkpoint((base / "a" / "final").string());
  const CromaModel original = CromaModel::load_checkpoint((base / "b" / "final").string());
  Rng srng(17);
  PairedSample sample;
  sample.radar.resize(2 * 24 * 24);
  sample.optical.resize(12 * 24 * 24);
  for (double& v : sample.radar) v = srng.normal(0.0, 1.0);
  for (double& v : sample.optical) v = srng.normal(0.0, 1.0);
  Rng mrng(18);
  const MaskPlan plan = sample_mask(36, 0.75, MaskPolicy::kIndependent, mrng);
  const auto out_a = loaded.forward_full(sample, plan);
  const auto out_b = original.forward_full(sample, plan);
  expect(out_a.bundle.e_fused.value() == out_b.bundle.e_fused.value(),
         "forward after checkpoint round trip is not bit-identical");
  expect(out_a.pred_optical.value() == out_b.pred_optical.value(),
         "reconstruction after round trip is not bit-identical");
  detail = "2 runs x " + std::to_string(files) + " containers byte-identical";
  fs::remove_all(base);
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<void(std::string&)> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "Fig-2 golden bias matrix and slope sequence",
       [](std::string&) { criterion1_fig2_golden(); }},
      {2, "full-model gradient suite at 1e-4", criterion2_gradient_suite},
      {3, "bias invariance and mask oracle suite",
       [](std::string&) { criterion3_bias_invariance(); }},
      {4, "masked-only loss and leakage contract",
       [](std::string&) { criterion4_masked_only_contract(); }},
      {5, "InfoNCE exact anchors", [](std::string&) { criterion5_infonce_anchors(); }},
      {6, "training smoke: loss drop and retrieval", criterion6_training_smoke},
      {7, "extrapolation ordering across grids", criterion7_extrapolation},
      {8, "diagnostics ordering (invariance, position probe)", criterion8_diagnostics_ordering},
      {9, "evaluation oracles (knn, hungarian, sparse, kmeans)",
       [](std::string&) { criterion9_evaluation_oracles(); }},
      {10, "bit-exact reproducibility and checkpoint round trip", criterion10_reproducibility},
  };

  int failures = 0;
  for (const auto& criterion : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool pass = true;
    try {
      criterion.run(detail);
    } catch (const CheckFailure& f) {
      pass = false;
      detail = f.message;
    } catch (const std::exception& e) {
      pass = false;
      detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] C%-2d %s%s%s  (%.1fs)\n", pass ? "PASS" : "FAIL", criterion.id,
                criterion.name, detail.empty() ? "" : " -- ", detail.c_str(), secs);
    std::fflush(stdout);
    failures += !pass;
  }
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
