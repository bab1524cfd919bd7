#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "croma/evalkit.hpp"
#include "croma/rng.hpp"

using namespace croma;

namespace {

EmbeddingTable make_table(std::vector<double> features, std::vector<int> labels,
                          std::size_t dim) {
  EmbeddingTable t;
  t.dim = dim;
  t.n = labels.size();
  t.features = std::move(features);
  t.labels = std::move(labels);
  t.split = "test";
  t.source = "synthetic";
  return t;
}

// Two gaussian blobs around +/- centers in a handful of dimensions.
EmbeddingTable blob_table(std::size_t n_per_class, std::size_t dim, double spread,
                          std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> feats;
  std::vector<int> labels;
  for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
    const int label = i < n_per_class ? 0 : 1;
    for (std::size_t j = 0; j < dim; ++j) {
      const double center = (label == 0 ? 1.0 : -1.0) * (j == 0 ? 2.0 : 0.5);
      feats.push_back(center + spread * rng.normal(0.0, 1.0));
    }
    labels.push_back(label);
  }
  return make_table(std::move(feats), std::move(labels), dim);
}

// Straightforward reimplementation of cosine kNN used as the oracle.
std::vector<int> knn_oracle(const EmbeddingTable& train, const EmbeddingTable& query,
                            std::size_t k) {
  const auto norm_row = [](const double* row, std::size_t d) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += row[j] * row[j];
    return std::max(std::sqrt(ss), 1e-12);
  };
  std::vector<int> preds(query.n);
  for (std::size_t q = 0; q < query.n; ++q) {
    std::vector<std::pair<double, std::size_t>> sims;
    for (std::size_t i = 0; i < train.n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < train.dim; ++j)
        dot += query.row(q)[j] * train.row(i)[j];
      dot /= norm_row(query.row(q), query.dim) * norm_row(train.row(i), train.dim);
      sims.emplace_back(dot, i);
    }
    std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    });
    int max_label = 0;
    for (int l : train.labels) max_label = std::max(max_label, l);
    std::vector<std::size_t> votes(max_label + 1, 0);
    std::vector<double> weight(max_label + 1, 0.0);
    for (std::size_t r = 0; r < k; ++r) {
      ++votes[train.labels[sims[r].second]];
      weight[train.labels[sims[r].second]] += sims[r].first;
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < votes.size(); ++c)
      if (votes[c] > votes[best] || (votes[c] == votes[best] && weight[c] > weight[best]))
        best = c;
    preds[q] = int(best);
  }
  return preds;
}

}  // namespace

TEST_CASE("knn spot cases") {
  // query equals a train point, k = 1
  const EmbeddingTable train =
      make_table({1, 0, 0, 1, -1, 0}, {0, 1, 2}, 2);
  EmbeddingTable query = make_table({0, 1}, {1}, 2);
  CHECK(knn_classify(train, query, 1) == std::vector<int>{1});

  // two clusters at +/- e1, query at 0.9 e1
  const EmbeddingTable clusters =
      make_table({1, 0, 0.9, 0.1, -1, 0, -0.9, -0.1}, {1, 1, 0, 0}, 2);
  const EmbeddingTable probe = make_table({0.9, 0.0}, {1}, 2);
  CHECK(knn_classify(clusters, probe, 2) == std::vector<int>{1});

  // k == n_train: global majority wins everywhere
  const EmbeddingTable majority =
      make_table({1, 0, 0.8, 0.1, -1, 0}, {1, 1, 0}, 2);
  const EmbeddingTable anywhere = make_table({0, 1, -3, 2}, {0, 0}, 2);
  const auto preds = knn_classify(majority, anywhere, 3);
  CHECK(preds == std::vector<int>{1, 1});

  CHECK_THROWS(knn_classify(majority, anywhere, 0));
  CHECK_THROWS(knn_classify(majority, anywhere, 4));
}

TEST_CASE("knn equals the brute-force oracle on random instances") {
  Rng rng(91);
  for (int rep = 0; rep < 5; ++rep) {
    const std::size_t n = 40 + std::size_t(rng.next_below(160));  // up to 200
    std::vector<double> feats(n * 3);
    std::vector<int> labels(n);
    for (double& v : feats) v = rng.normal(0.0, 1.0);
    for (int& l : labels) l = int(rng.next_below(3));
    const EmbeddingTable train = make_table(std::move(feats), std::move(labels), 3);
    std::vector<double> qfeats(25 * 3);
    for (double& v : qfeats) v = rng.normal(0.0, 1.0);
    const EmbeddingTable query =
        make_table(std::move(qfeats), std::vector<int>(25, 0), 3);
    for (std::size_t k : {std::size_t(1), std::size_t(5), std::size_t(20)}) {
      if (k > train.n) continue;
      CHECK(knn_classify(train, query, k) == knn_oracle(train, query, k));
    }
  }
}

TEST_CASE("hungarian spot and oracle cases") {
  CHECK(hungarian_match({1, 2, 2, 1}, 2) == std::vector<std::size_t>{0, 1});

  Rng rng(92);
  // exhaustive-permutation oracle for k <= 6
  for (std::size_t k = 2; k <= 6; ++k) {
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> cost(k * k);
      for (double& v : cost) v = double(rng.next_below(20));
      const auto assignment = hungarian_match(cost, k);
      double got = 0.0;
      for (std::size_t i = 0; i < k; ++i) got += cost[i * k + assignment[i]];

      std::vector<std::size_t> perm(k);
      std::iota(perm.begin(), perm.end(), 0);
      double best = std::numeric_limits<double>::infinity();
      do {
        double c = 0.0;
        for (std::size_t i = 0; i < k; ++i) c += cost[i * k + perm[i]];
        best = std::min(best, c);
      } while (std::next_permutation(perm.begin(), perm.end()));
      CHECK(got == doctest::Approx(best).epsilon(1e-12));

      // assignment is a permutation
      std::vector<bool> seen(k, false);
      for (std::size_t c : assignment) {
        CHECK_FALSE(seen[c]);
        seen[c] = true;
      }
    }
  }
}

TEST_CASE("kmeans recovers two far clouds and keeps inertia monotone") {
  const EmbeddingTable blobs = blob_table(20, 2, 0.05, 93);
  const KMeansResult result = kmeans_cluster(blobs, 2, 10, 7);
  CHECK(clustering_accuracy(result.assignments, blobs.labels, 2) == doctest::Approx(1.0));

  for (const auto& curve : result.inertia_per_restart)
    for (std::size_t i = 1; i < curve.size(); ++i)
      CHECK(curve[i] <= curve[i - 1] + 1e-9);

  CHECK_THROWS(kmeans_cluster(blobs, 0));
  CHECK_THROWS(kmeans_cluster(blobs, blobs.n + 1));
}

TEST_CASE("linear probe separates a separable toy set and collapses on shuffles") {
  const EmbeddingTable train = blob_table(120, 2, 0.1, 94);
  const EmbeddingTable val = blob_table(500, 2, 0.1, 95);
  ProbeOptions opts;
  opts.epochs = 120;
  const ProbeResult res = fit_linear_probe(train, val, opts);
  CHECK(res.metric == doctest::Approx(1.0));

  // destroyed signal: structureless features with random labels sit at chance
  Rng rng(96);
  const auto noise_table = [&rng](std::size_t n, std::uint64_t) {
    std::vector<double> feats(n * 4);
    std::vector<int> labels(n);
    for (double& v : feats) v = rng.normal(0.0, 1.0);
    for (int& l : labels) l = int(rng.next_below(2));
    return make_table(std::move(feats), std::move(labels), 4);
  };
  const EmbeddingTable noise_train = noise_table(400, 1);
  const EmbeddingTable noise_val = noise_table(1000, 2);
  const ProbeResult noise = fit_linear_probe(noise_train, noise_val, opts);
  CHECK(noise.metric >= 0.45);
  CHECK(noise.metric <= 0.55);

  // degenerate single-class input is rejected
  EmbeddingTable flat = train;
  std::fill(flat.labels.begin(), flat.labels.end(), 0);
  CHECK_THROWS(fit_linear_probe(flat, val, opts));
}

TEST_CASE("mlp probe also solves the separable set") {
  const EmbeddingTable train = blob_table(80, 2, 0.1, 97);
  const EmbeddingTable val = blob_table(80, 2, 0.1, 98);
  ProbeOptions opts;
  opts.epochs = 120;
  const ProbeResult res = fit_mlp_probe(train, val, opts);
  CHECK(res.metric >= 0.98);
}

TEST_CASE("full lr grid expands to 27 points") {
  ProbeOptions opts;
  opts.full_lr_grid = true;
  CHECK(opts.effective_lr_grid().size() == 27);
}

TEST_CASE("mean average precision on hand cases") {
  // perfect ranking
  const double perfect = mean_average_precision({{2.0}, {1.0}, {-1.0}},
                                                {{1}, {1}, {0}});
  CHECK(perfect == doctest::Approx(1.0));
  // inverted ranking: AP = (1/2 + 2/3) / 2
  const double inverted = mean_average_precision({{-1.0}, {0.0}, {1.0}},
                                                 {{1}, {1}, {0}});
  CHECK(inverted == doctest::Approx((0.5 + 2.0 / 3.0) / 2.0));
}

TEST_CASE("multilabel probe reaches high mAP on separable data") {
  const EmbeddingTable train = blob_table(100, 2, 0.1, 99);
  const EmbeddingTable val = blob_table(100, 2, 0.1, 100);
  std::vector<std::vector<int>> train_targets, val_targets;
  for (int l : train.labels) train_targets.push_back({l == 0 ? 1 : 0, l == 1 ? 1 : 0});
  for (int l : val.labels) val_targets.push_back({l == 0 ? 1 : 0, l == 1 ? 1 : 0});
  ProbeOptions opts;
  opts.epochs = 120;
  const ProbeResult res =
      fit_linear_probe_multilabel(train, train_targets, val, val_targets, opts);
  CHECK(res.metric >= 0.99);
}

TEST_CASE("sparse probe ranks an informative dimension first") {
  Rng rng(101);
  const std::size_t n = 200, dim = 16;
  std::vector<double> feats(n * dim);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = int(rng.next_below(2));
    for (std::size_t j = 0; j < dim; ++j)
      feats[i * dim + j] = j == 5 ? labels[i] + 0.01 * rng.normal(0.0, 1.0)
                                  : rng.normal(0.0, 1.0);
  }
  const EmbeddingTable train = make_table(feats, labels, dim);
  // fresh noise draw, same construction
  std::vector<double> vfeats(n * dim);
  std::vector<int> vlabels(n);
  for (std::size_t i = 0; i < n; ++i) {
    vlabels[i] = int(rng.next_below(2));
    for (std::size_t j = 0; j < dim; ++j)
      vfeats[i * dim + j] = j == 5 ? vlabels[i] + 0.01 * rng.normal(0.0, 1.0)
                                   : rng.normal(0.0, 1.0);
  }
  const EmbeddingTable val = make_table(vfeats, vlabels, dim);

  ProbeOptions opts;
  opts.epochs = 500;
  const SparseProbeReport report = sparse_probe(train, val, 1, {1, dim}, opts);
  CHECK(report.ranking[0] == 5);
  CHECK(report.f1_at_k[0] > 0.95);
  // k = D reproduces the full probe within a point
  CHECK(std::fabs(report.f1_at_k[1] - report.f1_at_k[0]) < 0.05);

  // the ranking is a permutation and matches an independent mean-diff sort
  std::vector<bool> seen(dim, false);
  for (std::size_t d : report.ranking) seen[d] = true;
  CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));

  std::vector<double> mean_pos(dim, 0.0), mean_neg(dim, 0.0);
  double np = 0, nn = 0;
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
  CHECK(report.ranking == oracle);
}

TEST_CASE("sparse probe on pure noise sits near the prevalence baseline") {
  Rng rng(102);
  const std::size_t n = 240, dim = 8;
  std::vector<double> feats(n * dim), vfeats(n * dim);
  std::vector<int> labels(n), vlabels(n);
  for (double& v : feats) v = rng.normal(0.0, 1.0);
  for (double& v : vfeats) v = rng.normal(0.0, 1.0);
  for (int& l : labels) l = int(rng.next_below(2));
  for (int& l : vlabels) l = int(rng.next_below(2));
  ProbeOptions opts;
  opts.epochs = 60;
  const SparseProbeReport report = sparse_probe(make_table(feats, labels, dim),
                                                make_table(vfeats, vlabels, dim), 1, {2}, opts);
  // F1 of random guessing around 0.5 prevalence lands near 0.5
  CHECK(report.f1_at_k[0] < 0.65);
}

TEST_CASE("sparse probe rejects an absent class") {
  const EmbeddingTable train = blob_table(20, 2, 0.1, 103);
  const EmbeddingTable val = blob_table(20, 2, 0.1, 104);
  CHECK_THROWS(sparse_probe(train, val, 7, {1}));
}
