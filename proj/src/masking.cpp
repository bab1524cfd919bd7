#include "croma/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace croma {

using nlohmann::json;

MaskPolicy mask_policy_from_string(const std::string& s) {
  if (s == "independent") return MaskPolicy::kIndependent;
  if (s == "shared") return MaskPolicy::kShared;
  throw std::invalid_argument("unknown mask policy '" + s + "'");
}

std::string to_string(MaskPolicy p) {
  return p == MaskPolicy::kIndependent ? "independent" : "shared";
}

MaskPlan MaskPlan::keep_all(std::size_t total) {
  MaskPlan plan;
  plan.total = total;
  plan.ratio = 0.0;
  plan.kept_radar.resize(total);
  std::iota(plan.kept_radar.begin(), plan.kept_radar.end(), 0);
  plan.kept_optical = plan.kept_radar;
  plan.policy = MaskPolicy::kShared;
  return plan;
}

namespace {

void draw_partition(std::size_t total, std::size_t kept_count, Rng& rng,
                    std::vector<std::size_t>& kept, std::vector<std::size_t>& masked) {
  std::vector<std::size_t> perm(total);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  kept.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(kept_count));
  masked.assign(perm.begin() + static_cast<std::ptrdiff_t>(kept_count), perm.end());
  std::sort(kept.begin(), kept.end());
  std::sort(masked.begin(), masked.end());
}

}  // namespace

MaskPlan sample_mask(std::size_t total, double ratio, MaskPolicy policy, Rng& rng) {
  if (total < 2) throw std::invalid_argument("sample_mask: need at least 2 patches");
  if (!(ratio > 0.0 && ratio < 1.0))
    throw std::invalid_argument("sample_mask: ratio must be in (0, 1)");
  const auto kept_count =
      static_cast<std::size_t>(std::floor(static_cast<double>(total) * (1.0 - ratio)));
  if (kept_count == 0) throw std::invalid_argument("sample_mask: kept count would be 0");

  MaskPlan plan;
  plan.total = total;
  plan.ratio = ratio;
  plan.policy = policy;
  draw_partition(total, kept_count, rng, plan.kept_radar, plan.masked_radar);
  if (policy == MaskPolicy::kShared) {
    plan.kept_optical = plan.kept_radar;
    plan.masked_optical = plan.masked_radar;
  } else {
    draw_partition(total, kept_count, rng, plan.kept_optical, plan.masked_optical);
  }
  return plan;
}

Tensor gather_patches(const Tensor& seq, const std::vector<std::size_t>& kept) {
  return gather_rows(seq, kept);
}

Tensor scatter_with_mask_emb(const Tensor& kept_seq, const std::vector<std::size_t>& kept,
                             std::size_t total, const Tensor& mask_emb) {
  if (kept_seq.rank() != 2) throw std::invalid_argument("scatter: kept_seq must be 2-D");
  const std::size_t d = kept_seq.cols();
  if (mask_emb.rank() != 1 || mask_emb.numel() != d)
    throw std::invalid_argument("scatter: mask embedding width mismatch");
  if (kept.size() != kept_seq.rows())
    throw std::invalid_argument("scatter: kept index count does not match rows");
  for (std::size_t k = 0; k < kept.size(); ++k) {
    if (kept[k] >= total) throw std::out_of_range("scatter: kept index out of range");
    if (k > 0 && kept[k] <= kept[k - 1])
      throw std::invalid_argument("scatter: kept indices must be sorted and unique");
  }

  std::vector<double> out(total * d);
  for (std::size_t r = 0; r < total; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = mask_emb.value()[j];
  for (std::size_t k = 0; k < kept.size(); ++k)
    for (std::size_t j = 0; j < d; ++j) out[kept[k] * d + j] = kept_seq.value()[k * d + j];

  return Tensor::make_op(
      "scatter_with_mask_emb", {total, d}, std::move(out), {kept_seq, mask_emb},
      [kept, total, d](const TensorNode&, const std::vector<double>& g, const GradSinks& sinks) {
        if (sinks[0]) {
          for (std::size_t k = 0; k < kept.size(); ++k)
            for (std::size_t j = 0; j < d; ++j) (*sinks[0])[k * d + j] += g[kept[k] * d + j];
        }
        if (sinks[1]) {
          std::vector<bool> is_kept(total, false);
          for (std::size_t k : kept) is_kept[k] = true;
          for (std::size_t r = 0; r < total; ++r) {
            if (is_kept[r]) continue;
            for (std::size_t j = 0; j < d; ++j) (*sinks[1])[j] += g[r * d + j];
          }
        }
      });
}

std::string MaskPlan::to_json() const {
  json j;
  j["total"] = total;
  j["ratio"] = ratio;
  j["policy"] = to_string(policy);
  j["kept_radar"] = kept_radar;
  j["masked_radar"] = masked_radar;
  j["kept_optical"] = kept_optical;
  j["masked_optical"] = masked_optical;
  j["seed"] = seed;
  return j.dump(2);
}

MaskPlan MaskPlan::from_json(const std::string& text) {
  const json j = json::parse(text);
  MaskPlan plan;
  plan.total = j.at("total").get<std::size_t>();
  plan.ratio = j.at("ratio").get<double>();
  plan.policy = mask_policy_from_string(j.at("policy").get<std::string>());
  plan.kept_radar = j.at("kept_radar").get<std::vector<std::size_t>>();
  plan.masked_radar = j.at("masked_radar").get<std::vector<std::size_t>>();
  plan.kept_optical = j.at("kept_optical").get<std::vector<std::size_t>>();
  plan.masked_optical = j.at("masked_optical").get<std::vector<std::size_t>>();
  plan.seed = j.at("seed").get<std::uint64_t>();
  return plan;
}

}  // namespace croma
