#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "croma/rng.hpp"
#include "croma/tensor.hpp"

namespace croma {

enum class MaskPolicy { kIndependent, kShared };

MaskPolicy mask_policy_from_string(const std::string& s);
std::string to_string(MaskPolicy p);

// Per-modality partition of patch indices into kept and masked sets.
struct MaskPlan {
  std::size_t total = 0;
  double ratio = 0.0;
  MaskPolicy policy = MaskPolicy::kIndependent;
  std::vector<std::size_t> kept_radar, masked_radar;
  std::vector<std::size_t> kept_optical, masked_optical;
  std::uint64_t seed = 0;

  static MaskPlan keep_all(std::size_t total);
  std::string to_json() const;
  static MaskPlan from_json(const std::string& text);
};

// Uniform subset without replacement via seeded shuffle-and-take; kept count
// is floor(L * (1 - ratio)). Independent policy draws radar then optical from
// the same stream; shared policy draws once.
MaskPlan sample_mask(std::size_t total, double ratio, MaskPolicy policy, Rng& rng);

// Row selection / reassembly between full-length and kept-length sequences.
Tensor gather_patches(const Tensor& seq, const std::vector<std::size_t>& kept);
Tensor scatter_with_mask_emb(const Tensor& kept_seq, const std::vector<std::size_t>& kept,
                             std::size_t total, const Tensor& mask_emb);

}  // namespace croma
