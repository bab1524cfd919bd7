#pragma once

#include <vector>

#include "croma/masking.hpp"
#include "croma/model.hpp"
#include "croma/tensor.hpp"

namespace croma {

struct LossBreakdown {
  Tensor total;       // lambda_con * l_con + lambda_mae * l_mae, graph-connected
  double l_con = 0.0;
  double l_mae = 0.0;
  double l_mae_optical = 0.0;
  double l_mae_radar = 0.0;
  double lambda_con = 1.0;
  double lambda_mae = 1.0;
  double sigma = 0.0;
};

// Per-row standardization (mean 0, population variance 1, eps 1e-6). Targets
// are data: the result is a constant and carries no gradient.
Tensor normalize_targets(const Tensor& patches);

// Masked-patch MSE per modality for one sample: feature mean per patch, patch
// mean over the masked set. Terms excluded by target_mode stay out of the
// graph and are returned purely as numbers.
struct MaeTerms {
  Tensor optical;  // scalar, defined when the mode includes optical
  Tensor radar;
};
MaeTerms mae_loss(const Tensor& pred_optical, const Tensor& pred_radar,
                  const Tensor& target_optical_patches, const Tensor& target_radar_patches,
                  const MaskPlan& plan, MaeTarget target_mode);

// Bidirectional InfoNCE over unit-norm projection rows; sigma is a positive
// scalar tensor (learnable temperature stays in the graph).
Tensor info_nce(const Tensor& z_radar, const Tensor& z_optical, const Tensor& sigma);

// Batch objective: forward results plus the originating samples and plans.
LossBreakdown combined_loss(const CromaModel& model,
                            const std::vector<ForwardResult>& results,
                            const std::vector<const PairedSample*>& samples,
                            const std::vector<MaskPlan>& plans);

}  // namespace croma
