#include "croma/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace croma {

namespace {
constexpr double kTargetEps = 1e-6;
}

Tensor normalize_targets(const Tensor& patches) {
  if (patches.rank() != 2) throw std::invalid_argument("normalize_targets: input must be 2-D");
  const std::size_t r = patches.rows(), c = patches.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = patches.value().data() + i * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + kTargetEps);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = (row[j] - mean) * inv;
  }
  return Tensor::constant({r, c}, std::move(out));
}

namespace {

// Mean over features of squared error, then mean over the masked patches.
Tensor masked_mse(const Tensor& pred, const Tensor& normalized_target,
                  const std::vector<std::size_t>& masked) {
  if (masked.empty()) throw std::invalid_argument("mae_loss: empty masked set");
  const Tensor diff = sub(gather_rows(pred, masked), gather_rows(normalized_target, masked));
  const Tensor per_elem = mul(diff, diff);
  const double inv_count = 1.0 / static_cast<double>(per_elem.numel());
  return scale(sum_all(per_elem), inv_count);
}

}  // namespace

MaeTerms mae_loss(const Tensor& pred_optical, const Tensor& pred_radar,
                  const Tensor& target_optical_patches, const Tensor& target_radar_patches,
                  const MaskPlan& plan, MaeTarget target_mode) {
  MaeTerms terms;
  if (target_mode != MaeTarget::kRadarOnly) {
    terms.optical =
        masked_mse(pred_optical, normalize_targets(target_optical_patches), plan.masked_optical);
  }
  if (target_mode != MaeTarget::kOpticalOnly) {
    terms.radar =
        masked_mse(pred_radar, normalize_targets(target_radar_patches), plan.masked_radar);
  }
  return terms;
}

Tensor info_nce(const Tensor& z_radar, const Tensor& z_optical, const Tensor& sigma) {
  if (z_radar.rank() != 2 || z_optical.rank() != 2 ||
      z_radar.shape() != z_optical.shape())
    throw std::invalid_argument("info_nce: projections must be equal-shape 2-D stacks");
  if (sigma.numel() != 1 || sigma.item() <= 0.0)
    throw std::invalid_argument("info_nce: sigma must be a positive scalar");
  const std::size_t n = z_radar.rows();
  const Tensor inv_sigma = exp_op(neg(log_op(sigma)));
  const Tensor logits_ro = mul_scalar_tensor(matmul(z_radar, transpose(z_optical)), inv_sigma);
  const Tensor logits_or = transpose(logits_ro);
  const Tensor diag_ro = diag_part(log_softmax_lastdim(logits_ro));
  const Tensor diag_or = diag_part(log_softmax_lastdim(logits_or));
  const double inv_2n = 1.0 / (2.0 * static_cast<double>(n));
  return scale(add(sum_all(diag_ro), sum_all(diag_or)), -inv_2n);
}

LossBreakdown combined_loss(const CromaModel& model,
                            const std::vector<ForwardResult>& results,
                            const std::vector<const PairedSample*>& samples,
                            const std::vector<MaskPlan>& plans) {
  const std::size_t n = results.size();
  if (n == 0 || samples.size() != n || plans.size() != n)
    throw std::invalid_argument("combined_loss: inconsistent batch inputs");
  const ModelConfig& cfg = model.config();

  std::vector<Tensor> z_r_rows, z_o_rows;
  z_r_rows.reserve(n);
  z_o_rows.reserve(n);
  Tensor mae_opt_sum, mae_rad_sum;
  for (std::size_t i = 0; i < n; ++i) {
    z_r_rows.push_back(results[i].bundle.z_radar);
    z_o_rows.push_back(results[i].bundle.z_optical);
    if (plans[i].total != cfg.patches())
      throw std::invalid_argument("combined_loss: plan does not match the training grid");
    const Tensor target_opt =
        patchify(samples[i]->optical, cfg.channels_optical, cfg.image_size, cfg.patch_size);
    const Tensor target_rad =
        patchify(samples[i]->radar, cfg.channels_radar, cfg.image_size, cfg.patch_size);
    const MaeTerms terms = mae_loss(results[i].pred_optical, results[i].pred_radar, target_opt,
                                    target_rad, plans[i], cfg.mae_target);
    if (terms.optical.defined())
      mae_opt_sum = mae_opt_sum.defined() ? add(mae_opt_sum, terms.optical) : terms.optical;
    if (terms.radar.defined())
      mae_rad_sum = mae_rad_sum.defined() ? add(mae_rad_sum, terms.radar) : terms.radar;
  }

  const Tensor sigma = model.temperature_sigma();
  const Tensor z_r = stack_rows(z_r_rows);
  const Tensor z_o = stack_rows(z_o_rows);
  const Tensor l_con = info_nce(z_r, z_o, sigma);

  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor l_mae = Tensor::scalar(0.0);
  if (mae_opt_sum.defined()) l_mae = add(l_mae, scale(mae_opt_sum, inv_n));
  if (mae_rad_sum.defined()) l_mae = add(l_mae, scale(mae_rad_sum, inv_n));

  LossBreakdown out;
  out.lambda_con = cfg.lambda_con;
  out.lambda_mae = cfg.lambda_mae;
  out.total = add(scale(l_con, cfg.lambda_con), scale(l_mae, cfg.lambda_mae));
  out.l_con = l_con.item();
  out.l_mae = l_mae.item();
  out.l_mae_optical = mae_opt_sum.defined() ? mae_opt_sum.item() * inv_n : 0.0;
  out.l_mae_radar = mae_rad_sum.defined() ? mae_rad_sum.item() * inv_n : 0.0;
  out.sigma = sigma.item();
  return out;
}

}  // namespace croma
