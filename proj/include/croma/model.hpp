#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "croma/masking.hpp"
#include "croma/posbias.hpp"
#include "croma/rng.hpp"
#include "croma/tensor.hpp"

namespace croma {

enum class PosEncoding { k2dAlibiXAlibi, k2dAlibiOnly, kSinusoidal2d };
enum class MaeTarget { kBoth, kOpticalOnly, kRadarOnly };
enum class TemperatureMode { kLearnable, kFixed };

PosEncoding pos_encoding_from_string(const std::string& s);
std::string to_string(PosEncoding v);
MaeTarget mae_target_from_string(const std::string& s);
std::string to_string(MaeTarget v);

struct ModelConfig {
  std::size_t image_size = 120;
  std::size_t patch_size = 8;
  std::size_t channels_radar = 2;
  std::size_t channels_optical = 12;
  std::size_t width = 768;        // D
  std::size_t heads = 16;         // H
  std::size_t depth = 12;         // N optical layers; radar and fusion use N/2
  std::size_t decoder_depth = 1;
  std::size_t decoder_width = 512;
  std::size_t proj_dim = 0;       // 0 resolves to width
  double mask_ratio = 0.75;
  MaskPolicy mask_policy = MaskPolicy::kIndependent;
  double lambda_con = 1.0;
  double lambda_mae = 1.0;
  PosEncoding pos_encoding = PosEncoding::k2dAlibiXAlibi;
  MaeTarget mae_target = MaeTarget::kBoth;
  TemperatureMode temperature_mode = TemperatureMode::kLearnable;
  double temperature_init = 0.07;
  bool fusion_self_first = true;  // self -> cross -> FFN within a fusion layer

  std::size_t grid_side() const { return image_size / patch_size; }
  GridSpec grid() const { return {grid_side(), grid_side()}; }
  std::size_t patches() const { return grid().length(); }
  std::size_t projection_dim() const { return proj_dim == 0 ? width : proj_dim; }
  std::size_t patch_dim_radar() const { return channels_radar * patch_size * patch_size; }
  std::size_t patch_dim_optical() const { return channels_optical * patch_size * patch_size; }

  void validate() const;  // throws std::invalid_argument on violations

  // Small configuration used across the test suites: image 24, D=64, H=4,
  // N=4, decoder 1x32. patch 8 gives a 3x3 grid, patch 4 a 6x6 grid.
  static ModelConfig toy(std::size_t patch = 8);
};

// Co-registered sample pair; channel-major row-major pixels.
struct PairedSample {
  std::vector<double> radar;    // channels_radar * S * S
  std::vector<double> optical;  // channels_optical * S * S
};

// Ordered, named registry of parameter leaves. Order is creation order and is
// the canonical order for the optimizer and checkpoints.
class ParamStore {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<double> data);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t size() const { return items_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<Tensor> tensors() const;
  std::size_t total_scalars() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct EncodingBundle {
  Tensor e_radar;    // |kept_R| x D
  Tensor e_optical;  // |kept_O| x D
  Tensor e_fused;    // |kept_R| x D
  Tensor r_radar, r_optical, r_fused;  // D
  Tensor z_radar, z_optical;           // P, unit norm
};

struct ForwardResult {
  EncodingBundle bundle;
  Tensor pred_optical;  // L x (channels_optical * patch^2)
  Tensor pred_radar;    // L x (channels_radar * patch^2)
};

// Rearranges C x S x S pixels into L x (C * patch^2) rows, patch order
// row-major, features channel-major within a patch. Gradient-free data prep.
Tensor patchify(const std::vector<double>& pixels, std::size_t channels, std::size_t size,
                std::size_t patch);
std::vector<double> unpatchify(const Tensor& patches, std::size_t channels, std::size_t size,
                               std::size_t patch);

struct LnParams {
  Tensor g, b;
};
// No key bias: it shifts every pre-softmax score in a row by the same amount,
// which softmax cancels exactly.
struct AttnParams {
  Tensor wq, bq, wk, wv, bv, wo, bo;
};
struct FfnParams {
  Tensor w1, b1, w2, b2;
};

// Per-head scaled dot-product attention with the standard 1/sqrt(d_head)
// scaling and an optional additive pre-softmax bias stack (one [Lq x Lk]
// matrix per head). Self-attention when x_q and x_kv are the same sequence.
Tensor attention(const Tensor& x_q, const Tensor& x_kv, const BiasStack* bias,
                 const AttnParams& p, std::size_t heads);

class CromaModel {
 public:
  CromaModel(ModelConfig cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Per-grid forward pieces. The grid defaults to the training grid but any
  // grid works with the same parameters (test-time extrapolation); for the
  // 2d-sinusoidal variant, interpolate_sinusoids bilinearly resizes the
  // training-grid table instead of evaluating sinusoids at unseen positions.
  Tensor encode_radar(const std::vector<double>& image, const MaskPlan& plan,
                      const GridSpec& grid, bool interpolate_sinusoids = false) const;
  Tensor encode_optical(const std::vector<double>& image, const MaskPlan& plan,
                        const GridSpec& grid, bool interpolate_sinusoids = false) const;
  Tensor encode_fusion(const Tensor& e_radar, const Tensor& e_optical, const MaskPlan& plan,
                       const GridSpec& grid) const;
  void pooled_representations(const Tensor& e_radar, const Tensor& e_optical,
                              const Tensor& e_fused, Tensor& r_radar, Tensor& r_optical,
                              Tensor& r_fused) const;
  void project(const Tensor& r_radar, const Tensor& r_optical, Tensor& z_radar,
               Tensor& z_optical) const;
  void decode(const Tensor& e_fused, const MaskPlan& plan, const GridSpec& grid,
              Tensor& pred_optical, Tensor& pred_radar) const;

  ForwardResult forward_full(const PairedSample& sample, const MaskPlan& plan) const;
  ForwardResult forward_full(const PairedSample& sample, const MaskPlan& plan,
                             const GridSpec& grid, bool interpolate_sinusoids = false) const;

  // Softmax temperature as a scalar tensor: exp of the clamped learnable
  // log-temperature, or a constant under fixed mode.
  Tensor temperature_sigma() const;

  void save_checkpoint(const std::string& dir, std::uint64_t run_seed) const;
  static CromaModel load_checkpoint(const std::string& dir);

 private:
  explicit CromaModel(ModelConfig cfg);  // params filled in by the caller
  void build_params(Rng& rng);
  struct Blocks;  // grouped tensor handles, defined in model.cpp

  ModelConfig cfg_;
  ParamStore params_;
  std::shared_ptr<const Blocks> blocks_;
};

ModelConfig model_config_from_json(const std::string& text);
std::string model_config_to_json(const ModelConfig& cfg);

}  // namespace croma
