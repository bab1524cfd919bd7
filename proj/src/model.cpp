#include "croma/model.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "croma/container.hpp"

namespace croma {

using nlohmann::json;
namespace fs = std::filesystem;

PosEncoding pos_encoding_from_string(const std::string& s) {
  if (s == "2d-alibi+x-alibi") return PosEncoding::k2dAlibiXAlibi;
  if (s == "2d-alibi-only") return PosEncoding::k2dAlibiOnly;
  if (s == "2d-sinusoidal") return PosEncoding::kSinusoidal2d;
  throw std::invalid_argument("unknown position encoding '" + s + "'");
}

std::string to_string(PosEncoding v) {
  switch (v) {
    case PosEncoding::k2dAlibiXAlibi: return "2d-alibi+x-alibi";
    case PosEncoding::k2dAlibiOnly: return "2d-alibi-only";
    case PosEncoding::kSinusoidal2d: return "2d-sinusoidal";
  }
  return "?";
}

MaeTarget mae_target_from_string(const std::string& s) {
  if (s == "both") return MaeTarget::kBoth;
  if (s == "optical-only") return MaeTarget::kOpticalOnly;
  if (s == "radar-only") return MaeTarget::kRadarOnly;
  throw std::invalid_argument("unknown MAE target '" + s + "'");
}

std::string to_string(MaeTarget v) {
  switch (v) {
    case MaeTarget::kBoth: return "both";
    case MaeTarget::kOpticalOnly: return "optical-only";
    case MaeTarget::kRadarOnly: return "radar-only";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0)
    throw std::invalid_argument("config: image size must be a positive multiple of patch size");
  if (depth == 0 || depth % 2 != 0)
    throw std::invalid_argument("config: depth N must be positive and even");
  if (width == 0 || heads == 0 || width % heads != 0)
    throw std::invalid_argument("config: width must be divisible by heads");
  if (pos_encoding == PosEncoding::kSinusoidal2d && width % 4 != 0)
    throw std::invalid_argument("config: 2d-sinusoidal variant needs width divisible by 4");
  if (decoder_depth == 0) throw std::invalid_argument("config: decoder depth must be >= 1");
  if (decoder_width == 0 || decoder_width % 4 != 0)
    throw std::invalid_argument("config: decoder width must be a positive multiple of 4");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
    throw std::invalid_argument("config: mask ratio must be in (0, 1)");
  if (temperature_mode == TemperatureMode::kFixed && temperature_init <= 0.0)
    throw std::invalid_argument("config: fixed temperature must be positive");
  if (channels_radar == 0 || channels_optical == 0)
    throw std::invalid_argument("config: channel counts must be positive");
}

ModelConfig ModelConfig::toy(std::size_t patch) {
  ModelConfig cfg;
  cfg.image_size = 24;
  cfg.patch_size = patch;
  cfg.width = 64;
  cfg.heads = 4;
  cfg.depth = 4;
  cfg.decoder_depth = 1;
  cfg.decoder_width = 32;
  cfg.proj_dim = 32;
  return cfg;
}

Tensor ParamStore::add(const std::string& name, Shape shape, std::vector<double> data) {
  if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
  Tensor t = Tensor::param(std::move(shape), std::move(data));
  index_[name] = items_.size();
  items_.emplace_back(name, t);
  return t;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
  return items_[it->second].second;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(items_.size());
  for (const auto& [name, t] : items_) out.push_back(t);
  return out;
}

std::size_t ParamStore::total_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

// ---------------------------------------------------------------------------
// patchify
// ---------------------------------------------------------------------------

Tensor patchify(const std::vector<double>& pixels, std::size_t channels, std::size_t size,
                std::size_t patch) {
  if (patch == 0 || size % patch != 0)
    throw std::invalid_argument("patchify: image size not divisible by patch size");
  if (pixels.size() != channels * size * size)
    throw std::invalid_argument("patchify: pixel buffer does not match dimensions");
  const std::size_t side = size / patch;
  const std::size_t l = side * side;
  const std::size_t pd = channels * patch * patch;
  std::vector<double> out(l * pd);
  for (std::size_t pr = 0; pr < side; ++pr)
    for (std::size_t pc = 0; pc < side; ++pc) {
      const std::size_t row = pr * side + pc;
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t dy = 0; dy < patch; ++dy)
          for (std::size_t dx = 0; dx < patch; ++dx) {
            out[row * pd + (c * patch + dy) * patch + dx] =
                pixels[c * size * size + (pr * patch + dy) * size + pc * patch + dx];
          }
    }
  return Tensor::constant({l, pd}, std::move(out));
}

std::vector<double> unpatchify(const Tensor& patches, std::size_t channels, std::size_t size,
                               std::size_t patch) {
  if (patch == 0 || size % patch != 0)
    throw std::invalid_argument("unpatchify: image size not divisible by patch size");
  const std::size_t side = size / patch;
  const std::size_t pd = channels * patch * patch;
  if (patches.rank() != 2 || patches.rows() != side * side || patches.cols() != pd)
    throw std::invalid_argument("unpatchify: patch tensor shape mismatch");
  std::vector<double> pixels(channels * size * size);
  for (std::size_t pr = 0; pr < side; ++pr)
    for (std::size_t pc = 0; pc < side; ++pc) {
      const std::size_t row = pr * side + pc;
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t dy = 0; dy < patch; ++dy)
          for (std::size_t dx = 0; dx < patch; ++dx) {
            pixels[c * size * size + (pr * patch + dy) * size + pc * patch + dx] =
                patches.value()[row * pd + (c * patch + dy) * patch + dx];
          }
    }
  return pixels;
}

// ---------------------------------------------------------------------------
// parameter layout
// ---------------------------------------------------------------------------

namespace {

struct EncoderBlockParams {
  LnParams ln1;
  AttnParams attn;
  LnParams ln2;
  FfnParams ffn;
};
struct FusionBlockParams {
  LnParams ln_self;
  AttnParams self_attn;
  LnParams ln_cross;
  AttnParams cross_attn;
  LnParams ln_ffn;
  FfnParams ffn;
};

constexpr double kMaskEmbStd = 0.02;
constexpr double kSigmaClampLo = 0.01;
constexpr double kSigmaClampHi = 1.0;

}  // namespace

struct CromaModel::Blocks {
  Tensor radar_embed_w, radar_embed_b;
  Tensor optical_embed_w, optical_embed_b;
  std::vector<EncoderBlockParams> radar_blocks, optical_blocks;
  LnParams radar_final, optical_final, fusion_final;
  std::vector<FusionBlockParams> fusion_blocks;
  FfnParams pool_radar, pool_optical;
  Tensor proj_radar_w, proj_optical_w;
  Tensor dec_adapter_w, dec_adapter_b, dec_mask_emb;
  std::vector<EncoderBlockParams> dec_blocks;
  LnParams dec_final;
  Tensor dec_head_w, dec_head_b;
  Tensor log_sigma;
};

namespace {

class ParamBuilder {
 public:
  ParamBuilder(ParamStore& store, Rng& rng) : store_(store), rng_(rng) {}

  // Fan-in scaled init keeps activation and gradient magnitudes O(1) at the
  // small widths this project runs at.
  Tensor weight(const std::string& name, std::size_t in, std::size_t out) {
    std::vector<double> data(in * out);
    const double std = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : data) v = rng_.normal(0.0, std);
    return store_.add(name, {in, out}, std::move(data));
  }
  Tensor vec(const std::string& name, std::size_t n, double fill) {
    return store_.add(name, {n}, std::vector<double>(n, fill));
  }
  Tensor vec_normal(const std::string& name, std::size_t n) {
    std::vector<double> data(n);
    for (double& v : data) v = rng_.normal(0.0, kMaskEmbStd);
    return store_.add(name, {n}, std::move(data));
  }
  LnParams ln(const std::string& prefix, std::size_t n) {
    return {vec(prefix + ".g", n, 1.0), vec(prefix + ".b", n, 0.0)};
  }
  AttnParams attn(const std::string& prefix, std::size_t dim) {
    return {weight(prefix + ".wq", dim, dim), vec(prefix + ".bq", dim, 0.0),
            weight(prefix + ".wk", dim, dim),
            weight(prefix + ".wv", dim, dim), vec(prefix + ".bv", dim, 0.0),
            weight(prefix + ".wo", dim, dim), vec(prefix + ".bo", dim, 0.0)};
  }
  FfnParams ffn(const std::string& prefix, std::size_t dim, std::size_t hidden) {
    return {weight(prefix + ".w1", dim, hidden), vec(prefix + ".b1", hidden, 0.0),
            weight(prefix + ".w2", hidden, dim), vec(prefix + ".b2", dim, 0.0)};
  }
  EncoderBlockParams encoder_block(const std::string& prefix, std::size_t dim) {
    return {ln(prefix + ".ln1", dim), attn(prefix + ".attn", dim), ln(prefix + ".ln2", dim),
            ffn(prefix + ".ffn", dim, 4 * dim)};
  }
  FusionBlockParams fusion_block(const std::string& prefix, std::size_t dim) {
    return {ln(prefix + ".ln_self", dim),  attn(prefix + ".self", dim),
            ln(prefix + ".ln_cross", dim), attn(prefix + ".cross", dim),
            ln(prefix + ".ln_ffn", dim),   ffn(prefix + ".ffn", dim, 4 * dim)};
  }

 private:
  ParamStore& store_;
  Rng& rng_;
};

}  // namespace

CromaModel::CromaModel(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

CromaModel::CromaModel(ModelConfig cfg, std::uint64_t init_seed) : CromaModel(std::move(cfg)) {
  Rng rng(init_seed);
  build_params(rng);
}

void CromaModel::build_params(Rng& rng) {
  auto blocks = std::make_shared<Blocks>();
  ParamBuilder b(params_, rng);
  const std::size_t d = cfg_.width;
  const std::size_t half_depth = cfg_.depth / 2;

  blocks->radar_embed_w = b.weight("radar.embed.w", cfg_.patch_dim_radar(), d);
  blocks->radar_embed_b = b.vec("radar.embed.b", d, 0.0);
  for (std::size_t i = 0; i < half_depth; ++i)
    blocks->radar_blocks.push_back(b.encoder_block("radar.block" + std::to_string(i), d));
  blocks->radar_final = b.ln("radar.final_ln", d);

  blocks->optical_embed_w = b.weight("optical.embed.w", cfg_.patch_dim_optical(), d);
  blocks->optical_embed_b = b.vec("optical.embed.b", d, 0.0);
  for (std::size_t i = 0; i < cfg_.depth; ++i)
    blocks->optical_blocks.push_back(b.encoder_block("optical.block" + std::to_string(i), d));
  blocks->optical_final = b.ln("optical.final_ln", d);

  for (std::size_t i = 0; i < half_depth; ++i)
    blocks->fusion_blocks.push_back(b.fusion_block("fusion.block" + std::to_string(i), d));
  blocks->fusion_final = b.ln("fusion.final_ln", d);

  blocks->pool_radar = b.ffn("pool.radar", d, d);
  blocks->pool_optical = b.ffn("pool.optical", d, d);
  blocks->proj_radar_w = b.weight("proj.radar.w", d, cfg_.projection_dim());
  blocks->proj_optical_w = b.weight("proj.optical.w", d, cfg_.projection_dim());

  const std::size_t w = cfg_.decoder_width;
  blocks->dec_adapter_w = b.weight("dec.adapter.w", d, w);
  blocks->dec_adapter_b = b.vec("dec.adapter.b", w, 0.0);
  blocks->dec_mask_emb = b.vec_normal("dec.mask_emb", w);
  for (std::size_t i = 0; i < cfg_.decoder_depth; ++i)
    blocks->dec_blocks.push_back(b.encoder_block("dec.block" + std::to_string(i), w));
  blocks->dec_final = b.ln("dec.final_ln", w);
  const std::size_t head_out =
      (cfg_.channels_optical + cfg_.channels_radar) * cfg_.patch_size * cfg_.patch_size;
  blocks->dec_head_w = b.weight("dec.head.w", w, head_out);
  blocks->dec_head_b = b.vec("dec.head.b", head_out, 0.0);

  blocks->log_sigma =
      params_.add("temperature.log_sigma", {1}, {std::log(cfg_.temperature_init)});

  blocks_ = std::move(blocks);
}

// ---------------------------------------------------------------------------
// forward pieces
// ---------------------------------------------------------------------------

Tensor attention(const Tensor& xq, const Tensor& xkv, const BiasStack* bias,
                 const AttnParams& p, std::size_t heads) {
  const std::size_t dim = xq.cols();
  const std::size_t dh = dim / heads;
  if (bias && (bias->heads != heads || bias->lq != xq.rows() || bias->lk != xkv.rows()))
    throw std::invalid_argument("attention: bias stack shape mismatch");
  const Tensor q = linear(xq, p.wq, p.bq);
  const Tensor k = linear(xkv, p.wk, Tensor::zeros({dim}));
  const Tensor v = linear(xkv, p.wv, p.bv);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
    if (bias) scores = add(scores, bias->head_tensor(h));
    head_outputs.push_back(matmul(softmax_lastdim(scores), vh));
  }
  const Tensor merged = concat_cols(head_outputs);
  return linear(merged, p.wo, p.bo);
}

namespace {

Tensor ffn_forward(const Tensor& x, const FfnParams& p) {
  return linear(gelu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

Tensor encoder_block_forward(const Tensor& x, const EncoderBlockParams& p, const BiasStack* bias,
                             std::size_t heads) {
  const Tensor n = layernorm(x, p.ln1.g, p.ln1.b);
  const Tensor y = add(x, attention(n, n, bias, p.attn, heads));
  return add(y, ffn_forward(layernorm(y, p.ln2.g, p.ln2.b), p.ffn));
}

// Bilinear resize of a [gs*gs x dim] table to [GS*GS x dim], the standard
// absolute-embedding interpolation used when evaluating on larger images.
Tensor interpolate_table(const Tensor& table, std::size_t src_side, std::size_t dst_side) {
  const std::size_t dim = table.cols();
  std::vector<double> out(dst_side * dst_side * dim);
  for (std::size_t r = 0; r < dst_side; ++r)
    for (std::size_t c = 0; c < dst_side; ++c) {
      const double sr = dst_side == 1 ? 0.0
                                      : static_cast<double>(r) * static_cast<double>(src_side - 1) /
                                            static_cast<double>(dst_side - 1);
      const double sc = dst_side == 1 ? 0.0
                                      : static_cast<double>(c) * static_cast<double>(src_side - 1) /
                                            static_cast<double>(dst_side - 1);
      const std::size_t r0 = static_cast<std::size_t>(sr);
      const std::size_t c0 = static_cast<std::size_t>(sc);
      const std::size_t r1 = std::min(r0 + 1, src_side - 1);
      const std::size_t c1 = std::min(c0 + 1, src_side - 1);
      const double fr = sr - static_cast<double>(r0);
      const double fc = sc - static_cast<double>(c0);
      for (std::size_t j = 0; j < dim; ++j) {
        const auto v = [&](std::size_t rr, std::size_t cc) {
          return table.value()[(rr * src_side + cc) * dim + j];
        };
        out[(r * dst_side + c) * dim + j] = (1 - fr) * (1 - fc) * v(r0, c0) +
                                            (1 - fr) * fc * v(r0, c1) +
                                            fr * (1 - fc) * v(r1, c0) + fr * fc * v(r1, c1);
      }
    }
  return Tensor::constant({dst_side * dst_side, dim}, std::move(out));
}

Tensor positional_table(const ModelConfig& cfg, const GridSpec& grid, bool interpolate) {
  if (grid.rows == cfg.grid_side() && grid.cols == cfg.grid_side())
    return sinusoidal_2d(cfg.grid(), cfg.width);
  if (!interpolate) return sinusoidal_2d(grid, cfg.width);
  if (grid.rows != grid.cols)
    throw std::invalid_argument("sinusoid interpolation requires a square grid");
  return interpolate_table(sinusoidal_2d(cfg.grid(), cfg.width), cfg.grid_side(), grid.rows);
}

}  // namespace

Tensor CromaModel::encode_radar(const std::vector<double>& image, const MaskPlan& plan,
                                const GridSpec& grid, bool interpolate_sinusoids) const {
  const auto& bl = *blocks_;
  const std::size_t image_size = grid.rows * cfg_.patch_size;
  const Tensor patches = patchify(image, cfg_.channels_radar, image_size, cfg_.patch_size);
  if (plan.total != grid.length())
    throw std::invalid_argument("encode_radar: mask plan does not match grid");
  Tensor x = gather_patches(patches, plan.kept_radar);
  x = linear(x, bl.radar_embed_w, bl.radar_embed_b);
  const bool use_alibi = cfg_.pos_encoding != PosEncoding::kSinusoidal2d;
  if (!use_alibi)
    x = add(x, gather_patches(positional_table(cfg_, grid, interpolate_sinusoids),
                              plan.kept_radar));
  const BiasStack* bias =
      use_alibi ? &cached_bias(grid, cfg_.heads, plan.kept_radar, plan.kept_radar,
                               BiasProvenance::kSelf)
                : nullptr;
  for (const auto& block : bl.radar_blocks)
    x = encoder_block_forward(x, block, bias, cfg_.heads);
  return layernorm(x, bl.radar_final.g, bl.radar_final.b);
}

Tensor CromaModel::encode_optical(const std::vector<double>& image, const MaskPlan& plan,
                                  const GridSpec& grid, bool interpolate_sinusoids) const {
  const auto& bl = *blocks_;
  const std::size_t image_size = grid.rows * cfg_.patch_size;
  const Tensor patches = patchify(image, cfg_.channels_optical, image_size, cfg_.patch_size);
  if (plan.total != grid.length())
    throw std::invalid_argument("encode_optical: mask plan does not match grid");
  Tensor x = gather_patches(patches, plan.kept_optical);
  x = linear(x, bl.optical_embed_w, bl.optical_embed_b);
  const bool use_alibi = cfg_.pos_encoding != PosEncoding::kSinusoidal2d;
  if (!use_alibi)
    x = add(x, gather_patches(positional_table(cfg_, grid, interpolate_sinusoids),
                              plan.kept_optical));
  const BiasStack* bias =
      use_alibi ? &cached_bias(grid, cfg_.heads, plan.kept_optical, plan.kept_optical,
                               BiasProvenance::kSelf)
                : nullptr;
  for (const auto& block : bl.optical_blocks)
    x = encoder_block_forward(x, block, bias, cfg_.heads);
  return layernorm(x, bl.optical_final.g, bl.optical_final.b);
}

Tensor CromaModel::encode_fusion(const Tensor& e_radar, const Tensor& e_optical,
                                 const MaskPlan& plan, const GridSpec& grid) const {
  const auto& bl = *blocks_;
  if (e_radar.rows() != plan.kept_radar.size() || e_optical.rows() != plan.kept_optical.size())
    throw std::invalid_argument("encode_fusion: encodings do not match plan");
  const bool use_alibi = cfg_.pos_encoding != PosEncoding::kSinusoidal2d;
  const bool use_x_alibi = cfg_.pos_encoding == PosEncoding::k2dAlibiXAlibi;
  const BiasStack* self_bias =
      use_alibi ? &cached_bias(grid, cfg_.heads, plan.kept_radar, plan.kept_radar,
                               BiasProvenance::kSelf)
                : nullptr;
  const BiasStack* cross_bias =
      use_x_alibi ? &cached_bias(grid, cfg_.heads, plan.kept_radar, plan.kept_optical,
                                 BiasProvenance::kCross)
                  : nullptr;
  Tensor x = e_radar;
  for (const auto& block : bl.fusion_blocks) {
    const auto apply_self = [&](const Tensor& in) {
      const Tensor n = layernorm(in, block.ln_self.g, block.ln_self.b);
      return add(in, attention(n, n, self_bias, block.self_attn, cfg_.heads));
    };
    const auto apply_cross = [&](const Tensor& in) {
      const Tensor n = layernorm(in, block.ln_cross.g, block.ln_cross.b);
      return add(in, attention(n, e_optical, cross_bias, block.cross_attn, cfg_.heads));
    };
    x = cfg_.fusion_self_first ? apply_cross(apply_self(x)) : apply_self(apply_cross(x));
    x = add(x, ffn_forward(layernorm(x, block.ln_ffn.g, block.ln_ffn.b), block.ffn));
  }
  return layernorm(x, bl.fusion_final.g, bl.fusion_final.b);
}

void CromaModel::pooled_representations(const Tensor& e_radar, const Tensor& e_optical,
                                        const Tensor& e_fused, Tensor& r_radar,
                                        Tensor& r_optical, Tensor& r_fused) const {
  const auto& bl = *blocks_;
  if (e_radar.rows() == 0 || e_optical.rows() == 0 || e_fused.rows() == 0)
    throw std::invalid_argument("pooled_representations: empty sequence");
  r_radar = ffn_forward(mean_rows(e_radar), bl.pool_radar);
  r_optical = ffn_forward(mean_rows(e_optical), bl.pool_optical);
  r_fused = mean_rows(e_fused);
}

void CromaModel::project(const Tensor& r_radar, const Tensor& r_optical, Tensor& z_radar,
                         Tensor& z_optical) const {
  const auto& bl = *blocks_;
  // Bias-free projections keep z scale-invariant in the representation.
  const Tensor zero = Tensor::zeros({cfg_.projection_dim()});
  z_radar = l2_normalize(linear(r_radar, bl.proj_radar_w, zero));
  z_optical = l2_normalize(linear(r_optical, bl.proj_optical_w, zero));
}

void CromaModel::decode(const Tensor& e_fused, const MaskPlan& plan, const GridSpec& grid,
                        Tensor& pred_optical, Tensor& pred_radar) const {
  const auto& bl = *blocks_;
  if (e_fused.rows() != plan.kept_radar.size())
    throw std::invalid_argument("decode: fused length does not match plan");
  Tensor x = linear(e_fused, bl.dec_adapter_w, bl.dec_adapter_b);
  x = scatter_with_mask_emb(x, plan.kept_radar, grid.length(), bl.dec_mask_emb);
  x = add(x, sinusoidal_2d(grid, cfg_.decoder_width));
  for (const auto& block : bl.dec_blocks)
    x = encoder_block_forward(x, block, nullptr, cfg_.heads);
  x = layernorm(x, bl.dec_final.g, bl.dec_final.b);
  const Tensor out = linear(x, bl.dec_head_w, bl.dec_head_b);
  const std::size_t p2 = cfg_.patch_size * cfg_.patch_size;
  pred_optical = slice_cols(out, 0, cfg_.channels_optical * p2);
  pred_radar = slice_cols(out, cfg_.channels_optical * p2,
                          (cfg_.channels_optical + cfg_.channels_radar) * p2);
}

ForwardResult CromaModel::forward_full(const PairedSample& sample, const MaskPlan& plan) const {
  return forward_full(sample, plan, cfg_.grid());
}

ForwardResult CromaModel::forward_full(const PairedSample& sample, const MaskPlan& plan,
                                       const GridSpec& grid, bool interpolate_sinusoids) const {
  ForwardResult res;
  res.bundle.e_radar = encode_radar(sample.radar, plan, grid, interpolate_sinusoids);
  res.bundle.e_optical = encode_optical(sample.optical, plan, grid, interpolate_sinusoids);
  res.bundle.e_fused = encode_fusion(res.bundle.e_radar, res.bundle.e_optical, plan, grid);
  pooled_representations(res.bundle.e_radar, res.bundle.e_optical, res.bundle.e_fused,
                         res.bundle.r_radar, res.bundle.r_optical, res.bundle.r_fused);
  project(res.bundle.r_radar, res.bundle.r_optical, res.bundle.z_radar, res.bundle.z_optical);
  decode(res.bundle.e_fused, plan, grid, res.pred_optical, res.pred_radar);
  return res;
}

Tensor CromaModel::temperature_sigma() const {
  if (cfg_.temperature_mode == TemperatureMode::kFixed)
    return Tensor::scalar(cfg_.temperature_init);
  return exp_op(clamp(blocks_->log_sigma, std::log(kSigmaClampLo), std::log(kSigmaClampHi)));
}

// ---------------------------------------------------------------------------
// config / checkpoint serialization
// ---------------------------------------------------------------------------

std::string model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["image_size"] = cfg.image_size;
  j["patch_size"] = cfg.patch_size;
  j["channels_radar"] = cfg.channels_radar;
  j["channels_optical"] = cfg.channels_optical;
  j["width"] = cfg.width;
  j["heads"] = cfg.heads;
  j["depth"] = cfg.depth;
  j["decoder_depth"] = cfg.decoder_depth;
  j["decoder_width"] = cfg.decoder_width;
  j["proj_dim"] = cfg.proj_dim;
  j["mask_ratio"] = cfg.mask_ratio;
  j["mask_policy"] = to_string(cfg.mask_policy);
  j["lambda_con"] = cfg.lambda_con;
  j["lambda_mae"] = cfg.lambda_mae;
  j["pos_encoding"] = to_string(cfg.pos_encoding);
  j["mae_target"] = to_string(cfg.mae_target);
  j["temperature_mode"] =
      cfg.temperature_mode == TemperatureMode::kLearnable ? "learnable" : "fixed";
  j["temperature_init"] = cfg.temperature_init;
  j["fusion_self_first"] = cfg.fusion_self_first;
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  static const std::vector<std::string> known = {
      "image_size",    "patch_size",  "channels_radar", "channels_optical",
      "width",         "heads",       "depth",          "decoder_depth",
      "decoder_width", "proj_dim",    "mask_ratio",     "mask_policy",
      "lambda_con",    "lambda_mae",  "pos_encoding",   "mae_target",
      "temperature_mode", "temperature_init", "fusion_self_first"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::invalid_argument("model config: unknown key '" + it.key() + "'");
  }
  ModelConfig cfg;
  cfg.image_size = j.value("image_size", cfg.image_size);
  cfg.patch_size = j.value("patch_size", cfg.patch_size);
  cfg.channels_radar = j.value("channels_radar", cfg.channels_radar);
  cfg.channels_optical = j.value("channels_optical", cfg.channels_optical);
  cfg.width = j.value("width", cfg.width);
  cfg.heads = j.value("heads", cfg.heads);
  cfg.depth = j.value("depth", cfg.depth);
  cfg.decoder_depth = j.value("decoder_depth", cfg.decoder_depth);
  cfg.decoder_width = j.value("decoder_width", cfg.decoder_width);
  cfg.proj_dim = j.value("proj_dim", cfg.proj_dim);
  cfg.mask_ratio = j.value("mask_ratio", cfg.mask_ratio);
  if (j.contains("mask_policy"))
    cfg.mask_policy = mask_policy_from_string(j.at("mask_policy").get<std::string>());
  cfg.lambda_con = j.value("lambda_con", cfg.lambda_con);
  cfg.lambda_mae = j.value("lambda_mae", cfg.lambda_mae);
  if (j.contains("pos_encoding"))
    cfg.pos_encoding = pos_encoding_from_string(j.at("pos_encoding").get<std::string>());
  if (j.contains("mae_target"))
    cfg.mae_target = mae_target_from_string(j.at("mae_target").get<std::string>());
  if (j.contains("temperature_mode")) {
    const auto s = j.at("temperature_mode").get<std::string>();
    if (s == "learnable")
      cfg.temperature_mode = TemperatureMode::kLearnable;
    else if (s == "fixed")
      cfg.temperature_mode = TemperatureMode::kFixed;
    else
      throw std::invalid_argument("model config: unknown temperature mode '" + s + "'");
  }
  cfg.temperature_init = j.value("temperature_init", cfg.temperature_init);
  cfg.fusion_self_first = j.value("fusion_self_first", cfg.fusion_self_first);
  return cfg;
}

void CromaModel::save_checkpoint(const std::string& dir, std::uint64_t run_seed) const {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "croma-checkpoint-v1";
  manifest["config"] = json::parse(model_config_to_json(cfg_));
  manifest["seed"] = run_seed;
  json registry = json::array();
  char name[32];
  for (std::size_t i = 0; i < params_.items().size(); ++i) {
    const auto& [pname, tensor] = params_.items()[i];
    std::snprintf(name, sizeof(name), "p%04zu.crma", i);
    write_crma((fs::path(dir) / name).string(), tensor);
    registry.push_back({{"name", pname}, {"file", name}});
  }
  manifest["params"] = std::move(registry);
  std::ofstream os(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!os) throw std::runtime_error("save_checkpoint: cannot write manifest in " + dir);
  os << manifest.dump(2) << "\n";
}

CromaModel CromaModel::load_checkpoint(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw std::runtime_error("load_checkpoint: no manifest in " + dir);
  json manifest;
  is >> manifest;
  if (manifest.value("format", "") != "croma-checkpoint-v1")
    throw std::runtime_error("load_checkpoint: unrecognized manifest format");
  ModelConfig cfg = model_config_from_json(manifest.at("config").dump());

  // Rebuild with a throwaway init, then overwrite every leaf in place so the
  // block wiring matches the registry exactly.
  CromaModel model(cfg, /*init_seed=*/0);
  const auto& registry = manifest.at("params");
  if (registry.size() != model.params_.size())
    throw std::runtime_error("load_checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < registry.size(); ++i) {
    const std::string pname = registry[i].at("name").get<std::string>();
    const std::string file = registry[i].at("file").get<std::string>();
    const auto& [expect_name, tensor] = model.params_.items()[i];
    if (expect_name != pname)
      throw std::runtime_error("load_checkpoint: registry order mismatch at " + pname);
    CrmaArray arr = read_crma((fs::path(dir) / file).string());
    if (arr.shape != tensor.shape())
      throw std::runtime_error("load_checkpoint: shape mismatch for " + pname);
    const_cast<Tensor&>(tensor).mutable_value() = std::move(arr.data);
  }
  return model;
}

}  // namespace croma
