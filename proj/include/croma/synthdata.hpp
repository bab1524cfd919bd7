#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "croma/model.hpp"
#include "croma/rng.hpp"

namespace croma {

// Paired "radar"/"optical" generator. Both modalities derive from one smoothed
// latent field per sample, so cross-modal mutual information is built in and
// the contrastive task is solvable. Stands in for real sensor archives.
struct WorldConfig {
  std::uint64_t seed = 7;
  std::size_t image_size = 24;    // base size; calibration and blur use this
  std::size_t latent_dims = 4;
  std::size_t class_count = 4;
  std::size_t channels_radar = 2;
  std::size_t channels_optical = 12;
  double optical_noise = 0.1;     // additive gaussian scale
  double radar_speckle = 0.2;     // multiplicative log-normal scale
  std::size_t blur_width = 0;     // 0 resolves to image_size / 4
};

struct LabeledSample {
  PairedSample pair;
  std::size_t class_label = 0;
  std::vector<std::uint8_t> pixel_bands;  // S*S, dominant latent band per pixel
};

class SyntheticWorld {
 public:
  explicit SyntheticWorld(WorldConfig cfg);

  const WorldConfig& config() const { return cfg_; }
  // Deterministic in (world seed, index); the blur width and the label
  // thresholds are frozen at construction, so pixel statistics and the
  // patch-level task are size-stable when an override size is given.
  LabeledSample make_sample(std::size_t index, std::size_t image_size_override = 0) const;

 private:
  std::vector<double> latent_field(Rng& rng, std::size_t size) const;

  WorldConfig cfg_;
  std::vector<double> mix_optical_;  // channels_optical x latent_dims
  std::vector<double> mix_radar_;    // channels_radar x latent_dims
  std::vector<double> stat_thresholds_;   // class_count-1 image-stat cuts
  std::vector<double> pixel_thresholds_;  // class_count-1 pixel cuts
};

struct Dataset {
  WorldConfig world;
  std::size_t image_size = 0;
  std::vector<LabeledSample> samples;
  std::vector<double> radar_mean, radar_std;      // per channel
  std::vector<double> optical_mean, optical_std;  // per channel

  std::size_t size() const { return samples.size(); }
  // Channel-standardized copy of sample i, the form the model consumes.
  PairedSample normalized(std::size_t i) const;
};

Dataset generate(const WorldConfig& world, std::size_t n, std::size_t image_size_override = 0);

void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// Patch-majority band labels for a sample on a given grid (ties -> lower band).
std::vector<int> patch_segment_labels(const LabeledSample& sample, std::size_t image_size,
                                      std::size_t patch);

// One shared draw of geometry applied to both modalities keeps the pair
// spatially aligned.
struct GeomParams {
  std::size_t crop_x = 0, crop_y = 0, crop_size = 0;  // crop_size 0 = no crop
  bool hflip = false, vflip = false;
  int rot_quarter = 0;  // counterclockwise 90-degree steps
};

std::vector<double> apply_geometry(const std::vector<double>& pixels, std::size_t channels,
                                   std::size_t size, const GeomParams& g);

struct AugmentConfig {
  bool enabled = true;
  double crop_min_frac = 0.5;  // crop side drawn from [frac*S, S]
  bool flips = true;
  bool rotations = true;
  double mixup_alpha = 0.3;  // <= 0 disables mixup
};

GeomParams draw_geometry(Rng& rng, std::size_t size, const AugmentConfig& cfg);
void augment_pair(PairedSample& sample, std::size_t channels_radar, std::size_t channels_optical,
                  std::size_t size, Rng& rng, const AugmentConfig& cfg);
// Geometry per sample, then mixup across random batch partners.
void augment_batch(std::vector<PairedSample>& batch, std::size_t channels_radar,
                   std::size_t channels_optical, std::size_t size, Rng& rng,
                   const AugmentConfig& cfg);

}  // namespace croma
