#include "croma/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "croma/container.hpp"

namespace croma {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kCalibrationStream = 0x63616c6962ULL;  // disjoint from sample indices
constexpr std::size_t kCalibrationDraws = 512;

std::size_t blur_width_of(const WorldConfig& cfg) {
  return cfg.blur_width ? cfg.blur_width : std::max<std::size_t>(1, cfg.image_size / 4);
}

// Separable box blur with clamp-to-edge averaging over in-bounds taps.
void box_blur(std::vector<double>& field, std::size_t size, std::size_t width) {
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(width) / 2;
  const auto s = static_cast<std::ptrdiff_t>(size);
  std::vector<double> tmp(field.size());
  for (std::ptrdiff_t y = 0; y < s; ++y)
    for (std::ptrdiff_t x = 0; x < s; ++x) {
      double acc = 0.0;
      int count = 0;
      for (std::ptrdiff_t d = -half; d <= half; ++d) {
        const std::ptrdiff_t xx = x + d;
        if (xx < 0 || xx >= s) continue;
        acc += field[y * s + xx];
        ++count;
      }
      tmp[y * s + x] = acc / count;
    }
  for (std::ptrdiff_t y = 0; y < s; ++y)
    for (std::ptrdiff_t x = 0; x < s; ++x) {
      double acc = 0.0;
      int count = 0;
      for (std::ptrdiff_t d = -half; d <= half; ++d) {
        const std::ptrdiff_t yy = y + d;
        if (yy < 0 || yy >= s) continue;
        acc += tmp[yy * s + x];
        ++count;
      }
      field[y * s + x] = acc / count;
    }
}

std::size_t band_of(double v, const std::vector<double>& thresholds) {
  std::size_t b = 0;
  while (b < thresholds.size() && v >= thresholds[b]) ++b;
  return b;
}

}  // namespace

SyntheticWorld::SyntheticWorld(WorldConfig cfg) : cfg_(cfg) {
  if (cfg_.image_size < 2 || cfg_.latent_dims == 0 || cfg_.class_count < 2)
    throw std::invalid_argument("SyntheticWorld: degenerate configuration");
  Rng rng(cfg_.seed);
  // The leading latent dimension loads positively on every channel of both
  // modalities; the shared signal survives any random draw of the rest.
  mix_optical_.resize(cfg_.channels_optical * cfg_.latent_dims);
  for (std::size_t c = 0; c < cfg_.channels_optical; ++c)
    for (std::size_t d = 0; d < cfg_.latent_dims; ++d)
      mix_optical_[c * cfg_.latent_dims + d] =
          d == 0 ? 0.5 + std::fabs(rng.normal(0.0, 1.0)) : rng.normal(0.0, 1.0);
  mix_radar_.resize(cfg_.channels_radar * cfg_.latent_dims);
  for (std::size_t c = 0; c < cfg_.channels_radar; ++c)
    for (std::size_t d = 0; d < cfg_.latent_dims; ++d)
      mix_radar_[c * cfg_.latent_dims + d] =
          d == 0 ? 0.5 + std::fabs(rng.normal(0.0, 1.0)) : rng.normal(0.0, 1.0);

  // Calibrate label thresholds once per world so class frequencies come out
  // near uniform; labels stay pure functions of the latent field.
  std::vector<double> stats;
  std::vector<double> pixels;
  stats.reserve(kCalibrationDraws);
  for (std::size_t i = 0; i < kCalibrationDraws; ++i) {
    Rng r = Rng::derive(cfg_.seed, kCalibrationStream + i);
    const std::vector<double> z0 = latent_field(r, cfg_.image_size);
    double mean = 0.0;
    for (double v : z0) mean += v;
    stats.push_back(mean / static_cast<double>(z0.size()));
    pixels.insert(pixels.end(), z0.begin(), z0.end());
  }
  std::sort(stats.begin(), stats.end());
  std::sort(pixels.begin(), pixels.end());
  for (std::size_t k = 1; k < cfg_.class_count; ++k) {
    stat_thresholds_.push_back(stats[stats.size() * k / cfg_.class_count]);
    pixel_thresholds_.push_back(pixels[pixels.size() * k / cfg_.class_count]);
  }
}

std::vector<double> SyntheticWorld::latent_field(Rng& rng, std::size_t size) const {
  std::vector<double> field(size * size);
  for (double& v : field) v = rng.normal(0.0, 1.0);
  box_blur(field, size, blur_width_of(cfg_));
  return field;
}

LabeledSample SyntheticWorld::make_sample(std::size_t index,
                                          std::size_t image_size_override) const {
  const std::size_t size = image_size_override ? image_size_override : cfg_.image_size;
  Rng rng = Rng::derive(cfg_.seed, index);
  const std::size_t plane = size * size;

  std::vector<std::vector<double>> z(cfg_.latent_dims);
  for (auto& field : z) field = latent_field(rng, size);

  LabeledSample out;
  out.pair.optical.assign(cfg_.channels_optical * plane, 0.0);
  for (std::size_t c = 0; c < cfg_.channels_optical; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      double v = 0.0;
      for (std::size_t d = 0; d < cfg_.latent_dims; ++d)
        v += mix_optical_[c * cfg_.latent_dims + d] * z[d][p];
      out.pair.optical[c * plane + p] = v + cfg_.optical_noise * rng.normal();
    }

  // Radar mixes a squashed view of the same latents and is corrupted with
  // multiplicative log-normal noise, echoing speckle.
  out.pair.radar.assign(cfg_.channels_radar * plane, 0.0);
  const double s2 = cfg_.radar_speckle * cfg_.radar_speckle;
  for (std::size_t c = 0; c < cfg_.channels_radar; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      double v = 0.0;
      for (std::size_t d = 0; d < cfg_.latent_dims; ++d)
        v += mix_radar_[c * cfg_.latent_dims + d] * std::tanh(z[d][p]);
      const double speckle = std::exp(cfg_.radar_speckle * rng.normal() - 0.5 * s2);
      out.pair.radar[c * plane + p] = v * speckle;
    }

  double stat = 0.0;
  for (double v : z[0]) stat += v;
  stat /= static_cast<double>(plane);
  out.class_label = band_of(stat, stat_thresholds_);

  out.pixel_bands.resize(plane);
  for (std::size_t p = 0; p < plane; ++p)
    out.pixel_bands[p] = static_cast<std::uint8_t>(band_of(z[0][p], pixel_thresholds_));
  return out;
}

Dataset generate(const WorldConfig& world, std::size_t n, std::size_t image_size_override) {
  if (n == 0) throw std::invalid_argument("generate: need n >= 1");
  SyntheticWorld w(world);
  Dataset ds;
  ds.world = world;
  ds.image_size = image_size_override ? image_size_override : world.image_size;
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ds.samples.push_back(w.make_sample(i, image_size_override));

  const std::size_t plane = ds.image_size * ds.image_size;
  const auto channel_stats = [&](std::size_t channels, auto pick, std::vector<double>& mean,
                                 std::vector<double>& std) {
    mean.assign(channels, 0.0);
    std.assign(channels, 0.0);
    const double count = static_cast<double>(n * plane);
    for (std::size_t c = 0; c < channels; ++c) {
      double m = 0.0;
      for (const auto& s : ds.samples)
        for (std::size_t p = 0; p < plane; ++p) m += pick(s)[c * plane + p];
      m /= count;
      double var = 0.0;
      for (const auto& s : ds.samples)
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = pick(s)[c * plane + p] - m;
          var += d * d;
        }
      mean[c] = m;
      std[c] = std::sqrt(var / count) + 1e-12;
    }
  };
  channel_stats(
      world.channels_radar, [](const LabeledSample& s) -> const std::vector<double>& {
        return s.pair.radar;
      },
      ds.radar_mean, ds.radar_std);
  channel_stats(
      world.channels_optical, [](const LabeledSample& s) -> const std::vector<double>& {
        return s.pair.optical;
      },
      ds.optical_mean, ds.optical_std);
  return ds;
}

PairedSample Dataset::normalized(std::size_t i) const {
  const LabeledSample& s = samples.at(i);
  const std::size_t plane = image_size * image_size;
  PairedSample out = s.pair;
  for (std::size_t c = 0; c < radar_mean.size(); ++c)
    for (std::size_t p = 0; p < plane; ++p)
      out.radar[c * plane + p] = (out.radar[c * plane + p] - radar_mean[c]) / radar_std[c];
  for (std::size_t c = 0; c < optical_mean.size(); ++c)
    for (std::size_t p = 0; p < plane; ++p)
      out.optical[c * plane + p] = (out.optical[c * plane + p] - optical_mean[c]) / optical_std[c];
  return out;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  const std::size_t n = ds.size();
  const std::size_t plane = ds.image_size * ds.image_size;
  const std::size_t cr = ds.world.channels_radar;
  const std::size_t co = ds.world.channels_optical;
  std::vector<double> radar(n * cr * plane), optical(n * co * plane), bands(n * plane);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = ds.samples[i];
    std::copy(s.pair.radar.begin(), s.pair.radar.end(), radar.begin() + i * cr * plane);
    std::copy(s.pair.optical.begin(), s.pair.optical.end(), optical.begin() + i * co * plane);
    for (std::size_t p = 0; p < plane; ++p) bands[i * plane + p] = s.pixel_bands[p];
    labels[i] = s.class_label;
  }
  write_crma(dir + "/radar.crma", {n, cr, ds.image_size, ds.image_size}, radar);
  write_crma(dir + "/optical.crma", {n, co, ds.image_size, ds.image_size}, optical);
  write_crma(dir + "/bands.crma", {n, ds.image_size, ds.image_size}, bands);

  json meta;
  meta["format"] = "croma-dataset-v1";
  meta["n"] = n;
  meta["image_size"] = ds.image_size;
  meta["world"] = {{"seed", ds.world.seed},
                   {"image_size", ds.world.image_size},
                   {"latent_dims", ds.world.latent_dims},
                   {"class_count", ds.world.class_count},
                   {"channels_radar", ds.world.channels_radar},
                   {"channels_optical", ds.world.channels_optical},
                   {"optical_noise", ds.world.optical_noise},
                   {"radar_speckle", ds.world.radar_speckle},
                   {"blur_width", ds.world.blur_width}};
  meta["class_labels"] = labels;
  meta["radar_mean"] = ds.radar_mean;
  meta["radar_std"] = ds.radar_std;
  meta["optical_mean"] = ds.optical_mean;
  meta["optical_std"] = ds.optical_std;
  std::ofstream os(dir + "/meta.json", std::ios::trunc);
  if (!os) throw std::runtime_error("save_dataset: cannot write meta.json in " + dir);
  os << meta.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream is(dir + "/meta.json");
  if (!is) throw std::runtime_error("load_dataset: no meta.json in " + dir);
  json meta;
  is >> meta;
  if (meta.value("format", "") != "croma-dataset-v1")
    throw std::runtime_error("load_dataset: unrecognized dataset format");
  Dataset ds;
  const json& w = meta.at("world");
  ds.world.seed = w.at("seed").get<std::uint64_t>();
  ds.world.image_size = w.at("image_size").get<std::size_t>();
  ds.world.latent_dims = w.at("latent_dims").get<std::size_t>();
  ds.world.class_count = w.at("class_count").get<std::size_t>();
  ds.world.channels_radar = w.at("channels_radar").get<std::size_t>();
  ds.world.channels_optical = w.at("channels_optical").get<std::size_t>();
  ds.world.optical_noise = w.at("optical_noise").get<double>();
  ds.world.radar_speckle = w.at("radar_speckle").get<double>();
  ds.world.blur_width = w.at("blur_width").get<std::size_t>();
  ds.image_size = meta.at("image_size").get<std::size_t>();
  ds.radar_mean = meta.at("radar_mean").get<std::vector<double>>();
  ds.radar_std = meta.at("radar_std").get<std::vector<double>>();
  ds.optical_mean = meta.at("optical_mean").get<std::vector<double>>();
  ds.optical_std = meta.at("optical_std").get<std::vector<double>>();
  const auto labels = meta.at("class_labels").get<std::vector<std::size_t>>();

  const CrmaArray radar = read_crma(dir + "/radar.crma");
  const CrmaArray optical = read_crma(dir + "/optical.crma");
  const CrmaArray bands = read_crma(dir + "/bands.crma");
  const std::size_t n = meta.at("n").get<std::size_t>();
  const std::size_t plane = ds.image_size * ds.image_size;
  const std::size_t cr = ds.world.channels_radar;
  const std::size_t co = ds.world.channels_optical;
  if (radar.shape != Shape{n, cr, ds.image_size, ds.image_size} ||
      optical.shape != Shape{n, co, ds.image_size, ds.image_size} ||
      bands.shape != Shape{n, ds.image_size, ds.image_size} || labels.size() != n)
    throw std::runtime_error("load_dataset: container shapes disagree with meta.json");
  ds.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = ds.samples[i];
    s.pair.radar.assign(radar.data.begin() + i * cr * plane,
                        radar.data.begin() + (i + 1) * cr * plane);
    s.pair.optical.assign(optical.data.begin() + i * co * plane,
                          optical.data.begin() + (i + 1) * co * plane);
    s.pixel_bands.resize(plane);
    for (std::size_t p = 0; p < plane; ++p)
      s.pixel_bands[p] = static_cast<std::uint8_t>(bands.data[i * plane + p]);
    s.class_label = labels[i];
  }
  return ds;
}

std::vector<int> patch_segment_labels(const LabeledSample& sample, std::size_t image_size,
                                      std::size_t patch) {
  if (patch == 0 || image_size % patch != 0)
    throw std::invalid_argument("patch_segment_labels: bad patch size");
  const std::size_t side = image_size / patch;
  std::vector<int> labels(side * side);
  std::vector<std::size_t> counts;
  for (std::size_t pr = 0; pr < side; ++pr)
    for (std::size_t pc = 0; pc < side; ++pc) {
      counts.assign(256, 0);
      std::size_t max_band = 0;
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx) {
          const std::size_t band = sample.pixel_bands[(pr * patch + dy) * image_size +
                                                      pc * patch + dx];
          ++counts[band];
          max_band = std::max(max_band, band);
        }
      std::size_t best = 0;
      for (std::size_t b = 1; b <= max_band; ++b)
        if (counts[b] > counts[best]) best = b;
      labels[pr * side + pc] = static_cast<int>(best);
    }
  return labels;
}

// ---------------------------------------------------------------------------
// paired augmentation
// ---------------------------------------------------------------------------

std::vector<double> apply_geometry(const std::vector<double>& pixels, std::size_t channels,
                                   std::size_t size, const GeomParams& g) {
  const std::size_t plane = size * size;
  if (pixels.size() != channels * plane)
    throw std::invalid_argument("apply_geometry: buffer does not match dimensions");
  if (g.crop_size > size || g.crop_x + g.crop_size > size || g.crop_y + g.crop_size > size)
    throw std::invalid_argument("apply_geometry: crop larger than image");
  std::vector<double> out(pixels.size());

  for (std::size_t c = 0; c < channels; ++c) {
    const double* in = pixels.data() + c * plane;
    double* dst = out.data() + c * plane;
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        std::size_t sy = y, sx = x;
        // Inverse-map through rotation, flips, then crop-resize.
        for (int r = 0; r < ((g.rot_quarter % 4) + 4) % 4; ++r) {
          const std::size_t ny = sx;
          const std::size_t nx = size - 1 - sy;
          sy = ny;
          sx = nx;
        }
        if (g.hflip) sx = size - 1 - sx;
        if (g.vflip) sy = size - 1 - sy;
        if (g.crop_size > 0 && g.crop_size != size) {
          sy = g.crop_y + sy * g.crop_size / size;
          sx = g.crop_x + sx * g.crop_size / size;
        } else if (g.crop_size == size) {
          sy = g.crop_y + sy;
          sx = g.crop_x + sx;
        }
        dst[y * size + x] = in[sy * size + sx];
      }
  }
  return out;
}

GeomParams draw_geometry(Rng& rng, std::size_t size, const AugmentConfig& cfg) {
  GeomParams g;
  const auto min_side = static_cast<std::size_t>(
      std::ceil(cfg.crop_min_frac * static_cast<double>(size)));
  const std::size_t lo = std::max<std::size_t>(1, std::min(min_side, size));
  g.crop_size = lo + rng.next_below(size - lo + 1);
  g.crop_x = rng.next_below(size - g.crop_size + 1);
  g.crop_y = rng.next_below(size - g.crop_size + 1);
  if (cfg.flips) {
    g.hflip = rng.uniform01() < 0.5;
    g.vflip = rng.uniform01() < 0.5;
  }
  if (cfg.rotations) g.rot_quarter = static_cast<int>(rng.next_below(4));
  return g;
}

void augment_pair(PairedSample& sample, std::size_t channels_radar, std::size_t channels_optical,
                  std::size_t size, Rng& rng, const AugmentConfig& cfg) {
  if (!cfg.enabled) return;
  const GeomParams g = draw_geometry(rng, size, cfg);
  sample.radar = apply_geometry(sample.radar, channels_radar, size, g);
  sample.optical = apply_geometry(sample.optical, channels_optical, size, g);
}

void augment_batch(std::vector<PairedSample>& batch, std::size_t channels_radar,
                   std::size_t channels_optical, std::size_t size, Rng& rng,
                   const AugmentConfig& cfg) {
  if (!cfg.enabled) return;
  for (PairedSample& s : batch)
    augment_pair(s, channels_radar, channels_optical, size, rng, cfg);
  if (cfg.mixup_alpha > 0.0 && batch.size() > 1) {
    const std::vector<PairedSample> frozen = batch;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const std::size_t j = rng.next_below(frozen.size());
      const double lam = rng.beta(cfg.mixup_alpha, cfg.mixup_alpha);
      auto blend = [lam](std::vector<double>& a, const std::vector<double>& b) {
        for (std::size_t k = 0; k < a.size(); ++k) a[k] = lam * a[k] + (1.0 - lam) * b[k];
      };
      blend(batch[i].radar, frozen[j].radar);
      blend(batch[i].optical, frozen[j].optical);
    }
  }
}

}  // namespace croma
