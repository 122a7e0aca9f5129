#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "bnadapt/rng.hpp"
#include "bnadapt/tensor.hpp"

namespace bnadapt {

// --- bit-exact tensor files ("BNT1") ----------------------------------------
//
// magic "BNT1", then little-endian: u32 dtype code (1=f32, 2=f64, 3=u8),
// u32 ndim, ndim x u64 extents, raw row-major payload.

void save_tensor(const std::filesystem::path& path, const Tensor& t);  // writes f64
Tensor load_tensor(const std::filesystem::path& path);                 // reads f32/f64

void save_u8_tensor(const std::filesystem::path& path, const Shape& shape,
                    const std::vector<std::uint8_t>& data);
std::pair<Shape, std::vector<std::uint8_t>> load_u8_tensor(const std::filesystem::path& path);

// --- synthetic cross-domain benchmark ----------------------------------------

// Appearance/label shift applied on top of the base scene. The source domain
// uses identity(); target presets change appearance (gain/gamma/noise/invert)
// and optionally the lesion extent (size_ratio, a label-shift knob: axes scale
// linearly so foreground area scales by size_ratio^2).
struct DomainShift {
  double gain = 1.0;
  double gamma = 1.0;   // > 0
  double noise = 0.0;   // >= 0, additive Gaussian sigma
  bool invert = false;  // contrast inversion
  double size_ratio = 1.0;

  static DomainShift identity() { return DomainShift{}; }
  static DomainShift preset(std::string_view name);
  void validate() const;
};

// Nested-ellipse scene: background (0), whole-region rim (1), core (2),
// enhanced ring (3), with core inside enhanced inside the whole region.
struct SceneParams {
  std::size_t hw = 64;
  int classes = 4;
  double empty_fraction = 0.0;  // chance a sample is background-only

  // per-class base intensities, jittered per sample
  double bg_level = 0.10;
  double rim_level = 0.40;
  double core_level = 0.65;
  double enhanced_level = 0.90;
  double class_jitter = 0.03;
  double illum_gradient = 0.04;
  double base_noise = 0.02;
};

struct Sample {
  std::vector<Real> image;          // hw*hw, in [0,1]
  std::vector<std::uint8_t> label;  // hw*hw, values in {0..3}
};

struct Dataset {
  std::size_t hw = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }

  // Pack selected samples into a (B, hw, hw, 1) batch.
  Tensor batch_images(std::span<const std::size_t> idx) const;
  std::vector<std::uint8_t> batch_labels(std::span<const std::size_t> idx) const;
};

Sample synth_sample(const SceneParams& scene, const DomainShift& shift, Rng& rng);

// Write n samples plus a manifest ("<image>,<label>" per line) under dir.
// Output is fully determined by (n, shift, seed, scene).
void generate_split(const std::filesystem::path& dir, std::size_t n, const DomainShift& shift,
                    std::uint64_t seed, const SceneParams& scene = {});

Dataset load_split(const std::filesystem::path& dir);

// The four standard splits of a benchmark tree: source-train and source-val
// are identity-shift, target-train and target-test use the preset. Split
// seeds derive from the root seed by name, so the source splits do not depend
// on the chosen preset.
struct GenCounts {
  std::size_t source_train = 400;
  std::size_t source_val = 100;
  std::size_t target_train = 400;
  std::size_t target_test = 100;
};

void generate_benchmark(const std::filesystem::path& root, std::string_view preset,
                        std::uint64_t seed, const GenCounts& counts = {},
                        const SceneParams& scene = {});

}  // namespace bnadapt
