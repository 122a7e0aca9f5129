#include "bnadapt/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>

#include "bnadapt/common.hpp"

namespace bnadapt {

namespace fs = std::filesystem;

// --- BNT1 I/O ----------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'B', 'N', 'T', '1'};
constexpr std::uint32_t kDtypeF32 = 1;
constexpr std::uint32_t kDtypeF64 = 2;
constexpr std::uint32_t kDtypeU8 = 3;

void write_bytes(std::ofstream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class T>
void write_pod(std::ofstream& os, T v) {
  write_bytes(os, &v, sizeof(T));
}

void read_bytes(std::ifstream& is, const fs::path& path, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    fail("tensor file ", path.string(), ": truncated");
  }
}

template <class T>
T read_pod(std::ifstream& is, const fs::path& path) {
  T v;
  read_bytes(is, path, &v, sizeof(T));
  return v;
}

struct TensorHeader {
  std::uint32_t dtype;
  Shape shape;
};

void write_header(std::ofstream& os, std::uint32_t dtype, const Shape& shape) {
  write_bytes(os, kMagic, 4);
  write_pod<std::uint32_t>(os, dtype);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
  for (auto e : shape) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(e));
}

TensorHeader read_header(std::ifstream& is, const fs::path& path) {
  char magic[4];
  read_bytes(is, path, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) fail("tensor file ", path.string(), ": bad magic");
  TensorHeader h;
  h.dtype = read_pod<std::uint32_t>(is, path);
  if (h.dtype != kDtypeF32 && h.dtype != kDtypeF64 && h.dtype != kDtypeU8) {
    fail("tensor file ", path.string(), ": unknown dtype code ", h.dtype);
  }
  const auto ndim = read_pod<std::uint32_t>(is, path);
  h.shape.resize(ndim);
  for (auto& e : h.shape) e = static_cast<std::size_t>(read_pod<std::uint64_t>(is, path));
  return h;
}

void check_eof(std::ifstream& is, const fs::path& path) {
  is.peek();
  if (!is.eof()) fail("tensor file ", path.string(), ": trailing bytes after payload");
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("cannot open ", path.string(), " for writing");
  return os;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open ", path.string(), " for reading");
  return is;
}

}  // namespace

void save_tensor(const fs::path& path, const Tensor& t) {
  auto os = open_out(path);
  write_header(os, kDtypeF64, t.shape());
  write_bytes(os, t.values().data(), t.size() * sizeof(Real));
  if (!os) fail("write failed for ", path.string());
}

Tensor load_tensor(const fs::path& path) {
  auto is = open_in(path);
  const auto h = read_header(is, path);
  const std::size_t n = numel(h.shape);
  std::vector<Real> data(n);
  if (h.dtype == kDtypeF64) {
    read_bytes(is, path, data.data(), n * sizeof(double));
  } else if (h.dtype == kDtypeF32) {
    std::vector<float> tmp(n);
    read_bytes(is, path, tmp.data(), n * sizeof(float));
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<double>(tmp[i]);
  } else {
    fail("tensor file ", path.string(), ": dtype u8 is not a real tensor, use load_u8_tensor");
  }
  check_eof(is, path);
  return Tensor::from_data(h.shape, std::move(data));
}

void save_u8_tensor(const fs::path& path, const Shape& shape,
                    const std::vector<std::uint8_t>& data) {
  if (numel(shape) != data.size()) {
    fail("save_u8_tensor: shape ", shape_str(shape), " wants ", numel(shape),
         " elements, got ", data.size());
  }
  auto os = open_out(path);
  write_header(os, kDtypeU8, shape);
  write_bytes(os, data.data(), data.size());
  if (!os) fail("write failed for ", path.string());
}

std::pair<Shape, std::vector<std::uint8_t>> load_u8_tensor(const fs::path& path) {
  auto is = open_in(path);
  const auto h = read_header(is, path);
  if (h.dtype != kDtypeU8) fail("tensor file ", path.string(), ": expected u8 payload");
  std::vector<std::uint8_t> data(numel(h.shape));
  read_bytes(is, path, data.data(), data.size());
  check_eof(is, path);
  return {h.shape, std::move(data)};
}

// --- scene synthesis -----------------------------------------------------------

void DomainShift::validate() const {
  if (!(gamma > 0.0)) fail("DomainShift: gamma exponent must be positive, got ", gamma);
  if (noise < 0.0) fail("DomainShift: noise sigma must be >= 0, got ", noise);
  if (!(size_ratio > 0.0)) fail("DomainShift: size ratio must be positive, got ", size_ratio);
}

DomainShift DomainShift::preset(std::string_view name) {
  if (name == "shift-appearance") {
    // cross-modality analogue: appearance only
    return DomainShift{0.6, 1.8, 0.05, false, 1.0};
  }
  if (name == "shift-subtype") {
    // subtype analogue: mild appearance change plus smaller lesions
    return DomainShift{0.9, 1.2, 0.03, false, 0.7};
  }
  if (name == "identity") return identity();
  fail("unknown domain-shift preset: ", name);
}

namespace {

struct Ellipse {
  double cx, cy;      // center
  double ax, ay;      // semi-axes (ax major)
  double cos_t, sin_t;
  double r_enh, r_core;  // nesting ratios, r_core < r_enh < 1
  bool empty;
};

Ellipse sample_geometry(const SceneParams& scene, Rng& rng) {
  Ellipse e{};
  e.empty = rng.uniform() < scene.empty_fraction;
  const double hw = static_cast<double>(scene.hw);
  e.ax = rng.uniform(0.15 * hw, 0.24 * hw);
  e.ay = rng.uniform(0.6 * e.ax, e.ax);
  // margin uses the unscaled major axis so a size_ratio < 1 stays contained
  const double margin = e.ax + 1.5;
  e.cx = rng.uniform(margin, hw - 1.0 - margin);
  e.cy = rng.uniform(margin, hw - 1.0 - margin);
  const double theta = rng.uniform(0.0, 3.14159265358979323846);
  e.cos_t = std::cos(theta);
  e.sin_t = std::sin(theta);
  e.r_enh = rng.uniform(0.58, 0.72);
  e.r_core = rng.uniform(0.28, 0.42);
  return e;
}

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

Sample synth_sample(const SceneParams& scene, const DomainShift& shift, Rng& rng) {
  shift.validate();
  if (scene.classes != 4) fail("synth_sample: scene uses exactly 4 classes, got ", scene.classes);
  const std::size_t hw = scene.hw;

  // Independent sub-streams per concern: geometry draws are identical across
  // shift settings even though the noise draw counts differ.
  const std::uint64_t sample_seed = rng.next_u64();
  Rng geom(sample_seed ^ fnv1a64("geom"));
  Rng appear(sample_seed ^ fnv1a64("appear"));
  Rng shift_rng(sample_seed ^ fnv1a64("shift"));

  Ellipse e = sample_geometry(scene, geom);
  const double ax = e.ax * shift.size_ratio;
  const double ay = e.ay * shift.size_ratio;

  Sample s;
  s.label.assign(hw * hw, 0);
  s.image.assign(hw * hw, 0.0);

  if (!e.empty) {
    const double r_enh2 = e.r_enh * e.r_enh;
    const double r_core2 = e.r_core * e.r_core;
    for (std::size_t y = 0; y < hw; ++y) {
      for (std::size_t x = 0; x < hw; ++x) {
        const double dx = static_cast<double>(x) - e.cx;
        const double dy = static_cast<double>(y) - e.cy;
        const double xr = dx * e.cos_t + dy * e.sin_t;
        const double yr = -dx * e.sin_t + dy * e.cos_t;
        const double q = (xr / ax) * (xr / ax) + (yr / ay) * (yr / ay);
        std::uint8_t lab = 0;
        if (q <= r_core2) lab = 2;        // core
        else if (q <= r_enh2) lab = 3;    // enhanced ring
        else if (q <= 1.0) lab = 1;       // whole-region rim
        s.label[y * hw + x] = lab;
      }
    }
  }

  // appearance: per-class level with per-sample jitter, smooth illumination
  // gradient, light texture noise
  double level[4] = {scene.bg_level, scene.rim_level, scene.core_level, scene.enhanced_level};
  for (auto& l : level) l += appear.uniform(-scene.class_jitter, scene.class_jitter);
  const double gx = appear.uniform(-scene.illum_gradient, scene.illum_gradient);
  const double gy = appear.uniform(-scene.illum_gradient, scene.illum_gradient);

  const double inv_hw = 1.0 / static_cast<double>(hw);
  for (std::size_t y = 0; y < hw; ++y) {
    for (std::size_t x = 0; x < hw; ++x) {
      double v = level[s.label[y * hw + x]];
      v += gx * (static_cast<double>(x) * inv_hw - 0.5);
      v += gy * (static_cast<double>(y) * inv_hw - 0.5);
      v += scene.base_noise * appear.normal();
      v = clamp01(v);

      // domain shift: gamma curve, gain, optional inversion, extra noise
      v = shift.gain * std::pow(v, shift.gamma);
      if (shift.invert) v = 1.0 - v;
      if (shift.noise > 0.0) v += shift.noise * shift_rng.normal();
      s.image[y * hw + x] = clamp01(v);
    }
  }
  return s;
}

// --- dataset on disk -------------------------------------------------------------

void generate_split(const fs::path& dir, std::size_t n, const DomainShift& shift,
                    std::uint64_t seed, const SceneParams& scene) {
  if (n < 1) fail("generate_split: sample count must be >= 1");
  shift.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail("cannot create directory ", dir.string(), ": ", ec.message());

  Rng rng(seed);
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) fail("cannot open ", (dir / "manifest.txt").string(), " for writing");

  char img_name[32], lab_name[32];
  for (std::size_t i = 0; i < n; ++i) {
    Sample s = synth_sample(scene, shift, rng);
    std::snprintf(img_name, sizeof(img_name), "img_%04zu.bnt", i);
    std::snprintf(lab_name, sizeof(lab_name), "lab_%04zu.bnt", i);
    save_tensor(dir / img_name, Tensor::from_data({scene.hw, scene.hw, 1}, std::move(s.image)));
    save_u8_tensor(dir / lab_name, {scene.hw, scene.hw}, s.label);
    manifest << img_name << "," << lab_name << "\n";
  }
  if (!manifest) fail("write failed for ", (dir / "manifest.txt").string());
}

Dataset load_split(const fs::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) fail("cannot open ", (dir / "manifest.txt").string());
  Dataset ds;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail("manifest ", (dir / "manifest.txt").string(),
                                         ": malformed line '", line, "'");
    Tensor img = load_tensor(dir / line.substr(0, comma));
    auto [lshape, label] = load_u8_tensor(dir / line.substr(comma + 1));
    if (img.rank() != 3 || img.shape()[2] != 1 || img.shape()[0] != img.shape()[1]) {
      fail("dataset image has unexpected shape ", shape_str(img.shape()));
    }
    if (lshape.size() != 2 || lshape[0] != img.shape()[0] || lshape[1] != img.shape()[1]) {
      fail("dataset label has unexpected shape ", shape_str(lshape));
    }
    if (ds.hw == 0) ds.hw = img.shape()[0];
    if (img.shape()[0] != ds.hw) fail("dataset mixes image sizes");
    ds.samples.push_back(Sample{std::move(img.values()), std::move(label)});
  }
  if (ds.samples.empty()) fail("dataset at ", dir.string(), " is empty");
  return ds;
}

Tensor Dataset::batch_images(std::span<const std::size_t> idx) const {
  if (idx.empty()) fail("batch_images: empty index set");
  const std::size_t px = hw * hw;
  std::vector<Real> data(idx.size() * px);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    if (idx[b] >= samples.size()) fail("batch_images: index ", idx[b], " out of range");
    std::copy(samples[idx[b]].image.begin(), samples[idx[b]].image.end(),
              data.begin() + static_cast<std::ptrdiff_t>(b * px));
  }
  return Tensor::from_data({idx.size(), hw, hw, 1}, std::move(data));
}

std::vector<std::uint8_t> Dataset::batch_labels(std::span<const std::size_t> idx) const {
  if (idx.empty()) fail("batch_labels: empty index set");
  const std::size_t px = hw * hw;
  std::vector<std::uint8_t> out(idx.size() * px);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    if (idx[b] >= samples.size()) fail("batch_labels: index ", idx[b], " out of range");
    std::copy(samples[idx[b]].label.begin(), samples[idx[b]].label.end(),
              out.begin() + static_cast<std::ptrdiff_t>(b * px));
  }
  return out;
}

void generate_benchmark(const fs::path& root, std::string_view preset, std::uint64_t seed,
                        const GenCounts& counts, const SceneParams& scene) {
  const DomainShift target_shift = DomainShift::preset(preset);
  const DomainShift identity = DomainShift::identity();
  generate_split(root / "source-train", counts.source_train, identity,
                 seed ^ fnv1a64("data/source-train"), scene);
  generate_split(root / "source-val", counts.source_val, identity,
                 seed ^ fnv1a64("data/source-val"), scene);
  generate_split(root / "target-train", counts.target_train, target_shift,
                 seed ^ fnv1a64("data/target-train"), scene);
  generate_split(root / "target-test", counts.target_test, target_shift,
                 seed ^ fnv1a64("data/target-test"), scene);
}

}  // namespace bnadapt
