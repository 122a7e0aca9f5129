#include "bnadapt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "bnadapt/common.hpp"

namespace bnadapt {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'B', 'N', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF64 = 2;
constexpr std::uint32_t kDtypeU8 = 3;

struct Entry {
  std::string name;
  std::uint32_t dtype;
  Shape shape;
  std::vector<double> f64;
  std::vector<std::uint8_t> u8;

  std::size_t byte_length() const {
    return dtype == kDtypeF64 ? f64.size() * sizeof(double) : u8.size();
  }
};

Entry f64_entry(std::string name, Shape shape, std::vector<double> data) {
  return Entry{std::move(name), kDtypeF64, std::move(shape), std::move(data), {}};
}

Entry u8_entry(std::string name, Shape shape, std::vector<std::uint8_t> data) {
  return Entry{std::move(name), kDtypeU8, std::move(shape), {}, std::move(data)};
}

const char* kConvNames[6] = {"enc1", "enc2", "enc3", "dec1", "dec2", "head"};
const char* kBnNames[5] = {"bn1", "bn2", "bn3", "bn4", "bn5"};

std::vector<Entry> collect_entries(ToyUNet& model) {
  std::vector<Entry> entries;
  const auto convs = model.conv_layers();
  for (std::size_t i = 0; i < convs.size(); ++i) {
    entries.push_back(f64_entry(std::string(kConvNames[i]) + ".w", convs[i]->weight.shape(),
                                convs[i]->weight.values()));
    entries.push_back(f64_entry(std::string(kConvNames[i]) + ".b", convs[i]->bias.shape(),
                                convs[i]->bias.values()));
  }
  const auto bns = model.bn_layers();
  for (std::size_t i = 0; i < bns.size(); ++i) {
    BNChannelStats& s = bns[i]->stats();
    const std::string p = kBnNames[i];
    const Shape cs{s.channels()};
    entries.push_back(f64_entry(p + ".running_mean", cs, s.running_mean));
    entries.push_back(f64_entry(p + ".running_var", cs, s.running_var));
    entries.push_back(f64_entry(p + ".gamma", cs, s.gamma.values()));
    entries.push_back(f64_entry(p + ".beta", cs, s.beta.values()));
    entries.push_back(f64_entry(p + ".source_mean", cs, s.source_mean));
    entries.push_back(f64_entry(p + ".source_var", cs, s.source_var));
    entries.push_back(f64_entry(p + ".source_gamma", cs, s.source_gamma));
    entries.push_back(f64_entry(p + ".source_beta", cs, s.source_beta));
    entries.push_back(f64_entry(p + ".epsilon", Shape{1}, {s.epsilon}));
    entries.push_back(u8_entry(p + ".frozen", Shape{1}, {s.frozen ? std::uint8_t{1} : std::uint8_t{0}}));
  }
  return entries;
}

void write_string(std::ofstream& os, const std::string& s) {
  const auto len = static_cast<std::uint32_t>(s.size());
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void read_bytes(std::ifstream& is, const fs::path& path, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) fail("checkpoint ", path.string(), ": truncated");
}

template <class T>
T read_pod(std::ifstream& is, const fs::path& path) {
  T v;
  read_bytes(is, path, &v, sizeof(T));
  return v;
}

std::string read_string(std::ifstream& is, const fs::path& path) {
  const auto len = read_pod<std::uint32_t>(is, path);
  if (len > 4096) fail("checkpoint ", path.string(), ": implausible string length ", len);
  std::string s(len, '\0');
  read_bytes(is, path, s.data(), len);
  return s;
}

}  // namespace

void save_checkpoint(const fs::path& path, ToyUNet& model, const CheckpointMeta& meta) {
  if (meta.phase != "pretrained" && meta.phase != "adapted") {
    fail("save_checkpoint: phase must be 'pretrained' or 'adapted', got '", meta.phase, "'");
  }
  for (BatchNorm* b : model.bn_layers()) {
    if (!b->stats().frozen) {
      fail("save_checkpoint: a '", meta.phase, "' checkpoint requires frozen source snapshots");
    }
  }
  if (model.spec().hw != 64) fail("save_checkpoint: only the 64x64 toy-unet-v1 is serializable");

  auto entries = collect_entries(model);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("cannot open ", path.string(), " for writing");
  os.write(kMagic, 4);
  write_pod<std::uint32_t>(os, kVersion);
  write_string(os, kToyUnetSpecId);
  write_string(os, meta.phase);
  write_pod<std::uint64_t>(os, meta.seed);
  write_pod<std::uint64_t>(os, meta.iters_pretrain);
  write_pod<std::uint64_t>(os, meta.iters_adapt);

  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    write_string(os, e.name);
    write_pod<std::uint32_t>(os, e.dtype);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
    for (auto ext : e.shape) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(ext));
    write_pod<std::uint64_t>(os, offset);
    write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(e.byte_length()));
    offset += e.byte_length();
  }
  for (const auto& e : entries) {
    if (e.dtype == kDtypeF64) {
      os.write(reinterpret_cast<const char*>(e.f64.data()),
               static_cast<std::streamsize>(e.f64.size() * sizeof(double)));
    } else {
      os.write(reinterpret_cast<const char*>(e.u8.data()),
               static_cast<std::streamsize>(e.u8.size()));
    }
  }
  if (!os) fail("write failed for ", path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open checkpoint ", path.string());

  char magic[4];
  read_bytes(is, path, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) fail("checkpoint ", path.string(), ": bad magic");
  const auto version = read_pod<std::uint32_t>(is, path);
  if (version != kVersion) fail("checkpoint ", path.string(), ": unsupported version ", version);
  const std::string spec_id = read_string(is, path);
  if (spec_id != kToyUnetSpecId) {
    fail("checkpoint ", path.string(), ": unknown network spec '", spec_id, "'");
  }

  Checkpoint cp;
  cp.meta.phase = read_string(is, path);
  if (cp.meta.phase != "pretrained" && cp.meta.phase != "adapted") {
    fail("checkpoint ", path.string(), ": unknown phase '", cp.meta.phase, "'");
  }
  cp.meta.seed = read_pod<std::uint64_t>(is, path);
  cp.meta.iters_pretrain = read_pod<std::uint64_t>(is, path);
  cp.meta.iters_adapt = read_pod<std::uint64_t>(is, path);

  struct DirEntry {
    std::uint32_t dtype;
    Shape shape;
    std::uint64_t offset;
    std::uint64_t length;
  };
  const auto count = read_pod<std::uint32_t>(is, path);
  std::vector<std::string> order;
  std::map<std::string, DirEntry> dir;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = read_string(is, path);
    DirEntry e;
    e.dtype = read_pod<std::uint32_t>(is, path);
    const auto ndim = read_pod<std::uint32_t>(is, path);
    e.shape.resize(ndim);
    for (auto& ext : e.shape) ext = static_cast<std::size_t>(read_pod<std::uint64_t>(is, path));
    e.offset = read_pod<std::uint64_t>(is, path);
    e.length = read_pod<std::uint64_t>(is, path);
    order.push_back(name);
    if (!dir.emplace(std::move(name), std::move(e)).second) {
      fail("checkpoint ", path.string(), ": duplicate entry '", order.back(), "'");
    }
  }

  const std::streampos payload_base = is.tellg();
  auto read_f64 = [&](const std::string& name) {
    auto it = dir.find(name);
    if (it == dir.end()) fail("checkpoint ", path.string(), ": missing entry '", name, "'");
    if (it->second.dtype != kDtypeF64) fail("checkpoint entry ", name, ": expected f64");
    std::vector<double> data(numel(it->second.shape));
    if (it->second.length != data.size() * sizeof(double)) {
      fail("checkpoint entry ", name, ": length mismatch");
    }
    is.seekg(payload_base + static_cast<std::streamoff>(it->second.offset));
    read_bytes(is, path, data.data(), it->second.length);
    return std::make_pair(it->second.shape, std::move(data));
  };
  auto read_u8 = [&](const std::string& name) {
    auto it = dir.find(name);
    if (it == dir.end()) fail("checkpoint ", path.string(), ": missing entry '", name, "'");
    if (it->second.dtype != kDtypeU8) fail("checkpoint entry ", name, ": expected u8");
    std::vector<std::uint8_t> data(numel(it->second.shape));
    if (it->second.length != data.size()) fail("checkpoint entry ", name, ": length mismatch");
    is.seekg(payload_base + static_cast<std::streamoff>(it->second.offset));
    read_bytes(is, path, data.data(), it->second.length);
    return data;
  };

  // reconstruct the network: dims come from the stored tensor shapes
  auto [enc1_shape, enc1_w] = read_f64("enc1.w");
  auto [head_shape, head_w] = read_f64("head.w");
  if (enc1_shape.size() != 4 || head_shape.size() != 4) {
    fail("checkpoint ", path.string(), ": malformed conv shapes");
  }
  NetworkSpec spec;
  spec.hw = 64;
  spec.c_in = enc1_shape[2];
  spec.classes = head_shape[3];
  cp.model = std::make_unique<ToyUNet>(spec, cp.meta.seed);

  const auto convs = cp.model->conv_layers();
  for (std::size_t i = 0; i < convs.size(); ++i) {
    auto [ws, wv] = read_f64(std::string(kConvNames[i]) + ".w");
    auto [bs, bv] = read_f64(std::string(kConvNames[i]) + ".b");
    if (ws != convs[i]->weight.shape() || bs != convs[i]->bias.shape()) {
      fail("checkpoint ", path.string(), ": shape mismatch for ", kConvNames[i]);
    }
    convs[i]->weight.values() = std::move(wv);
    convs[i]->bias.values() = std::move(bv);
  }
  const auto bns = cp.model->bn_layers();
  for (std::size_t i = 0; i < bns.size(); ++i) {
    BNChannelStats& s = bns[i]->stats();
    const std::string p = kBnNames[i];
    const Shape cs{s.channels()};
    auto expect = [&](const std::string& name, std::pair<Shape, std::vector<double>> got) {
      if (got.first != cs) fail("checkpoint ", path.string(), ": shape mismatch for ", name);
      return std::move(got.second);
    };
    s.running_mean = expect(p + ".running_mean", read_f64(p + ".running_mean"));
    s.running_var = expect(p + ".running_var", read_f64(p + ".running_var"));
    s.gamma.values() = expect(p + ".gamma", read_f64(p + ".gamma"));
    s.beta.values() = expect(p + ".beta", read_f64(p + ".beta"));
    s.source_mean = expect(p + ".source_mean", read_f64(p + ".source_mean"));
    s.source_var = expect(p + ".source_var", read_f64(p + ".source_var"));
    s.source_gamma = expect(p + ".source_gamma", read_f64(p + ".source_gamma"));
    s.source_beta = expect(p + ".source_beta", read_f64(p + ".source_beta"));
    auto [eps_shape, eps] = read_f64(p + ".epsilon");
    if (eps.size() != 1 || !(eps[0] > 0.0)) fail("checkpoint entry ", p, ".epsilon invalid");
    s.epsilon = eps[0];
    const auto frozen = read_u8(p + ".frozen");
    if (frozen.size() != 1) fail("checkpoint entry ", p, ".frozen invalid");
    s.frozen = frozen[0] != 0;
    if (!s.frozen) {
      fail("checkpoint ", path.string(), ": '", cp.meta.phase,
           "' checkpoint is missing the frozen source snapshot for ", p);
    }
  }
  return cp;
}

}  // namespace bnadapt
