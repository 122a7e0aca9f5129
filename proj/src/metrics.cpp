#include "bnadapt/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "bnadapt/common.hpp"

namespace bnadapt {

namespace {

void check_shapes(const LabelMap& a, const LabelMap& b, const char* op) {
  if (a.h != b.h || a.w != b.w || a.ids.size() != a.h * a.w || b.ids.size() != b.h * b.w) {
    fail(op, ": label map shape mismatch (", a.h, "x", a.w, " vs ", b.h, "x", b.w, ")");
  }
}

std::vector<std::uint8_t> class_mask(const LabelMap& m, int class_id) {
  std::vector<std::uint8_t> out(m.ids.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (m.ids[i] == class_id) ? 1 : 0;
  return out;
}

}  // namespace

double dice_mask(const std::vector<std::uint8_t>& pred,
                 const std::vector<std::uint8_t>& truth) {
  if (pred.size() != truth.size()) fail("dice: mask size mismatch");
  std::size_t np = 0, nt = 0, inter = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    np += pred[i] ? 1 : 0;
    nt += truth[i] ? 1 : 0;
    inter += (pred[i] && truth[i]) ? 1 : 0;
  }
  if (np + nt == 0) return 1.0;  // both empty: perfect agreement
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + nt);
}

double hausdorff_mask(const std::vector<std::uint8_t>& pred,
                      const std::vector<std::uint8_t>& truth, std::size_t h, std::size_t w) {
  if (pred.size() != truth.size() || pred.size() != h * w) {
    fail("hausdorff: mask size mismatch");
  }
  std::vector<std::pair<int, int>> pp, tp;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int y = static_cast<int>(i / w), x = static_cast<int>(i % w);
    if (pred[i]) pp.emplace_back(y, x);
    if (truth[i]) tp.emplace_back(y, x);
  }
  if (pp.empty() && tp.empty()) return 0.0;
  if (pp.empty() || tp.empty()) {
    // sentinel: the furthest two pixel centres can be apart
    return std::hypot(static_cast<double>(h - 1), static_cast<double>(w - 1));
  }

  auto directed_sq = [](const std::vector<std::pair<int, int>>& from,
                        const std::vector<std::pair<int, int>>& to) {
    long long worst = 0;
    for (const auto& [fy, fx] : from) {
      long long best = -1;
      for (const auto& [ty, tx] : to) {
        const long long dy = fy - ty, dx = fx - tx;
        const long long d2 = dy * dy + dx * dx;
        if (best < 0 || d2 < best) best = d2;
        if (best == 0) break;
      }
      if (best > worst) worst = best;
    }
    return worst;
  };

  const long long a = directed_sq(pp, tp);
  const long long b = directed_sq(tp, pp);
  return std::sqrt(static_cast<double>(a > b ? a : b));
}

double dice(const LabelMap& pred, const LabelMap& truth, int class_id) {
  check_shapes(pred, truth, "dice");
  return dice_mask(class_mask(pred, class_id), class_mask(truth, class_id));
}

double hausdorff(const LabelMap& pred, const LabelMap& truth, int class_id) {
  check_shapes(pred, truth, "hausdorff");
  return hausdorff_mask(class_mask(pred, class_id), class_mask(truth, class_id), pred.h,
                        pred.w);
}

LabelMap argmax_labels(const Tensor& probs) {
  if (probs.rank() != 4 || probs.shape()[0] != 1) {
    fail("argmax_labels: expected (1,H,W,K), got ", shape_str(probs.shape()));
  }
  const std::size_t h = probs.shape()[1], w = probs.shape()[2], k = probs.shape()[3];
  LabelMap m{h, w, std::vector<std::uint8_t>(h * w)};
  const auto& v = probs.values();
  for (std::size_t p = 0; p < h * w; ++p) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (v[p * k + j] > v[p * k + arg]) arg = j;
    }
    m.ids[p] = static_cast<std::uint8_t>(arg);
  }
  return m;
}

namespace {

struct RegionSpec {
  const char* name;
  // mask membership: any of these label ids
  std::uint8_t lo_mask;  // bitmask over ids 0..7
};

// whole = rim|core|enhanced (1,2,3), enhanced = 3, core = 2
constexpr RegionSpec kRegions[3] = {
    {"whole", 0b00001110},
    {"enhanced", 0b00001000},
    {"core", 0b00000100},
};

std::vector<std::uint8_t> region_mask(const std::vector<std::uint8_t>& ids,
                                      std::uint8_t bitmask) {
  std::vector<std::uint8_t> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out[i] = (ids[i] < 8 && (bitmask >> ids[i]) & 1) ? 1 : 0;
  }
  return out;
}

struct Running {
  double sum = 0.0, sumsq = 0.0;
  std::size_t n = 0;
  void push(double v) {
    sum += v;
    sumsq += v * v;
    ++n;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double stddev() const {
    if (!n) return 0.0;
    const double m = mean();
    const double v = sumsq / static_cast<double>(n) - m * m;
    return v > 0.0 ? std::sqrt(v) : 0.0;
  }
};

}  // namespace

const EvalRow& EvalTable::row(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  fail("EvalTable: no row named '", name, "'");
}

EvalTable evaluate(ToyUNet& model, const Dataset& dataset) {
  if (dataset.size() == 0) fail("evaluate: empty dataset");
  NoGradGuard ng;

  Running dice_acc[3], hd_acc[3], overall_dice, overall_hd;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const std::size_t idx[1] = {i};
    Tensor probs = model.forward(dataset.batch_images(idx), BNMode::eval());
    LabelMap pred = argmax_labels(probs);
    const auto& truth_ids = dataset.samples[i].label;

    double dsum = 0.0, hsum = 0.0;
    for (int r = 0; r < 3; ++r) {
      const auto pm = region_mask(pred.ids, kRegions[r].lo_mask);
      const auto tm = region_mask(truth_ids, kRegions[r].lo_mask);
      const double dv = dice_mask(pm, tm);
      const double hv = hausdorff_mask(pm, tm, dataset.hw, dataset.hw);
      dice_acc[r].push(dv);
      hd_acc[r].push(hv);
      dsum += dv;
      hsum += hv;
    }
    overall_dice.push(dsum / 3.0);
    overall_hd.push(hsum / 3.0);
  }

  EvalTable table;
  for (int r = 0; r < 3; ++r) {
    table.rows.push_back(EvalRow{kRegions[r].name, dice_acc[r].mean(), dice_acc[r].stddev(),
                                 hd_acc[r].mean(), hd_acc[r].stddev()});
  }
  table.rows.push_back(EvalRow{"Overall", overall_dice.mean(), overall_dice.stddev(),
                               overall_hd.mean(), overall_hd.stddev()});
  return table;
}

std::string metrics_csv(const EvalTable& table) {
  std::string out = "class,dice_mean,dice_std,hausdorff_mean,hausdorff_std\n";
  char buf[256];
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g\n", r.name.c_str(),
                  r.dice_mean, r.dice_std, r.hausdorff_mean, r.hausdorff_std);
    out += buf;
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const EvalTable& table) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("cannot open ", path.string(), " for writing");
  os << metrics_csv(table);
  if (!os) fail("write failed for ", path.string());
}

EvalTable read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail("cannot open ", path.string());
  std::string line;
  if (!std::getline(is, line)) fail("metrics csv ", path.string(), " is empty");
  EvalTable table;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    EvalRow r;
    char name[64];
    if (std::sscanf(line.c_str(), "%63[^,],%lg,%lg,%lg,%lg", name, &r.dice_mean, &r.dice_std,
                    &r.hausdorff_mean, &r.hausdorff_std) != 5) {
      fail("metrics csv ", path.string(), ": malformed line '", line, "'");
    }
    r.name = name;
    table.rows.push_back(std::move(r));
  }
  return table;
}

}  // namespace bnadapt
