#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bnadapt/data_synth.hpp"
#include "bnadapt/segnet.hpp"

namespace bnadapt {

struct LabelMap {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> ids;
};

// 2|P n T| / (|P| + |T|) for the pixel sets of class_id. Both empty -> 1,
// exactly one empty -> 0.
double dice(const LabelMap& pred, const LabelMap& truth, int class_id);

// Exact symmetric Hausdorff distance (Euclidean, pixel units) between the
// full foreground pixel sets of class_id. Both empty -> 0; one empty -> the
// image diagonal sentinel hypot(h-1, w-1).
double hausdorff(const LabelMap& pred, const LabelMap& truth, int class_id);

// Same metrics over 0/1 masks (used for the nested-region table rows).
double dice_mask(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth);
double hausdorff_mask(const std::vector<std::uint8_t>& pred,
                      const std::vector<std::uint8_t>& truth, std::size_t h, std::size_t w);

// Argmax class per pixel from a (1,H,W,K) probability tensor.
LabelMap argmax_labels(const Tensor& probs);

struct EvalRow {
  std::string name;
  double dice_mean = 0.0;
  double dice_std = 0.0;
  double hausdorff_mean = 0.0;
  double hausdorff_std = 0.0;
};

// Nested-region evaluation table mirroring the whole/enhanced/core layout:
// "whole" is every lesion pixel (labels 1|2|3), "enhanced" label 3, "core"
// label 2, plus an Overall row averaging the three per sample. Means and
// (population) standard deviations are taken across samples.
struct EvalTable {
  std::vector<EvalRow> rows;
  const EvalRow& row(const std::string& name) const;
  double overall_dice() const { return row("Overall").dice_mean; }
};

EvalTable evaluate(ToyUNet& model, const Dataset& dataset);

std::string metrics_csv(const EvalTable& table);
void write_metrics_csv(const std::filesystem::path& path, const EvalTable& table);
EvalTable read_metrics_csv(const std::filesystem::path& path);

}  // namespace bnadapt
