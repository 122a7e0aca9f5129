#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "bnadapt/segnet.hpp"

namespace bnadapt {

// "BNCK" checkpoint: magic + u32 version, spec-id and phase strings, seed and
// iteration counters, then a named-tensor directory followed by raw
// little-endian payloads. Stores every conv weight/bias plus, per BN layer,
// the current running statistics and affine parameters and the frozen source
// snapshot, so adaptation is restartable and snapshot distances can be
// recomputed offline.
struct CheckpointMeta {
  std::string phase;  // "pretrained" or "adapted"
  std::uint64_t seed = 0;
  std::uint64_t iters_pretrain = 0;  // K
  std::uint64_t iters_adapt = 0;     // t
};

struct Checkpoint {
  std::unique_ptr<ToyUNet> model;
  CheckpointMeta meta;
};

void save_checkpoint(const std::filesystem::path& path, ToyUNet& model,
                     const CheckpointMeta& meta);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bnadapt
