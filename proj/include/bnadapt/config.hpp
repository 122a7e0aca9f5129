#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace bnadapt {

// Plain key=value run configuration. '#' starts a comment; unknown keys and
// out-of-range values are rejected before any computation runs.
struct RunConfig {
  std::uint64_t seed = 1234;
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::size_t batch_size = 8;
  double eta0 = 0.9;
  double tau = 1.0;
  double lambda_start = 10.0;
  double lambda_end = 0.0;
  std::size_t adapt_iters = 300;
  bool adaptive_channels = true;
  bool use_se = true;
  bool freeze_non_bn = false;
  std::string data_dir;
};

RunConfig parse_config_text(std::string_view text);
RunConfig parse_config_file(const std::filesystem::path& path);
void validate_config(const RunConfig& cfg);

}  // namespace bnadapt
