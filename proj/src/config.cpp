#include "bnadapt/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "bnadapt/common.hpp"

namespace bnadapt {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_double(std::string_view key, std::string_view value) {
  const std::string v(value);
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || v.empty()) {
    fail("config: value '", v, "' for key '", key, "' is not a number");
  }
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view value) {
  if (!value.empty() && value.front() == '-') {
    fail("config: key '", key, "' must be non-negative, got '", value, "'");
  }
  const std::string v(value);
  char* end = nullptr;
  const unsigned long long out = std::strtoull(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || v.empty()) {
    fail("config: value '", v, "' for key '", key, "' is not an integer");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  fail("config: value '", value, "' for key '", key, "' is not a boolean (true/false/1/0)");
}

}  // namespace

RunConfig parse_config_text(std::string_view text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream is{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail("config line ", lineno, ": expected key=value, got '", std::string(line), "'");
    }
    const std::string key{trim(line.substr(0, eq))};
    const std::string_view value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) fail("config line ", lineno, ": duplicate key '", key, "'");

    if (key == "seed") cfg.seed = parse_u64(key, value);
    else if (key == "epochs") cfg.epochs = static_cast<std::size_t>(parse_u64(key, value));
    else if (key == "lr") cfg.lr = parse_double(key, value);
    else if (key == "batch_size") cfg.batch_size = static_cast<std::size_t>(parse_u64(key, value));
    else if (key == "eta0") cfg.eta0 = parse_double(key, value);
    else if (key == "tau") cfg.tau = parse_double(key, value);
    else if (key == "lambda_start") cfg.lambda_start = parse_double(key, value);
    else if (key == "lambda_end") cfg.lambda_end = parse_double(key, value);
    else if (key == "adapt_iters") cfg.adapt_iters = static_cast<std::size_t>(parse_u64(key, value));
    else if (key == "adaptive_channels") cfg.adaptive_channels = parse_bool(key, value);
    else if (key == "use_se") cfg.use_se = parse_bool(key, value);
    else if (key == "freeze_non_bn") cfg.freeze_non_bn = parse_bool(key, value);
    else if (key == "data_dir") cfg.data_dir = std::string(value);
    else fail("config line ", lineno, ": unknown key '", key, "'");
  }
  validate_config(cfg);
  return cfg;
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail("cannot open config file ", path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

void validate_config(const RunConfig& cfg) {
  if (!(cfg.lr > 0.0)) fail("config: lr must be positive, got ", cfg.lr);
  if (cfg.batch_size < 1) fail("config: batch_size must be >= 1");
  if (!(cfg.eta0 >= 0.0 && cfg.eta0 <= 1.0)) fail("config: eta0 must lie in [0,1], got ", cfg.eta0);
  if (!(cfg.tau > 0.0)) fail("config: tau must be positive, got ", cfg.tau);
}

}  // namespace bnadapt
