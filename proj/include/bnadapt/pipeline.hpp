#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "bnadapt/adaptation.hpp"
#include "bnadapt/checkpoint.hpp"
#include "bnadapt/config.hpp"
#include "bnadapt/data_synth.hpp"
#include "bnadapt/metrics.hpp"

namespace bnadapt {

// The command implementations behind the CLI, callable in-process. Each step
// is idempotent given identical inputs and seed.

void pipeline_gen_data(const std::filesystem::path& out, std::string_view preset,
                       std::uint64_t seed, const GenCounts& counts = {});

struct PretrainOutcome {
  EvalTable source_val;
  std::uint64_t iters = 0;
};

// Trains on <data_root>/source-train, freezes the source snapshot, writes a
// 'pretrained' checkpoint and reports source-val metrics.
PretrainOutcome pipeline_pretrain(const RunConfig& cfg, const std::filesystem::path& data_root,
                                  const std::filesystem::path& out_model);

struct AdaptOutcome {
  std::vector<StepReport> log;
};

// Adapts a 'pretrained' checkpoint on <data_root>/target-train, writes an
// 'adapted' checkpoint plus the per-iteration metrics log
// (t,eta_t,lambda_t,loss_total,loss_hbs,loss_se,mean_d,max_d).
AdaptOutcome pipeline_adapt(const RunConfig& cfg, const std::filesystem::path& model_in,
                            const std::filesystem::path& data_root,
                            const std::filesystem::path& out_model,
                            const std::filesystem::path& log_path);

// Eval-mode inference over one split directory; writes the metrics CSV.
EvalTable pipeline_eval(const std::filesystem::path& model,
                        const std::filesystem::path& split_dir,
                        const std::filesystem::path& out_csv);

void pipeline_inspect(const std::filesystem::path& model, std::ostream& os);

void write_adapt_log(const std::filesystem::path& path, const std::vector<StepReport>& log);

}  // namespace bnadapt
