#include "bnadapt/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "bnadapt/common.hpp"

namespace bnadapt {

namespace fs = std::filesystem;

void pipeline_gen_data(const fs::path& out, std::string_view preset, std::uint64_t seed,
                       const GenCounts& counts) {
  generate_benchmark(out, preset, seed, counts);
}

PretrainOutcome pipeline_pretrain(const RunConfig& cfg, const fs::path& data_root,
                                  const fs::path& out_model) {
  Dataset train = load_split(data_root / "source-train");
  Dataset val = load_split(data_root / "source-val");
  if (train.hw != 64) fail("pretrain: expected 64x64 data, got ", train.hw);

  ToyUNet model(NetworkSpec{}, cfg.seed);
  PretrainOutcome out;
  out.iters = pretrain_source(model, train, cfg.epochs, cfg.lr, cfg.batch_size, cfg.seed);
  out.source_val = evaluate(model, val);

  CheckpointMeta meta;
  meta.phase = "pretrained";
  meta.seed = cfg.seed;
  meta.iters_pretrain = out.iters;
  meta.iters_adapt = 0;
  save_checkpoint(out_model, model, meta);
  return out;
}

AdaptOutcome pipeline_adapt(const RunConfig& cfg, const fs::path& model_in,
                            const fs::path& data_root, const fs::path& out_model,
                            const fs::path& log_path) {
  Checkpoint cp = load_checkpoint(model_in);
  if (cp.meta.phase != "pretrained") {
    fail("adapt: input checkpoint must be 'pretrained', got '", cp.meta.phase, "'");
  }
  if (cfg.batch_size < 2) fail("adapt: batch_size must be >= 2 for batch statistics");

  Dataset target = load_split(data_root / "target-train");

  AdaptSchedule schedule;
  schedule.eta0 = cfg.eta0;
  schedule.tau = cfg.tau;
  schedule.lambda_start = cfg.lambda_start;
  schedule.lambda_end = cfg.lambda_end;
  schedule.total_iters = cfg.adapt_iters;
  schedule.t = 0;

  AdaptFlags flags;
  flags.adaptive_channels = cfg.adaptive_channels;
  flags.use_se = cfg.use_se;

  AdaptOutcome out;
  if (cfg.adapt_iters > 0) {
    out.log = adapt_run(*cp.model, target, schedule, flags, cfg.lr, cfg.batch_size, cfg.seed,
                        cfg.freeze_non_bn);
  }

  CheckpointMeta meta = cp.meta;
  meta.phase = "adapted";
  meta.seed = cfg.seed;
  meta.iters_adapt = schedule.t;
  save_checkpoint(out_model, *cp.model, meta);
  write_adapt_log(log_path, out.log);
  return out;
}

EvalTable pipeline_eval(const fs::path& model, const fs::path& split_dir,
                        const fs::path& out_csv) {
  Checkpoint cp = load_checkpoint(model);
  Dataset data = load_split(split_dir);
  EvalTable table = evaluate(*cp.model, data);
  write_metrics_csv(out_csv, table);
  return table;
}

void pipeline_inspect(const fs::path& model, std::ostream& os) {
  Checkpoint cp = load_checkpoint(model);
  os << "network: " << kToyUnetSpecId << "\n"
     << "phase: " << cp.meta.phase << "\n"
     << "seed: " << cp.meta.seed << "\n"
     << "pretrain iterations (K): " << cp.meta.iters_pretrain << "\n"
     << "adapt iterations (t): " << cp.meta.iters_adapt << "\n";

  const char* names[5] = {"bn1", "bn2", "bn3", "bn4", "bn5"};
  const auto bns = cp.model->bn_layers();
  os << "layer channels: ";
  for (std::size_t i = 0; i < bns.size(); ++i) os << (i ? " " : "") << bns[i]->channels();
  os << "\n";

  char buf[256];
  for (std::size_t i = 0; i < bns.size(); ++i) {
    const BNChannelStats& s = bns[i]->stats();
    const std::size_t c = s.channels();
    double mean_abs_dg = 0.0, mean_abs_db = 0.0, mean_dist = 0.0, max_dist = 0.0;
    double mean_mu = 0.0, mean_var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      mean_mu += s.running_mean[j];
      mean_var += s.running_var[j];
      mean_abs_dg += std::fabs(s.gamma.values()[j] - s.source_gamma[j]);
      mean_abs_db += std::fabs(s.beta.values()[j] - s.source_beta[j]);
      // snapshot distance with the running stats as the current side
      const double dist = channel_distance(s, j, s.running_mean[j], s.running_var[j]);
      mean_dist += dist;
      if (dist > max_dist) max_dist = dist;
    }
    const double inv = 1.0 / static_cast<double>(c);
    std::snprintf(buf, sizeof(buf),
                  "%s: C=%zu mean(mu)=%.6g mean(var)=%.6g |dgamma|=%.6g |dbeta|=%.6g "
                  "snapshot-dist mean=%.6g max=%.6g\n",
                  names[i], c, mean_mu * inv, mean_var * inv, mean_abs_dg * inv,
                  mean_abs_db * inv, mean_dist * inv, max_dist);
    os << buf;
  }
}

void write_adapt_log(const fs::path& path, const std::vector<StepReport>& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("cannot open ", path.string(), " for writing");
  os << "t,eta_t,lambda_t,loss_total,loss_hbs,loss_se,mean_d,max_d\n";
  char buf[320];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.t,
                  r.eta_t, r.lambda_t, r.loss_total, r.loss_hbs, r.loss_se, r.mean_d, r.max_d);
    os << buf;
  }
  if (!os) fail("write failed for ", path.string());
}

}  // namespace bnadapt
