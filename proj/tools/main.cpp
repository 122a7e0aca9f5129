// bnadapt — source-free domain adaptation for segmentation via
// batch-normalization statistics. Subcommands: gen-data, pretrain, adapt,
// eval, inspect. Everything is driven by one u64 seed; identical invocations
// produce byte-identical outputs.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bnadapt/common.hpp"
#include "bnadapt/pipeline.hpp"

namespace {

using namespace bnadapt;

void print_table(const EvalTable& table) {
  std::printf("%-10s %12s %12s %14s %14s\n", "class", "dice_mean", "dice_std", "hd_mean",
              "hd_std");
  for (const auto& r : table.rows) {
    std::printf("%-10s %12.4f %12.4f %14.4f %14.4f\n", r.name.c_str(), r.dice_mean, r.dice_std,
                r.hausdorff_mean, r.hausdorff_std);
  }
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return parse_config_file(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"source-free BN-statistics domain adaptation for segmentation"};
  app.require_subcommand(1);

  // gen-data
  std::string gen_preset, gen_out;
  std::uint64_t gen_seed = 1234;
  GenCounts counts;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark tree");
  gen->add_option("--preset", gen_preset, "domain-shift preset")
      ->required()
      ->check(CLI::IsMember({"shift-appearance", "shift-subtype"}));
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "root seed");
  gen->add_option("--source-train", counts.source_train, "source-train sample count");
  gen->add_option("--source-val", counts.source_val, "source-val sample count");
  gen->add_option("--target-train", counts.target_train, "target-train sample count");
  gen->add_option("--target-test", counts.target_test, "target-test sample count");

  // pretrain
  std::string pre_config, pre_data, pre_out;
  auto* pre = app.add_subcommand("pretrain", "source-domain pre-training");
  pre->add_option("--config", pre_config, "run config file (defaults when omitted)");
  pre->add_option("--data", pre_data, "benchmark root directory")->required();
  pre->add_option("--out", pre_out, "output checkpoint path")->required();

  // adapt
  std::string ad_config, ad_model, ad_data, ad_out, ad_log;
  bool no_adaptive = false, no_se = false;
  auto* ad = app.add_subcommand("adapt", "source-free target adaptation");
  ad->add_option("--config", ad_config, "run config file (defaults when omitted)");
  ad->add_option("--model", ad_model, "pretrained checkpoint")->required();
  ad->add_option("--data", ad_data, "benchmark root directory")->required();
  ad->add_option("--out", ad_out, "output checkpoint path")->required();
  ad->add_option("--log", ad_log, "metrics log path (default <out>.log)");
  ad->add_flag("--no-adaptive-channels", no_adaptive,
               "disable channel transferability weighting (alpha == 1)");
  ad->add_flag("--no-se", no_se, "disable self-entropy minimization (lambda == 0)");

  // eval
  std::string ev_model, ev_data, ev_out;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  ev->add_option("--model", ev_model, "checkpoint path")->required();
  ev->add_option("--data", ev_data, "split directory (contains manifest.txt)")->required();
  ev->add_option("--out", ev_out, "metrics CSV output path")->required();

  // inspect
  std::string in_model;
  auto* in = app.add_subcommand("inspect", "print checkpoint summary");
  in->add_option("--model", in_model, "checkpoint path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      pipeline_gen_data(gen_out, gen_preset, gen_seed, counts);
      std::printf("wrote benchmark tree to %s\n", gen_out.c_str());
    } else if (pre->parsed()) {
      const RunConfig cfg = load_config(pre_config);
      const PretrainOutcome out = pipeline_pretrain(cfg, pre_data, pre_out);
      std::printf("pretrained for %llu iterations, checkpoint %s\n",
                  static_cast<unsigned long long>(out.iters), pre_out.c_str());
      std::printf("source-val metrics:\n");
      print_table(out.source_val);
    } else if (ad->parsed()) {
      RunConfig cfg = load_config(ad_config);
      if (no_adaptive) cfg.adaptive_channels = false;
      if (no_se) cfg.use_se = false;
      if (ad_log.empty()) ad_log = ad_out + ".log";
      const AdaptOutcome out = pipeline_adapt(cfg, ad_model, ad_data, ad_out, ad_log);
      for (std::size_t i = 0; i < out.log.size(); ++i) {
        if (i % 50 == 0 || i + 1 == out.log.size()) {
          const auto& r = out.log[i];
          std::printf("t=%zu eta=%.4g lambda=%.4g loss=%.6g hbs=%.6g se=%.6g class-frac=[",
                      r.t, r.eta_t, r.lambda_t, r.loss_total, r.loss_hbs, r.loss_se);
          for (std::size_t cidx = 0; cidx < r.class_fractions.size(); ++cidx) {
            std::printf("%s%.3f", cidx ? " " : "", r.class_fractions[cidx]);
          }
          std::printf("]\n");
        }
      }
      std::printf("adapted checkpoint %s, log %s\n", ad_out.c_str(), ad_log.c_str());
    } else if (ev->parsed()) {
      const EvalTable table = pipeline_eval(ev_model, ev_data, ev_out);
      print_table(table);
      std::printf("metrics written to %s\n", ev_out.c_str());
    } else if (in->parsed()) {
      pipeline_inspect(in_model, std::cout);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
