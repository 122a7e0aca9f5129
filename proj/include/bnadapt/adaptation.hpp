#pragma once

#include <cstdint>
#include <vector>

#include "bnadapt/bn.hpp"
#include "bnadapt/data_synth.hpp"
#include "bnadapt/optim.hpp"
#include "bnadapt/segnet.hpp"
#include "bnadapt/tensor.hpp"

namespace bnadapt {

// Per-channel source/target statistic distances and the transferability
// weights derived from them. alpha is a normalized reweighting: it sums to
// the total channel count, and a larger distance always means a strictly
// smaller weight.
struct TransferabilityWeights {
  std::vector<double> d;
  std::vector<double> alpha;
  std::size_t channel_count() const { return alpha.size(); }
};

// Adaptation hyper-schedule: momentum decay eta_t = eta0 * exp(-t/tau) and
// the linear lambda ramp between lambda_start and lambda_end over T steps.
struct AdaptSchedule {
  double eta0 = 0.9;
  double tau = 1.0;
  double lambda_start = 10.0;
  double lambda_end = 0.0;
  std::size_t total_iters = 1;
  std::size_t t = 0;
};

struct AdaptFlags {
  bool adaptive_channels = true;  // false reproduces the no-channel-weighting ablation
  bool use_se = true;             // false reproduces the no-self-entropy ablation
};

// One per-iteration log record. The CSV log carries the first eight fields;
// the rest (alpha summary, predicted-class histogram for collapse monitoring)
// go to stdout reporting and tests.
struct StepReport {
  std::size_t t = 0;
  double eta_t = 0.0;
  double lambda_t = 0.0;
  double loss_total = 0.0;
  double loss_hbs = 0.0;
  double loss_se = 0.0;
  double mean_d = 0.0;
  double max_d = 0.0;
  double mean_alpha = 0.0;
  double max_alpha = 0.0;
  std::vector<double> class_fractions;
};

// | source_mean/sqrt(source_var+eps) - batch_mean/sqrt(batch_var+eps) | for
// channel c. Uses the frozen snapshot on the source side and the raw
// (pre-blend) statistics of the current target batch on the other.
double channel_distance(const BNChannelStats& stats, std::size_t c, double batch_mean,
                        double batch_var);

// alpha_c = N_ch * (1+d_c)^-1 / sum_j (1+d_j)^-1 over the full channel set.
TransferabilityWeights transferability_weights(const std::vector<double>& d);

// High-order batch statistics consistency:
//   sum over channels of (1+alpha_c) * (|gamma_c - gamma_c^src| + |beta_c - beta_c^src|)
// Differentiable in the current gamma/beta; alpha and the snapshots are
// constants within a step.
Tensor hbs_loss(const std::vector<BatchNorm*>& layers, const std::vector<double>& alpha);

// Mean Shannon entropy of per-pixel class distributions, in [0, log K].
// Rejects inputs that are not per-pixel distributions.
Tensor se_loss(const Tensor& probs);

// lambda_start + (lambda_end - lambda_start) * t / T; t must lie in [0, T].
double lambda_at(const AdaptSchedule& schedule, std::size_t t);

// One adaptation iteration: forward in AdaptTarget mode (collecting each
// layer's batch statistics before normalization), distances and alpha from
// this batch, total loss hbs + lambda * se with the flagged terms toggled,
// backward, SGD update. Advances schedule.t.
StepReport adapt_step(ToyUNet& model, const Tensor& batch, AdaptSchedule& schedule,
                      const AdaptFlags& flags, Sgd& opt);

// T iterations over seeded-shuffled target batches. Batches are drawn in
// passes over the dataset; incomplete trailing chunks are dropped so every
// step sees a full batch.
std::vector<StepReport> adapt_run(ToyUNet& model, const Dataset& target,
                                  AdaptSchedule& schedule, const AdaptFlags& flags,
                                  double lr, std::size_t batch_size, std::uint64_t seed,
                                  bool freeze_non_bn = false);

}  // namespace bnadapt
