#pragma once

#include <cstdint>
#include <vector>

#include "bnadapt/rng.hpp"
#include "bnadapt/tensor.hpp"

namespace bnadapt {

// Per-layer batch-normalization state. running_mean/running_var track the
// layer's current normalization statistics; gamma/beta are the learned affine
// parameters. freeze_source() snapshots all four into the source_* fields,
// which stay immutable afterwards (they are what a source-free adaptation run
// has instead of source data).
struct BNChannelStats {
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
  Tensor gamma;  // parameters, shape (C)
  Tensor beta;

  std::vector<Real> source_mean;
  std::vector<Real> source_var;
  std::vector<Real> source_gamma;
  std::vector<Real> source_beta;
  bool frozen = false;

  Real epsilon = 1e-5;

  explicit BNChannelStats(std::size_t channels, Real eps = 1e-5);
  std::size_t channels() const { return running_mean.size(); }
};

// Normalization regime selector.
//   TrainSource — normalize by batch statistics, EMA-update the running ones
//   Eval        — normalize by stored running statistics, mutate nothing
//   AdaptTarget — blend batch statistics with the frozen source snapshot
//                 using momentum eta_t, normalize by the blend, store it
struct BNMode {
  enum class Kind { TrainSource, Eval, AdaptTarget };
  Kind kind = Kind::Eval;
  double momentum = 0.0;

  static BNMode train_source(double eta = 0.1);
  static BNMode eval() { return BNMode{Kind::Eval, 0.0}; }
  static BNMode adapt_target(double eta_t);
};

// running <- (1-eta) * running + eta * batch, per channel, mean and variance
// alike. eta outside [0,1] or negative variances are rejected.
void update_running_source(BNChannelStats& stats, const std::vector<Real>& batch_mean,
                           const std::vector<Real>& batch_var, double eta);

// Momentum for the t-th adaptation iteration: eta0 * exp(-t / tau).
// tau = 1 is the literal schedule; larger tau stretches the decay horizon.
double emd_momentum(std::size_t t, double eta0, double tau);

// Snapshot current running stats and affine parameters as the source
// reference. One-shot: a second call is an error.
void freeze_source(BNChannelStats& stats);

class BatchNorm {
 public:
  explicit BatchNorm(std::size_t channels, Real eps = 1e-5);

  Tensor forward(const Tensor& x, const BNMode& mode);

  BNChannelStats& stats() { return stats_; }
  const BNChannelStats& stats() const { return stats_; }
  std::size_t channels() const { return stats_.channels(); }

  // Raw statistics of the most recent stats-computing batch (pre-blend in
  // AdaptTarget); this is the "current batch" side of the channel distance.
  const std::vector<Real>& last_batch_mean() const { return last_batch_mean_; }
  const std::vector<Real>& last_batch_var() const { return last_batch_var_; }

 private:
  Tensor normalize(const Tensor& x, const Tensor& mean, const Tensor& var) const;

  BNChannelStats stats_;
  std::vector<Real> last_batch_mean_;
  std::vector<Real> last_batch_var_;
};

// 2D convolution layer owning its weight (kh,kw,Cin,Cout) and bias (Cout).
// Weights init uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)], bias zero.
class Conv2d {
 public:
  Conv2d(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout, int stride,
         Rng& init_rng);

  Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, stride); }

  Tensor weight;
  Tensor bias;
  int stride = 1;
};

}  // namespace bnadapt
