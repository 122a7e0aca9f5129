#include "bnadapt/bn.hpp"

#include <cmath>

#include "bnadapt/common.hpp"

namespace bnadapt {

BNChannelStats::BNChannelStats(std::size_t chans, Real eps) : epsilon(eps) {
  if (chans == 0) fail("BNChannelStats: channel count must be positive");
  if (!(eps > 0.0)) fail("BNChannelStats: epsilon must be positive, got ", eps);
  running_mean.assign(chans, 0.0);
  running_var.assign(chans, 1.0);
  gamma = Tensor::full({chans}, 1.0);
  beta = Tensor::zeros({chans});
}

namespace {
void check_momentum(double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) fail("BN momentum must lie in [0,1], got ", eta);
}
}  // namespace

BNMode BNMode::train_source(double eta) {
  check_momentum(eta);
  return BNMode{Kind::TrainSource, eta};
}

BNMode BNMode::adapt_target(double eta_t) {
  check_momentum(eta_t);
  return BNMode{Kind::AdaptTarget, eta_t};
}

void update_running_source(BNChannelStats& stats, const std::vector<Real>& batch_mean,
                           const std::vector<Real>& batch_var, double eta) {
  check_momentum(eta);
  const std::size_t c = stats.channels();
  if (batch_mean.size() != c || batch_var.size() != c) {
    fail("update_running_source: expected ", c, " channels, got mean ", batch_mean.size(),
         " / var ", batch_var.size());
  }
  for (std::size_t i = 0; i < c; ++i) {
    if (batch_var[i] < 0.0) fail("update_running_source: negative batch variance ", batch_var[i]);
    stats.running_mean[i] = (1.0 - eta) * stats.running_mean[i] + eta * batch_mean[i];
    stats.running_var[i] = (1.0 - eta) * stats.running_var[i] + eta * batch_var[i];
  }
}

double emd_momentum(std::size_t t, double eta0, double tau) {
  check_momentum(eta0);
  if (!(tau > 0.0)) fail("emd_momentum: tau must be positive, got ", tau);
  return eta0 * std::exp(-static_cast<double>(t) / tau);
}

void freeze_source(BNChannelStats& stats) {
  if (stats.frozen) fail("freeze_source: source snapshot already frozen");
  stats.source_mean = stats.running_mean;
  stats.source_var = stats.running_var;
  stats.source_gamma = stats.gamma.values();
  stats.source_beta = stats.beta.values();
  stats.frozen = true;
}

BatchNorm::BatchNorm(std::size_t channels, Real eps) : stats_(channels, eps) {}

Tensor BatchNorm::normalize(const Tensor& x, const Tensor& mean, const Tensor& var) const {
  // One shared arithmetic path for all three regimes; the regime equivalences
  // (AdaptTarget at eta_t = 0 / 1) rely on this being bit-identical.
  Tensor denom = bnadapt::sqrt(add(var, Tensor::scalar(stats_.epsilon)));
  Tensor xhat = div(sub(x, mean), denom);
  return add(mul(xhat, stats_.gamma), stats_.beta);
}

Tensor BatchNorm::forward(const Tensor& x, const BNMode& mode) {
  if (x.rank() != 4) fail("bn_forward: expected (B,H,W,C) input, got ", shape_str(x.shape()));
  const std::size_t c = channels();
  if (x.shape()[3] != c) {
    fail("bn_forward: channel mismatch, input has ", x.shape()[3], " channels, layer has ", c);
  }
  check_momentum(mode.momentum);
  const std::size_t n = x.size() / c;

  switch (mode.kind) {
    case BNMode::Kind::Eval: {
      Tensor m = Tensor::from_data({c}, stats_.running_mean);
      Tensor v = Tensor::from_data({c}, stats_.running_var);
      return normalize(x, m, v);
    }
    case BNMode::Kind::TrainSource: {
      if (n < 2) fail("bn_forward: TrainSource needs B*H*W >= 2 per channel, got ", n);
      Tensor mu = channel_mean(x);
      Tensor var = channel_var(x);
      Tensor y = normalize(x, mu, var);
      last_batch_mean_ = mu.values();
      last_batch_var_ = var.values();
      update_running_source(stats_, last_batch_mean_, last_batch_var_, mode.momentum);
      return y;
    }
    case BNMode::Kind::AdaptTarget: {
      if (n < 2) fail("bn_forward: AdaptTarget needs B*H*W >= 2 per channel, got ", n);
      if (!stats_.frozen) fail("bn_forward: AdaptTarget requires a frozen source snapshot");
      Tensor mu = channel_mean(x);
      Tensor var = channel_var(x);
      last_batch_mean_ = mu.values();
      last_batch_var_ = var.values();

      // Blend with the frozen source snapshot. Gradients flow through the
      // batch-statistic terms only; the snapshot side is data.
      const double eta = mode.momentum;
      std::vector<Real> src_m(c), src_v(c);
      for (std::size_t i = 0; i < c; ++i) {
        src_m[i] = eta * stats_.source_mean[i];
        src_v[i] = eta * stats_.source_var[i];
      }
      Tensor m = add(scale(mu, 1.0 - eta), Tensor::from_data({c}, src_m));
      Tensor v = add(scale(var, 1.0 - eta), Tensor::from_data({c}, src_v));
      Tensor y = normalize(x, m, v);
      stats_.running_mean = m.values();
      stats_.running_var = v.values();
      return y;
    }
  }
  fail("bn_forward: invalid mode");
}

Conv2d::Conv2d(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout, int s,
               Rng& init_rng)
    : stride(s) {
  const double bound = std::sqrt(1.0 / static_cast<double>(kh * kw * cin));
  std::vector<Real> w(kh * kw * cin * cout);
  for (auto& v : w) v = init_rng.uniform(-bound, bound);
  weight = Tensor::from_data({kh, kw, cin, cout}, std::move(w));
  bias = Tensor::zeros({cout});
}

}  // namespace bnadapt
