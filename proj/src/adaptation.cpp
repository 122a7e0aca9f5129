#include "bnadapt/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bnadapt/common.hpp"

namespace bnadapt {

double channel_distance(const BNChannelStats& stats, std::size_t c, double batch_mean,
                        double batch_var) {
  if (!stats.frozen) fail("channel_distance: source snapshot not frozen");
  if (c >= stats.channels()) fail("channel_distance: channel ", c, " out of range");
  if (batch_var < 0.0) fail("channel_distance: negative batch variance ", batch_var);
  const double eps = stats.epsilon;
  const double src = stats.source_mean[c] / std::sqrt(stats.source_var[c] + eps);
  const double tgt = batch_mean / std::sqrt(batch_var + eps);
  return std::fabs(src - tgt);
}

TransferabilityWeights transferability_weights(const std::vector<double>& d) {
  if (d.empty()) fail("transferability_weights: empty channel set");
  TransferabilityWeights w;
  w.d = d;
  w.alpha.resize(d.size());
  double total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] < 0.0) fail("transferability_weights: negative distance ", d[i]);
    w.alpha[i] = 1.0 / (1.0 + d[i]);
    total += w.alpha[i];
  }
  const double n = static_cast<double>(d.size());
  for (auto& a : w.alpha) a = n * a / total;
  return w;
}

Tensor hbs_loss(const std::vector<BatchNorm*>& layers, const std::vector<double>& alpha) {
  if (layers.empty()) fail("hbs_loss: no BN layers");
  std::size_t total_channels = 0;
  for (const BatchNorm* l : layers) total_channels += l->channels();
  if (alpha.size() != total_channels) {
    fail("hbs_loss: alpha has ", alpha.size(), " channels but layers have ", total_channels);
  }

  Tensor total = Tensor::scalar(0.0);
  std::size_t off = 0;
  for (BatchNorm* l : layers) {
    BNChannelStats& s = l->stats();
    if (!s.frozen) fail("hbs_loss: source snapshot not frozen");
    const std::size_t c = s.channels();
    std::vector<Real> weight(c);
    for (std::size_t i = 0; i < c; ++i) weight[i] = 1.0 + alpha[off + i];
    Tensor dg = bnadapt::abs(sub(s.gamma, Tensor::from_data({c}, s.source_gamma)));
    Tensor db = bnadapt::abs(sub(s.beta, Tensor::from_data({c}, s.source_beta)));
    Tensor term = mul(add(dg, db), Tensor::from_data({c}, std::move(weight)));
    total = add(total, sum_all(term));
    off += c;
  }
  return total;
}

Tensor se_loss(const Tensor& probs) {
  if (probs.rank() < 2) fail("se_loss: expected per-pixel distributions, got ",
                             shape_str(probs.shape()));
  const std::size_t k = probs.shape().back();
  const std::size_t pixels = probs.size() / k;
  const auto& v = probs.values();
  for (std::size_t p = 0; p < pixels; ++p) {
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double e = v[p * k + j];
      if (e < 0.0 || e > 1.0) {
        fail("se_loss: entry ", e, " outside [0,1] at pixel ", p);
      }
      sum += e;
    }
    if (std::fabs(sum - 1.0) > 1e-6) {
      fail("se_loss: pixel ", p, " is not normalized (sum ", sum, ")");
    }
  }
  // H = -(1/pixels) * sum delta * log(delta + 1e-12); the floor makes
  // 0 * log 0 evaluate to 0.
  Tensor guarded = add(probs, Tensor::scalar(1e-12));
  Tensor plogp = mul(probs, bnadapt::log(guarded));
  return scale(sum_all(plogp), -1.0 / static_cast<Real>(pixels));
}

double lambda_at(const AdaptSchedule& schedule, std::size_t t) {
  if (schedule.total_iters == 0) fail("lambda_at: schedule has zero iterations");
  if (t > schedule.total_iters) {
    fail("lambda_at: t=", t, " outside [0,", schedule.total_iters, "]");
  }
  const double frac = static_cast<double>(t) / static_cast<double>(schedule.total_iters);
  return schedule.lambda_start + (schedule.lambda_end - schedule.lambda_start) * frac;
}

namespace {
std::vector<double> predicted_class_fractions(const Tensor& probs) {
  const std::size_t k = probs.shape().back();
  const std::size_t pixels = probs.size() / k;
  std::vector<double> frac(k, 0.0);
  const auto& v = probs.values();
  for (std::size_t p = 0; p < pixels; ++p) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (v[p * k + j] > v[p * k + arg]) arg = j;
    }
    frac[arg] += 1.0;
  }
  for (auto& f : frac) f /= static_cast<double>(pixels);
  return frac;
}
}  // namespace

StepReport adapt_step(ToyUNet& model, const Tensor& batch, AdaptSchedule& schedule,
                      const AdaptFlags& flags, Sgd& opt) {
  if (schedule.t >= schedule.total_iters) {
    fail("adapt_step: schedule exhausted (t=", schedule.t, ", T=", schedule.total_iters, ")");
  }
  if (batch.rank() != 4 || batch.shape()[0] < 2) {
    fail("adapt_step: batch size must be >= 2, got shape ", shape_str(batch.shape()));
  }
  for (BatchNorm* l : model.bn_layers()) {
    if (!l->stats().frozen) fail("adapt_step: model is missing the frozen source snapshot");
  }

  StepReport rep;
  rep.t = schedule.t;
  rep.eta_t = emd_momentum(schedule.t, schedule.eta0, schedule.tau);
  rep.lambda_t = lambda_at(schedule, schedule.t);

  Tape tape;
  Tensor probs = model.forward(batch, BNMode::adapt_target(rep.eta_t));

  // Channel distances from this batch's raw statistics; alpha is recomputed
  // per batch and carries no gradient.
  const auto layers = model.bn_layers();
  std::vector<double> d;
  d.reserve(model.bn_channel_total());
  for (BatchNorm* l : layers) {
    const auto& bm = l->last_batch_mean();
    const auto& bv = l->last_batch_var();
    for (std::size_t c = 0; c < l->channels(); ++c) {
      d.push_back(channel_distance(l->stats(), c, bm[c], bv[c]));
    }
  }
  std::vector<double> alpha;
  if (flags.adaptive_channels) {
    alpha = transferability_weights(d).alpha;
  } else {
    alpha.assign(d.size(), 1.0);
  }

  Tensor l_hbs = hbs_loss(layers, alpha);
  Tensor total = l_hbs;
  rep.loss_hbs = l_hbs.item();
  if (flags.use_se) {
    Tensor l_se = se_loss(probs);
    rep.loss_se = l_se.item();
    total = add(l_hbs, scale(l_se, rep.lambda_t));
  }
  rep.loss_total = total.item();

  opt.zero_grad();
  tape.backward(total);
  opt.step();

  rep.mean_d = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  rep.max_d = *std::max_element(d.begin(), d.end());
  rep.mean_alpha =
      std::accumulate(alpha.begin(), alpha.end(), 0.0) / static_cast<double>(alpha.size());
  rep.max_alpha = *std::max_element(alpha.begin(), alpha.end());
  rep.class_fractions = predicted_class_fractions(probs);

  schedule.t += 1;
  return rep;
}

std::vector<StepReport> adapt_run(ToyUNet& model, const Dataset& target,
                                  AdaptSchedule& schedule, const AdaptFlags& flags,
                                  double lr, std::size_t batch_size, std::uint64_t seed,
                                  bool freeze_non_bn) {
  if (target.size() == 0) fail("adapt_run: empty target dataset");
  if (batch_size < 2) fail("adapt_run: batch size must be >= 2");
  if (target.size() < batch_size) {
    fail("adapt_run: dataset of ", target.size(), " samples cannot fill batches of ",
         batch_size);
  }

  std::vector<StepReport> log;
  if (schedule.total_iters == schedule.t) return log;  // no-op run

  Sgd opt(freeze_non_bn ? model.bn_parameters() : model.parameters(), lr);
  Rng shuffle_rng = Rng::stream(seed, "shuffle/adapt");

  std::vector<std::size_t> order(target.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle_rng.shuffle(order);
  std::size_t cursor = 0;

  while (schedule.t < schedule.total_iters) {
    if (cursor + batch_size > order.size()) {
      shuffle_rng.shuffle(order);
      cursor = 0;
    }
    std::span<const std::size_t> idx(order.data() + cursor, batch_size);
    cursor += batch_size;
    Tensor x = target.batch_images(idx);
    log.push_back(adapt_step(model, x, schedule, flags, opt));
  }
  return log;
}

}  // namespace bnadapt
