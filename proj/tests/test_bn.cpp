#include <doctest.h>

#include <cmath>

#include "bnadapt/bn.hpp"
#include "bnadapt/common.hpp"
#include "test_support.hpp"

using namespace bnadapt;
using testsup::random_tensor;

namespace {

// x with B*H*W = n per channel, channels c
Tensor make_input(std::size_t n, std::size_t c, Rng& rng, double lo = -2.0, double hi = 2.0) {
  return testsup::random_tensor({1, n, 1, c}, rng, lo, hi);
}

}  // namespace

TEST_CASE("TrainSource: constant-per-channel batch maps to beta") {
  BatchNorm bn(3);
  bn.stats().gamma.values() = {2.0, -1.0, 0.5};
  bn.stats().beta.values() = {0.5, 0.5, 0.5};
  std::vector<Real> data;
  for (int i = 0; i < 4; ++i) {
    data.push_back(7.0);
    data.push_back(-3.0);
    data.push_back(0.25);
  }
  Tensor x = Tensor::from_data({1, 4, 1, 3}, std::move(data));
  Tensor y = bn.forward(x, BNMode::train_source());
  for (Real v : y.values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("TrainSource: hand case {0,2}, gamma=2, beta=1") {
  BatchNorm bn(1, 1e-5);
  bn.stats().gamma.values() = {2.0};
  bn.stats().beta.values() = {1.0};
  Tensor x = Tensor::from_data({1, 2, 1, 1}, {0.0, 2.0});
  Tensor y = bn.forward(x, BNMode::train_source());
  CHECK(std::fabs(y.values()[0] - (-1.0)) < 1e-4);
  CHECK(std::fabs(y.values()[1] - 3.0) < 1e-4);
  // running stats moved toward the batch (eta = 0.1 default)
  CHECK(bn.stats().running_mean[0] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(bn.stats().running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0).epsilon(1e-12));
}

TEST_CASE("TrainSource: already standardized input passes through") {
  BatchNorm bn(2, 1e-5);
  // mean 0, population variance 1 per channel
  Tensor x = Tensor::from_data({1, 2, 1, 2}, {1.0, -1.0, -1.0, 1.0});
  Tensor y = bn.forward(x, BNMode::train_source());
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::fabs(y.values()[i] - x.values()[i]) < 1e-4);
  }
}

TEST_CASE("TrainSource: pre-affine activations are standardized") {
  Rng rng(21);
  BatchNorm bn(4, 1e-5);  // gamma=1, beta=0 by construction
  Tensor x = make_input(512, 4, rng, -3.0, 5.0);
  Tensor y = bn.forward(x, BNMode::train_source());

  const std::size_t c = 4, n = y.size() / c;
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0;
    for (std::size_t i = ch; i < y.size(); i += c) mean += y.values()[i];
    mean /= static_cast<double>(n);
    CHECK(std::fabs(mean) < 1e-6);

    double var = 0.0;
    for (std::size_t i = ch; i < y.size(); i += c) {
      var += (y.values()[i] - mean) * (y.values()[i] - mean);
    }
    var /= static_cast<double>(n);
    // population variance is sigma^2/(sigma^2+eps), ~1 when sigma^2 >> eps
    CHECK(std::fabs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("update_running_source hand cases and validation") {
  BNChannelStats s(1);
  s.running_mean = {0.0};
  s.running_var = {1.0};
  update_running_source(s, {1.0}, {1.0}, 0.1);
  CHECK(s.running_mean[0] == doctest::Approx(0.1).epsilon(1e-15));

  BNChannelStats s0(2);
  s0.running_mean = {3.0, -1.0};
  s0.running_var = {2.0, 0.5};
  const auto before_m = s0.running_mean;
  const auto before_v = s0.running_var;
  update_running_source(s0, {9.0, 9.0}, {9.0, 9.0}, 0.0);
  CHECK(s0.running_mean == before_m);  // eta = 0: unchanged
  CHECK(s0.running_var == before_v);

  update_running_source(s0, {9.0, 8.0}, {7.0, 6.0}, 1.0);
  CHECK(s0.running_mean == std::vector<Real>{9.0, 8.0});  // eta = 1: replaced
  CHECK(s0.running_var == std::vector<Real>{7.0, 6.0});

  CHECK_THROWS_AS(update_running_source(s0, {0.0, 0.0}, {0.0, 0.0}, 1.5), Error);
  CHECK_THROWS_AS(update_running_source(s0, {0.0, 0.0}, {-0.1, 0.0}, 0.5), Error);
}

TEST_CASE("emd_momentum") {
  CHECK(emd_momentum(0, 0.9, 1.0) == 0.9);
  CHECK(emd_momentum(1, 0.9, 1.0) == doctest::Approx(0.9 * std::exp(-1.0)).epsilon(1e-15));
  CHECK(std::fabs(emd_momentum(1, 0.9, 1.0) - 0.3311) < 1e-4);
  CHECK(emd_momentum(50, 0.9, 1.0) < 1e-20);
  CHECK(emd_momentum(2, 0.8, 2.0) == doctest::Approx(0.8 * std::exp(-1.0)).epsilon(1e-15));
  CHECK_THROWS_AS(emd_momentum(1, 0.9, 0.0), Error);
  CHECK_THROWS_AS(emd_momentum(1, 0.9, -1.0), Error);
  CHECK_THROWS_AS(emd_momentum(1, 1.5, 1.0), Error);
}

TEST_CASE("freeze_source: copy semantics, immutability, double freeze") {
  Rng rng(22);
  BatchNorm bn(3);
  Tensor warm = make_input(64, 3, rng);
  bn.forward(warm, BNMode::train_source());

  freeze_source(bn.stats());
  CHECK(bn.stats().source_mean == bn.stats().running_mean);
  CHECK(bn.stats().source_var == bn.stats().running_var);
  CHECK(bn.stats().source_gamma == bn.stats().gamma.values());
  CHECK(bn.stats().source_beta == bn.stats().beta.values());

  const auto snap_m = bn.stats().source_mean;
  const auto snap_v = bn.stats().source_var;
  for (int t = 0; t < 100; ++t) {
    Tensor x = make_input(32, 3, rng);
    bn.forward(x, BNMode::adapt_target(emd_momentum(t, 0.9, 1.0)));
  }
  CHECK(bn.stats().source_mean == snap_m);  // bit-for-bit
  CHECK(bn.stats().source_var == snap_v);

  CHECK_THROWS_AS(freeze_source(bn.stats()), Error);
}

TEST_CASE("Eval is a pure function") {
  Rng rng(23);
  BatchNorm bn(4);
  bn.stats().running_mean = {0.5, -0.5, 1.0, 0.0};
  bn.stats().running_var = {1.0, 2.0, 0.5, 3.0};
  const auto m0 = bn.stats().running_mean;
  const auto v0 = bn.stats().running_var;

  Tensor x = make_input(32, 4, rng);
  Tensor y1 = bn.forward(x, BNMode::eval());
  Tensor y2 = bn.forward(x, BNMode::eval());
  CHECK(y1.values() == y2.values());  // bit-identical
  CHECK(bn.stats().running_mean == m0);
  CHECK(bn.stats().running_var == v0);
}

TEST_CASE("Eq.3 blend is a convex combination") {
  Rng rng(24);
  for (int trial = 0; trial < 20; ++trial) {
    BatchNorm bn(3);
    Tensor warm = make_input(64, 3, rng, -1.0, 4.0);
    bn.forward(warm, BNMode::train_source(0.5));
    freeze_source(bn.stats());

    Tensor x = make_input(48, 3, rng, -4.0, 1.0);
    const double eta = rng.uniform();
    bn.forward(x, BNMode::adapt_target(eta));

    for (std::size_t c = 0; c < 3; ++c) {
      const double bm = bn.last_batch_mean()[c];
      const double sm = bn.stats().source_mean[c];
      const double blended = bn.stats().running_mean[c];
      CHECK(blended >= std::min(bm, sm) - 1e-12);
      CHECK(blended <= std::max(bm, sm) + 1e-12);

      const double bv = bn.last_batch_var()[c];
      const double sv = bn.stats().source_var[c];
      const double blended_v = bn.stats().running_var[c];
      CHECK(blended_v >= std::min(bv, sv) - 1e-12);
      CHECK(blended_v <= std::max(bv, sv) + 1e-12);
      CHECK(blended_v >= 0.0);
    }
  }
}

TEST_CASE("AdaptTarget endpoints reproduce Eval / TrainSource bit-exactly") {
  Rng rng(25);

  // shared warmed-up, frozen layer state
  BatchNorm proto(5);
  proto.stats().gamma.values() = {1.5, -0.5, 2.0, 1.0, 0.1};
  proto.stats().beta.values() = {0.1, 0.2, -0.3, 0.0, 1.0};
  Tensor warm = make_input(128, 5, rng);
  proto.forward(warm, BNMode::train_source(0.3));
  freeze_source(proto.stats());

  Tensor x = make_input(64, 5, rng);

  // eta_t = 1: normalization by the source snapshot, exactly Eval
  {
    BatchNorm a = proto, b = proto;
    Tensor ya = a.forward(x, BNMode::adapt_target(1.0));
    Tensor yb = b.forward(x, BNMode::eval());
    CHECK(ya.values() == yb.values());
  }
  // eta_t = 0: normalization by the batch statistics, exactly TrainSource
  {
    BatchNorm a = proto, b = proto;
    Tensor ya = a.forward(x, BNMode::adapt_target(0.0));
    Tensor yb = b.forward(x, BNMode::train_source(0.1));
    CHECK(ya.values() == yb.values());
  }
}

TEST_CASE("AdaptTarget requires a frozen snapshot; stats modes need N >= 2") {
  Rng rng(26);
  BatchNorm bn(2);
  Tensor x = make_input(16, 2, rng);
  CHECK_THROWS_AS(bn.forward(x, BNMode::adapt_target(0.5)), Error);

  Tensor tiny = Tensor::from_data({1, 1, 1, 2}, {1.0, 2.0});
  CHECK_THROWS_AS(bn.forward(tiny, BNMode::train_source()), Error);

  CHECK_THROWS_AS(BatchNorm(2, 0.0), Error);
  CHECK_THROWS_AS(BatchNorm(2, -1e-5), Error);
  CHECK_THROWS_AS(BNMode::adapt_target(1.5), Error);
}

TEST_CASE("gradients flow through batch statistics in TrainSource and AdaptTarget") {
  Rng rng(27);

  // loss must be invariant to input shifts through the mean path: check the
  // full BN jacobian against finite differences
  for (bool adapt : {false, true}) {
    CAPTURE(adapt);
    BatchNorm proto(3);
    proto.stats().gamma.values() = {1.2, 0.7, -0.9};
    proto.stats().beta.values() = {0.3, -0.1, 0.0};
    Tensor warm = make_input(64, 3, rng);
    proto.forward(warm, BNMode::train_source(0.4));
    freeze_source(proto.stats());

    Tensor x = make_input(12, 3, rng);
    Tensor probe = testsup::random_tensor({1, 12, 1, 3}, rng, -1.0, 1.0);
    auto res = testsup::grad_check(
        [&](const Tensor& t) {
          BatchNorm layer = proto;  // forward mutates running stats
          const BNMode mode = adapt ? BNMode::adapt_target(0.35) : BNMode::train_source(0.1);
          return sum_all(mul(layer.forward(t, mode), probe));
        },
        x);
    CHECK_MESSAGE(res.ok, res.where);
  }
}

TEST_CASE("relu values") {
  Tensor x = Tensor::from_data({3}, {-1.0, 0.0, 2.0});
  CHECK(relu(x).values() == std::vector<Real>{0.0, 0.0, 2.0});
}
