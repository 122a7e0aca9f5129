#include <doctest.h>

#include <cmath>

#include "bnadapt/common.hpp"
#include "bnadapt/segnet.hpp"
#include "test_support.hpp"

using namespace bnadapt;
using testsup::random_tensor;

namespace {

Dataset tiny_dataset(std::size_t n, std::size_t hw, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.hw = hw;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.image.resize(hw * hw);
    for (auto& v : s.image) v = rng.uniform(0.0, 1.0);
    s.label.resize(hw * hw);
    for (auto& l : s.label) l = static_cast<std::uint8_t>(rng.below(4));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<std::vector<Real>> param_values(ToyUNet& m) {
  std::vector<std::vector<Real>> out;
  for (const auto& p : m.parameters()) out.push_back(p.values());
  return out;
}

}  // namespace

TEST_CASE("parameter count matches the architecture constant") {
  ToyUNet model(NetworkSpec{}, 1);

  // derived by hand from the block list: 3x3 convs (Cin->8, 8->16, 16->32,
  // 32->16, 16->8), 1x1 head (8->4), biases, and 2*(8+16+32+16+8) BN affines
  const std::size_t convs = (3 * 3 * 1 * 8 + 8) + (3 * 3 * 8 * 16 + 16) +
                            (3 * 3 * 16 * 32 + 32) + (3 * 3 * 32 * 16 + 16) +
                            (3 * 3 * 16 * 8 + 8) + (1 * 1 * 8 * 4 + 4);
  const std::size_t bn = 2 * 80;
  CHECK(model.parameter_count() == convs + bn);
  CHECK(model.parameter_count() == 11868);
  CHECK(model.bn_layers().size() == 5);
  CHECK(model.bn_channel_total() == 80);
}

TEST_CASE("forward emits per-pixel distributions") {
  Rng rng(51);
  ToyUNet model(NetworkSpec{}, 2);
  Tensor x = random_tensor({2, 64, 64, 1}, rng, 0.0, 1.0);
  Tensor probs = model.forward(x, BNMode::train_source());
  CHECK(probs.shape() == Shape{2, 64, 64, 4});
  const auto& v = probs.values();
  for (std::size_t p = 0; p < probs.size() / 4; ++p) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) s += v[p * 4 + k];
    CHECK(std::fabs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("B=1 works in Eval and in TrainSource at 64x64") {
  Rng rng(52);
  ToyUNet model(NetworkSpec{}, 3);
  Tensor x = random_tensor({1, 64, 64, 1}, rng, 0.0, 1.0);
  CHECK_NOTHROW(model.forward(x, BNMode::eval()));
  CHECK_NOTHROW(model.forward(x, BNMode::train_source()));  // B*H*W = 4096 >= 2
}

TEST_CASE("wrong spatial size is rejected") {
  Rng rng(53);
  ToyUNet model(NetworkSpec{}, 4);
  Tensor x = random_tensor({1, 32, 32, 1}, rng);
  CHECK_THROWS_AS(model.forward(x, BNMode::eval()), Error);
  Tensor x2 = random_tensor({1, 64, 64, 2}, rng);
  CHECK_THROWS_AS(model.forward(x2, BNMode::eval()), Error);
}

TEST_CASE("Eval output is invariant to batch composition") {
  Rng rng(54);
  ToyUNet model(NetworkSpec{8, 1, 4}, 5);
  // give the BN layers non-trivial running stats first
  model.forward(random_tensor({4, 8, 8, 1}, rng, 0.0, 1.0), BNMode::train_source(0.5));

  Tensor lone = random_tensor({1, 8, 8, 1}, rng, 0.0, 1.0);
  Tensor other = random_tensor({2, 8, 8, 1}, rng, 0.0, 1.0);
  std::vector<Real> joint_data = lone.values();
  joint_data.insert(joint_data.end(), other.values().begin(), other.values().end());
  Tensor joint = Tensor::from_data({3, 8, 8, 1}, std::move(joint_data));

  Tensor y_alone = model.forward(lone, BNMode::eval());
  Tensor y_joint = model.forward(joint, BNMode::eval());
  for (std::size_t i = 0; i < y_alone.size(); ++i) {
    CHECK(y_alone.values()[i] == y_joint.values()[i]);  // bit-identical
  }
}

TEST_CASE("cross_entropy_loss: value on a known distribution and gradcheck") {
  // two pixels, K=2: probs (0.8, 0.2) with label 0 and (0.25, 0.75) with label 1
  Tensor probs = Tensor::from_data({1, 2, 1, 2}, {0.8, 0.2, 0.25, 0.75});
  Tensor l = cross_entropy_loss(probs, {0, 1});
  const double expect = -0.5 * (std::log(0.8) + std::log(0.75));
  CHECK(l.item() == doctest::Approx(expect).epsilon(1e-9));

  CHECK_THROWS_AS(cross_entropy_loss(probs, {0, 3}), Error);  // label >= K
  CHECK_THROWS_AS(cross_entropy_loss(probs, {0}), Error);     // label count mismatch

  Rng rng(55);
  Tensor z = random_tensor({2, 3, 2, 4}, rng, -1.5, 1.5);
  std::vector<std::uint8_t> labels(12);
  for (auto& v : labels) v = static_cast<std::uint8_t>(rng.below(4));
  auto res = testsup::grad_check(
      [&](const Tensor& t) { return cross_entropy_loss(softmax_channels(t), labels); }, z);
  CHECK_MESSAGE(res.ok, res.where);
}

TEST_CASE("pretrain with epochs=0 freezes the initialization statistics") {
  Dataset ds = tiny_dataset(6, 8, 60);
  ToyUNet model(NetworkSpec{8, 1, 4}, 6);
  const auto before = param_values(model);

  const auto iters = pretrain_source(model, ds, 0, 1e-3, 2, 77);
  CHECK(iters == 0);
  CHECK(param_values(model) == before);
  for (BatchNorm* b : model.bn_layers()) {
    CHECK(b->stats().frozen);
    // init stats: mean 0, var 1
    for (std::size_t c = 0; c < b->channels(); ++c) {
      CHECK(b->stats().source_mean[c] == 0.0);
      CHECK(b->stats().source_var[c] == 1.0);
    }
  }
}

TEST_CASE("pretraining is bit-deterministic under a fixed seed") {
  Dataset ds = tiny_dataset(10, 8, 61);
  auto run = [&] {
    ToyUNet model(NetworkSpec{8, 1, 4}, 7);
    pretrain_source(model, ds, 2, 1e-2, 4, 88);
    return param_values(model);
  };
  CHECK(run() == run());
}

TEST_CASE("pretraining decreases the training loss on an easy task") {
  // images where the label is directly readable from intensity
  Rng rng(62);
  Dataset ds;
  ds.hw = 8;
  for (int i = 0; i < 12; ++i) {
    Sample s;
    s.image.resize(64);
    s.label.resize(64);
    for (int p = 0; p < 64; ++p) {
      const auto cls = static_cast<std::uint8_t>(rng.below(4));
      s.label[p] = cls;
      s.image[p] = 0.2 * cls + rng.uniform(0.0, 0.05);
    }
    ds.samples.push_back(std::move(s));
  }

  auto train_loss = [&](ToyUNet& m) {
    NoGradGuard ng;
    std::vector<std::size_t> all(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    Tensor probs = m.forward(ds.batch_images(all), BNMode::eval());
    return cross_entropy_loss(probs, ds.batch_labels(all)).item();
  };

  ToyUNet model(NetworkSpec{8, 1, 4}, 8);
  ToyUNet trained(NetworkSpec{8, 1, 4}, 8);
  pretrain_source(model, ds, 0, 0.05, 4, 90);
  pretrain_source(trained, ds, 30, 0.05, 4, 90);
  CHECK(train_loss(trained) < 0.75 * train_loss(model));
}

TEST_CASE("pretrain rejects an empty dataset and a double snapshot") {
  Dataset empty;
  empty.hw = 8;
  ToyUNet model(NetworkSpec{8, 1, 4}, 9);
  CHECK_THROWS_AS(pretrain_source(model, empty, 1, 1e-3, 2, 1), Error);

  Dataset ds = tiny_dataset(4, 8, 63);
  pretrain_source(model, ds, 0, 1e-3, 2, 1);
  CHECK_THROWS_AS(pretrain_source(model, ds, 1, 1e-3, 2, 1), Error);
}
