#include <doctest.h>

#include <cmath>

#include "bnadapt/common.hpp"
#include "bnadapt/tensor.hpp"
#include "test_support.hpp"

using namespace bnadapt;
using testsup::grad_check;
using testsup::random_tensor;

TEST_CASE("elementwise add") {
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor y = Tensor::from_data({2, 2}, {10, 20, 30, 40});
  Tensor z = add(x, y);
  CHECK(z.shape() == Shape{2, 2});
  CHECK(z.values() == std::vector<Real>{11, 22, 33, 44});
}

TEST_CASE("add shape mismatch names offending extents") {
  Tensor x = Tensor::zeros({2, 2});
  Tensor y = Tensor::zeros({3, 2});
  CHECK_THROWS_WITH_AS(add(x, y), doctest::Contains("(3,2)"), Error);
}

TEST_CASE("mean_all of ones") {
  Tensor x = Tensor::full({4}, 1.0);
  CHECK(mean_all(x).item() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("backward of sum gives ones") {
  Tensor x = Tensor::from_data({3}, {5, -1, 2});
  Tape tape;
  Tensor loss = sum_all(x);
  tape.backward(loss);
  CHECK(x.grad() == std::vector<Real>{1, 1, 1});
}

TEST_CASE("backward of mean of squares") {
  // d/dx mean(x^2) = 2x / n = x for n = 2
  Tensor x = Tensor::from_data({2}, {1, 2});
  {
    Tape tape;
    Tensor loss = mean_all(mul(x, x));
    tape.backward(loss);
  }
  CHECK(x.grad()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(x.grad()[1] == doctest::Approx(2.0).epsilon(1e-12));

  auto res = grad_check([](const Tensor& t) { return mean_all(mul(t, t)); }, x);
  CHECK_MESSAGE(res.ok, res.where);
}

TEST_CASE("tensor unused by the loss keeps zero gradient") {
  Tensor x = Tensor::from_data({2}, {1, 2});
  Tensor unused = Tensor::from_data({2}, {3, 4});
  Tape tape;
  Tensor loss = sum_all(x);
  tape.backward(loss);
  CHECK(unused.grad() == std::vector<Real>{0, 0});
}

TEST_CASE("non-scalar loss rejected") {
  Tensor x = Tensor::from_data({2}, {1, 2});
  Tape tape;
  Tensor y = add(x, x);
  CHECK_THROWS_AS(tape.backward(y), Error);
}

TEST_CASE("backward on empty graph rejected") {
  Tensor x = Tensor::scalar(1.0);
  Tape tape;
  CHECK_THROWS_AS(tape.backward(x), Error);
}

TEST_CASE("gradient accumulation is linear across backward passes") {
  Rng rng(42);
  Tensor x = random_tensor({3, 4}, rng);

  // two separate losses, accumulated
  x.zero_grad();
  {
    Tape t1;
    t1.backward(sum_all(mul(x, x)));
  }
  {
    Tape t2;
    t2.backward(mean_all(exp(x)));
  }
  const std::vector<Real> accumulated = x.grad();

  // the sum of both losses in one graph
  x.zero_grad();
  {
    Tape t3;
    t3.backward(add(sum_all(mul(x, x)), mean_all(exp(x))));
  }
  const std::vector<Real>& joint = x.grad();
  for (std::size_t i = 0; i < joint.size(); ++i) {
    CHECK(accumulated[i] == doctest::Approx(joint[i]).epsilon(1e-12));
  }
}

TEST_CASE("seeded graph construction and backward are bit-deterministic") {
  auto run = [] {
    Rng rng(7);
    Tensor x = random_tensor({2, 3, 3, 4}, rng);
    Tensor w = random_tensor({3, 3, 4, 2}, rng, -0.5, 0.5);
    Tensor b = random_tensor({2}, rng, -0.5, 0.5);
    Tape tape;
    Tensor loss = mean_all(relu(conv2d(x, w, b, 1)));
    tape.backward(loss);
    return std::make_pair(x.grad(), w.grad());
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);    // bit-identical
  CHECK(a.second == b.second);
}

TEST_CASE("finite_diff_grad basics") {
  Tensor x = Tensor::from_data({2}, {0.3, -1.2});
  Tensor g = finite_diff_grad([](const Tensor& t) { return sum_all(t).item(); }, x, 1e-5);
  CHECK(g.values()[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(g.values()[1] == doctest::Approx(1.0).epsilon(1e-8));

  Tensor x3 = Tensor::from_data({1}, {3.0});
  Tensor g3 = finite_diff_grad([](const Tensor& t) { return mul(t, t).values()[0]; }, x3, 1e-5);
  CHECK(std::fabs(g3.values()[0] - 6.0) < 1e-6);

  Tensor gc = finite_diff_grad([](const Tensor&) { return 2.5; }, x, 1e-4);
  CHECK(gc.values() == std::vector<Real>{0, 0});

  CHECK_THROWS_AS(finite_diff_grad([](const Tensor& t) { return sum_all(t).item(); }, x, 0.0),
                  Error);
}

// --- per-primitive gradient checks vs central differences -------------------

namespace {

Tensor rand_probe(const Shape& s, Rng& rng) {
  // random linear functional turns any op output into a scalar loss
  return testsup::random_tensor(s, rng, -1.0, 1.0);
}

}  // namespace

TEST_CASE("gradcheck: binary ops in all broadcast modes") {
  Rng rng(1001);
  const Shape xs{2, 3, 2, 4};

  for (int mode = 0; mode < 3; ++mode) {
    Shape bs = mode == 0 ? xs : (mode == 1 ? Shape{4} : Shape{});
    CAPTURE(mode);

    Tensor b_add = random_tensor(bs, rng);
    Tensor probe = rand_probe(xs, rng);
    auto resa = grad_check(
        [&](const Tensor& t) { return sum_all(mul(add(t, b_add), probe)); },
        random_tensor(xs, rng));
    CHECK_MESSAGE(resa.ok, "add lhs: " << resa.where);
    Tensor a_fixed = random_tensor(xs, rng);
    auto resb = grad_check(
        [&](const Tensor& t) { return sum_all(mul(add(a_fixed, t), probe)); },
        random_tensor(bs, rng));
    CHECK_MESSAGE(resb.ok, "add rhs: " << resb.where);

    auto ress = grad_check(
        [&](const Tensor& t) { return sum_all(mul(sub(t, b_add), probe)); },
        random_tensor(xs, rng));
    CHECK_MESSAGE(ress.ok, "sub lhs: " << ress.where);
    auto ress2 = grad_check(
        [&](const Tensor& t) { return sum_all(mul(sub(a_fixed, t), probe)); },
        random_tensor(bs, rng));
    CHECK_MESSAGE(ress2.ok, "sub rhs: " << ress2.where);

    auto resm = grad_check(
        [&](const Tensor& t) { return sum_all(mul(mul(t, b_add), probe)); },
        random_tensor(xs, rng));
    CHECK_MESSAGE(resm.ok, "mul lhs: " << resm.where);
    auto resm2 = grad_check(
        [&](const Tensor& t) { return sum_all(mul(mul(a_fixed, t), probe)); },
        random_tensor(bs, rng));
    CHECK_MESSAGE(resm2.ok, "mul rhs: " << resm2.where);

    // divisor bounded away from zero
    Tensor denom = random_tensor(bs, rng, 0.5, 2.0);
    auto resd = grad_check(
        [&](const Tensor& t) { return sum_all(mul(div(t, denom), probe)); },
        random_tensor(xs, rng));
    CHECK_MESSAGE(resd.ok, "div lhs: " << resd.where);
    auto resd2 = grad_check(
        [&](const Tensor& t) { return sum_all(mul(div(a_fixed, t), probe)); },
        random_tensor(bs, rng, 0.5, 2.0));
    CHECK_MESSAGE(resd2.ok, "div rhs: " << resd2.where);
  }
}

TEST_CASE("gradcheck: unary ops") {
  Rng rng(1002);
  const Shape s{3, 5};
  Tensor probe = rand_probe(s, rng);

  auto scl = grad_check(
      [&](const Tensor& t) { return sum_all(mul(scale(t, -1.7), probe)); },
      random_tensor(s, rng));
  CHECK_MESSAGE(scl.ok, "scale: " << scl.where);

  auto sq = grad_check(
      [&](const Tensor& t) { return sum_all(mul(sqrt(t), probe)); },
      random_tensor(s, rng, 0.1, 2.0));
  CHECK_MESSAGE(sq.ok, "sqrt: " << sq.where);

  auto lg = grad_check(
      [&](const Tensor& t) { return sum_all(mul(log(t), probe)); },
      random_tensor(s, rng, 0.1, 2.0));
  CHECK_MESSAGE(lg.ok, "log: " << lg.where);

  auto ex = grad_check(
      [&](const Tensor& t) { return sum_all(mul(exp(t), probe)); },
      random_tensor(s, rng));
  CHECK_MESSAGE(ex.ok, "exp: " << ex.where);

  // keep samples away from the |x| and relu kinks
  auto mk_away = [&](double low, double high) {
    Tensor t = random_tensor(s, rng, low, high);
    for (auto& v : t.values()) {
      if (std::fabs(v) < 0.05) v = v < 0 ? v - 0.05 : v + 0.05;
    }
    return t;
  };
  auto ab = grad_check(
      [&](const Tensor& t) { return sum_all(mul(abs(t), probe)); }, mk_away(-2.0, 2.0));
  CHECK_MESSAGE(ab.ok, "abs: " << ab.where);

  auto rl = grad_check(
      [&](const Tensor& t) { return sum_all(mul(relu(t), probe)); }, mk_away(-2.0, 2.0));
  CHECK_MESSAGE(rl.ok, "relu: " << rl.where);
}

TEST_CASE("abs gradient at the kink is zero") {
  Tensor x = Tensor::from_data({3}, {-1.0, 0.0, 2.0});
  Tape tape;
  tape.backward(sum_all(abs(x)));
  CHECK(x.grad() == std::vector<Real>{-1.0, 0.0, 1.0});
}

TEST_CASE("gradcheck: channel reductions") {
  Rng rng(1003);
  const Shape s{2, 3, 2, 5};
  Tensor probe = rand_probe({5}, rng);

  auto cm = grad_check(
      [&](const Tensor& t) { return sum_all(mul(channel_mean(t), probe)); },
      random_tensor(s, rng));
  CHECK_MESSAGE(cm.ok, "channel_mean: " << cm.where);

  auto cv = grad_check(
      [&](const Tensor& t) { return sum_all(mul(channel_var(t), probe)); },
      random_tensor(s, rng));
  CHECK_MESSAGE(cv.ok, "channel_var: " << cv.where);
}

TEST_CASE("channel reductions: values") {
  Tensor x = Tensor::from_data({2, 2}, {1, 10, 3, 30});
  Tensor m = channel_mean(x);
  CHECK(m.values()[0] == doctest::Approx(2.0));
  CHECK(m.values()[1] == doctest::Approx(20.0));
  Tensor v = channel_var(x);
  CHECK(v.values()[0] == doctest::Approx(1.0));    // population variance
  CHECK(v.values()[1] == doctest::Approx(100.0));
}

TEST_CASE("gradcheck: conv2d stride 1 and 2, both ends") {
  Rng rng(1004);
  Tensor x = random_tensor({2, 5, 6, 3}, rng);
  Tensor w = random_tensor({3, 3, 3, 4}, rng, -0.7, 0.7);
  Tensor b = random_tensor({4}, rng, -0.5, 0.5);

  for (int stride : {1, 2}) {
    CAPTURE(stride);
    const Shape os = conv2d(x, w, b, stride).shape();
    Tensor probe = rand_probe(os, rng);

    auto rx = grad_check(
        [&](const Tensor& t) { return sum_all(mul(conv2d(t, w, b, stride), probe)); }, x);
    CHECK_MESSAGE(rx.ok, "conv2d wrt x: " << rx.where);
    auto rw = grad_check(
        [&](const Tensor& t) { return sum_all(mul(conv2d(x, t, b, stride), probe)); }, w);
    CHECK_MESSAGE(rw.ok, "conv2d wrt w: " << rw.where);
    auto rb = grad_check(
        [&](const Tensor& t) { return sum_all(mul(conv2d(x, w, t, stride), probe)); }, b);
    CHECK_MESSAGE(rb.ok, "conv2d wrt b: " << rb.where);
  }

  // 1x1 kernel
  Tensor w1 = random_tensor({1, 1, 3, 2}, rng);
  Tensor b1 = random_tensor({2}, rng);
  Tensor probe1 = rand_probe({2, 5, 6, 2}, rng);
  auto r1 = grad_check(
      [&](const Tensor& t) { return sum_all(mul(conv2d(x, t, b1, 1), probe1)); }, w1);
  CHECK_MESSAGE(r1.ok, "conv2d 1x1 wrt w: " << r1.where);
}

TEST_CASE("conv2d: identity kernel reproduces input; channel mismatch rejected") {
  Rng rng(1005);
  Tensor x = random_tensor({1, 4, 4, 1}, rng);
  Tensor w = Tensor::zeros({3, 3, 1, 1});
  w.values()[(1 * 3 + 1) * 1 * 1] = 1.0;  // center tap
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, w, b, 1);
  CHECK(y.values() == x.values());

  Tensor wbad = Tensor::zeros({3, 3, 2, 1});
  CHECK_THROWS_AS(conv2d(x, wbad, b, 1), Error);
}

TEST_CASE("gradcheck: upsample2x and softmax_channels") {
  Rng rng(1006);
  Tensor x = random_tensor({2, 3, 3, 2}, rng);
  Tensor probe = rand_probe({2, 6, 6, 2}, rng);
  auto ru = grad_check(
      [&](const Tensor& t) { return sum_all(mul(upsample2x(t), probe)); }, x);
  CHECK_MESSAGE(ru.ok, "upsample2x: " << ru.where);

  Tensor z = random_tensor({2, 2, 2, 4}, rng);
  Tensor probe2 = rand_probe({2, 2, 2, 4}, rng);
  auto rs = grad_check(
      [&](const Tensor& t) { return sum_all(mul(softmax_channels(t), probe2)); }, z);
  CHECK_MESSAGE(rs.ok, "softmax_channels: " << rs.where);
}

TEST_CASE("upsample2x values") {
  Tensor x = Tensor::from_data({1, 1, 2, 1}, {3, 7});
  Tensor y = upsample2x(x);
  CHECK(y.shape() == Shape{1, 2, 4, 1});
  CHECK(y.values() == std::vector<Real>{3, 3, 7, 7, 3, 3, 7, 7});
}

TEST_CASE("softmax of uniform logits and normalization property") {
  Tensor z = Tensor::zeros({1, 1, 1, 4});
  Tensor p = softmax_channels(z);
  for (Real v : p.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  Rng rng(1007);
  Tensor z2 = random_tensor({3, 4, 4, 5}, rng, -8.0, 8.0);
  Tensor p2 = softmax_channels(z2);
  const auto& v = p2.values();
  for (std::size_t px = 0; px < p2.size() / 5; ++px) {
    double s = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
      s += v[px * 5 + k];
      CHECK(v[px * 5 + k] > 0.0);
      CHECK(v[px * 5 + k] < 1.0);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("sqrt and log reject out-of-domain input") {
  CHECK_THROWS_AS(sqrt(Tensor::from_data({1}, {-0.5})), Error);
  CHECK_THROWS_AS(log(Tensor::from_data({1}, {0.0})), Error);
}
