#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "sclld/autodiff.hpp"
#include "sclld/error.hpp"

using namespace sclld;
namespace ad = sclld::ad;

namespace {

Tensor random_tensor(Shape dims, std::mt19937_64& rng) {
  Rng r(rng());
  return Tensor::randn(std::move(dims), 1.0, r);
}

}  // namespace

TEST_SUITE("tensor_autodiff") {

TEST_CASE("tensor shape checks") {
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), Error);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>(3)), Error);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.reshaped({3, 2}).dims() == Shape{3, 2});
  CHECK_THROWS_AS(t.reshaped({4, 2}), Error);
  CHECK(shape_to_string({2, 3}) == "2x3");
}

TEST_CASE("conv2d with a delta kernel is the identity") {
  std::mt19937_64 rng(1);
  Tape tape;
  Tensor k({1, 1, 3, 3});
  k[4] = 1.0;
  const Tensor x = random_tensor({1, 7, 5}, rng);
  auto y = ad::conv2d(tape.constant(x), tape.constant(k), tape.constant(Tensor({1})), 1);
  CHECK(y.dims() == x.dims());
  CHECK(max_abs_diff(y.value().data(), x.data()) == 0.0);
}

TEST_CASE("conv2d with an all-ones kernel sums nine equal pixels") {
  Tape tape;
  const double c = 0.37;
  auto y = ad::conv2d(tape.constant(Tensor({1, 6, 6}, c)), tape.constant(Tensor({1, 1, 3, 3}, 1.0)), 1);
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t j = 1; j < 5; ++j) CHECK(y.value()[i * 6 + j] == doctest::Approx(9 * c).epsilon(1e-15));
  CHECK(y.value()[0] == doctest::Approx(4 * c));  // corner sees four pixels
}

TEST_CASE("conv2d matches the direct oracle on a 1x4x4 input") {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({1, 1, 4, 4}, rng);
  const Tensor k = random_tensor({1, 1, 3, 3}, rng);
  Tape tape;
  auto y = ad::conv2d(tape.constant(x), tape.constant(k), 1);
  const Tensor expect = oracle::conv2d(x, k, {}, 1);
  CHECK(max_abs_diff(y.value().data(), expect.data()) < 1e-12);
}

TEST_CASE("conv2d output extents round up for stride 2") {
  Tape tape;
  auto y = ad::conv2d(tape.constant(Tensor({1, 1, 25, 25})), tape.constant(Tensor({4, 1, 3, 3})), 2);
  CHECK(y.dims() == (Shape{1, 4, 13, 13}));
  CHECK_THROWS_AS(ad::conv2d(tape.constant(Tensor({2, 5, 5})), tape.constant(Tensor({4, 1, 3, 3})), 1),
                  Error);
  CHECK_THROWS_AS(ad::conv2d(tape.constant(Tensor({1, 5, 5})), tape.constant(Tensor({4, 1, 3, 3})), 3),
                  Error);
}

TEST_CASE("conv2d_transpose of a centred impulse reproduces the kernel") {
  std::mt19937_64 rng(3);
  const Tensor k = random_tensor({1, 1, 3, 3}, rng);
  Tensor x({1, 3, 3});
  x[4] = 1.0;
  Tape tape;
  auto y = ad::conv2d_transpose(tape.constant(x), tape.constant(k), 1);
  CHECK(max_abs_diff(y.value().data(), k.data()) == 0.0);
}

TEST_CASE("conv2d_transpose on a single pixel keeps the centre tap") {
  Tensor k({1, 1, 3, 3});
  std::iota(k.data().begin(), k.data().end(), 1.0);
  Tape tape;
  auto y = ad::conv2d_transpose(tape.constant(Tensor({1, 1, 1}, 1.0)), tape.constant(k), 1);
  CHECK(y.dims() == Shape{1, 1, 1});
  CHECK(y.value()[0] == 5.0);
}

TEST_CASE("conv2d_transpose doubles 25x25 to 50x50") {
  Tape tape;
  auto y = ad::conv2d_transpose(tape.constant(Tensor({2, 64, 25, 25})),
                                tape.constant(Tensor({64, 32, 3, 3})), 2);
  CHECK(y.dims() == Shape{2, 32, 50, 50});
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
  std::mt19937_64 rng(4);
  for (std::size_t stride : {1u, 2u}) {
    const Tensor k = random_tensor({3, 2, 3, 3}, rng);  // conv: 2 -> 3 channels
    const Tensor x = random_tensor({2, 2, 6, 5}, rng);
    Tape tape;
    auto cx = ad::conv2d(tape.constant(x), tape.constant(k), stride);
    const Tensor y = random_tensor(cx.dims(), rng);
    auto ty = ad::conv2d_transpose(tape.constant(y), tape.constant(k), stride);
    // Odd extents come back one pixel larger; the extra column lies in padding.
    const auto& t = ty.value();
    double rhs = 0.0;
    const std::size_t th = t.dim(2), tw = t.dim(3);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 6; ++i)
          for (std::size_t j = 0; j < 5; ++j)
            rhs += x[((n * 2 + c) * 6 + i) * 5 + j] * t[((n * 2 + c) * th + i) * tw + j];
    CHECK(dot(cx.value().data(), y.data()) == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("dense layer") {
  std::mt19937_64 rng(5);
  Tape tape;
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  const Tensor x = random_tensor({3}, rng);
  auto y = ad::dense(tape.constant(x), tape.constant(eye), tape.constant(Tensor({3})));
  CHECK(y.value() == x);

  const Tensor b = random_tensor({3}, rng);
  auto z = ad::dense(tape.constant(x), tape.constant(Tensor({3, 3})), tape.constant(b));
  CHECK(z.value() == b);

  const Tensor w = random_tensor({3, 5}, rng);
  const Tensor in = random_tensor({5}, rng);
  auto m = ad::dense(tape.constant(in), tape.constant(w), tape.constant(b));
  const auto expect = oracle::matvec(w.values(), 3, 5, in.values(), b.values());
  CHECK(max_abs_diff(m.value().data(), expect) < 1e-12);

  CHECK_THROWS_AS(ad::dense(tape.constant(Tensor({4})), tape.constant(w), tape.constant(b)), Error);
}

TEST_CASE("leaky_relu values and slope at zero") {
  Tape tape;
  auto x = tape.variable(Tensor({3}, std::vector<double>{5.0, -2.0, 0.0}));
  auto y = ad::leaky_relu(x, 0.01);
  CHECK(y.value()[0] == 5.0);
  CHECK(y.value()[1] == doctest::Approx(-0.02).epsilon(1e-15));
  CHECK(y.value()[2] == 0.0);
  tape.backward(ad::mean(y));
  CHECK(x.grad()[2] == doctest::Approx(0.01 / 3.0));
  CHECK_THROWS_AS(ad::leaky_relu(x, 1.0), Error);
}

TEST_CASE("sigmoid values, saturation and symmetry") {
  std::mt19937_64 rng(6);
  Tape tape;
  auto s = ad::sigmoid(tape.constant(Tensor({2}, std::vector<double>{0.0, 50.0})));
  CHECK(s.value()[0] == 0.5);
  CHECK(std::abs(s.value()[1] - 1.0) < 1e-9);
  const Tensor x = random_tensor({100}, rng);
  auto a = ad::sigmoid(tape.constant(x));
  auto b = ad::sigmoid(ad::scale(tape.constant(x), -1.0));
  for (std::size_t i = 0; i < 100; ++i) CHECK(a.value()[i] + b.value()[i] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("sigmoid derivative at zero is a quarter") {
  Tape tape;
  auto x = tape.variable(Tensor::scalar(0.0));
  tape.backward(ad::sigmoid(x));
  CHECK(x.grad()[0] == 0.25);
}

TEST_CASE("dropout") {
  Rng rng(7);
  Tape tape;
  const Tensor ones({100000}, 1.0);
  auto x = tape.constant(ones);
  CHECK(ad::dropout(x, 0.0, Mode::Train, rng).value() == ones);
  CHECK(ad::dropout(x, 0.0, Mode::Eval, rng).value() == ones);
  CHECK(ad::dropout(x, 0.5, Mode::Eval, rng).value() == ones);
  const auto& d = ad::dropout(x, 0.5, Mode::Train, rng).value();
  const double mean = std::accumulate(d.data().begin(), d.data().end(), 0.0) / 1e5;
  CHECK(std::abs(mean - 1.0) < 0.02);
  CHECK(std::all_of(d.data().begin(), d.data().end(), [](double v) { return v == 0.0 || v == 2.0; }));
  CHECK_THROWS_AS(ad::dropout(x, 1.0, Mode::Train, rng), Error);
}

TEST_CASE("bce loss clamps and averages") {
  Tape tape;
  auto one = ad::bce_loss(tape.constant(Tensor::scalar(1.0)), Tensor::scalar(1.0));
  CHECK(one.value()[0] <= 1e-6);
  auto half = ad::bce_loss(tape.constant(Tensor::scalar(0.5)), Tensor::scalar(1.0));
  CHECK(half.value()[0] == doctest::Approx(0.693147).epsilon(1e-6));
  auto zero = ad::bce_loss(tape.constant(Tensor::scalar(0.0)), Tensor::scalar(1.0));
  CHECK(std::isfinite(zero.value()[0]));
  CHECK(zero.value()[0] == doctest::Approx(-std::log(ad::kBceEpsilon)));
  auto mixed = ad::bce_loss(tape.constant(Tensor({2}, std::vector<double>{0.8, 0.3})),
                            Tensor({2}, std::vector<double>{1.0, 0.0}));
  CHECK(mixed.value()[0] == doctest::Approx(-(std::log(0.8) + std::log(0.7)) / 2));
  CHECK_THROWS_AS(ad::bce_loss(tape.constant(Tensor({2})), Tensor({3})), Error);
}

TEST_CASE("backward rejects foreign or non-scalar losses") {
  Tape a, b;
  auto x = a.variable(Tensor({2}, 1.0));
  CHECK_THROWS_AS(b.backward(x), Error);
  CHECK_THROWS_AS(a.backward(x), Error);
}

TEST_CASE("a constant loss leaves every gradient at zero") {
  Parameter p("w", Tensor({2}, 3.0));
  Tape tape;
  auto w = tape.parameter(p);
  auto c = tape.constant(Tensor::scalar(4.0));
  tape.backward(c);
  CHECK(w.grad() == Tensor({2}));
  CHECK(p.grad == Tensor({2}));
}

TEST_CASE("parameter gradients accumulate across backward calls") {
  Parameter p("w", Tensor::scalar(0.0));
  for (int call = 1; call <= 3; ++call) {
    Tape tape;
    tape.backward(ad::sigmoid(tape.parameter(p)));
    CHECK(p.grad[0] == doctest::Approx(0.25 * call));
  }
  p.zero_grad();
  CHECK(p.grad[0] == 0.0);
}

TEST_CASE("two-layer dense net matches central differences") {
  std::mt19937_64 rng(8);
  Rng r(9);
  Parameter w1("w1", Tensor::randn({4, 3}, 0.7, r)), b1("b1", Tensor::randn({4}, 0.1, r));
  Parameter w2("w2", Tensor::randn({1, 4}, 0.7, r)), b2("b2", Tensor::randn({1}, 0.1, r));
  const Tensor x = random_tensor({3}, rng);
  auto loss = [&](bool backward) {
    Tape tape;
    auto h = ad::leaky_relu(ad::dense(tape.constant(x), tape.parameter(w1), tape.parameter(b1)), 0.01);
    auto out = ad::sigmoid(ad::dense(h, tape.parameter(w2), tape.parameter(b2)));
    auto l = ad::bce_loss(out, Tensor({1}, 1.0));
    if (backward) tape.backward(l);
    return l.value()[0];
  };
  loss(true);
  double worst = 0.0;
  for (Parameter* p : {&w1, &b1, &w2, &b2}) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double v = p->value[i];
      p->value[i] = v + 1e-4;
      const double up = loss(false);
      p->value[i] = v - 1e-4;
      const double down = loss(false);
      p->value[i] = v;
      worst = std::max(worst, oracle::relative_error(p->grad[i], (up - down) / 2e-4));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("random micro-nets match central differences") {
  std::mt19937_64 rng(10);
  for (int n = 0; n < 10; ++n) {
    auto net = oracle::random_micro_net(rng);
    const auto check = oracle::check_micro_gradients(net);
    if (check.kink_crossed) continue;
    CHECK(check.max_relative_error < 1e-4);
  }
}

TEST_CASE("add, scale, reshape and mean gradients") {
  Tape tape;
  auto a = tape.variable(Tensor({2, 2}, std::vector<double>{1, 2, 3, 4}));
  auto b = tape.variable(Tensor({2, 2}, 1.0));
  auto y = ad::mean(ad::reshape(ad::scale(ad::add(a, b), 2.0), {4}));
  CHECK(y.value()[0] == doctest::Approx(7.0));
  tape.backward(y);
  for (double g : a.grad().data()) CHECK(g == 0.5);
  for (double g : b.grad().data()) CHECK(g == 0.5);
  CHECK_THROWS_AS(ad::add(a, tape.constant(Tensor({3}))), Error);
}

TEST_CASE("adam first step follows the closed form") {
  Parameter p("w", Tensor::scalar(0.0));
  std::vector<Parameter*> params{&p};
  AdamState state(params, AdamConfig{});
  p.grad[0] = 1.0;
  adam_step(params, state);
  const double first = p.value[0];
  CHECK(first == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
  CHECK(state.step == 1);
  CHECK(p.grad[0] == 1.0);  // untouched
  adam_step(params, state);
  CHECK(std::abs((p.value[0] - first) - first) < 1e-6);
}

TEST_CASE("adam with zero gradient only advances the counter") {
  Parameter p("w", Tensor({3}, 2.0));
  std::vector<Parameter*> params{&p};
  AdamState state(params, AdamConfig{});
  adam_step(params, state);
  CHECK(p.value == Tensor({3}, 2.0));
  CHECK(state.step == 1);
  Parameter q("q", Tensor({4}));
  std::vector<Parameter*> other{&q};
  CHECK_THROWS_AS(adam_step(other, state), Error);
}

TEST_CASE("identical seeds give bit-identical results") {
  auto run = [] {
    std::mt19937_64 rng(11);
    auto net = oracle::random_micro_net(rng);
    Tape tape;
    auto f = oracle::run_micro(tape, net);
    tape.backward(f.loss);
    return std::pair{f.loss.value()[0], f.input.grad()};
  };
  CHECK(run() == run());
}

}  // TEST_SUITE
