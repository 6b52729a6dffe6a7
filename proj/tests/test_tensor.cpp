#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "dmamba/tensor.hpp"
#include "support.hpp"

using namespace dmamba;
using testsup::grad_check;
using testsup::random_vec;

TEST_CASE("elementwise basics") {
  Tensor a({2}, {1, 2});
  Tensor b({2}, {3, 4});
  Tensor c = add(a, b);
  CHECK(c.value() == std::vector<double>{4, 6});

  Tensor x({3}, {-1.5, 0.25, 2.0});
  Tensor y = mul(x, Tensor::full({3}, 1.0));
  CHECK(y.value() == x.value());

  // silu at 0: value 0, derivative 1/2
  Tensor z = Tensor::param({1}, {0.0});
  {
    Tape tape;
    Tensor s = silu(z);
    CHECK(s.item() == 0.0);
    tape.backward(s);
    CHECK(z.grad()[0] == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("broadcasting rules") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row({3}, {10, 20, 30});
  Tensor s = add(a, row);
  CHECK(s.value() == std::vector<double>{11, 22, 33, 14, 25, 36});

  Tensor col({2, 1}, {100, 200});
  Tensor t = add(a, col);
  CHECK(t.value() == std::vector<double>{101, 102, 103, 204, 205, 206});

  Tensor bad({4}, {0, 0, 0, 0});
  CHECK_THROWS_WITH_AS(add(a, bad),
                       doctest::Contains("[2x3]"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(add(a, bad),
                       doctest::Contains("[4]"), std::invalid_argument);
}

TEST_CASE("matmul examples") {
  Tensor I({2, 2}, {1, 0, 0, 1});
  Tensor M({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(I, M).value() == M.value());

  Tensor r({1, 2}, {1, 2});
  Tensor c({2, 1}, {3, 4});
  CHECK(matmul(r, c).value() == std::vector<double>{11});

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})),
                  std::invalid_argument);
}

TEST_CASE("matmul gradient vs finite differences") {
  std::mt19937_64 rng(11);
  Tensor A = Tensor::param({3, 4}, random_vec(12, rng));
  Tensor B = Tensor::param({4, 2}, random_vec(8, rng));
  Tensor W({3, 2}, random_vec(6, rng));
  auto loss = [&]() { return sum(mul(matmul(A, B), W)); };
  auto rep = grad_check(loss, {{"A", A}, {"B", B}});
  CHECK(rep.max_rel < 1e-6);
}

TEST_CASE("batched matmul broadcasts leading dims") {
  std::mt19937_64 rng(12);
  Tensor A = Tensor::param({2, 3, 4}, random_vec(24, rng));
  Tensor B = Tensor::param({4, 5}, random_vec(20, rng));
  Tensor C = matmul(A, B);
  CHECK(C.shape() == Shape{2, 3, 5});
  // slice equality against per-batch 2-D products
  for (int b = 0; b < 2; ++b) {
    Tensor Ab = slice(A, 0, b, 1);
    Tensor Cb = matmul(reshape(Ab, {3, 4}), B);
    for (int i = 0; i < 15; ++i)
      CHECK(C.value()[b * 15 + i] == doctest::Approx(Cb.value()[i]).epsilon(1e-14));
  }
  Tensor W({2, 3, 5}, random_vec(30, rng));
  auto loss = [&]() { return sum(mul(matmul(A, B), W)); };
  auto rep = grad_check(loss, {{"A", A}, {"B", B}});
  CHECK(rep.max_rel < 1e-6);
}

TEST_CASE("layer_norm examples") {
  Tensor g = Tensor::full({4}, 1.0);
  Tensor b = Tensor::zeros({4});

  Tensor cst({1, 4}, {5, 5, 5, 5});
  Tensor out = layer_norm(cst, g, b, 1e-5);
  for (double v : out.value()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

  Tensor two({1, 2}, {1, 3});
  Tensor o2 = layer_norm(two, Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-12);
  CHECK(o2.value()[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(o2.value()[1] == doctest::Approx(1.0).epsilon(1e-9));

  CHECK_THROWS_AS(layer_norm(two, Tensor::full({2}, 1.0), Tensor::zeros({2}), 0.0),
                  std::invalid_argument);

  // mean 0, variance 1 before affine, within 1e-9
  std::mt19937_64 rng(5);
  Tensor x({3, 6}, random_vec(18, rng));
  Tensor n = layer_norm(x, Tensor::full({6}, 1.0), Tensor::zeros({6}), 1e-12);
  for (int r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (int c = 0; c < 6; ++c) m += n.value()[r * 6 + c];
    m /= 6;
    for (int c = 0; c < 6; ++c) {
      double d = n.value()[r * 6 + c] - m;
      v += d * d;
    }
    v /= 6;
    CHECK(std::fabs(m) < 1e-9);
    CHECK(std::fabs(v - 1.0) < 1e-9);
  }
}

TEST_CASE("layer_norm gradient vs finite differences") {
  std::mt19937_64 rng(21);
  Tensor x = Tensor::param({2, 5}, random_vec(10, rng));
  Tensor g = Tensor::param({5}, random_vec(5, rng, 0.5, 1.5));
  Tensor b = Tensor::param({5}, random_vec(5, rng, -0.5, 0.5));
  Tensor W({2, 5}, random_vec(10, rng));
  auto loss = [&]() { return sum(mul(layer_norm(x, g, b, 1e-5), W)); };
  auto rep = grad_check(loss, {{"x", x}, {"g", g}, {"b", b}});
  CHECK(rep.max_rel < 1e-5);
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::param({3}, {1, 2, 3});
  {
    Tape tape;
    Tensor l = sum(x);
    x.zero_grad();
    tape.backward(l);
    CHECK(x.grad() == std::vector<double>{1, 1, 1});
  }
  Tensor y = Tensor::param({2}, {1, 2});
  {
    Tape tape;
    Tensor l = sum(mul(y, y));
    y.zero_grad();
    tape.backward(l);
    CHECK(y.grad() == std::vector<double>{2, 4});
  }
  {
    Tape tape;
    Tensor v = mul(y, 2.0);
    CHECK_THROWS_AS(tape.backward(v), std::invalid_argument);
  }
}

TEST_CASE("flip is an exact involution") {
  std::mt19937_64 rng(33);
  Tensor x({2, 5, 3}, random_vec(30, rng));
  for (int axis = 0; axis < 3; ++axis) {
    Tensor ff = flip(flip(x, axis), axis);
    CHECK(ff.value() == x.value());
  }
}

TEST_CASE("gradient correctness across ops") {
  std::mt19937_64 rng(77);

  SUBCASE("unary chain") {
    Tensor x = Tensor::param({4, 3}, random_vec(12, rng));
    auto loss = [&]() {
      Tensor a = silu(x);
      Tensor b = tanh(add(a, 0.3));
      Tensor c = sigmoid(mul(b, x));
      Tensor d = gelu(c);
      Tensor e = softplus(sub(d, x));
      return mean(mul(e, e));
    };
    CHECK(grad_check(loss, {{"x", x}}).max_rel < 1e-5);
  }
  SUBCASE("exp sqrt abs div") {
    Tensor x = Tensor::param({6}, {0.5, 1.5, -1.2, 2.0, -0.4, 0.9});
    Tensor y = Tensor::param({6}, {1.1, 0.7, 1.9, -1.3, 0.6, -0.8});
    auto loss = [&]() {
      Tensor a = exp(mul(x, 0.5));
      Tensor b = sqrt(add(mul(y, y), 0.1));
      Tensor c = div(a, b);
      return mean(abs(c));
    };
    CHECK(grad_check(loss, {{"x", x}, {"y", y}}).max_rel < 1e-5);
  }
  SUBCASE("broadcast binary") {
    Tensor x = Tensor::param({2, 4, 3}, random_vec(24, rng));
    Tensor y = Tensor::param({3}, random_vec(3, rng));
    Tensor z = Tensor::param({4, 1}, random_vec(4, rng));
    auto loss = [&]() {
      return mean(mul(add(x, y), sub(x, z)));
    };
    CHECK(grad_check(loss, {{"x", x}, {"y", y}, {"z", z}}).max_rel < 1e-5);
  }
  SUBCASE("shape ops") {
    Tensor x = Tensor::param({2, 3, 4}, random_vec(24, rng));
    Tensor W({4, 3, 2}, random_vec(24, rng));
    auto loss = [&]() {
      Tensor t = transpose(x, 0, 2);
      Tensor f = flip(t, 1);
      Tensor s = concat({slice(f, 2, 0, 1), slice(f, 2, 1, 1)}, 2);
      return sum(mul(s, W));
    };
    CHECK(grad_check(loss, {{"x", x}}).max_rel < 1e-5);
  }
  SUBCASE("reductions") {
    Tensor x = Tensor::param({3, 4}, random_vec(12, rng));
    auto loss = [&]() {
      Tensor m = mean_axis(x, 1);
      Tensor s = sum_axis(mul(x, x), 0);
      return add(mean(m), mul(mean(s), 0.25));
    };
    CHECK(grad_check(loss, {{"x", x}}).max_rel < 1e-5);
  }
  SUBCASE("reshape and weighted") {
    Tensor x = Tensor::param({2, 6}, random_vec(12, rng));
    Tensor W({3, 4}, random_vec(12, rng));
    auto loss = [&]() { return sum(mul(reshape(silu(x), {3, 4}), W)); };
    CHECK(grad_check(loss, {{"x", x}}).max_rel < 1e-5);
  }
}

TEST_CASE("dropout") {
  std::mt19937_64 rng(9);
  Tensor x = Tensor::param({100}, random_vec(100, rng));
  // eval mode: identity
  Tensor e = dropout(x, 0.5, rng, false);
  CHECK(e.value() == x.value());
  // train mode: inverted scaling keeps the mean roughly unchanged
  std::mt19937_64 mrng(123);
  Tensor t = dropout(x, 0.5, mrng, true);
  int zeros = 0;
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (t.value()[i] == 0.0)
      ++zeros;
    else
      CHECK(t.value()[i] == doctest::Approx(2.0 * x.value()[i]));
  }
  CHECK(zeros > 20);
  CHECK(zeros < 80);
  // gradient through a fixed mask
  auto loss = [&]() {
    std::mt19937_64 r2(7);
    return mean(dropout(mul(x, x), 0.3, r2, true));
  };
  CHECK(grad_check(loss, {{"x", x}}).max_rel < 1e-5);
}

TEST_CASE("causal depthwise conv") {
  // two channels, kernel [1, 2] per channel: y_t = b + w0*x_{t-1} + w1*x_t
  Tensor x({1, 3, 1}, {1, 2, 3});
  Tensor w({1, 2}, {1, 2});
  Tensor b({1}, {0});
  Tensor y = causal_conv1d(x, w, b);
  CHECK(y.value() == std::vector<double>{2, 5, 8});

  std::mt19937_64 rng(42);
  Tensor xr = Tensor::param({2, 5, 3}, random_vec(30, rng));
  Tensor wr = Tensor::param({3, 4}, random_vec(12, rng));
  Tensor br = Tensor::param({3}, random_vec(3, rng));
  Tensor W({2, 5, 3}, random_vec(30, rng));
  auto loss = [&]() { return sum(mul(causal_conv1d(xr, wr, br), W)); };
  CHECK(grad_check(loss, {{"x", xr}, {"w", wr}, {"b", br}}).max_rel < 1e-5);
}

TEST_CASE("ema_trend recurrence and gradient") {
  Tensor x({1, 3, 1}, {0, 1, 1});
  Tensor tr = ema_trend(x, 0.3);
  CHECK(tr.value()[0] == doctest::Approx(0.0));
  CHECK(tr.value()[1] == doctest::Approx(0.3));
  CHECK(tr.value()[2] == doctest::Approx(0.51));

  std::mt19937_64 rng(55);
  Tensor xr = Tensor::param({2, 6, 3}, random_vec(36, rng));
  Tensor W({2, 6, 3}, random_vec(36, rng));
  auto loss = [&]() { return sum(mul(ema_trend(xr, 0.3), W)); };
  CHECK(grad_check(loss, {{"x", xr}}).max_rel < 1e-5);

  CHECK_THROWS_AS(ema_trend(xr, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ema_trend(xr, 1.5), std::invalid_argument);
}

TEST_CASE("selective_scan gradient") {
  std::mt19937_64 rng(91);
  const int B = 2, T = 5, C = 3, S = 4;
  Tensor u = Tensor::param({B, T, C}, random_vec(B * T * C, rng));
  Tensor delta = Tensor::param({B, T, C}, random_vec(B * T * C, rng, 0.05, 0.8));
  Tensor A = Tensor::param({C, S}, random_vec(C * S, rng, -2.0, -0.2));
  Tensor Bs = Tensor::param({B, T, S}, random_vec(B * T * S, rng));
  Tensor Cs = Tensor::param({B, T, S}, random_vec(B * T * S, rng));
  Tensor D = Tensor::param({C}, random_vec(C, rng));
  Tensor W({B, T, C}, random_vec(B * T * C, rng));
  auto loss = [&]() {
    return sum(mul(selective_scan(u, delta, A, Bs, Cs, D), W));
  };
  auto rep = grad_check(loss, {{"u", u},
                               {"delta", delta},
                               {"A", A},
                               {"B", Bs},
                               {"C", Cs},
                               {"D", D}});
  CHECK(rep.max_rel < 1e-5);
}

TEST_CASE("clamp_away_from_zero") {
  Tensor x({4}, {0.5, -0.5, 1e-6, -1e-6});
  Tensor c = clamp_away_from_zero(x, 1e-4);
  CHECK(c.value()[0] == 0.5);
  CHECK(c.value()[1] == -0.5);
  CHECK(c.value()[2] == 1e-4);
  CHECK(c.value()[3] == -1e-4);
}

TEST_CASE("unreachable grads stay zero") {
  Tensor used = Tensor::param({2}, {1, 2});
  Tensor unused = Tensor::param({2}, {3, 4});
  Tape tape;
  Tensor l = sum(mul(used, used));
  used.zero_grad();
  unused.zero_grad();
  tape.backward(l);
  CHECK(unused.grad() == std::vector<double>{0, 0});
  CHECK(used.grad() == std::vector<double>{2, 4});
}
