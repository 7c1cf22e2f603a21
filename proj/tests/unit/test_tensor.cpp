#include <doctest.h>

#include <cmath>
#include <limits>

#include "csegnet/autograd.hpp"
#include "csegnet/ops.hpp"
#include "helpers.hpp"

using namespace csegnet;

TEST_SUITE("tensor") {
  TEST_CASE("construction validates shapes") {
    CHECK_THROWS_AS(Tensor(Shape{}), Error);
    CHECK_THROWS_AS(Tensor(Shape{2, 0}), Error);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3}), Error);
    Tensor t({2, 3}, 1.5f);
    CHECK(t.numel() == 6);
    CHECK(t.rank() == 2);
    CHECK(t[5] == 1.5f);
  }

  TEST_CASE("reshape keeps data and rejects bad sizes") {
    auto t = Tensor({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
    auto r = t.reshaped({3, 2});
    CHECK(r.vec() == t.vec());
    CHECK_THROWS_AS(t.reshaped({4, 2}), Error);
  }

  TEST_CASE("bit_equal distinguishes signed zero") {
    auto a = Tensor::from({0.0f, 1.0f});
    auto b = Tensor::from({-0.0f, 1.0f});
    CHECK(a == b);
    CHECK_FALSE(bit_equal(a, b));
    CHECK(bit_equal(a, a));
  }

  TEST_CASE("all_finite") {
    auto t = Tensor::from({1.0f, 2.0f});
    CHECK(t.all_finite());
    t[1] = std::numeric_limits<float>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
  }
}

TEST_SUITE("autograd") {
  TEST_CASE("product rule and fan-out accumulation") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor64::from({2.0, -3.0}), true);
    auto y = sum_all(mul(x, x));  // d/dx = 2x
    tape.backward(y);
    auto g = tape.grad(x);
    CHECK(g[0] == doctest::Approx(4.0));
    CHECK(g[1] == doctest::Approx(-6.0));
  }

  TEST_CASE("broadcast add reduces the gradient") {
    Tape<double> tape;
    auto a = tape.leaf(Tensor64({2, 3}, 1.0), true);
    auto b = tape.leaf(Tensor64({3}, 0.5), true);
    tape.backward(sum_all(add(a, b)));
    auto gb = tape.grad(b);
    for (auto v : gb.data()) CHECK(v == 2.0);
  }

  TEST_CASE("non-scalar root is rejected") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor64({2}, 1.0), true);
    CHECK_THROWS_AS(tape.backward(x), Error);
  }

  TEST_CASE("division by a near-zero divisor raises DivisionDomain") {
    Tape<double> tape;
    auto a = tape.constant(Tensor64::from({1.0}));
    auto b = tape.constant(Tensor64::from({0.0}));
    try {
      div(a, b);
      FAIL("expected DivisionDomain");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::DivisionDomain);
    }
  }

  TEST_CASE("reduce_sum over an axis") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor64({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}), true);
    auto r = reduce_sum(x, {1});
    CHECK(r.value().shape() == Shape{2});
    CHECK(r.value()[0] == 6.0);
    CHECK(r.value()[1] == 15.0);
    CHECK_THROWS_AS(reduce_sum(x, {2}), Error);
  }

  TEST_CASE("constants receive no gradient") {
    Tape<double> tape;
    auto c = tape.constant(Tensor64::from({3.0}));
    auto x = tape.leaf(Tensor64::from({2.0}), true);
    tape.backward(sum_all(mul(c, x)));
    CHECK(tape.grad(x)[0] == 3.0);
    CHECK_FALSE(tape.has_grad(c));
  }
}
