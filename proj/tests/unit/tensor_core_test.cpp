#include <doctest.h>

#include <cmath>
#include <functional>

#include "dilbench/error.hpp"
#include "dilbench/tensor.hpp"
#include "oracles.hpp"

using namespace dilbench;

namespace {

void check_values(const Tape& tape, Var v, std::initializer_list<double> expected) {
  const auto got = tape.values(v);
  REQUIRE(got.size() == expected.size());
  std::size_t i = 0;
  for (const double e : expected) CHECK(got[i++] == doctest::Approx(e).epsilon(1e-15));
}

double rel_err(double a, double b) { return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8}); }

// Checks d/dx sum(w * op(x)) against central differences for random x.
void fd_check(const std::function<Var(Tape&, Var)>& op, Shape shape, oracle::Gen& gen, double lo, double hi) {
  Tensor x(shape);
  for (auto& v : x.values()) v = gen.uniform(lo, hi);
  std::vector<double> w;
  auto value = [&]() {
    Tape t;
    Var xv = t.constant(x);
    Var y = op(t, xv);
    const auto ys = t.values(y);
    if (w.empty()) {
      for (std::size_t i = 0; i < ys.size(); ++i) w.push_back(gen.uniform(-1.0, 1.0));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < ys.size(); ++i) s += w[i] * ys[i];
    return s;
  };
  value();  // fixes w
  x.set_requires_grad(true);
  x.zero_grad();
  {
    Tape t;
    Var xv = t.leaf(x);
    Var y = op(t, xv);
    Tensor wt(t.shape(y), w);
    t.backward(t.sum(t.mul(y, t.constant(wt))));
  }
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double fd = oracle::central_difference(value, x[i], 1e-5);
    CHECK(rel_err(analytic[i], fd) < 1e-4);
  }
}

}  // namespace

TEST_SUITE("tensor_core") {
  TEST_CASE("matmul by identity returns the other operand") {
    Tape t;
    Var r = t.matmul(t.constant(Tensor::identity(2)), t.constant(Tensor::matrix({{3, 4}, {5, 6}})));
    check_values(t, r, {3, 4, 5, 6});
  }

  TEST_CASE("matmul of two 2x2 matrices") {
    Tape t;
    Var r = t.matmul(t.constant(Tensor::matrix({{1, 2}, {3, 4}})), t.constant(Tensor::matrix({{5, 6}, {7, 8}})));
    // hand expansion: [1*5+2*7, 1*6+2*8; 3*5+4*7, 3*6+4*8]
    check_values(t, r, {19, 22, 43, 50});
  }

  TEST_CASE("add with zero and scalar broadcast") {
    Tape t;
    check_values(t, t.add(t.constant(Tensor::vector({1, 2})), t.constant(Tensor::vector({0, 0}))), {1, 2});
    check_values(t, t.mul(t.constant(Tensor::vector({1, 2})), t.constant(Tensor::scalar(3))), {3, 6});
    check_values(t, t.sub(t.constant(Tensor::scalar(1)), t.constant(Tensor::vector({1, 2}))), {0, -1});
  }

  TEST_CASE("shape mismatches are rejected") {
    Tape t;
    CHECK_THROWS_AS(t.matmul(t.constant(Tensor(Shape{2, 3})), t.constant(Tensor(Shape{2, 3}))), Error);
    CHECK_THROWS_AS(t.add(t.constant(Tensor(Shape{2})), t.constant(Tensor(Shape{3}))), Error);
    try {
      t.add(t.constant(Tensor(Shape{2})), t.constant(Tensor(Shape{3})));
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ShapeMismatch);
    }
  }

  TEST_CASE("activations at zero") {
    Tape t;
    check_values(t, t.sigmoid(t.constant(Tensor::scalar(0))), {0.5});
    check_values(t, t.tanh(t.constant(Tensor::scalar(0))), {0.0});
    check_values(t, t.softmax_last(t.constant(Tensor::vector({0, 0, 0, 0}))), {0.25, 0.25, 0.25, 0.25});
  }

  TEST_CASE("log of a non-positive value is a domain error") {
    Tape t;
    try {
      t.log(t.constant(Tensor::vector({1.0, 0.0})));
      FAIL("expected DomainError");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::DomainError);
    }
  }

  TEST_CASE("softmax rows sum to one and sigmoid stays in (0,1)") {
    oracle::Gen gen(11);
    for (int rep = 0; rep < 100; ++rep) {
      Tensor x(Shape{3, 7});
      for (auto& v : x.values()) v = gen.uniform(-30.0, 30.0);
      Tape t;
      const auto sm = t.values(t.softmax_last(t.constant(x)));
      for (std::size_t r = 0; r < 3; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 7; ++c) s += sm[r * 7 + c];
        CHECK(std::fabs(s - 1.0) <= 1e-12);
      }
      Tensor y(Shape{20});
      for (auto& v : y.values()) v = gen.uniform(-30.0, 30.0);
      for (const double p : t.values(t.sigmoid(t.constant(y)))) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
      }
    }
  }

  TEST_CASE("dropout: zero rate, eval identity, scaling and bad rates") {
    Tensor ones(Shape{10000}, 1.0);
    Rng rng(5);
    Tape t;
    Var x = t.constant(ones);
    const auto same = t.values(t.dropout(x, 0.0, Mode::train, rng));
    CHECK(std::equal(same.begin(), same.end(), ones.values().begin()));
    const auto eval = t.values(t.dropout(x, 0.3, Mode::eval, rng));
    CHECK(std::equal(eval.begin(), eval.end(), ones.values().begin()));
    const auto half = t.values(t.dropout(x, 0.5, Mode::train, rng));
    double mean = 0.0;
    for (const double v : half) {
      CHECK((v == 0.0 || v == 2.0));
      mean += v;
    }
    mean /= 10000.0;
    CHECK(std::fabs(mean - 1.0) < 0.05);
    CHECK_THROWS_AS(t.dropout(x, 1.0, Mode::train, rng), Error);
    CHECK_THROWS_AS(t.dropout(x, -0.1, Mode::train, rng), Error);
  }

  TEST_CASE("identical seeds give identical dropout masks") {
    Tensor ones(Shape{500}, 1.0);
    Rng a(99), b(99);
    Tape t;
    Var x = t.constant(ones);
    const auto ma = t.values(t.dropout(x, 0.4, Mode::train, a));
    const auto mb = t.values(t.dropout(x, 0.4, Mode::train, b));
    CHECK(std::equal(ma.begin(), ma.end(), mb.begin()));
  }

  TEST_CASE("sigmoid derivative at zero and constants get no gradient") {
    Tensor x = Tensor::scalar(0.0);
    x.set_requires_grad(true);
    Tensor c = Tensor::scalar(4.0);
    Tape t;
    Var xv = t.leaf(x);
    Var cv = t.leaf(c);
    t.backward(t.add(t.sigmoid(xv), cv));
    CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK_FALSE(c.has_grad());
  }

  TEST_CASE("backward of a non-scalar is rejected") {
    Tape t;
    Var v = t.constant(Tensor::vector({1, 2}));
    try {
      t.backward(v);
      FAIL("expected NotScalar");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NotScalar);
    }
  }

  TEST_CASE("repeated backward accumulates until cleared") {
    Tensor x = Tensor::vector({1.0, -2.0});
    x.set_requires_grad(true);
    for (int rep = 0; rep < 2; ++rep) {
      Tape t;
      t.backward(t.sum(t.scale(t.leaf(x), 3.0)));
    }
    CHECK(x.grad()[0] == 6.0);
    x.zero_grad();
    CHECK(x.grad()[1] == 0.0);
  }

  TEST_CASE("backward is linear in the loss") {
    oracle::Gen gen(3);
    Tensor a(Shape{3, 4});
    for (auto& v : a.values()) v = gen.uniform(-1, 1);
    Tensor w(Shape{4, 2});
    for (auto& v : w.values()) v = gen.uniform(-1, 1);
    w.set_requires_grad(true);
    auto loss1 = [&](Tape& t, Var wv) { return t.sum(t.tanh(t.matmul(t.constant(a), wv))); };
    auto loss2 = [&](Tape& t, Var wv) { return t.sum(t.mul(wv, wv)); };
    std::vector<double> g1, g2, g12;
    for (int which = 0; which < 3; ++which) {
      w.zero_grad();
      Tape t;
      Var wv = t.leaf(w);
      Var l = which == 0 ? loss1(t, wv) : which == 1 ? loss2(t, wv) : t.add(loss1(t, wv), loss2(t, wv));
      t.backward(l);
      (which == 0 ? g1 : which == 1 ? g2 : g12).assign(w.grad().begin(), w.grad().end());
    }
    for (std::size_t i = 0; i < g12.size(); ++i) CHECK(g12[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-14));
  }

  TEST_CASE("every differentiable op matches central differences at 100 random points") {
    oracle::Gen gen(2024);
    Tensor other(Shape{3, 4});
    Tensor right(Shape{4, 2});
    Tensor bias(Shape{1, 2});
    for (int point = 0; point < 100; ++point) {
      for (auto& v : other.values()) v = gen.uniform(-1, 1);
      for (auto& v : right.values()) v = gen.uniform(-1, 1);
      for (auto& v : bias.values()) v = gen.uniform(-1, 1);
      fd_check([&](Tape& t, Var x) { return t.matmul(x, t.constant(right)); }, {3, 4}, gen, -1, 1);
      fd_check([&](Tape& t, Var x) { return t.matmul(t.constant(other), x); }, {4, 2}, gen, -1, 1);
      fd_check([&](Tape& t, Var x) { return t.add(x, t.constant(other)); }, {3, 4}, gen, -1, 1);
      fd_check([&](Tape& t, Var x) { return t.sub(t.constant(other), x); }, {3, 4}, gen, -1, 1);
      fd_check([&](Tape& t, Var x) { return t.mul(x, t.constant(other)); }, {3, 4}, gen, -1, 1);
      fd_check([&](Tape& t, Var x) { return t.mul(x, x); }, {3, 4}, gen, -1, 1);
      fd_check([&](Tape& t, Var x) { return t.scale(x, -1.7); }, {5}, gen, -1, 1);
      fd_check([&](Tape& t, Var x) { return t.concat_last(x, t.constant(other)); }, {3, 2}, gen, -1, 1);
      fd_check([&](Tape& t, Var x) { return t.slice_last(x, 1, 3); }, {3, 4}, gen, -1, 1);
      fd_check([&](Tape& t, Var x) { return t.slice_rows(x, 1, 3); }, {3, 4}, gen, -1, 1);
      fd_check([&](Tape& t, Var x) { return t.gather_rows(x, {2, 0, 2}); }, {3, 4}, gen, -1, 1);
      fd_check(
          [&](Tape& t, Var x) {
            const Var parts[] = {x, t.constant(other), x};
            return t.concat_rows(parts);
          },
          {2, 4}, gen, -1, 1);
      fd_check([&](Tape& t, Var x) { return t.sigmoid(x); }, {6}, gen, -4, 4);
      fd_check([&](Tape& t, Var x) { return t.tanh(x); }, {6}, gen, -3, 3);
      fd_check([&](Tape& t, Var x) { return t.softmax_last(x); }, {2, 5}, gen, -3, 3);
      fd_check([&](Tape& t, Var x) { return t.log(x); }, {6}, gen, 0.2, 3);
      fd_check([&](Tape& t, Var x) { return t.sum(x); }, {2, 3}, gen, -1, 1);
      fd_check([&](Tape& t, Var x) { return t.affine(x, t.constant(right), t.constant(bias)); }, {3, 4}, gen, -1, 1);
      fd_check([&](Tape& t, Var x) { return t.affine(t.constant(other), x, t.constant(bias)); }, {4, 2}, gen, -1, 1);
      fd_check([&](Tape& t, Var x) { return t.affine(t.constant(other), t.constant(right), x); }, {1, 2}, gen, -1,
               1);
    }
  }

  TEST_CASE("tensor invariants: data length and gradient shape") {
    Tensor x(Shape{2, 3, 4});
    CHECK(x.size() == 24);
    x.set_requires_grad(true);
    CHECK(x.grad_buffer().size() == x.size());
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), Error);
  }
}
