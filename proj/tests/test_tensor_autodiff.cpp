#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "gradcheck.hpp"
#include "stprompt/params.hpp"

using namespace stprompt;
using D = Tensor<double>;
using V = Var<double>;

TEST_CASE("matmul identity and projector") {
  V i2 = V::constant(D(Shape{2, 2}, {1, 0, 0, 1}));
  V m = V::constant(D(Shape{2, 2}, {1, 2, 3, 4}));
  V out = matmul(i2, m);
  CHECK(out.value().data() == std::vector<double>{1, 2, 3, 4});

  V proj = V::constant(D(Shape{2, 2}, {1, 0, 0, 0}));
  V vec = V::constant(D(Shape{2, 1}, {5, 7}));
  V pv = matmul(proj, vec);
  CHECK(pv.value().data() == std::vector<double>{5, 0});
}

TEST_CASE("matmul gradient matches finite differences") {
  V a = V::param(D(Shape{2, 2}, {1, 1, 1, 1}));
  V b = V::constant(D(Shape{2, 1}, {2, 3}));
  auto forward = [&] { return sum_all(matmul(a, b)); };
  CHECK(gradcheck::max_rel_error({a}, forward) < 1e-6);
  // d sum(A*B) / dA has rows equal to B^T.
  a.zero_grad();
  backward(forward());
  CHECK(a.grad().data() == std::vector<double>{2, 3, 2, 3});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  V a = V::constant(D(Shape{2, 3}));
  V b = V::constant(D(Shape{2, 2}));
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       doctest::Contains("(2,3)"), ShapeError);
}

TEST_CASE("elementwise basics") {
  V zero = V::constant(D::scalar(0.0));
  CHECK(sigmoid(zero).value()[0] == doctest::Approx(0.5));

  V x = V::constant(D(Shape{2}, {-1, 2}));
  CHECK(relu(x).value().data() == std::vector<double>{0, 2});

  V three = V::constant(D::scalar(3.0));
  CHECK(log_(exp_(three)).value()[0] == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("leading-axis broadcast add and its gradient") {
  std::mt19937_64 rng(1);
  V a = V::param(D::randu(Shape{2, 3, 4}, rng));
  V b = V::param(D(Shape{4}, {1, 2, 3, 4}));
  auto forward = [&] { return sum_all(mul(add(a, b), a)); };
  CHECK(gradcheck::max_rel_error({a, b}, forward) < 1e-6);
}

TEST_CASE("incompatible broadcast rejected") {
  V a = V::constant(D(Shape{2, 3}));
  V b = V::constant(D(Shape{2}));
  CHECK_THROWS_AS(add(a, b), ShapeError);
}

TEST_CASE("concat shapes, identity, and backward split") {
  std::mt19937_64 rng(7);
  V a = V::param(D::randu(Shape{4, 2}, rng));
  V b = V::param(D::randu(Shape{4, 3}, rng));
  V cat = concat<double>({a, b}, 1);
  CHECK(cat.shape() == Shape{4, 5});

  V solo = concat<double>({a}, 0);
  CHECK(solo.value().data() == a.value().data());

  // Ones-gradient splits into ones-blocks of the original shapes.
  a.zero_grad();
  b.zero_grad();
  backward(sum_all(cat));
  CHECK(a.grad().data() == std::vector<double>(8, 1.0));
  CHECK(b.grad().data() == std::vector<double>(12, 1.0));

  auto forward = [&] { return sum_all(square(concat<double>({a, b}, 1))); };
  CHECK(gradcheck::max_rel_error({a, b}, forward) < 1e-6);

  V bad = V::constant(D(Shape{3, 3}));
  CHECK_THROWS_AS(concat<double>({a, bad}, 1), ShapeError);
}

TEST_CASE("backward on sum gives all-ones; power rule") {
  std::mt19937_64 rng(3);
  V x = V::param(D::randu(Shape{2, 3}, rng));
  backward(sum_all(x));
  CHECK(x.grad().data() == std::vector<double>(6, 1.0));

  V y = V::param(D(Shape{3}, {1, 2, 3}));
  backward(sum_all(square(y)));
  CHECK(y.grad().data() == std::vector<double>{2, 4, 6});
}

TEST_CASE("backward rejects non-scalar loss") {
  V x = V::param(D(Shape{3}, {1, 2, 3}));
  CHECK_THROWS_AS(backward(x), ShapeError);
}

TEST_CASE("non-finite forward value names the op") {
  V x = V::constant(D(Shape{1}, {-1.0}));
  CHECK_THROWS_WITH_AS(log_(x), doctest::Contains("log"), NumericError);
}

TEST_CASE("composite op gradients") {
  std::mt19937_64 rng(11);
  V x = V::param(D::randu(Shape{2, 3, 2, 4}, rng));
  V w = V::param(D::randu(Shape{4, 5}, rng));
  V b = V::param(D::randu(Shape{5}, rng));
  V p = V::param(D::randu(Shape{3, 3}, rng));

  SUBCASE("linear_last") {
    auto fwd = [&] { return sum_all(square(linear_last(x, w, b))); };
    CHECK(gradcheck::max_rel_error({x, w, b}, fwd) < 1e-6);
  }
  SUBCASE("region_mix") {
    auto fwd = [&] { return sum_all(square(region_mix(x, p))); };
    CHECK(gradcheck::max_rel_error({x, p}, fwd) < 1e-6);
  }
  SUBCASE("broadcast_sample and broadcast_region") {
    V v = V::param(D::randu(Shape{2, 4}, rng));
    V c = V::param(D::randu(Shape{3, 4}, rng));
    auto fwd = [&] {
      return sum_all(square(add(broadcast_sample(v, 3, 2),
                                broadcast_region(c, 2, 2))));
    };
    CHECK(gradcheck::max_rel_error({v, c}, fwd) < 1e-6);
  }
  SUBCASE("slice_bf and swap_last2") {
    auto fwd = [&] {
      return add(sum_all(square(slice_bf(x, 1, 1))),
                 sum_all(square(swap_last2(x))));
    };
    CHECK(gradcheck::max_rel_error({x}, fwd) < 1e-6);
  }
  SUBCASE("unary chain") {
    auto fwd = [&] {
      V y = sigmoid(x);
      y = add(y, relu(x));
      y = mul(y, exp_(scale(x, 0.1)));
      y = add(y, sqrt_(add_scalar(square(x), 1.0)));
      return mean_all(y);
    };
    CHECK(gradcheck::max_rel_error({x}, fwd) < 1e-6);
  }
}

TEST_CASE("determinism: same seed gives bitwise identical forward") {
  auto run = [] {
    std::mt19937_64 rng(99);
    V x = V::param(D::randu(Shape{4, 4}, rng));
    V w = V::param(D::randu(Shape{4, 4}, rng));
    return matmul(x, w).value().data();
  };
  CHECK(run() == run());
}

TEST_CASE("adam single-step hand oracle") {
  ParameterStore<double> store;
  V p = store.create("p", D::scalar(1.0), Owner::Prompt);
  Adam<double> opt(AdamConfig<double>{0.1});
  p.zero_grad();
  backward(p);  // scalar loss = p, grad = 1
  opt.step(store);
  // m=0.1*1... mhat=g=1, vhat=1 -> p = 1 - 0.1*1/(1+1e-8)
  CHECK(p.value()[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adam freeze contract and zero-grad fixed point") {
  ParameterStore<double> store;
  V p = store.create("frozen", D::scalar(2.0), Owner::Downstream);
  V q = store.create("live", D::scalar(3.0), Owner::Prompt);
  store.set_frozen("frozen", true);

  Adam<double> opt;
  for (int i = 0; i < 5; ++i) {
    store.zero_grads();
    // Force a nonzero gradient onto the frozen node directly.
    p.node()->grad = D::scalar(1.0);
    backward(q);
    opt.step(store);
  }
  CHECK(p.value()[0] == 2.0);  // bitwise unchanged

  // Zero gradient for all steps -> parameter unchanged.
  ParameterStore<double> s2;
  V r = s2.create("r", D::scalar(5.0), Owner::Prompt);
  Adam<double> opt2;
  for (int i = 0; i < 3; ++i) {
    s2.zero_grads();
    r.node()->grad = D::scalar(0.0);
    opt2.step(s2);
  }
  CHECK(r.value()[0] == 5.0);
}

TEST_CASE("adam grad shape mismatch") {
  ParameterStore<double> store;
  V p = store.create("p", D(Shape{2}, {1, 2}), Owner::Prompt);
  p.node()->grad = D::scalar(1.0);
  Adam<double> opt;
  CHECK_THROWS_AS(opt.step(store), ShapeError);
}
