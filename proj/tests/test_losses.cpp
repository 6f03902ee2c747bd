#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "gradcheck.hpp"
#include "stprompt/losses.hpp"
#include "stprompt/params.hpp"

using namespace stprompt;
using D = Tensor<double>;
using V = Var<double>;

namespace {

// Embedding tensor (1,R,1,d) from explicit rows.
V embed(const std::vector<std::vector<double>>& rows) {
  const std::size_t R = rows.size(), d = rows[0].size();
  D t(Shape{1, R, 1, d});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t k = 0; k < d; ++k) t.at(0, r, 0, k) = rows[r][k];
  return V::param(std::move(t));
}

}  // namespace

TEST_CASE("regression loss") {
  SUBCASE("hand arithmetic") {
    V pred = V::param(D(Shape{2, 2}, {1, 2, 3, 4}));
    D target(Shape{2, 2}, {1, 4, 1, 4});
    V l = regression_loss(pred, target);
    CHECK(l.value()[0] == doctest::Approx((0 + 2 + 2 + 0) / 4.0));
  }
  SUBCASE("matches a loop on random data") {
    std::mt19937_64 rng(1);
    V pred = V::param(D::randu(Shape{3, 4, 2}, rng));
    D target = D::randu(Shape{3, 4, 2}, rng);
    double acc = 0;
    for (std::size_t i = 0; i < target.numel(); ++i)
      acc += std::abs(pred.value()[i] - target[i]);
    CHECK(regression_loss(pred, target).value()[0] ==
          doctest::Approx(acc / target.numel()));
  }
  SUBCASE("gradient is sign/N") {
    V pred = V::param(D(Shape{4}, {1, 5, 2, 2}));
    D target(Shape{4}, {3, 1, 2.5, 2.5});
    V l = regression_loss(pred, target);
    backward(l);
    CHECK(pred.grad()[0] == doctest::Approx(-0.25));
    CHECK(pred.grad()[1] == doctest::Approx(0.25));
    CHECK(pred.grad()[2] == doctest::Approx(-0.25));
  }
  SUBCASE("shape mismatch") {
    V pred = V::param(D(Shape{2}));
    CHECK_THROWS_AS(regression_loss(pred, D(Shape{3})), ShapeError);
  }
}

TEST_CASE("uniformity loss hand values") {
  SUBCASE("two identical unit vectors at tau=1 give 1.0") {
    V e = embed({{1, 0}, {1, 0}});
    V l = uniformity_loss(e, 1.0);
    // cos = 1 for the single off-diagonal pair; log exp(1) = 1.
    CHECK(l.value()[0] == doctest::Approx(1.0));
  }
  SUBCASE("two orthogonal vectors at tau=1 give 0.0") {
    V e = embed({{1, 0}, {0, 1}});
    CHECK(uniformity_loss(e, 1.0).value()[0] ==
          doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("invariant to per-row scaling") {
    V a = embed({{1, 2}, {3, -1}, {0.5, 0.5}});
    V b = embed({{10, 20}, {0.3, -0.1}, {50, 50}});
    CHECK(uniformity_loss(a, 0.3).value()[0] ==
          doctest::Approx(uniformity_loss(b, 0.3).value()[0]));
  }
  SUBCASE("temperature scales the argument") {
    V e = embed({{1, 0}, {1, 0}});
    CHECK(uniformity_loss(e, 0.5).value()[0] == doctest::Approx(2.0));
    CHECK(uniformity_loss(e, 0.3).value()[0] ==
          doctest::Approx(1.0 / 0.3));
  }
  SUBCASE("literal sign negates") {
    std::mt19937_64 rng(2);
    V e = V::param(D::randu(Shape{2, 5, 1, 3}, rng));
    const double sep =
        uniformity_loss(e, 0.3, UniformitySign::Separation).value()[0];
    const double lit =
        uniformity_loss(e, 0.3, UniformitySign::Literal).value()[0];
    CHECK(lit == doctest::Approx(-sep));
  }
  SUBCASE("zero row has cosine 0 with everything") {
    V e = embed({{0, 0}, {1, 0}, {0, 1}});
    // Off-diagonal cosines: (0,1)=0, (0,2)=0, (1,2)=0. Each row's
    // log-sum-exp over 2 off-diagonal zeros is log 2.
    CHECK(uniformity_loss(e, 1.0).value()[0] ==
          doctest::Approx(std::log(2.0)));
  }
  SUBCASE("three-vector value matches a scalar recomputation") {
    V e = embed({{1, 0}, {0.6, 0.8}, {-1, 1}});
    const double tau = 0.3;
    double c01 = 0.6, c02 = -1.0 / std::sqrt(2.0),
           c12 = (-0.6 + 0.8) / std::sqrt(2.0);
    auto row = [&](double a, double b) {
      return std::log(std::exp(a / tau) + std::exp(b / tau));
    };
    const double expect =
        (row(c01, c02) + row(c01, c12) + row(c02, c12)) / 3.0;
    CHECK(uniformity_loss(e, tau).value()[0] == doctest::Approx(expect));
  }
  SUBCASE("averages over samples and features") {
    std::mt19937_64 rng(3);
    D big(Shape{2, 4, 3, 5});
    for (std::size_t i = 0; i < big.numel(); ++i)
      big[i] = D::randu(Shape{1}, rng)[0];
    double acc = 0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t f = 0; f < 3; ++f) {
        D slice(Shape{1, 4, 1, 5});
        for (std::size_t r = 0; r < 4; ++r)
          for (std::size_t k = 0; k < 5; ++k)
            slice.at(0, r, 0, k) = big.at(b, r, f, k);
        acc += uniformity_loss(V::constant(slice), 0.3).value()[0];
      }
    CHECK(uniformity_loss(V::param(big), 0.3).value()[0] ==
          doctest::Approx(acc / 6.0));
  }
  SUBCASE("fewer than 2 regions rejected") {
    V e = embed({{1, 0}});
    CHECK_THROWS_AS(uniformity_loss(e, 0.3), DataError);
  }
}

TEST_CASE("uniformity loss gradients match finite differences") {
  std::mt19937_64 rng(7);
  V e = V::param(D::randu(Shape{2, 4, 2, 3}, rng));
  auto forward = [&] { return uniformity_loss(e, 0.3); };
  CHECK(gradcheck::max_rel_error({e}, forward) < 1e-5);
}

TEST_CASE("minimizing the separation loss spreads embeddings") {
  // Start clustered in the positive orthant; 200 Adam steps should at
  // least halve the mean pairwise cosine.
  std::mt19937_64 rng(11);
  ParameterStore<double> store;
  store.create("e", D::randu(Shape{1, 8, 1, 4}, rng, 0.2, 1.0),
               Owner::Prompt);
  auto mean_cos = [&] {
    const D& t = store.get("e").value();
    double acc = 0;
    int n = 0;
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t r2 = r + 1; r2 < 8; ++r2) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t k = 0; k < 4; ++k) {
          dot += t.at(0, r, 0, k) * t.at(0, r2, 0, k);
          na += t.at(0, r, 0, k) * t.at(0, r, 0, k);
          nb += t.at(0, r2, 0, k) * t.at(0, r2, 0, k);
        }
        acc += dot / std::sqrt(na * nb);
        ++n;
      }
    return acc / n;
  };
  const double before = mean_cos();
  CHECK(before > 0.5);

  AdamConfig<double> ac;
  ac.lr = 0.01;
  Adam<double> opt(ac);
  for (int it = 0; it < 200; ++it) {
    store.zero_grads();
    V l = uniformity_loss(store.get("e"), 0.3);
    backward(l);
    opt.step(store);
  }
  CHECK(mean_cos() < before / 2.0);
}

TEST_CASE("combined loss") {
  V lr = V::param(D::scalar(2.0));
  V lu = V::param(D::scalar(0.5));
  CHECK(combined_loss(lr, lu, 1.0).value()[0] == doctest::Approx(2.5));
  CHECK(combined_loss(lr, lu, 0.2).value()[0] == doctest::Approx(2.1));
  CHECK(combined_loss(lr, V(), 1.0).value()[0] == doctest::Approx(2.0));
  CHECK(combined_loss(lr, lu, 0.0).value()[0] == doctest::Approx(2.0));
  CHECK_THROWS_AS(combined_loss(lr, lu, -1.0), ConfigError);
}

TEST_CASE("batch standardization") {
  std::mt19937_64 rng(13);
  V e = V::param(D::randu(Shape{6, 3, 1, 2}, rng, -3, 5));
  V out = batch_standardize(e);
  // Per coordinate across the batch: mean 0, stdev 1.
  for (std::size_t c = 0; c < 6; ++c) {
    double m = 0, v = 0;
    for (std::size_t b = 0; b < 6; ++b) m += out.value()[b * 6 + c];
    m /= 6;
    for (std::size_t b = 0; b < 6; ++b) {
      const double d = out.value()[b * 6 + c] - m;
      v += d * d;
    }
    CHECK(m == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::sqrt(v / 6) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("metrics") {
  SUBCASE("hand example") {
    D y(Shape{4}, {10, 20, 30, 40});
    D yhat(Shape{4}, {11, 18, 33, 36});
    auto r = metrics(y, yhat);
    CHECK(r.mae == doctest::Approx((1 + 2 + 3 + 4) / 4.0));
    CHECK(r.rmse == doctest::Approx(std::sqrt((1 + 4 + 9 + 16) / 4.0)));
    REQUIRE(r.mape.has_value());
    CHECK(*r.mape == doctest::Approx(
                         (0.1 + 0.1 + 0.1 + 0.1) / 4.0));
  }
  SUBCASE("near-zero targets are masked out of mape only") {
    D y(Shape{3}, {0.0, 10.0, 1e-9});
    D yhat(Shape{3}, {1.0, 12.0, 1.0});
    auto r = metrics(y, yhat, 1e-3);
    CHECK(r.mae == doctest::Approx(4.0 / 3.0).epsilon(1e-6));
    REQUIRE(r.mape.has_value());
    CHECK(*r.mape == doctest::Approx(0.2));
  }
  SUBCASE("all targets masked leaves mape empty") {
    D y(Shape{2}, {0.0, 0.0});
    D yhat(Shape{2}, {1.0, 2.0});
    auto r = metrics(y, yhat, 1e-3);
    CHECK_FALSE(r.mape.has_value());
    CHECK(r.to_json()["mape"].is_null());
  }
  SUBCASE("shape mismatch and empty input") {
    CHECK_THROWS_AS(metrics(D(Shape{2}), D(Shape{3})), ShapeError);
    CHECK_THROWS_AS(metrics(D(Shape{0}), D(Shape{0})), ShapeError);
  }
}
