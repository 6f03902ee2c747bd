#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "stprompt/dataset.hpp"

using namespace stprompt;
using D = Tensor<double>;

namespace {

STDataset<double> tiny_dataset(std::size_t r, std::size_t t, std::size_t f,
                               std::size_t spd = 4) {
  STDataset<double> ds;
  ds.name = "tiny";
  ds.steps_per_day = spd;
  ds.x = D(Shape{r, t, f});
  for (std::size_t i = 0; i < ds.x.numel(); ++i)
    ds.x[i] = double(i % 7) + 0.5;
  return ds;
}

}  // namespace

TEST_CASE("zscore normalize") {
  D x(Shape{3}, {1, 2, 3});
  D out = zscore_normalize(x, 2.0, 1.0);
  CHECK(out.data() == std::vector<double>{-1, 0, 1});

  SUBCASE("constant series is degenerate") {
    D c(Shape{4}, 5.0);
    double mu, sigma;
    CHECK_THROWS_AS(compute_norm_stats(c, mu, sigma), DataError);
    CHECK_THROWS_AS(zscore_normalize(c, 5.0, 0.0), DataError);
  }
  SUBCASE("population sigma") {
    D v(Shape{5}, {1, 2, 3, 4, 5});
    double mu, sigma;
    compute_norm_stats(v, mu, sigma);
    CHECK(mu == doctest::Approx(3.0));
    CHECK(sigma == doctest::Approx(std::sqrt(2.0)));
    CHECK(zscore_normalize(v, mu, sigma)[0] ==
          doctest::Approx(-1.41421).epsilon(1e-5));
  }
  SUBCASE("denormalize round trip") {
    std::mt19937_64 rng(2);
    D v = D::randu(Shape{40}, rng, -5, 5);
    D back = denormalize(zscore_normalize(v, 1.7, 2.3), 1.7, 2.3);
    for (std::size_t i = 0; i < v.numel(); ++i)
      CHECK(back[i] == doctest::Approx(v[i]).epsilon(1e-9));
  }
}

TEST_CASE("window construction") {
  auto ds = tiny_dataset(3, 10, 1);

  SUBCASE("count is T-H-P+1 at stride 1") {
    auto w = make_windows(ds, 3, 2);
    CHECK(w.size() == 6);
    for (std::size_t i = 0; i + 1 < w.size(); ++i)
      CHECK(w[i + 1].start == w[i].start + 1);
  }
  SUBCASE("insufficient data") {
    auto small = tiny_dataset(3, 5, 1);
    CHECK_THROWS_AS(make_windows(small, 3, 3), DataError);
  }
  SUBCASE("tod follows modular arithmetic") {
    STDataset<double> big = tiny_dataset(2, 400, 1, 288);
    big.start_step = 0;
    auto w = make_windows(big, 3, 2);
    // Window starting at global step 300: last input step is 302.
    CHECK(big.tod_fraction(300) == doctest::Approx(12.0 / 288.0));
    CHECK(w[300].tod == doctest::Approx(double((300 + 2) % 288) / 288.0));
  }
}

TEST_CASE("chronological split") {
  auto ds = tiny_dataset(2, 105, 1);
  auto windows = make_windows(ds, 3, 2);  // 101 windows

  SUBCASE("6:2:2 on 100 windows") {
    windows.resize(100);
    auto s = chrono_split(windows);
    CHECK(s.train.size() == 60);
    CHECK(s.val.size() == 20);
    CHECK(s.test.size() == 20);
    // Chronological: train strictly precedes val precedes test.
    CHECK(s.train.back().start < s.val.front().start);
    CHECK(s.val.back().start < s.test.front().start);
  }
  SUBCASE("exact division on 10 windows") {
    windows.resize(10);
    auto s = chrono_split(windows);
    CHECK(s.train.size() == 6);
    CHECK(s.val.size() == 2);
    CHECK(s.test.size() == 2);
  }
  SUBCASE("empty partition rejected") {
    windows.resize(5);
    SplitSpec spec;
    spec.train = 0.9;
    spec.val = 0.05;
    spec.test = 0.05;
    CHECK_THROWS_AS(chrono_split(windows, spec), DataError);
  }
  SUBCASE("ratios must sum to one") {
    SplitSpec spec;
    spec.train = 0.5;
    CHECK_THROWS_AS(chrono_split(windows, spec), ConfigError);
  }
}

TEST_CASE("csv loading") {
  CsvLayout layout;
  layout.regions = 3;
  layout.features = 1;

  SUBCASE("3 regions, 10 rows gives (3,10,1)") {
    std::ofstream os("test_data.csv");
    for (int t = 0; t < 10; ++t) os << t << "," << t + 1 << "," << t + 2 << "\n";
    os.close();
    auto ds = load_csv<double>("test_data.csv", layout);
    CHECK(ds.x.shape() == Shape{3, 10, 1});
    CHECK(ds.x.at(2, 9, 0) == 11.0);
  }
  SUBCASE("non-numeric cell cites the row") {
    std::ofstream os("test_bad.csv");
    os << "1,2,3\n4,abc,6\n";
    os.close();
    CHECK_THROWS_WITH_AS(load_csv<double>("test_bad.csv", layout),
                         doctest::Contains("row 2"), DataError);
  }
  SUBCASE("ragged row rejected") {
    std::ofstream os("test_ragged.csv");
    os << "1,2,3\n4,5\n";
    os.close();
    CHECK_THROWS_AS(load_csv<double>("test_ragged.csv", layout), DataError);
  }
  SUBCASE("empty file rejected") {
    std::ofstream("test_empty.csv").close();
    CHECK_THROWS_AS(load_csv<double>("test_empty.csv", layout), DataError);
  }
}

TEST_CASE("synthetic generator") {
  SUBCASE("deterministic given seed") {
    auto a = gen_synthetic<double>(42, 5, 100, 1);
    auto b = gen_synthetic<double>(42, 5, 100, 1);
    CHECK(a.x.data() == b.x.data());
    CHECK(a.graph->adjacency.data() == b.graph->adjacency.data());
  }
  SUBCASE("noise 0, flat amplitude, no weekly term is periodic") {
    ShiftSpec spec;
    spec.noise = 0;
    spec.amplitude_jitter = 0;
    spec.weekly_amp = 0;
    auto ds = gen_synthetic<double>(7, 4, 600, 1, spec, 288);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t t = 0; t + 288 < 600; ++t)
        CHECK(ds.x.at(r, t, 0) ==
              doctest::Approx(ds.x.at(r, t + 288, 0)).epsilon(1e-9));
  }
  SUBCASE("amplitude scale x3 scales the mean") {
    ShiftSpec base;
    ShiftSpec shifted = base;
    shifted.amplitude_scale *= 3.0;
    auto a = gen_synthetic<double>(9, 6, 2000, 1, base);
    auto b = gen_synthetic<double>(9, 6, 2000, 1, shifted);
    double mu_a, mu_b, sig;
    compute_norm_stats(a.x, mu_a, sig);
    compute_norm_stats(b.x, mu_b, sig);
    CHECK(mu_b == doctest::Approx(3.0 * mu_a).epsilon(0.05));
  }
  SUBCASE("graph is connected") {
    auto ds = gen_synthetic<double>(3, 12, 50, 1);
    CHECK(ds.graph->trivial_count() == 1);
  }
}

TEST_CASE("no normalization leakage across partitions") {
  auto ds = gen_synthetic<double>(1, 4, 500, 1);
  {
    auto windows = make_windows(ds, 12, 12);
    auto split = chrono_split(windows);
    const std::size_t cut = split.train.back().start + 24;
    D head(Shape{4, cut, 1});
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t t = 0; t < cut; ++t)
        head.at(r, t, 0) = ds.x.at(r, t, 0);
    double mu_train, sig_train, mu_all, sig_all;
    compute_norm_stats(head, mu_train, sig_train);
    compute_norm_stats(ds.x, mu_all, sig_all);
    // Shifting the tail must not move the training statistics.
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t t = cut; t < 500; ++t) ds.x.at(r, t, 0) += 100.0;
    double mu2, sig2;
    D head2(Shape{4, cut, 1});
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t t = 0; t < cut; ++t)
        head2.at(r, t, 0) = ds.x.at(r, t, 0);
    compute_norm_stats(head2, mu2, sig2);
    CHECK(mu2 == mu_train);
    double mu3, sig3;
    compute_norm_stats(ds.x, mu3, sig3);
    CHECK(mu3 != mu_all);
  }
}

TEST_CASE("batch gathering normalizes inputs and keeps raw targets") {
  auto ds = gen_synthetic<double>(5, 3, 200, 1);
  double mu, sigma;
  compute_norm_stats(ds.x, mu, sigma);
  ds.mu = mu;
  ds.sigma = sigma;
  auto windows = make_windows(ds, 4, 2);
  auto batch = gather_batch(ds, windows, 10, 3, 4, 2);
  CHECK(batch.inputs.shape() == Shape{3, 3, 4, 1});
  CHECK(batch.targets.shape() == Shape{3, 3, 2, 1});
  CHECK(batch.inputs.at(0, 1, 2, 0) ==
        doctest::Approx((ds.x.at(1, 12, 0) - mu) / sigma));
  CHECK(batch.targets.at(0, 1, 1, 0) == ds.x.at(1, 15, 0));
}

TEST_CASE("binary dataset round trip is bitwise") {
  auto ds = gen_synthetic<double>(77, 6, 120, 2);
  save_dataset(ds, "test_roundtrip.stds");
  auto loaded = load_dataset<double>("test_roundtrip.stds");
  CHECK(loaded.x.data() == ds.x.data());
  CHECK(loaded.steps_per_day == ds.steps_per_day);
  REQUIRE(loaded.graph != nullptr);
  CHECK(loaded.graph->adjacency.data() == ds.graph->adjacency.data());

  // save -> load -> save is byte-identical.
  save_dataset(loaded, "test_roundtrip2.stds");
  std::ifstream f1("test_roundtrip.stds", std::ios::binary);
  std::ifstream f2("test_roundtrip2.stds", std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);

  SUBCASE("corrupted magic is rejected") {
    std::fstream f("test_roundtrip.stds",
                   std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
    f.close();
    CHECK_THROWS_WITH_AS(load_dataset<double>("test_roundtrip.stds"),
                         doctest::Contains("STDS"), DataError);
  }
}
