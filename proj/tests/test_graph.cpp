#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "stprompt/graph.hpp"

using namespace stprompt;

namespace {

DTensor path3_adjacency() {
  DTensor a(Shape{3, 3});
  a.at(0, 1) = a.at(1, 0) = 1;
  a.at(1, 2) = a.at(2, 1) = 1;
  return a;
}

DTensor random_connected_adjacency(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  DTensor a(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (unif(rng) < 0.3) a.at(i, j) = a.at(j, i) = 0.5 + unif(rng);
  // Spanning chain keeps it connected.
  for (std::size_t i = 0; i + 1 < n; ++i)
    if (a.at(i, i + 1) == 0) a.at(i, i + 1) = a.at(i + 1, i) = 1.0;
  return a;
}

}  // namespace

TEST_CASE("gaussian kernel adjacency") {
  DTensor dist(Shape{3, 3});
  dist.at(0, 1) = dist.at(1, 0) = 1;
  dist.at(1, 2) = dist.at(2, 1) = 1;
  dist.at(0, 2) = dist.at(2, 0) = 2;

  SUBCASE("zero distance gives weight 1") {
    DTensor d0(Shape{2, 2});
    DTensor a = build_adjacency(d0, 1.0, 1.0);
    CHECK(a.at(0, 1) == doctest::Approx(1.0));
    CHECK(a.at(0, 0) == 0.0);
  }
  SUBCASE("threshold admitting distance <= 1 yields a path graph") {
    DTensor a = build_adjacency(dist, 1.0, 1.0);
    CHECK(a.at(0, 1) == doctest::Approx(std::exp(-1.0)));
    CHECK(a.at(0, 2) == 0.0);
  }
  SUBCASE("all pairs beyond threshold gives the empty graph") {
    DTensor a = build_adjacency(dist, 1.0, 0.5);
    CHECK(a.sum() == 0.0);
    // Isolated-node handling: the Laplacian stays well-defined.
    DTensor lap = normalized_laplacian(a);
    for (std::size_t i = 0; i < 3; ++i) CHECK(lap.at(i, i) == 1.0);
  }
  SUBCASE("non-symmetric distances rejected") {
    dist.at(0, 1) = 3;
    CHECK_THROWS_AS(build_adjacency(dist, 1.0, 1.0), DataError);
  }
}

TEST_CASE("normalized laplacian of 2-node complete graph") {
  DTensor a(Shape{2, 2});
  a.at(0, 1) = a.at(1, 0) = 1;
  DTensor lap = normalized_laplacian(a);
  CHECK(lap.at(0, 0) == doctest::Approx(1.0));
  CHECK(lap.at(0, 1) == doctest::Approx(-1.0));
  auto eig = jacobi_eigendecompose(lap);
  CHECK(eig.values[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(eig.values[1] == doctest::Approx(2.0));
  // Eigenvectors up to canonical sign.
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  CHECK(eig.vectors.at(0, 0) == doctest::Approx(inv_sqrt2));
  CHECK(eig.vectors.at(1, 0) == doctest::Approx(inv_sqrt2));
  CHECK(std::abs(eig.vectors.at(0, 1)) == doctest::Approx(inv_sqrt2));
  CHECK(eig.vectors.at(0, 1) * eig.vectors.at(1, 1) < 0);
}

TEST_CASE("negative adjacency rejected") {
  DTensor a(Shape{2, 2});
  a.at(0, 1) = -1;
  a.at(1, 0) = -1;
  CHECK_THROWS_AS(normalized_laplacian(a), DataError);
}

TEST_CASE("path graph on 3 nodes has spectrum {0,1,2}") {
  auto g = RoadGraph::from_adjacency(path3_adjacency());
  REQUIRE(g.eigenvalues.size() == 3);
  CHECK(g.eigenvalues[0] == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(g.eigenvalues[1] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(g.eigenvalues[2] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(g.edge_count == 2);
}

TEST_CASE("identity matrix eigendecomposition") {
  DTensor eye(Shape{4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1;
  auto eig = jacobi_eigendecompose(eye);
  for (double v : eig.values) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("random symmetric 8x8 reconstruction") {
  std::mt19937_64 rng(5);
  DTensor m = DTensor::randu(Shape{8, 8}, rng);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < i; ++j) m.at(i, j) = m.at(j, i);
  auto eig = jacobi_eigendecompose(m);
  double err = 0;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      double rec = 0;
      for (std::size_t k = 0; k < 8; ++k)
        rec += eig.vectors.at(i, k) * eig.values[k] * eig.vectors.at(j, k);
      err += (rec - m.at(i, j)) * (rec - m.at(i, j));
    }
  CHECK(std::sqrt(err) < 1e-8);
}

TEST_CASE("spatial context selection") {
  auto g = RoadGraph::from_adjacency(path3_adjacency());

  SUBCASE("d_r=1 gives the lambda=1 eigenvector") {
    DTensor c = spatial_context(g, 1);
    // Proportional to (1,0,-1)/sqrt(2) up to canonical sign.
    CHECK(std::abs(c.at(0, 0)) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(c.at(1, 0) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(c.at(0, 0) * c.at(2, 0) < 0);
  }
  SUBCASE("connected graph: no trivial columns and d_r columns") {
    DTensor c = spatial_context(g, 2);
    CHECK(c.shape() == Shape{3, 2});
  }
  SUBCASE("two components reduce the available count") {
    DTensor a(Shape{4, 4});
    a.at(0, 1) = a.at(1, 0) = 1;
    a.at(2, 3) = a.at(3, 2) = 1;
    auto g2 = RoadGraph::from_adjacency(a);
    CHECK(g2.trivial_count() == 2);
    CHECK_THROWS_AS(spatial_context(g2, 3), ConfigError);
  }
}

TEST_CASE("invariants on random connected graphs") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> size_dist(2, 24);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = size_dist(rng);
    auto g = RoadGraph::from_adjacency(random_connected_adjacency(n, rng));

    // Spectrum in [0,2]; exactly one trivial eigenvalue; orthonormal U.
    std::size_t below = 0;
    for (double v : g.eigenvalues) {
      CHECK(v > -1e-8);
      CHECK(v < 2 + 1e-8);
      if (v < 1e-8) ++below;
    }
    CHECK(below == 1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0;
        for (std::size_t k = 0; k < n; ++k)
          dot += g.eigenvectors.at(k, i) * g.eigenvectors.at(k, j);
        CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-6);
      }
  }
}

TEST_CASE("sign canonicalization makes decomposition deterministic") {
  std::mt19937_64 rng(23);
  auto adj = random_connected_adjacency(10, rng);
  auto g1 = RoadGraph::from_adjacency(adj);
  auto g2 = RoadGraph::from_adjacency(adj);
  CHECK(g1.eigenvectors.data() == g2.eigenvectors.data());
}

TEST_CASE("permutation equivariance of spatial context") {
  std::mt19937_64 rng(29);
  const std::size_t n = 8;
  auto adj = random_connected_adjacency(n, rng);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  DTensor padj(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      padj.at(perm[i], perm[j]) = adj.at(i, j);

  auto g = RoadGraph::from_adjacency(adj);
  auto gp = RoadGraph::from_adjacency(padj);
  DTensor c = spatial_context(g, 3);
  DTensor cp = spatial_context(gp, 3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 3; ++k)
      CHECK(cp.at(perm[i], k) == doctest::Approx(c.at(i, k)).epsilon(1e-6));
}

TEST_CASE("graph file round trip, both formats") {
  {
    std::ofstream os("test_edges.graph");
    os << "R=3\n0 1 1.0\n1 2 1.0\n";
  }
  auto g = load_graph_file("test_edges.graph");
  CHECK(g.regions == 3);
  CHECK(g.eigenvalues[1] == doctest::Approx(1.0));

  {
    std::ofstream os("test_dist.csv");
    os << "0,1,2\n1,0,1\n2,1,0\n";
  }
  auto g2 = load_graph_file("test_dist.csv", 1.0, 1.0);
  CHECK(g2.regions == 3);
  CHECK(g2.adjacency.at(0, 2) == 0.0);

  CHECK_THROWS_AS(load_graph_file("missing.graph"), IoError);
}
