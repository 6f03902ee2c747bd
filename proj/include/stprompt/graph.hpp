#pragma once

#include <fstream>

#include "stprompt/tensor.hpp"

namespace stprompt {

using DTensor = Tensor<double>;

/// Cyclic Jacobi rotations for a symmetric matrix. Returns eigenvalues
/// ascending with matching eigenvector columns; each eigenvector's sign is
/// canonicalized so its largest-magnitude entry is positive.
struct EigenResult {
  std::vector<double> values;  // ascending
  DTensor vectors;             // columns are eigenvectors
};

namespace detail {

inline double offdiag_frobenius(const DTensor& a) {
  const std::size_t n = a.shape()[0];
  double s = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) s += a.at(i, j) * a.at(i, j);
  return std::sqrt(s);
}

}  // namespace detail

inline EigenResult jacobi_eigendecompose(DTensor a, double tol = 1e-10,
                                         int max_sweeps = 50) {
  const std::size_t n = a.shape()[0];
  if (a.shape().size() != 2 || a.shape()[1] != n)
    throw ShapeError("eigendecompose expects a square matrix, got " +
                     shape_str(a.shape()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(a.at(i, j) - a.at(j, i)) > 1e-9)
        throw DataError("matrix not symmetric at (" + std::to_string(i) + "," +
                        std::to_string(j) + ")");

  DTensor u(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) u.at(i, i) = 1.0;

  int sweep = 0;
  while (detail::offdiag_frobenius(a) > tol) {
    if (++sweep > max_sweeps)
      throw NumericError("Jacobi eigensolver did not converge in " +
                         std::to_string(max_sweeps) + " sweeps");
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double app = a.at(p, p), aqq = a.at(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double ukp = u.at(k, p), ukq = u.at(k, q);
          u.at(k, p) = c * ukp - s * ukq;
          u.at(k, q) = s * ukp + c * ukq;
        }
      }
    }
  }

  // Sort ascending; ties keep prior column order (stable).
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
    return a.at(i, i) < a.at(j, j);
  });

  EigenResult res;
  res.values.resize(n);
  res.vectors = DTensor(Shape{n, n});
  for (std::size_t c = 0; c < n; ++c) {
    res.values[c] = a.at(idx[c], idx[c]);
    // Canonical sign: largest-magnitude entry positive; ties -> first index.
    std::size_t arg = 0;
    double best = -1;
    for (std::size_t r = 0; r < n; ++r) {
      const double m = std::abs(u.at(r, idx[c]));
      if (m > best + 1e-15) {
        best = m;
        arg = r;
      }
    }
    const double sign = u.at(arg, idx[c]) >= 0 ? 1.0 : -1.0;
    for (std::size_t r = 0; r < n; ++r)
      res.vectors.at(r, c) = sign * u.at(r, idx[c]);
  }
  return res;
}

/// Gaussian-kernel adjacency from pairwise distances: exp(-d^2/theta^2)
/// for pairs with d <= kappa, zero diagonal.
inline DTensor build_adjacency(const DTensor& dist, double theta,
                               double kappa) {
  const std::size_t n = dist.shape()[0];
  if (dist.shape().size() != 2 || dist.shape()[1] != n)
    throw ShapeError("distance matrix must be square");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (dist.at(i, j) < 0) throw DataError("negative distance entry");
      if (std::abs(dist.at(i, j) - dist.at(j, i)) > 1e-9)
        throw DataError("distance matrix not symmetric at (" +
                        std::to_string(i) + "," + std::to_string(j) + ")");
    }
  DTensor a(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = dist.at(i, j);
      if (d <= kappa) a.at(i, j) = std::exp(-(d * d) / (theta * theta));
    }
  return a;
}

/// Delta = I - D^{-1/2} A D^{-1/2}; isolated nodes get D^{-1/2} = 0 so the
/// corresponding diagonal entry stays 1.
inline DTensor normalized_laplacian(const DTensor& a) {
  const std::size_t n = a.shape()[0];
  if (a.shape().size() != 2 || a.shape()[1] != n)
    throw ShapeError("adjacency must be square");
  std::vector<double> dinv(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (a.at(i, j) < 0) throw DataError("adjacency has negative entries");
      deg += a.at(i, j);
    }
    dinv[i] = deg > 0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  DTensor lap(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      lap.at(i, j) = (i == j ? 1.0 : 0.0) - dinv[i] * a.at(i, j) * dinv[j];
  }
  return lap;
}

struct RoadGraph {
  std::size_t regions = 0;
  DTensor adjacency;           // symmetric, zero diagonal
  DTensor laplacian;           // I - D^{-1/2} A D^{-1/2}
  std::vector<double> eigenvalues;  // ascending
  DTensor eigenvectors;        // orthonormal columns
  std::size_t edge_count = 0;  // unordered pairs with nonzero weight

  static RoadGraph from_adjacency(DTensor a) {
    RoadGraph g;
    g.regions = a.shape()[0];
    for (std::size_t i = 0; i < g.regions; ++i) {
      if (std::abs(a.at(i, i)) > 1e-12)
        throw DataError("adjacency diagonal must be zero");
      for (std::size_t j = i + 1; j < g.regions; ++j) {
        if (std::abs(a.at(i, j) - a.at(j, i)) > 1e-9)
          throw DataError("adjacency not symmetric");
        if (a.at(i, j) != 0) ++g.edge_count;
      }
    }
    g.laplacian = normalized_laplacian(a);
    auto eig = jacobi_eigendecompose(g.laplacian);
    g.eigenvalues = std::move(eig.values);
    g.eigenvectors = std::move(eig.vectors);
    g.adjacency = std::move(a);
    return g;
  }

  /// D^{-1/2} A D^{-1/2}, the default propagation matrix for the spatial
  /// encoders (spectral radius <= 1).
  DTensor sym_norm_adjacency() const {
    DTensor p = laplacian;
    for (std::size_t i = 0; i < regions; ++i)
      for (std::size_t j = 0; j < regions; ++j)
        p.at(i, j) = (i == j ? 1.0 : 0.0) - p.at(i, j);
    return p;
  }

  std::size_t trivial_count() const {
    std::size_t c = 0;
    for (double v : eigenvalues)
      if (v < 1e-8) ++c;
    return c;
  }
};

/// Columns of U for the d_r smallest nontrivial eigenvalues (eigenvalue
/// >= 1e-8; one trivial eigenvector per connected component is skipped).
inline DTensor spatial_context(const RoadGraph& g, std::size_t d_r) {
  const std::size_t skip = g.trivial_count();
  if (d_r > g.regions - skip)
    throw ConfigError(
        "d_r=" + std::to_string(d_r) + " exceeds the " +
        std::to_string(g.regions - skip) +
        " nontrivial eigenvectors available; reduce d_r or use a more "
        "connected graph");
  DTensor c(Shape{g.regions, d_r});
  for (std::size_t k = 0; k < d_r; ++k)
    for (std::size_t r = 0; r < g.regions; ++r)
      c.at(r, k) = g.eigenvectors.at(r, skip + k);
  return c;
}

// ---- graph file loading ----
// Edge-list format: first line "R=<n>", then "src dst weight" per line.
// Distance-matrix CSV: square numeric matrix, converted via build_adjacency.

inline RoadGraph load_graph_file(const std::string& path, double theta = 1.0,
                                 double kappa = 1.0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open graph file '" + path + "'");
  std::string first_line;
  if (!std::getline(in, first_line))
    throw IoError("empty graph file '" + path + "'");

  if (first_line.rfind("R=", 0) == 0) {
    const std::size_t n = std::stoul(first_line.substr(2));
    DTensor a(Shape{n, n});
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::size_t s, d;
      double w;
      if (!(ls >> s >> d >> w))
        throw DataError("bad edge at line " + std::to_string(lineno) +
                        " of '" + path + "'");
      if (s >= n || d >= n)
        throw DataError("edge endpoint out of range at line " +
                        std::to_string(lineno));
      a.at(s, d) = w;
      a.at(d, s) = w;
    }
    return RoadGraph::from_adjacency(std::move(a));
  }

  // Distance-matrix CSV.
  std::vector<std::vector<double>> rows;
  std::string line = first_line;
  std::size_t lineno = 0;
  do {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw DataError("non-numeric cell at row " + std::to_string(lineno) +
                        " of '" + path + "'");
      }
    }
    rows.push_back(std::move(row));
  } while (std::getline(in, line));

  const std::size_t n = rows.size();
  DTensor dist(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != n)
      throw DataError("distance matrix row " + std::to_string(i + 1) +
                      " has " + std::to_string(rows[i].size()) +
                      " cells, expected " + std::to_string(n));
    for (std::size_t j = 0; j < n; ++j) dist.at(i, j) = rows[i][j];
  }
  return RoadGraph::from_adjacency(build_adjacency(dist, theta, kappa));
}

}  // namespace stprompt
