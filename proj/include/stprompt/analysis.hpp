#pragma once

#include <chrono>

#include "stprompt/graph.hpp"
#include "stprompt/losses.hpp"

namespace stprompt {

struct ProjectionResult {
  DTensor points;  // (N, 2), each row unit norm
  std::size_t dropped = 0;  // exact-zero rows removed before normalization
  double var_ratio[2] = {0, 0};
};

/// Top-2 principal components of row-vector data (N,d). Centers the data,
/// eigendecomposes the covariance with the Jacobi solver, and keeps the
/// solver's canonical eigenvector signs.
inline DTensor pca2(const DTensor& x, double var_ratio_out[2] = nullptr) {
  const Shape& s = x.shape();
  if (s.size() != 2 || s[0] < 3 || s[1] < 2)
    throw DataError("pca2 needs at least 3 samples of dimension >= 2");
  const std::size_t n = s[0], d = s[1];
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x.at(i, j);
  for (double& m : mean) m /= double(n);

  DTensor cov(Shape{d, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      const double xa = x.at(i, a) - mean[a];
      for (std::size_t b = 0; b < d; ++b)
        cov.at(a, b) += xa * (x.at(i, b) - mean[b]);
    }
  double total = 0;
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) cov.at(a, b) /= double(n);
    total += cov.at(a, a);
  }
  if (total < 1e-300) throw DataError("pca2: data has zero variance");

  EigenResult eig = jacobi_eigendecompose(cov);
  // Largest two eigenvalues (solver sorts ascending).
  const std::size_t i1 = d - 1, i2 = d - 2;
  if (var_ratio_out) {
    var_ratio_out[0] = eig.values[i1] / total;
    var_ratio_out[1] = eig.values[i2] / total;
  }
  DTensor scores(Shape{n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    double s1 = 0, s2 = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x.at(i, j) - mean[j];
      s1 += c * eig.vectors.at(j, i1);
      s2 += c * eig.vectors.at(j, i2);
    }
    scores.at(i, 0) = s1;
    scores.at(i, 1) = s2;
  }
  return scores;
}

/// L2-normalize 2-D points onto the unit circle; exact-zero points are
/// dropped and counted.
inline ProjectionResult unit_circle(const DTensor& points) {
  if (points.shape().size() != 2 || points.shape()[1] != 2)
    throw ShapeError("unit_circle expects (N,2)");
  const std::size_t n = points.shape()[0];
  std::vector<double> kept;
  ProjectionResult res;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = points.at(i, 0), y = points.at(i, 1);
    const double norm = std::sqrt(x * x + y * y);
    if (norm == 0) {
      ++res.dropped;
      continue;
    }
    kept.push_back(x / norm);
    kept.push_back(y / norm);
  }
  const std::size_t m = kept.size() / 2;
  res.points = DTensor(Shape{m, 2}, std::move(kept));
  return res;
}

struct UniformityStats {
  double mean_pairwise_cosine = 0;
  // Dispersion of the sorted angular gaps of the unit-circle projection
  // (0 = perfectly even spacing); decreases as the spread becomes uniform.
  double circular_variance = 0;
  // log mean exp(-2||x-y||^2) over L2-normalized embeddings; lower is more
  // uniform.
  double uniformity_metric = 0;
};

inline UniformityStats uniformity_stats(const DTensor& emb) {
  const Shape& s = emb.shape();
  if (s.size() != 2 || s[0] < 2)
    throw DataError("uniformity_stats needs >= 2 embeddings");
  const std::size_t n = s[0], d = s[1];

  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += emb.at(i, j) * emb.at(i, j);
    norms[i] = std::sqrt(ss);
  }

  UniformityStats st;
  double cos_sum = 0, exp_sum = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0, dist2 = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const double xi = norms[i] > 0 ? emb.at(i, k) / norms[i] : 0;
        const double xj = norms[j] > 0 ? emb.at(j, k) / norms[j] : 0;
        dot += (norms[i] > 0 && norms[j] > 0)
                   ? (emb.at(i, k) * emb.at(j, k))
                   : 0;
        const double diff = xi - xj;
        dist2 += diff * diff;
      }
      const double denom = norms[i] * norms[j];
      cos_sum += denom > 0 ? dot / denom : 0;
      exp_sum += std::exp(-2.0 * dist2);
      ++pairs;
    }
  }
  st.mean_pairwise_cosine = cos_sum / double(pairs);
  st.uniformity_metric = std::log(exp_sum / double(pairs));

  // Angles of the 2-D projection; gap dispersion around the circle.
  // Degenerate (zero-variance) embeddings simply leave the gap term at 0.
  if (d >= 2 && n >= 3) try {
    double vr[2];
    DTensor scores = pca2(emb, vr);
    ProjectionResult proj = unit_circle(scores);
    const std::size_t m = proj.points.shape()[0];
    if (m >= 2) {
      std::vector<double> angles(m);
      for (std::size_t i = 0; i < m; ++i)
        angles[i] = std::atan2(proj.points.at(i, 1), proj.points.at(i, 0));
      std::sort(angles.begin(), angles.end());
      const double two_pi = 2.0 * M_PI;
      double gap_mean = two_pi / double(m);
      double var = 0;
      for (std::size_t i = 0; i < m; ++i) {
        const double next = i + 1 < m ? angles[i + 1] : angles[0] + two_pi;
        const double gap = next - angles[i];
        var += (gap - gap_mean) * (gap - gap_mean);
      }
      st.circular_variance = var / double(m);
    }
  } catch (const DataError&) {
  }
  return st;
}

// ---- empirical complexity scaling ----

struct ScalingPoint {
  std::size_t value = 0;
  double median_ms = 0;
};

struct ScalingReport {
  std::string variable;  // "R" | "dprime" | ...
  std::vector<ScalingPoint> points;
  double slope = 0;            // fitted log-log slope
  double slope_halfwidth = 0;  // 95%-style confidence half-width
};

namespace detail {

template <typename Fn>
double median_time_ms(Fn&& fn, std::size_t reps) {
  std::vector<double> times;
  times.reserve(reps);
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    times.push_back(std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

inline void fit_loglog(ScalingReport& rep) {
  const std::size_t n = rep.points.size();
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = std::log(double(rep.points[i].value));
    ys[i] = std::log(std::max(rep.points[i].median_ms, 1e-9));
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  rep.slope = sxy / sxx;
  double sse = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pred = my + rep.slope * (xs[i] - mx);
    sse += (ys[i] - pred) * (ys[i] - pred);
  }
  const double se =
      n > 2 ? std::sqrt(sse / double(n - 2) / sxx) : 0.0;
  rep.slope_halfwidth = 2.0 * se;
}

}  // namespace detail

enum class BenchComponent { Temporal, Spatial, Uniformity };

/// Time plain (tape-free) forward evaluations of one component while
/// sweeping a single size variable; fits a log-log slope.
/// variable: "R" or "dprime".
inline ScalingReport bench_scaling(BenchComponent comp,
                                   const std::string& variable,
                                   const std::vector<std::size_t>& sweep,
                                   std::size_t fixed_r = 64,
                                   std::size_t fixed_dp = 64,
                                   std::size_t reps = 11) {
  if (sweep.size() < 5)
    throw ConfigError("scaling sweep needs at least 5 points");
  if (reps < 10) reps = 10;
  std::mt19937_64 rng(12345);
  ScalingReport rep;
  rep.variable = variable;

  for (std::size_t v : sweep) {
    const std::size_t R = variable == "R" ? v : fixed_r;
    const std::size_t dp = variable == "dprime" ? v : fixed_dp;

    Tensor<double> x = Tensor<double>::randu(Shape{R, dp}, rng);
    Tensor<double> w = Tensor<double>::randu(Shape{dp, dp}, rng);
    Tensor<double> b(Shape{dp}, 0.01);
    // Sparse-ish propagation: ring + a few chords, E ~ O(R).
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t r = 0; r < R && R > 1; ++r)
      edges.emplace_back(r, (r + 1) % R);

    Tensor<double> out(Shape{R, dp});
    auto run = [&] {
      switch (comp) {
        case BenchComponent::Temporal: {
          // (W2 sigmoid(W1 x + b1) + b2) + x over each row.
          for (std::size_t r = 0; r < R; ++r) {
            std::vector<double> hid(dp, 0.0);
            for (std::size_t j = 0; j < dp; ++j) {
              double acc = b[j];
              for (std::size_t k = 0; k < dp; ++k)
                acc += x.at(r, k) * w.at(k, j);
              hid[j] = 1.0 / (1.0 + std::exp(-acc));
            }
            for (std::size_t j = 0; j < dp; ++j) {
              double acc = b[j];
              for (std::size_t k = 0; k < dp; ++k)
                acc += hid[k] * w.at(k, j);
              out.at(r, j) = acc + x.at(r, j);
            }
          }
          break;
        }
        case BenchComponent::Spatial: {
          // Edge-sparse propagation then a d'xd' linear map.
          Tensor<double> mixed(Shape{R, dp});
          for (const auto& [a, c] : edges)
            for (std::size_t j = 0; j < dp; ++j) {
              mixed.at(a, j) += x.at(c, j);
              mixed.at(c, j) += x.at(a, j);
            }
          for (std::size_t r = 0; r < R; ++r)
            for (std::size_t j = 0; j < dp; ++j) {
              double acc = 0;
              for (std::size_t k = 0; k < dp; ++k)
                acc += mixed.at(r, k) * w.at(k, j);
              out.at(r, j) = std::max(acc, 0.0) + x.at(r, j);
            }
          break;
        }
        case BenchComponent::Uniformity: {
          std::vector<double> norms(R);
          for (std::size_t r = 0; r < R; ++r) {
            double ss = 0;
            for (std::size_t k = 0; k < dp; ++k) ss += x.at(r, k) * x.at(r, k);
            norms[r] = std::max(std::sqrt(ss), 1e-12);
          }
          double total = 0;
          for (std::size_t r = 0; r < R; ++r) {
            double acc = 0;
            for (std::size_t r2 = 0; r2 < R; ++r2) {
              if (r2 == r) continue;
              double dot = 0;
              for (std::size_t k = 0; k < dp; ++k)
                dot += x.at(r, k) * x.at(r2, k);
              acc += std::exp(dot / (norms[r] * norms[r2]) / 0.3);
            }
            total += std::log(acc);
          }
          out[0] = total;
          break;
        }
      }
    };

    ScalingPoint pt;
    pt.value = v;
    pt.median_ms = detail::median_time_ms(run, reps);
    // Widen repetitions when the measurement is near timer resolution.
    while (pt.median_ms < 1e-4 && reps < 200) {
      reps *= 2;
      pt.median_ms = detail::median_time_ms(run, reps);
    }
    rep.points.push_back(pt);
  }
  detail::fit_loglog(rep);
  return rep;
}

}  // namespace stprompt
