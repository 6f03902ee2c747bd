#pragma once

#include <limits>
#include <optional>

#include "stprompt/autodiff.hpp"
#include "stprompt/config.hpp"

namespace stprompt {

struct LossConfig {
  double tau = 0.3;
  double lambda = 1.0;
  UniformitySign sign = UniformitySign::Separation;

  void validate() const {
    if (tau <= 0) throw ConfigError("tau must be positive");
    if (lambda < 0) throw ConfigError("lambda must be nonnegative");
  }
};

/// Mean absolute error over every entry (Var route, for training).
template <typename T>
Var<T> regression_loss(const Var<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("regression loss shape mismatch: " +
                     shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  if (target.numel() == 0) throw ShapeError("regression loss on empty tensors");
  return mean_all(abs_(sub(pred, Var<T>::constant(target))));
}

/// InfoNCE-style uniformity term over prompt embeddings (B,R,F,d').
/// Per sample and feature: log sum_{r' != r} exp(cos(e_r, e_r')/tau),
/// averaged over (B,R,F). `separation` minimizes similarity (pushes
/// embeddings apart); `literal` negates the term. Cosine against a zero
/// vector is 0. Log-sum-exp is stabilized by per-row max subtraction.
template <typename T>
Var<T> uniformity_loss(const Var<T>& e_pro, double tau,
                       UniformitySign sign = UniformitySign::Separation) {
  const Shape& s = e_pro.shape();
  if (s.size() != 4) throw ShapeError("uniformity loss expects (B,R,F,d')");
  const std::size_t B = s[0], R = s[1], F = s[2], D = s[3];
  if (R < 2) throw DataError("uniformity loss needs at least 2 regions");
  if (tau <= 0) throw ConfigError("tau must be positive");

  Var<T> ones_col = Var<T>::constant(Tensor<T>::ones(Shape{D, 1}));
  Var<T> ones_r = Var<T>::constant(Tensor<T>::ones(Shape{R, 1}));
  Tensor<T> mask_t(Shape{R, R}, T(1));
  for (std::size_t r = 0; r < R; ++r) mask_t.at(r, r) = T(0);
  Var<T> mask = Var<T>::constant(std::move(mask_t));

  Var<T> total;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t f = 0; f < F; ++f) {
      Var<T> e = slice_bf(e_pro, b, f);  // (R, d')
      Var<T> norm = clamp_min(sqrt_(matmul(square(e), ones_col)), T(1e-12));
      Var<T> cos =
          div(matmul(e, transpose2d(e)), matmul(norm, transpose2d(norm)));
      Var<T> scaled = scale(cos, T(1.0 / tau));

      // Per-row max over off-diagonal entries, detached for stability.
      Tensor<T> rowmax(Shape{R, R});
      Tensor<T> rowmax_col(Shape{R, 1});
      for (std::size_t r = 0; r < R; ++r) {
        T m = -std::numeric_limits<T>::infinity();
        for (std::size_t r2 = 0; r2 < R; ++r2)
          if (r2 != r) m = std::max(m, scaled.value().at(r, r2));
        rowmax_col.at(r, 0) = m;
        for (std::size_t r2 = 0; r2 < R; ++r2) rowmax.at(r, r2) = m;
      }
      Var<T> expm =
          mul(exp_(sub(scaled, Var<T>::constant(std::move(rowmax)))), mask);
      Var<T> lse = add(log_(matmul(expm, ones_r)),
                       Var<T>::constant(std::move(rowmax_col)));
      Var<T> contrib = sum_all(lse);
      total = total.defined() ? add(total, contrib) : contrib;
    }
  }
  const double norm = 1.0 / double(B * R * F);
  return scale(total,
               T(sign == UniformitySign::Separation ? norm : -norm));
}

template <typename T>
Var<T> combined_loss(const Var<T>& l_r, const Var<T>& l_uni, double lambda) {
  if (lambda < 0) throw ConfigError("lambda must be nonnegative");
  if (!l_uni.defined() || lambda == 0) return l_r;
  return add(l_r, scale(l_uni, T(lambda)));
}

/// r/BN ablation: standardize E_pro per coordinate across the batch
/// (detached batch statistics, no running averages).
template <typename T>
Var<T> batch_standardize(const Var<T>& e_pro) {
  const Shape& s = e_pro.shape();
  if (s.size() != 4) throw ShapeError("batch_standardize expects (B,R,F,d')");
  const std::size_t B = s[0], per = s[1] * s[2] * s[3];
  Tensor<T> mean(Shape{s[1], s[2], s[3]});
  Tensor<T> stdev(Shape{s[1], s[2], s[3]});
  for (std::size_t c = 0; c < per; ++c) {
    double m = 0;
    for (std::size_t b = 0; b < B; ++b) m += double(e_pro.value()[b * per + c]);
    m /= double(B);
    double v = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const double d = double(e_pro.value()[b * per + c]) - m;
      v += d * d;
    }
    mean[c] = T(m);
    stdev[c] = T(std::max(std::sqrt(v / double(B)), 1e-6));
  }
  return div(sub(e_pro, Var<T>::constant(std::move(mean))),
             Var<T>::constant(std::move(stdev)));
}

// ---- evaluation metrics (plain tensors) ----

struct MetricReport {
  double mae = 0, rmse = 0;
  std::optional<double> mape;  // fraction; empty when every entry is masked

  nlohmann::json to_json() const {
    nlohmann::json j = {{"mae", mae}, {"rmse", rmse}};
    if (mape)
      j["mape"] = *mape;
    else
      j["mape"] = nullptr;
    return j;
  }
};

template <typename T>
MetricReport metrics(const Tensor<T>& y, const Tensor<T>& yhat,
                     double mape_epsilon = 1e-3) {
  if (y.shape() != yhat.shape())
    throw ShapeError("metrics shape mismatch: " + shape_str(y.shape()) +
                     " vs " + shape_str(yhat.shape()));
  if (y.numel() == 0) throw ShapeError("metrics on empty tensors");
  double abs_sum = 0, sq_sum = 0, mape_sum = 0;
  std::size_t mape_n = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const double e = double(y[i]) - double(yhat[i]);
    abs_sum += std::abs(e);
    sq_sum += e * e;
    if (std::abs(double(y[i])) > mape_epsilon) {
      mape_sum += std::abs(e / double(y[i]));
      ++mape_n;
    }
  }
  MetricReport r;
  r.mae = abs_sum / double(y.numel());
  r.rmse = std::sqrt(sq_sum / double(y.numel()));
  if (mape_n > 0) r.mape = mape_sum / double(mape_n);
  return r;
}

}  // namespace stprompt
