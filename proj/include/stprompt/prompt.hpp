#pragma once

#include "stprompt/config.hpp"
#include "stprompt/dataset.hpp"
#include "stprompt/params.hpp"

namespace stprompt {

// Spatio-temporal prompt network: context distillation (data projection +
// calendar context + Laplacian spatial context) followed by L stacked
// gating/graph-convolution encoder layers with mandatory residuals.
// Parameter shapes depend only on (H, d, d_t, d_r, L), never on the region
// count or series length, so one parameter set transfers across datasets.

namespace detail {

template <typename T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in,
                       std::mt19937_64& rng) {
  const T bound = T(1.0 / std::sqrt(double(fan_in)));
  return Tensor<T>::randu(std::move(shape), rng, -bound, bound);
}

}  // namespace detail

/// Per (region, feature): map the length-H normalized series through e0.
/// window: (B,R,H,F) -> E: (B,R,F,d).
template <typename T>
Var<T> project_window(const Tensor<T>& window, const Var<T>& e0) {
  const Shape& ws = window.shape();
  if (ws.size() != 4) throw ShapeError("window must be (B,R,H,F)");
  const std::size_t B = ws[0], R = ws[1], H = ws[2], F = ws[3];
  if (e0.shape()[0] != H)
    throw ShapeError("window length " + std::to_string(H) +
                     " does not match projection input extent " +
                     std::to_string(e0.shape()[0]));
  // Permute (B,R,H,F) -> (B,R,F,H) so the series is the last axis.
  Tensor<T> perm(Shape{B, R, F, H});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t t = 0; t < H; ++t)
        for (std::size_t f = 0; f < F; ++f)
          perm.at(b, r, f, t) = window.at(b, r, t, f);
  return linear_last(Var<T>::constant(std::move(perm)), e0);
}

/// M = concat(z_d * e1, z_w * e2) per sample, from the last input step's
/// calendar fractions. Output (B, 2*d_t).
template <typename T>
Var<T> temporal_context(const std::vector<double>& tod,
                        const std::vector<double>& dow, const Var<T>& e1,
                        const Var<T>& e2) {
  const std::size_t B = tod.size();
  for (std::size_t b = 0; b < B; ++b)
    if (tod[b] < 0 || tod[b] >= 1 || dow[b] < 0 || dow[b] >= 1)
      throw DataError("calendar fraction out of [0,1)");
  Tensor<T> zd(Shape{B, 1}), zw(Shape{B, 1});
  for (std::size_t b = 0; b < B; ++b) {
    zd.at(b, 0) = T(tod[b]);
    zw.at(b, 0) = T(dow[b]);
  }
  const std::size_t dt = e1.shape()[0];
  Var<T> md = matmul(Var<T>::constant(std::move(zd)),
                     reshape(e1, Shape{1, dt}));
  Var<T> mw = matmul(Var<T>::constant(std::move(zw)),
                     reshape(e2, Shape{1, dt}));
  return concat<T>({md, mw}, 1);
}

/// Two-layer MLP (relu hidden) applied row-wise to the spatial context.
template <typename T>
Var<T> spatial_mlp(const Var<T>& c, const Var<T>& w1, const Var<T>& b1,
                   const Var<T>& w2, const Var<T>& b2) {
  return linear_last(relu(linear_last(c, w1, b1)), w2, b2);
}

/// H = (W2 sigmoid(W1 x + b1) + b2) + x, applied over the last axis.
template <typename T>
Var<T> temporal_encoder_layer(const Var<T>& x, const Var<T>& w1,
                              const Var<T>& b1, const Var<T>& w2,
                              const Var<T>& b2) {
  return add(linear_last(sigmoid(linear_last(x, w1, b1)), w2, b2), x);
}

/// S = relu(P h W3) + h, per feature slice; P is the propagation matrix.
template <typename T>
Var<T> spatial_encoder_layer(const Var<T>& h, const Var<T>& prop,
                             const Var<T>& w3) {
  return add(relu(linear_last(region_mix(h, prop), w3)), h);
}

template <typename T>
class PromptNet {
 public:
  explicit PromptNet(RunConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
  }

  const RunConfig& config() const { return cfg_; }

  void init_params(ParameterStore<T>& store, std::mt19937_64& rng) const {
    const std::size_t H = cfg_.history, d = cfg_.d, dt = cfg_.d_t,
                      dr = cfg_.d_r, dp = cfg_.d_prime();
    store.create("prompt/e0", detail::uniform_init<T>(Shape{H, d}, H, rng),
                 Owner::Prompt);
    store.create("prompt/e1", detail::uniform_init<T>(Shape{dt}, 1, rng),
                 Owner::Prompt);
    store.create("prompt/e2", detail::uniform_init<T>(Shape{dt}, 1, rng),
                 Owner::Prompt);
    store.create("prompt/mlp_w1",
                 detail::uniform_init<T>(Shape{dr, dr}, dr, rng),
                 Owner::Prompt);
    store.create("prompt/mlp_b1", Tensor<T>(Shape{dr}), Owner::Prompt);
    store.create("prompt/mlp_w2",
                 detail::uniform_init<T>(Shape{dr, dr}, dr, rng),
                 Owner::Prompt);
    store.create("prompt/mlp_b2", Tensor<T>(Shape{dr}), Owner::Prompt);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "prompt/layer" + std::to_string(l) + "/";
      store.create(p + "w1", detail::uniform_init<T>(Shape{dp, dp}, dp, rng),
                   Owner::Prompt);
      store.create(p + "b1", Tensor<T>(Shape{dp}), Owner::Prompt);
      store.create(p + "w2", detail::uniform_init<T>(Shape{dp, dp}, dp, rng),
                   Owner::Prompt);
      store.create(p + "b2", Tensor<T>(Shape{dp}), Owner::Prompt);
      store.create(p + "w3", detail::uniform_init<T>(Shape{dp, dp}, dp, rng),
                   Owner::Prompt);
    }
  }

  /// Closed-form trainable parameter count of the prompt network:
  /// H*d + 2*d_t + 2*(d_r^2 + d_r) + L*(3*d'^2 + 2*d').
  std::size_t parameter_count() const {
    const std::size_t dp = cfg_.d_prime();
    return cfg_.history * cfg_.d + 2 * cfg_.d_t +
           2 * (cfg_.d_r * cfg_.d_r + cfg_.d_r) +
           cfg_.layers * (3 * dp * dp + 2 * dp);
  }

  /// Integrated context embedding Ebar = concat(E, M, Cbar), (B,R,F,d').
  Var<T> integrate_context(const ParameterStore<T>& store,
                           const WindowBatch<T>& batch,
                           const RoadGraph& graph) const {
    const Shape& ws = batch.inputs.shape();
    const std::size_t B = ws[0], R = ws[1], F = ws[3];
    if (graph.regions != R)
      throw ConfigError("graph regions " + std::to_string(graph.regions) +
                        " != batch regions " + std::to_string(R));

    Var<T> e = project_window(batch.inputs, store.get("prompt/e0"));

    Var<T> m;
    if (cfg_.ablate_tc) {
      m = Var<T>::constant(Tensor<T>(Shape{B, 2 * cfg_.d_t}));
    } else {
      m = temporal_context(batch.tod, batch.dow, store.get("prompt/e1"),
                           store.get("prompt/e2"));
    }

    Var<T> cbar;
    if (cfg_.ablate_sc) {
      cbar = Var<T>::constant(Tensor<T>(Shape{R, cfg_.d_r}));
    } else {
      Tensor<T> c = spatial_context(graph, cfg_.d_r).template cast<T>();
      cbar = spatial_mlp(Var<T>::constant(std::move(c)),
                         store.get("prompt/mlp_w1"), store.get("prompt/mlp_b1"),
                         store.get("prompt/mlp_w2"),
                         store.get("prompt/mlp_b2"));
    }

    return concat<T>(
        {e, broadcast_sample(m, R, F), broadcast_region(cbar, B, F)}, 3);
  }

  /// Propagation matrix for the spatial encoders as a constant input.
  Var<T> propagation_matrix(const RoadGraph& graph) const {
    DTensor p = cfg_.propagation == Propagation::SymNorm
                    ? graph.sym_norm_adjacency()
                    : graph.adjacency;
    return Var<T>::constant(p.template cast<T>());
  }

  /// Full forward pass: E_pro = encoder stack over the integrated context.
  Var<T> forward(const ParameterStore<T>& store, const WindowBatch<T>& batch,
                 const RoadGraph& graph) const {
    Var<T> x = integrate_context(store, batch, graph);
    Var<T> prop = propagation_matrix(graph);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "prompt/layer" + std::to_string(l) + "/";
      if (!cfg_.ablate_te)
        x = temporal_encoder_layer(x, store.get(p + "w1"), store.get(p + "b1"),
                                   store.get(p + "w2"), store.get(p + "b2"));
      if (!cfg_.ablate_se)
        x = spatial_encoder_layer(x, prop, store.get(p + "w3"));
    }
    return x;
  }

 private:
  RunConfig cfg_;
};

}  // namespace stprompt
