#pragma once

#include "stprompt/prompt.hpp"

namespace stprompt {

// Built-in downstream predictor g: two graph-convolution blocks
// (propagation x linear, relu, residual) over E_pro, then a per-region
// linear head mapping d' -> P. All parameters are region-count independent.
// The head is tagged dataset-specific so prompt-tuning re-initializes and
// trains it; the conv blocks are the frozen downstream backbone.

template <typename T>
class DownstreamNet {
 public:
  explicit DownstreamNet(RunConfig cfg) : cfg_(std::move(cfg)) {}

  static constexpr std::size_t kBlocks = 2;

  void init_backbone(ParameterStore<T>& store, std::mt19937_64& rng) const {
    const std::size_t dp = cfg_.d_prime();
    for (std::size_t l = 0; l < kBlocks; ++l)
      store.create("downstream/block" + std::to_string(l) + "/w",
                   detail::uniform_init<T>(Shape{dp, dp}, dp, rng),
                   Owner::Downstream);
  }

  void init_head(ParameterStore<T>& store, std::mt19937_64& rng) const {
    const std::size_t dp = cfg_.d_prime();
    store.create("dataset/head_w",
                 detail::uniform_init<T>(Shape{dp, cfg_.horizon}, dp, rng),
                 Owner::DatasetSpecific);
    store.create("dataset/head_b", Tensor<T>(Shape{cfg_.horizon}),
                 Owner::DatasetSpecific);
  }

  void init_params(ParameterStore<T>& store, std::mt19937_64& rng) const {
    init_backbone(store, rng);
    init_head(store, rng);
  }

  /// E_pro (B,R,F,d') -> normalized-scale predictions (B,R,P,F).
  Var<T> forward(const ParameterStore<T>& store, const Var<T>& e_pro,
                 const Var<T>& prop) const {
    Var<T> x = e_pro;
    for (std::size_t l = 0; l < kBlocks; ++l) {
      Var<T> w = store.get("downstream/block" + std::to_string(l) + "/w");
      x = add(relu(linear_last(region_mix(x, prop), w)), x);
    }
    Var<T> out =
        linear_last(x, store.get("dataset/head_w"), store.get("dataset/head_b"));
    return swap_last2(out);  // (B,R,F,P) -> (B,R,P,F)
  }

 private:
  RunConfig cfg_;
};

}  // namespace stprompt
