#pragma once

#include <map>
#include <string>

#include "stprompt/autodiff.hpp"

namespace stprompt {

enum class Owner { Prompt, Downstream, DatasetSpecific };

inline const char* owner_name(Owner o) {
  switch (o) {
    case Owner::Prompt: return "prompt";
    case Owner::Downstream: return "downstream";
    default: return "dataset-specific";
  }
}

inline Owner owner_from_name(const std::string& s) {
  if (s == "prompt") return Owner::Prompt;
  if (s == "downstream") return Owner::Downstream;
  if (s == "dataset-specific") return Owner::DatasetSpecific;
  throw DataError("unknown owner tag '" + s + "'");
}

/// Named parameter tensors shared by the prompt network and downstream
/// model. Frozen parameters keep requires_grad off so the tape never
/// records gradients for them, and the optimizer skips them.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    Var<T> var;
    Owner owner = Owner::Prompt;
    bool frozen = false;
  };

  Var<T> create(const std::string& name, Tensor<T> init, Owner owner) {
    if (entries_.count(name))
      throw ConfigError("duplicate parameter name '" + name + "'");
    Entry e;
    e.var = Var<T>::param(std::move(init));
    e.owner = owner;
    entries_[name] = e;
    return e.var;
  }

  bool contains(const std::string& name) const {
    return entries_.count(name) != 0;
  }

  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end())
      throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
      throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  Var<T> get(const std::string& name) const { return entry(name).var; }

  void set_frozen(const std::string& name, bool frozen) {
    Entry& e = entry(name);
    e.frozen = frozen;
    e.var.node()->requires_grad = !frozen;
  }

  /// Freeze/unfreeze every parameter with the given owner tag.
  void set_frozen_by_owner(Owner owner, bool frozen) {
    for (auto& [name, e] : entries_) {
      if (e.owner == owner) {
        e.frozen = frozen;
        e.var.node()->requires_grad = !frozen;
      }
    }
  }

  void zero_grads() {
    for (auto& [name, e] : entries_) e.var.zero_grad();
  }

  // Ordered (std::map) iteration keeps checkpoints and updates deterministic.
  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) n += e.var.value().numel();
    return n;
  }

  void remove_by_owner(Owner owner) {
    for (auto it = entries_.begin(); it != entries_.end();) {
      if (it->second.owner == owner)
        it = entries_.erase(it);
      else
        ++it;
    }
  }

 private:
  std::map<std::string, Entry> entries_;
};

template <typename T>
struct AdamConfig {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

/// Standard Adam with bias correction; one moment pair per parameter name.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig<T> cfg = {}) : cfg_(cfg) {}

  /// Applies one update from the gradients accumulated on the store's
  /// parameter nodes. Frozen parameters are untouched.
  void step(ParameterStore<T>& store) {
    ++t_;
    const T bc1 = T(1) - std::pow(cfg_.beta1, T(t_));
    const T bc2 = T(1) - std::pow(cfg_.beta2, T(t_));
    for (auto& [name, e] : store.entries()) {
      if (e.frozen) continue;
      Tensor<T>& p = e.var.value();
      const Tensor<T>& g = e.var.grad();
      if (g.numel() == 0) continue;  // no gradient reached this parameter
      if (g.numel() != p.numel())
        throw ShapeError("gradient shape mismatch for '" + name + "'");
      auto& st = moments_[name];
      if (st.m.numel() == 0) {
        st.m = Tensor<T>(p.shape());
        st.v = Tensor<T>(p.shape());
      }
      for (std::size_t i = 0; i < p.numel(); ++i) {
        st.m[i] = cfg_.beta1 * st.m[i] + (T(1) - cfg_.beta1) * g[i];
        st.v[i] = cfg_.beta2 * st.v[i] + (T(1) - cfg_.beta2) * g[i] * g[i];
        const T mhat = st.m[i] / bc1;
        const T vhat = st.v[i] / bc2;
        p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  std::size_t step_count() const { return t_; }
  AdamConfig<T>& config() { return cfg_; }

 private:
  struct Moments {
    Tensor<T> m, v;
  };
  AdamConfig<T> cfg_;
  std::map<std::string, Moments> moments_;
  std::size_t t_ = 0;
};

}  // namespace stprompt
