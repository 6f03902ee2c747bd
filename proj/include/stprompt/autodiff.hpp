#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>

#include "stprompt/tensor.hpp"

namespace stprompt {

// Reverse-mode autodiff over Tensor<T>. Define-by-run: every op appends a
// node to the implicit graph held together by shared_ptr edges; backward()
// linearizes it into a ComputationTape and walks it once in reverse.

template <typename T>
struct VarNode {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily in backward
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<VarNode>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(VarNode&)> backprop;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<VarNode<T>> n) : node_(std::move(n)) {}

  /// Constant input (no gradient).
  static Var constant(Tensor<T> v) {
    auto n = std::make_shared<VarNode<T>>();
    n->value = std::move(v);
    return Var(std::move(n));
  }

  /// Trainable leaf.
  static Var param(Tensor<T> v) {
    auto n = std::make_shared<VarNode<T>>();
    n->value = std::move(v);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::shared_ptr<VarNode<T>> node() const { return node_; }
  bool defined() const { return node_ != nullptr; }

  void zero_grad() { node_->grad = Tensor<T>(); }

 private:
  std::shared_ptr<VarNode<T>> node_;
};

namespace detail {

template <typename T>
Var<T> make_op(const char* name, Tensor<T> value,
               std::vector<Var<T>> inputs,
               std::function<void(VarNode<T>&)> backprop) {
  if (!value.all_finite())
    throw NumericError(std::string("non-finite value produced by op '") +
                       name + "'");
  auto n = std::make_shared<VarNode<T>>();
  n->value = std::move(value);
  n->op = name;
  for (auto& v : inputs) {
    if (v.node()->requires_grad) n->requires_grad = true;
    n->parents.push_back(v.node());
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return Var<T>(std::move(n));
}

template <typename T>
void accum(VarNode<T>& p, const Tensor<T>& g) {
  if (p.grad.numel() == 0) p.grad = Tensor<T>(p.value.shape());
  for (std::size_t i = 0; i < g.numel(); ++i) p.grad[i] += g[i];
}

// Broadcast classification: b may equal a's shape, be a scalar, or match a
// trailing suffix of a's shape (leading-axis broadcast only).
enum class Bcast { Same, Scalar, Suffix };

template <typename T>
Bcast classify_broadcast(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return Bcast::Same;
  if (b.numel() == 1) return Bcast::Scalar;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sb.size() <= sa.size() &&
      std::equal(sb.begin(), sb.end(), sa.end() - sb.size()))
    return Bcast::Suffix;
  throw ShapeError("shapes not broadcast-compatible: " + shape_str(sa) +
                   " vs " + shape_str(sb));
}

// Reduce a gradient of a's shape down to b's shape under the above rules.
template <typename T>
Tensor<T> reduce_to(const Tensor<T>& g, const Tensor<T>& b, Bcast mode) {
  if (mode == Bcast::Same) return g;
  Tensor<T> out(b.shape());
  if (mode == Bcast::Scalar) {
    out[0] = g.sum();
    return out;
  }
  const std::size_t nb = b.numel();
  for (std::size_t i = 0; i < g.numel(); ++i) out[i % nb] += g[i];
  return out;
}

template <typename T>
T bval(const Tensor<T>& b, std::size_t i, Bcast mode) {
  switch (mode) {
    case Bcast::Same: return b[i];
    case Bcast::Scalar: return b[0];
    default: return b[i % b.numel()];
  }
}

}  // namespace detail

// ---- elementwise binary ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto mode = detail::classify_broadcast(a.value(), b.value());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = a.value()[i] + detail::bval(b.value(), i, mode);
  return detail::make_op<T>("add", std::move(out), {a, b},
                            [mode](VarNode<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) detail::accum(pa, n.grad);
    if (pb.requires_grad)
      detail::accum(pb, detail::reduce_to(n.grad, pb.value, mode));
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  auto mode = detail::classify_broadcast(a.value(), b.value());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = a.value()[i] - detail::bval(b.value(), i, mode);
  return detail::make_op<T>("sub", std::move(out), {a, b},
                            [mode](VarNode<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) detail::accum(pa, n.grad);
    if (pb.requires_grad) {
      Tensor<T> neg(n.grad.shape());
      for (std::size_t i = 0; i < neg.numel(); ++i) neg[i] = -n.grad[i];
      detail::accum(pb, detail::reduce_to(neg, pb.value, mode));
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto mode = detail::classify_broadcast(a.value(), b.value());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = a.value()[i] * detail::bval(b.value(), i, mode);
  return detail::make_op<T>("mul", std::move(out), {a, b},
                            [mode](VarNode<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      Tensor<T> ga(n.grad.shape());
      for (std::size_t i = 0; i < ga.numel(); ++i)
        ga[i] = n.grad[i] * detail::bval(pb.value, i, mode);
      detail::accum(pa, ga);
    }
    if (pb.requires_grad) {
      Tensor<T> gb(n.grad.shape());
      for (std::size_t i = 0; i < gb.numel(); ++i)
        gb[i] = n.grad[i] * pa.value[i];
      detail::accum(pb, detail::reduce_to(gb, pb.value, mode));
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  auto mode = detail::classify_broadcast(a.value(), b.value());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = a.value()[i] / detail::bval(b.value(), i, mode);
  return detail::make_op<T>("div", std::move(out), {a, b},
                            [mode](VarNode<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      Tensor<T> ga(n.grad.shape());
      for (std::size_t i = 0; i < ga.numel(); ++i)
        ga[i] = n.grad[i] / detail::bval(pb.value, i, mode);
      detail::accum(pa, ga);
    }
    if (pb.requires_grad) {
      Tensor<T> gb(n.grad.shape());
      for (std::size_t i = 0; i < gb.numel(); ++i) {
        T bv = detail::bval(pb.value, i, mode);
        gb[i] = -n.grad[i] * pa.value[i] / (bv * bv);
      }
      detail::accum(pb, detail::reduce_to(gb, pb.value, mode));
    }
  });
}

// ---- elementwise unary ----

namespace detail {
template <typename T, typename F, typename DF>
Var<T> unary(const char* name, const Var<T>& a, F f, DF df) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(a.value()[i]);
  return make_op<T>(name, std::move(out), {a}, [df](VarNode<T>& n) {
    auto& p = *n.parents[0];
    Tensor<T> g(n.grad.shape());
    for (std::size_t i = 0; i < g.numel(); ++i)
      g[i] = n.grad[i] * df(p.value[i], n.value[i]);
    accum(p, g);
  });
}
}  // namespace detail

template <typename T>
Var<T> neg(const Var<T>& a) {
  return detail::unary<T>("neg", a, [](T x) { return -x; },
                          [](T, T) { return T(-1); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary<T>(
      "sigmoid", a,
      [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return detail::unary<T>("relu", a, [](T x) { return x > T(0) ? x : T(0); },
                          [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> exp_(const Var<T>& a) {
  return detail::unary<T>("exp", a, [](T x) { return std::exp(x); },
                          [](T, T y) { return y; });
}

template <typename T>
Var<T> log_(const Var<T>& a) {
  return detail::unary<T>("log", a, [](T x) { return std::log(x); },
                          [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> sqrt_(const Var<T>& a) {
  return detail::unary<T>("sqrt", a, [](T x) { return std::sqrt(x); },
                          [](T, T y) { return T(1) / (T(2) * y); });
}

template <typename T>
Var<T> abs_(const Var<T>& a) {
  return detail::unary<T>("abs", a, [](T x) { return std::abs(x); },
                          [](T x, T) { return x > T(0)   ? T(1)
                                              : x < T(0) ? T(-1)
                                                         : T(0); });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  return detail::unary<T>("square", a, [](T x) { return x * x; },
                          [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return detail::unary<T>("scale", a, [s](T x) { return s * x; },
                          [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return detail::unary<T>("add_scalar", a, [s](T x) { return x + s; },
                          [](T, T) { return T(1); });
}

/// max(x, lo); gradient passes through only above the clamp.
template <typename T>
Var<T> clamp_min(const Var<T>& a, T lo) {
  return detail::unary<T>("clamp_min", a,
                          [lo](T x) { return x > lo ? x : lo; },
                          [lo](T x, T) { return x > lo ? T(1) : T(0); });
}

// ---- structural ops ----

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Shape orig = a.shape();
  return detail::make_op<T>("reshape", a.value().reshaped(std::move(shape)),
                            {a}, [orig](VarNode<T>& n) {
    detail::accum(*n.parents[0], n.grad.reshaped(orig));
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0])
    throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n2 = b.shape()[1];
  Tensor<T> out(Shape{m, n2});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      T av = a.value().at(i, l);
      if (av == T(0)) continue;
      for (std::size_t j = 0; j < n2; ++j)
        out.at(i, j) += av * b.value().at(l, j);
    }
  return detail::make_op<T>("matmul", std::move(out), {a, b},
                            [m, k, n2](VarNode<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      // dA = G * B^T
      Tensor<T> ga(Shape{m, k});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n2; ++j) {
          T g = n.grad.at(i, j);
          for (std::size_t l = 0; l < k; ++l)
            ga.at(i, l) += g * pb.value.at(l, j);
        }
      detail::accum(pa, ga);
    }
    if (pb.requires_grad) {
      // dB = A^T * G
      Tensor<T> gb(Shape{k, n2});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          T av = pa.value.at(i, l);
          for (std::size_t j = 0; j < n2; ++j)
            gb.at(l, j) += av * n.grad.at(i, j);
        }
      detail::accum(pb, gb);
    }
  });
}

template <typename T>
Var<T> transpose2d(const Var<T>& a) {
  if (a.shape().size() != 2)
    throw ShapeError("transpose2d expects rank 2, got " +
                     shape_str(a.shape()));
  const std::size_t m = a.shape()[0], n2 = a.shape()[1];
  Tensor<T> out(Shape{n2, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n2; ++j) out.at(j, i) = a.value().at(i, j);
  return detail::make_op<T>("transpose", std::move(out), {a},
                            [m, n2](VarNode<T>& n) {
    Tensor<T> g(Shape{m, n2});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n2; ++j) g.at(i, j) = n.grad.at(j, i);
    detail::accum(*n.parents[0], g);
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of empty list");
  const Shape& first = parts[0].shape();
  if (axis >= first.size())
    throw ShapeError("concat axis " + std::to_string(axis) +
                     " out of range for " + shape_str(first));
  Shape out_shape = first;
  std::size_t total = first[axis];
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    if (s.size() != first.size())
      throw ShapeError("concat rank mismatch: " + shape_str(first) + " vs " +
                       shape_str(s));
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != first[d])
        throw ShapeError("concat extent mismatch off axis: " +
                         shape_str(first) + " vs " + shape_str(s));
    total += s[axis];
  }
  out_shape[axis] = total;

  // outer = product of extents before axis, inner = product after.
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  Tensor<T> out(out_shape);
  std::vector<std::size_t> axis_extents;
  for (const auto& p : parts) axis_extents.push_back(p.shape()[axis]);

  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor<T>& src = parts[p].value();
    const std::size_t ap = axis_extents[p];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t a2 = 0; a2 < ap; ++a2)
        for (std::size_t in = 0; in < inner; ++in)
          out[(o * total + offset + a2) * inner + in] =
              src[(o * ap + a2) * inner + in];
    offset += ap;
  }
  return detail::make_op<T>(
      "concat", std::move(out), parts,
      [outer, inner, total, axis_extents](VarNode<T>& n) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < n.parents.size(); ++p) {
          auto& par = *n.parents[p];
          const std::size_t ap = axis_extents[p];
          if (par.requires_grad) {
            Tensor<T> g(par.value.shape());
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t a2 = 0; a2 < ap; ++a2)
                for (std::size_t in = 0; in < inner; ++in)
                  g[(o * ap + a2) * inner + in] =
                      n.grad[(o * total + off + a2) * inner + in];
            detail::accum(par, g);
          }
          off += ap;
        }
      });
}

// ---- reductions ----

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  return detail::make_op<T>("sum", Tensor<T>::scalar(a.value().sum()), {a},
                            [](VarNode<T>& n) {
    auto& p = *n.parents[0];
    Tensor<T> g(p.value.shape(), n.grad[0]);
    detail::accum(p, g);
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  if (a.value().numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum_all(a), T(1) / T(a.value().numel()));
}

// ---- batched helpers for (B,R,F,k) activations ----

/// Linear map over the last axis: x[...,k] * W[k,n] (+ b[n]).
template <typename T>
Var<T> linear_last(const Var<T>& x, const Var<T>& w, const Var<T>& b = {}) {
  const Shape& xs = x.shape();
  if (xs.empty() || w.shape().size() != 2 || xs.back() != w.shape()[0])
    throw ShapeError("linear_last shape mismatch: " + shape_str(xs) + " x " +
                     shape_str(w.shape()));
  std::size_t rows = x.value().numel() / xs.back();
  Var<T> flat = reshape(x, Shape{rows, xs.back()});
  Var<T> out = matmul(flat, w);
  if (b.defined()) out = add(out, b);
  Shape out_shape = xs;
  out_shape.back() = w.shape()[1];
  return reshape(out, out_shape);
}

/// Per (batch, feature) region mixing: out[b,:,f,:] = P * x[b,:,f,:].
/// x has shape (B,R,F,k), P has shape (R,R).
template <typename T>
Var<T> region_mix(const Var<T>& x, const Var<T>& p) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || p.shape().size() != 2 || p.shape()[0] != xs[1] ||
      p.shape()[1] != xs[1])
    throw ShapeError("region_mix shape mismatch: " + shape_str(xs) + " with " +
                     shape_str(p.shape()));
  const std::size_t B = xs[0], R = xs[1], F = xs[2], K = xs[3];
  Tensor<T> out(xs);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t r2 = 0; r2 < R; ++r2) {
        T pv = p.value().at(r, r2);
        if (pv == T(0)) continue;
        for (std::size_t f = 0; f < F; ++f)
          for (std::size_t k = 0; k < K; ++k)
            out.at(b, r, f, k) += pv * x.value().at(b, r2, f, k);
      }
  return detail::make_op<T>("region_mix", std::move(out), {x, p},
                            [B, R, F, K](VarNode<T>& n) {
    auto& px = *n.parents[0];
    auto& pp = *n.parents[1];
    if (px.requires_grad) {
      Tensor<T> g(px.value.shape());
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t r2 = 0; r2 < R; ++r2) {
            T pv = pp.value.at(r, r2);
            if (pv == T(0)) continue;
            for (std::size_t f = 0; f < F; ++f)
              for (std::size_t k = 0; k < K; ++k)
                g.at(b, r2, f, k) += pv * n.grad.at(b, r, f, k);
          }
      detail::accum(px, g);
    }
    if (pp.requires_grad) {
      Tensor<T> g(pp.value.shape());
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t r2 = 0; r2 < R; ++r2) {
            T acc = T(0);
            for (std::size_t f = 0; f < F; ++f)
              for (std::size_t k = 0; k < K; ++k)
                acc += n.grad.at(b, r, f, k) * px.value.at(b, r2, f, k);
            g.at(r, r2) += acc;
          }
      detail::accum(pp, g);
    }
  });
}

/// Expand a per-sample vector v[B,k] to (B,R,F,k).
template <typename T>
Var<T> broadcast_sample(const Var<T>& v, std::size_t R, std::size_t F) {
  const Shape& vs = v.shape();
  if (vs.size() != 2) throw ShapeError("broadcast_sample expects (B,k)");
  const std::size_t B = vs[0], K = vs[1];
  Tensor<T> out(Shape{B, R, F, K});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t k = 0; k < K; ++k)
          out.at(b, r, f, k) = v.value().at(b, k);
  return detail::make_op<T>("broadcast_sample", std::move(out), {v},
                            [B, R, F, K](VarNode<T>& n) {
    Tensor<T> g(Shape{B, K});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t f = 0; f < F; ++f)
          for (std::size_t k = 0; k < K; ++k)
            g.at(b, k) += n.grad.at(b, r, f, k);
    detail::accum(*n.parents[0], g);
  });
}

/// Expand a per-region matrix c[R,k] to (B,R,F,k).
template <typename T>
Var<T> broadcast_region(const Var<T>& c, std::size_t B, std::size_t F) {
  const Shape& cs = c.shape();
  if (cs.size() != 2) throw ShapeError("broadcast_region expects (R,k)");
  const std::size_t R = cs[0], K = cs[1];
  Tensor<T> out(Shape{B, R, F, K});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t k = 0; k < K; ++k)
          out.at(b, r, f, k) = c.value().at(r, k);
  return detail::make_op<T>("broadcast_region", std::move(out), {c},
                            [B, R, F, K](VarNode<T>& n) {
    Tensor<T> g(Shape{R, K});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t f = 0; f < F; ++f)
          for (std::size_t k = 0; k < K; ++k)
            g.at(r, k) += n.grad.at(b, r, f, k);
    detail::accum(*n.parents[0], g);
  });
}

/// Extract the (R,k) slice of x[B,R,F,k] at (batch b, feature f).
template <typename T>
Var<T> slice_bf(const Var<T>& x, std::size_t b, std::size_t f) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("slice_bf expects (B,R,F,k)");
  const std::size_t R = xs[1], K = xs[3];
  Tensor<T> out(Shape{R, K});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t k = 0; k < K; ++k) out.at(r, k) = x.value().at(b, r, f, k);
  return detail::make_op<T>("slice_bf", std::move(out), {x},
                            [b, f, R, K](VarNode<T>& n) {
    auto& p = *n.parents[0];
    if (p.grad.numel() == 0) p.grad = Tensor<T>(p.value.shape());
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t k = 0; k < K; ++k)
        p.grad.at(b, r, f, k) += n.grad.at(r, k);
  });
}

/// Swap the last two axes of a rank-4 tensor: (B,R,F,P) -> (B,R,P,F).
template <typename T>
Var<T> swap_last2(const Var<T>& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("swap_last2 expects rank 4");
  const std::size_t B = xs[0], R = xs[1], F = xs[2], P = xs[3];
  Tensor<T> out(Shape{B, R, P, F});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t p = 0; p < P; ++p)
          out.at(b, r, p, f) = x.value().at(b, r, f, p);
  return detail::make_op<T>("swap_last2", std::move(out), {x},
                            [B, R, F, P](VarNode<T>& n) {
    Tensor<T> g(Shape{B, R, F, P});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t f = 0; f < F; ++f)
          for (std::size_t p = 0; p < P; ++p)
            g.at(b, r, f, p) = n.grad.at(b, r, p, f);
    detail::accum(*n.parents[0], g);
  });
}

// ---- backward ----

/// Topologically ordered record of the ops reachable from one output.
template <typename T>
class ComputationTape {
 public:
  explicit ComputationTape(const Var<T>& root) {
    std::unordered_set<VarNode<T>*> seen;
    build(root.node().get(), seen);
  }

  const std::vector<VarNode<T>*>& nodes() const { return order_; }

 private:
  void build(VarNode<T>* n, std::unordered_set<VarNode<T>*>& seen) {
    if (!n || seen.count(n)) return;
    seen.insert(n);
    for (auto& p : n->parents) build(p.get(), seen);
    order_.push_back(n);
  }
  std::vector<VarNode<T>*> order_;
};

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate into
/// VarNode::grad; call zero_grad on leaves between steps.
template <typename T>
void backward(const Var<T>& loss) {
  if (loss.value().numel() != 1)
    throw ShapeError("backward requires a scalar loss, got " +
                     shape_str(loss.shape()));
  ComputationTape<T> tape(loss);
  loss.node()->grad = Tensor<T>(loss.shape(), T(1));
  const auto& order = tape.nodes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    VarNode<T>* n = *it;
    if (n->backprop && n->grad.numel() != 0) n->backprop(*n);
  }
}

}  // namespace stprompt
