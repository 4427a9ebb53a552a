// Dense tensor with reverse-mode differentiation.
//
// A tensor is a cheap handle onto a graph node holding the value buffer,
// an optional gradient buffer, and the backward closure that produced it.
// Graphs are rebuilt every forward pass; a graph and its tensors stay on
// one thread, distinct graphs may run concurrently.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <unordered_set>
#include <utility>

#include "wmamba/core.hpp"

namespace wmamba {

// Recording switch. Ops built while disabled carry no parents/backward.
inline bool& grad_enabled() {
    thread_local bool on = true;
    return on;
}

struct no_grad_guard {
    bool prev;
    no_grad_guard() : prev(grad_enabled()) { grad_enabled() = false; }
    ~no_grad_guard() { grad_enabled() = prev; }
};

template <class T>
class tensor;

template <class T>
struct node {
    shape_t shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated on demand, same length as value
    bool requires_grad = false;
    bool needs_grad = false;
    std::vector<tensor<T>> parents;
    std::function<void(node<T>&)> backprop;

    size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

template <class T>
class tensor {
  public:
    using scalar_t = T;

    tensor() = default;

    static tensor leaf(shape_t shape, std::vector<T> data, bool requires_grad) {
        check(wmamba::numel(shape) == data.size(), "tensor: shape ", shape_str(shape),
              " does not match buffer of length ", data.size());
        auto n = std::make_shared<node<T>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        n->needs_grad = requires_grad;
        return tensor(std::move(n));
    }

    static tensor param(shape_t shape, std::vector<T> data) {
        return leaf(std::move(shape), std::move(data), true);
    }
    static tensor constant(shape_t shape, std::vector<T> data) {
        return leaf(std::move(shape), std::move(data), false);
    }
    static tensor zeros(const shape_t& shape, bool requires_grad = false) {
        return leaf(shape, std::vector<T>(wmamba::numel(shape), T(0)), requires_grad);
    }
    static tensor full(const shape_t& shape, T v, bool requires_grad = false) {
        return leaf(shape, std::vector<T>(wmamba::numel(shape), v), requires_grad);
    }
    static tensor scalar(T v) { return constant({}, {v}); }

    bool defined() const { return n_ != nullptr; }
    const shape_t& shape() const { return n_->shape; }
    size_t ndim() const { return n_->shape.size(); }
    size_t size(size_t i) const { return n_->shape[i]; }
    size_t numel() const { return n_->value.size(); }

    std::vector<T>& data() { return n_->value; }
    const std::vector<T>& data() const { return n_->value; }
    T item() const {
        check(numel() == 1, "item: tensor ", shape_str(shape()), " is not scalar");
        return n_->value[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    bool has_grad() const { return n_->grad.size() == n_->value.size(); }
    const std::vector<T>& grad() const {
        check(has_grad(), "grad: no gradient recorded");
        return n_->grad;
    }
    void zero_grad() { n_->grad.assign(n_->value.size(), T(0)); }

    // Value copy detached from the recorded graph.
    tensor detach() const { return constant(shape(), data()); }

    node<T>& node_ref() const { return *n_; }
    node<T>* node_ptr() const { return n_.get(); }

  private:
    explicit tensor(std::shared_ptr<node<T>> n) : n_(std::move(n)) {}
    std::shared_ptr<node<T>> n_;

    template <class U>
    friend tensor<U> make_op(shape_t, std::vector<U>, std::vector<tensor<U>>,
                             std::function<void(node<U>&)>);
};

template <class T>
tensor<T> make_op(shape_t shape, std::vector<T> value, std::vector<tensor<T>> parents,
                  std::function<void(node<T>&)> backprop) {
    if (debug_checks()) {
        for (T v : value)
            check(std::isfinite(double(v)), "non-finite value produced by op (debug check)");
    }
    auto n = std::make_shared<node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& p : parents)
            if (p.node_ref().needs_grad) needs = true;
    }
    n->needs_grad = needs;
    if (needs) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return tensor<T>(std::move(n));
}

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
// calls until zero_grad; interior nodes are fresh per forward pass.
template <class T>
void backward(const tensor<T>& loss) {
    check(loss.numel() == 1, "backward: loss ", shape_str(loss.shape()), " is not scalar");
    node<T>* root = loss.node_ptr();
    if (!root->needs_grad && !root->requires_grad) return;

    // Iterative post-order DFS; order is fixed by graph structure.
    std::vector<node<T>*> topo;
    std::unordered_set<node<T>*> visited;
    std::vector<std::pair<node<T>*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            node<T>* p = n->parents[next++].node_ptr();
            if (p->needs_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }

    for (node<T>* n : topo) n->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        node<T>* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops. Binary ops broadcast only over leading batch dimensions:
// the smaller operand's shape must be a suffix of the larger one's.
// ---------------------------------------------------------------------------

namespace detail {

template <class T, class F, class DF>
tensor<T> unary_op(const tensor<T>& x, F f, DF df) {
    std::vector<T> out(x.numel());
    const auto& xv = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return make_op<T>(
        x.shape(), std::move(out), {x}, [df](node<T>& self) {
            auto& p = self.parents[0].node_ref();
            p.ensure_grad();
            for (size_t i = 0; i < self.value.size(); ++i)
                p.grad[i] += self.grad[i] * df(p.value[i], self.value[i]);
        });
}

inline bool is_suffix(const shape_t& small, const shape_t& big) {
    if (small.size() > big.size()) return false;
    size_t off = big.size() - small.size();
    for (size_t i = 0; i < small.size(); ++i)
        if (small[i] != big[i + off]) return false;
    return true;
}

// out = f(a_i, b_{i mod |b|}) with |b| dividing |a| via the suffix rule.
template <class T, class F, class DFA, class DFB>
tensor<T> binary_op(const tensor<T>& a, const tensor<T>& b, F f, DFA dfa, DFB dfb) {
    const bool b_small = is_suffix(b.shape(), a.shape());
    const bool a_small = !b_small && is_suffix(a.shape(), b.shape());
    check(b_small || a_small, "elementwise: shapes ", shape_str(a.shape()), " and ",
          shape_str(b.shape()), " do not broadcast (suffix rule)");
    const tensor<T>& big = b_small ? a : b;
    const tensor<T>& small = b_small ? b : a;
    const size_t nb = big.numel(), ns = small.numel() ? small.numel() : 1;
    std::vector<T> out(nb);
    const auto& bv = big.data();
    const auto& sv = small.data();
    for (size_t i = 0; i < nb; ++i) {
        T x = b_small ? bv[i] : sv[i % ns];
        T y = b_small ? sv[i % ns] : bv[i];
        out[i] = f(x, y);
    }
    return make_op<T>(
        big.shape(), std::move(out), {a, b},
        [b_small, ns, dfa, dfb](node<T>& self) {
            auto& pa = self.parents[0].node_ref();
            auto& pb = self.parents[1].node_ref();
            pa.ensure_grad();
            pb.ensure_grad();
            const size_t n = self.value.size();
            for (size_t i = 0; i < n; ++i) {
                size_t ia = b_small ? i : i % ns;
                size_t ib = b_small ? i % ns : i;
                T x = pa.value[ia], y = pb.value[ib];
                T g = self.grad[i];
                pa.grad[ia] += g * dfa(x, y);
                pb.grad[ib] += g * dfb(x, y);
            }
        });
}

}  // namespace detail

template <class T>
tensor<T> add(const tensor<T>& a, const tensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); });
}
template <class T>
tensor<T> sub(const tensor<T>& a, const tensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); });
}
template <class T>
tensor<T> mul(const tensor<T>& a, const tensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; });
}

template <class T>
tensor<T> scale(const tensor<T>& x, T s) {
    return detail::unary_op(
        x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}
template <class T>
tensor<T> add_scalar(const tensor<T>& x, T s) {
    return detail::unary_op(
        x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}
template <class T>
tensor<T> neg(const tensor<T>& x) {
    return scale(x, T(-1));
}

template <class T>
tensor<T> exp(const tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}
template <class T>
tensor<T> log(const tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}
template <class T>
tensor<T> tanh(const tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}
template <class T>
tensor<T> sigmoid(const tensor<T>& x) {
    return detail::unary_op(
        x,
        [](T v) {
            return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                             : std::exp(v) / (T(1) + std::exp(v));
        },
        [](T, T y) { return y * (T(1) - y); });
}
template <class T>
tensor<T> softplus(const tensor<T>& x) {
    return detail::unary_op(
        x,
        [](T v) { return v > T(20) ? v : std::log1p(std::exp(v)); },
        [](T v, T) {
            return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                             : std::exp(v) / (T(1) + std::exp(v));
        });
}
template <class T>
tensor<T> relu(const tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}
template <class T>
tensor<T> silu(const tensor<T>& x) {
    return detail::unary_op(
        x,
        [](T v) { return v / (T(1) + std::exp(-v)); },
        [](T v, T) {
            T s = T(1) / (T(1) + std::exp(-v));
            return s * (T(1) + v * (T(1) - s));
        });
}
template <class T>
tensor<T> gelu(const tensor<T>& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return detail::unary_op(
        x,
        [](T v) { return T(0.5) * v * (T(1) + T(std::erf(double(v) * inv_sqrt2))); },
        [](T v, T) {
            double cdf = 0.5 * (1.0 + std::erf(double(v) * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * double(v) * double(v));
            return T(cdf + double(v) * pdf);
        });
}
template <class T>
tensor<T> sin(const tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}
template <class T>
tensor<T> cos(const tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::cos(v); }, [](T v, T) { return -std::sin(v); });
}

template <class T>
tensor<T> operator+(const tensor<T>& a, const tensor<T>& b) { return add(a, b); }
template <class T>
tensor<T> operator-(const tensor<T>& a, const tensor<T>& b) { return sub(a, b); }
template <class T>
tensor<T> operator*(const tensor<T>& a, const tensor<T>& b) { return mul(a, b); }
template <class T>
tensor<T> operator*(const tensor<T>& a, T s) { return scale(a, s); }

// ---------------------------------------------------------------------------
// Shape ops.
// ---------------------------------------------------------------------------

template <class T>
tensor<T> reshape(const tensor<T>& x, shape_t shape) {
    check(numel(shape) == x.numel(), "reshape: ", shape_str(x.shape()), " -> ",
          shape_str(shape), " changes element count");
    return make_op<T>(std::move(shape), x.data(), {x}, [](node<T>& self) {
        auto& p = self.parents[0].node_ref();
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    });
}

namespace detail {
inline std::vector<size_t> row_strides(const shape_t& s) {
    std::vector<size_t> st(s.size(), 1);
    for (size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}
}  // namespace detail

template <class T>
tensor<T> permute(const tensor<T>& x, const std::vector<size_t>& dims) {
    check(dims.size() == x.ndim(), "permute: rank mismatch");
    shape_t out_shape(dims.size());
    for (size_t i = 0; i < dims.size(); ++i) out_shape[i] = x.size(dims[i]);
    auto in_st = detail::row_strides(x.shape());
    auto out_st = detail::row_strides(out_shape);
    // map output flat index -> input flat index
    std::vector<T> out(x.numel());
    const auto& xv = x.data();
    const size_t rank = dims.size();
    for (size_t o = 0; o < out.size(); ++o) {
        size_t rem = o, in = 0;
        for (size_t d = 0; d < rank; ++d) {
            size_t idx = rem / out_st[d];
            rem %= out_st[d];
            in += idx * in_st[dims[d]];
        }
        out[o] = xv[in];
    }
    return make_op<T>(out_shape, std::move(out), {x},
                      [dims, in_st, out_st, rank](node<T>& self) {
                          auto& p = self.parents[0].node_ref();
                          p.ensure_grad();
                          for (size_t o = 0; o < self.grad.size(); ++o) {
                              size_t rem = o, in = 0;
                              for (size_t d = 0; d < rank; ++d) {
                                  size_t idx = rem / out_st[d];
                                  rem %= out_st[d];
                                  in += idx * in_st[dims[d]];
                              }
                              p.grad[in] += self.grad[o];
                          }
                      });
}

template <class T>
tensor<T> concat(const std::vector<tensor<T>>& parts, size_t axis) {
    check(!parts.empty(), "concat: no inputs");
    shape_t shape = parts[0].shape();
    check(axis < shape.size(), "concat: axis out of range");
    size_t total = 0;
    for (const auto& p : parts) {
        check(p.ndim() == shape.size(), "concat: rank mismatch");
        for (size_t d = 0; d < shape.size(); ++d)
            check(d == axis || p.size(d) == shape[d], "concat: shape mismatch at dim ", d,
                  ": ", shape_str(p.shape()), " vs ", shape_str(shape));
        total += p.size(axis);
    }
    shape[axis] = total;

    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= shape[d];
    for (size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];

    std::vector<T> out(numel(shape));
    std::vector<size_t> spans;  // per part: size(axis) * inner
    spans.reserve(parts.size());
    for (const auto& p : parts) spans.push_back(p.size(axis) * inner);
    const size_t row = total * inner;
    size_t off = 0;
    for (size_t k = 0; k < parts.size(); ++k) {
        const auto& pv = parts[k].data();
        for (size_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + o * row + off, pv.data() + o * spans[k],
                        spans[k] * sizeof(T));
        off += spans[k];
    }
    return make_op<T>(shape, std::move(out), parts, [spans, outer, row](node<T>& self) {
        size_t off = 0;
        for (size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = self.parents[k].node_ref();
            p.ensure_grad();
            for (size_t o = 0; o < outer; ++o) {
                const T* g = self.grad.data() + o * row + off;
                T* dst = p.grad.data() + o * spans[k];
                for (size_t i = 0; i < spans[k]; ++i) dst[i] += g[i];
            }
            off += spans[k];
        }
    });
}

template <class T>
tensor<T> slice(const tensor<T>& x, size_t axis, size_t start, size_t len) {
    check(axis < x.ndim(), "slice: axis out of range");
    check(start + len <= x.size(axis), "slice: [", start, ",", start + len,
          ") exceeds dim of size ", x.size(axis));
    shape_t shape = x.shape();
    shape[axis] = len;
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= x.size(d);
    for (size_t d = axis + 1; d < x.ndim(); ++d) inner *= x.size(d);
    const size_t in_row = x.size(axis) * inner, out_row = len * inner, off = start * inner;
    std::vector<T> out(numel(shape));
    const auto& xv = x.data();
    for (size_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * out_row, xv.data() + o * in_row + off,
                    out_row * sizeof(T));
    return make_op<T>(shape, std::move(out), {x},
                      [outer, in_row, out_row, off](node<T>& self) {
                          auto& p = self.parents[0].node_ref();
                          p.ensure_grad();
                          for (size_t o = 0; o < outer; ++o) {
                              const T* g = self.grad.data() + o * out_row;
                              T* dst = p.grad.data() + o * in_row + off;
                              for (size_t i = 0; i < out_row; ++i) dst[i] += g[i];
                          }
                      });
}

// Gather along an axis; backward scatter-adds (duplicate indices allowed).
template <class T>
tensor<T> index_select(const tensor<T>& x, size_t axis, std::vector<size_t> idx) {
    check(axis < x.ndim(), "index_select: axis out of range");
    for (size_t i : idx) check(i < x.size(axis), "index_select: index ", i, " out of range");
    shape_t shape = x.shape();
    shape[axis] = idx.size();
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= x.size(d);
    for (size_t d = axis + 1; d < x.ndim(); ++d) inner *= x.size(d);
    const size_t in_row = x.size(axis) * inner, out_row = idx.size() * inner;
    std::vector<T> out(numel(shape));
    const auto& xv = x.data();
    for (size_t o = 0; o < outer; ++o)
        for (size_t j = 0; j < idx.size(); ++j)
            std::memcpy(out.data() + o * out_row + j * inner,
                        xv.data() + o * in_row + idx[j] * inner, inner * sizeof(T));
    return make_op<T>(shape, std::move(out), {x},
                      [idx = std::move(idx), outer, inner, in_row, out_row](node<T>& self) {
                          auto& p = self.parents[0].node_ref();
                          p.ensure_grad();
                          for (size_t o = 0; o < outer; ++o)
                              for (size_t j = 0; j < idx.size(); ++j) {
                                  const T* g = self.grad.data() + o * out_row + j * inner;
                                  T* dst = p.grad.data() + o * in_row + idx[j] * inner;
                                  for (size_t i = 0; i < inner; ++i) dst[i] += g[i];
                              }
                      });
}

// Tile a size-1 axis n times (the explicit form of channel broadcasting).
template <class T>
tensor<T> expand(const tensor<T>& x, size_t axis, size_t n) {
    check(axis < x.ndim() && x.size(axis) == 1, "expand: axis must have size 1");
    shape_t shape = x.shape();
    shape[axis] = n;
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= x.size(d);
    for (size_t d = axis + 1; d < x.ndim(); ++d) inner *= x.size(d);
    std::vector<T> out(numel(shape));
    const auto& xv = x.data();
    for (size_t o = 0; o < outer; ++o)
        for (size_t j = 0; j < n; ++j)
            std::memcpy(out.data() + (o * n + j) * inner, xv.data() + o * inner,
                        inner * sizeof(T));
    return make_op<T>(shape, std::move(out), {x}, [outer, inner, n](node<T>& self) {
        auto& p = self.parents[0].node_ref();
        p.ensure_grad();
        for (size_t o = 0; o < outer; ++o)
            for (size_t j = 0; j < n; ++j) {
                const T* g = self.grad.data() + (o * n + j) * inner;
                T* dst = p.grad.data() + o * inner;
                for (size_t i = 0; i < inner; ++i) dst[i] += g[i];
            }
    });
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <class T>
tensor<T> sum(const tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    return make_op<T>({}, {acc}, {x}, [](node<T>& self) {
        auto& p = self.parents[0].node_ref();
        p.ensure_grad();
        T g = self.grad[0];
        for (auto& d : p.grad) d += g;
    });
}

template <class T>
tensor<T> mean(const tensor<T>& x) {
    check(x.numel() > 0, "mean: empty tensor");
    return scale(sum(x), T(1) / T(x.numel()));
}

template <class T>
tensor<T> sum_axis(const tensor<T>& x, size_t axis, bool keepdim = false) {
    check(axis < x.ndim(), "sum_axis: axis out of range");
    size_t outer = 1, inner = 1, n = x.size(axis);
    for (size_t d = 0; d < axis; ++d) outer *= x.size(d);
    for (size_t d = axis + 1; d < x.ndim(); ++d) inner *= x.size(d);
    shape_t shape = x.shape();
    if (keepdim)
        shape[axis] = 1;
    else
        shape.erase(shape.begin() + long(axis));
    std::vector<T> out(outer * inner, T(0));
    const auto& xv = x.data();
    for (size_t o = 0; o < outer; ++o)
        for (size_t j = 0; j < n; ++j) {
            const T* src = xv.data() + (o * n + j) * inner;
            T* dst = out.data() + o * inner;
            for (size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    return make_op<T>(shape, std::move(out), {x}, [outer, inner, n](node<T>& self) {
        auto& p = self.parents[0].node_ref();
        p.ensure_grad();
        for (size_t o = 0; o < outer; ++o)
            for (size_t j = 0; j < n; ++j) {
                const T* g = self.grad.data() + o * inner;
                T* dst = p.grad.data() + (o * n + j) * inner;
                for (size_t i = 0; i < inner; ++i) dst[i] += g[i];
            }
    });
}

template <class T>
tensor<T> mean_axis(const tensor<T>& x, size_t axis, bool keepdim = false) {
    return scale(sum_axis(x, axis, keepdim), T(1) / T(x.size(axis)));
}

// ---------------------------------------------------------------------------
// Matrix multiply: [*, M, K] x [K, N], or batched with equal leading dims.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void mm_nn(const T* a, const T* b, T* c, size_t M, size_t K, size_t N) {
    for (size_t i = 0; i < M; ++i) {
        T* ci = c + i * N;
        for (size_t k = 0; k < K; ++k) {
            T aik = a[i * K + k];
            if (aik == T(0)) continue;
            const T* bk = b + k * N;
            for (size_t j = 0; j < N; ++j) ci[j] += aik * bk[j];
        }
    }
}
// c[M,N] += a[M,K] * b[N,K]^T
template <class T>
void mm_nt(const T* a, const T* b, T* c, size_t M, size_t K, size_t N) {
    for (size_t i = 0; i < M; ++i) {
        const T* ai = a + i * K;
        for (size_t j = 0; j < N; ++j) {
            const T* bj = b + j * K;
            T acc = 0;
            for (size_t k = 0; k < K; ++k) acc += ai[k] * bj[k];
            c[i * N + j] += acc;
        }
    }
}
// c[K,N] += a[M,K]^T * b[M,N]
template <class T>
void mm_tn(const T* a, const T* b, T* c, size_t M, size_t K, size_t N) {
    for (size_t i = 0; i < M; ++i) {
        const T* bi = b + i * N;
        for (size_t k = 0; k < K; ++k) {
            T aik = a[i * K + k];
            if (aik == T(0)) continue;
            T* ck = c + k * N;
            for (size_t j = 0; j < N; ++j) ck[j] += aik * bi[j];
        }
    }
}

}  // namespace detail

template <class T>
tensor<T> matmul(const tensor<T>& a, const tensor<T>& b) {
    check(a.ndim() >= 2 && b.ndim() >= 2, "matmul: operands must have rank >= 2");
    const size_t M = a.size(a.ndim() - 2), K = a.size(a.ndim() - 1);
    const size_t Kb = b.size(b.ndim() - 2), N = b.size(b.ndim() - 1);
    check(K == Kb, "matmul: inner dims differ, ", shape_str(a.shape()), " x ",
          shape_str(b.shape()));

    size_t batch = 1;
    for (size_t d = 0; d + 2 < a.ndim(); ++d) batch *= a.size(d);
    bool b_batched = b.ndim() > 2;
    if (b_batched) {
        check(a.ndim() == b.ndim(), "matmul: batched rank mismatch");
        for (size_t d = 0; d + 2 < a.ndim(); ++d)
            check(a.size(d) == b.size(d), "matmul: batch dims differ");
    }

    shape_t shape(a.shape().begin(), a.shape().end() - 2);
    shape.push_back(M);
    shape.push_back(N);
    std::vector<T> out(batch * M * N, T(0));
    const T* ap = a.data().data();
    const T* bp = b.data().data();
    for (size_t s = 0; s < batch; ++s)
        detail::mm_nn(ap + s * M * K, b_batched ? bp + s * K * N : bp,
                      out.data() + s * M * N, M, K, N);

    return make_op<T>(shape, std::move(out), {a, b},
                      [M, K, N, batch, b_batched](node<T>& self) {
                          auto& pa = self.parents[0].node_ref();
                          auto& pb = self.parents[1].node_ref();
                          pa.ensure_grad();
                          pb.ensure_grad();
                          const T* g = self.grad.data();
                          for (size_t s = 0; s < batch; ++s) {
                              const T* gs = g + s * M * N;
                              const T* av = pa.value.data() + s * M * K;
                              const T* bv =
                                  pb.value.data() + (b_batched ? s * K * N : 0);
                              T* da = pa.grad.data() + s * M * K;
                              T* db = pb.grad.data() + (b_batched ? s * K * N : 0);
                              detail::mm_nt(gs, bv, da, M, N, K);  // dA = g * B^T
                              detail::mm_tn(av, gs, db, M, K, N);  // dB = A^T * g
                          }
                      });
}

// ---------------------------------------------------------------------------
// Normalization, softmax, loss.
// ---------------------------------------------------------------------------

// Normalizes the trailing dimension; gamma/beta are learnable [D].
template <class T>
tensor<T> layer_norm(const tensor<T>& x, const tensor<T>& gamma, const tensor<T>& beta,
                     T eps = T(1e-5)) {
    check(x.ndim() >= 1, "layer_norm: rank 0 input");
    const size_t D = x.size(x.ndim() - 1);
    check(gamma.numel() == D && beta.numel() == D,
          "layer_norm: scale/shift must have length ", D);
    const size_t rows = x.numel() / D;
    std::vector<T> out(x.numel());
    std::vector<T> inv_sigma(rows), mu(rows);
    const auto& xv = x.data();
    const auto& gv = gamma.data();
    const auto& bv = beta.data();
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = xv.data() + r * D;
        T m = 0;
        for (size_t i = 0; i < D; ++i) m += xr[i];
        m /= T(D);
        T var = 0;
        for (size_t i = 0; i < D; ++i) var += (xr[i] - m) * (xr[i] - m);
        var /= T(D);
        T is = T(1) / std::sqrt(var + eps);
        mu[r] = m;
        inv_sigma[r] = is;
        T* yr = out.data() + r * D;
        for (size_t i = 0; i < D; ++i) yr[i] = gv[i] * (xr[i] - m) * is + bv[i];
    }
    return make_op<T>(
        x.shape(), std::move(out), {x, gamma, beta},
        [rows, D, mu = std::move(mu), inv_sigma = std::move(inv_sigma)](node<T>& self) {
            auto& px = self.parents[0].node_ref();
            auto& pg = self.parents[1].node_ref();
            auto& pb = self.parents[2].node_ref();
            px.ensure_grad();
            pg.ensure_grad();
            pb.ensure_grad();
            for (size_t r = 0; r < rows; ++r) {
                const T* xr = px.value.data() + r * D;
                const T* gr = self.grad.data() + r * D;
                const T is = inv_sigma[r], m = mu[r];
                T sum_dxhat = 0, sum_dxhat_xhat = 0;
                for (size_t i = 0; i < D; ++i) {
                    T xhat = (xr[i] - m) * is;
                    T dxhat = gr[i] * pg.value[i];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    pg.grad[i] += gr[i] * xhat;
                    pb.grad[i] += gr[i];
                }
                T* dx = px.grad.data() + r * D;
                for (size_t i = 0; i < D; ++i) {
                    T xhat = (xr[i] - m) * is;
                    T dxhat = gr[i] * pg.value[i];
                    dx[i] += is * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / T(D));
                }
            }
        });
}

// Softmax over the trailing dimension.
template <class T>
tensor<T> softmax(const tensor<T>& x) {
    check(x.ndim() >= 1, "softmax: rank 0 input");
    const size_t D = x.size(x.ndim() - 1);
    const size_t rows = x.numel() / D;
    std::vector<T> out(x.numel());
    const auto& xv = x.data();
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = xv.data() + r * D;
        T* yr = out.data() + r * D;
        T mx = xr[0];
        for (size_t i = 1; i < D; ++i) mx = std::max(mx, xr[i]);
        T z = 0;
        for (size_t i = 0; i < D; ++i) {
            yr[i] = std::exp(xr[i] - mx);
            z += yr[i];
        }
        for (size_t i = 0; i < D; ++i) yr[i] /= z;
    }
    return make_op<T>(x.shape(), std::move(out), {x}, [rows, D](node<T>& self) {
        auto& p = self.parents[0].node_ref();
        p.ensure_grad();
        for (size_t r = 0; r < rows; ++r) {
            const T* y = self.value.data() + r * D;
            const T* g = self.grad.data() + r * D;
            T dot = 0;
            for (size_t i = 0; i < D; ++i) dot += g[i] * y[i];
            T* dx = p.grad.data() + r * D;
            for (size_t i = 0; i < D; ++i) dx[i] += y[i] * (g[i] - dot);
        }
    });
}

namespace detail {

// fan-in-scaled uniform init for weights; ones/zeros for norms and biases
template <class T>
tensor<T> uniform_param(shape_t shape, size_t fan_in, rng& r) {
    const double bound = 1.0 / std::sqrt(double(fan_in));
    std::vector<T> v(numel(shape));
    for (auto& e : v) e = T(r.uniform(-bound, bound));
    return tensor<T>::param(std::move(shape), std::move(v));
}
template <class T>
tensor<T> ones_param(shape_t shape) {
    return tensor<T>::param(shape, std::vector<T>(numel(shape), T(1)));
}
template <class T>
tensor<T> zeros_param(shape_t shape) {
    return tensor<T>::param(shape, std::vector<T>(numel(shape), T(0)));
}

}  // namespace detail

// Mean over the batch of -log softmax(logits)[label].
template <class T>
tensor<T> cross_entropy(const tensor<T>& logits, const std::vector<int>& labels) {
    check(logits.ndim() == 2, "cross_entropy: logits must be [N, K], got ",
          shape_str(logits.shape()));
    const size_t N = logits.size(0), K = logits.size(1);
    check(labels.size() == N, "cross_entropy: ", N, " rows but ", labels.size(),
          " labels");
    for (int l : labels)
        check(l >= 0 && size_t(l) < K, "cross_entropy: label ", l, " out of range [0,", K,
              ")");
    const auto& lv = logits.data();
    T loss = 0;
    for (size_t r = 0; r < N; ++r) {
        const T* row = lv.data() + r * K;
        T mx = row[0];
        for (size_t i = 1; i < K; ++i) mx = std::max(mx, row[i]);
        T z = 0;
        for (size_t i = 0; i < K; ++i) z += std::exp(row[i] - mx);
        loss += std::log(z) + mx - row[size_t(labels[r])];
    }
    loss /= T(N);
    return make_op<T>({}, {loss}, {logits}, [labels, N, K](node<T>& self) {
        auto& p = self.parents[0].node_ref();
        p.ensure_grad();
        const T g = self.grad[0] / T(N);
        for (size_t r = 0; r < N; ++r) {
            const T* row = p.value.data() + r * K;
            T mx = row[0];
            for (size_t i = 1; i < K; ++i) mx = std::max(mx, row[i]);
            T z = 0;
            for (size_t i = 0; i < K; ++i) z += std::exp(row[i] - mx);
            T* dx = p.grad.data() + r * K;
            for (size_t i = 0; i < K; ++i) {
                T sm = std::exp(row[i] - mx) / z;
                dx[i] += g * (sm - (size_t(labels[r]) == i ? T(1) : T(0)));
            }
        }
    });
}

}  // namespace wmamba
