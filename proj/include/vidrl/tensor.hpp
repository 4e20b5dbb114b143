#pragma once

#include <algorithm>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <unordered_map>

#include "vidrl/core.hpp"

namespace vidrl {

template <class Real>
struct Node;

template <class Real>
using NodePtr = std::shared_ptr<Node<Real>>;

template <class Real>
struct Node {
    Shape shape;
    std::vector<Real> values;
    std::vector<Real> grad;  // allocated lazily during backward
    bool requires_grad = false;
    long id = -1;  // position on the recording tape, -1 for leaves
    const char* op = "leaf";
    std::vector<NodePtr<Real>> parents;
    std::function<void(Node<Real>&)> backprop;

    std::size_t size() const { return values.size(); }
    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), Real(0));
    }
};

template <class Real>
class Tape;

namespace detail {

template <class Real>
struct TapeContext {
    static std::vector<Tape<Real>*>& stack() {
        thread_local std::vector<Tape<Real>*> s;
        return s;
    }
    static bool& grad_enabled() {
        thread_local bool e = true;
        return e;
    }
    static Tape<Real>* active() {
        auto& s = stack();
        return s.empty() ? nullptr : s.back();
    }
};

}  // namespace detail

/// Append-only record of op nodes in creation order; node parents always
/// point at earlier nodes or leaves, so reverse iteration is a valid
/// topological order for backprop.
template <class Real>
class Tape {
public:
    void record(const NodePtr<Real>& n) {
        n->id = static_cast<long>(nodes_.size());
        nodes_.push_back(n);
    }

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    /// Seed `root`'s grad with ones and propagate to every reachable node.
    void backward_from(const NodePtr<Real>& root) {
        if (consumed_) throw TapeError("backward: tape already consumed");
        consumed_ = true;
        if (root->id < 0) return;  // loss does not depend on anything recorded
        root->ensure_grad();
        std::fill(root->grad.begin(), root->grad.end(), Real(1));
        for (long i = root->id; i >= 0; --i) {
            Node<Real>& n = *nodes_[static_cast<std::size_t>(i)];
            if (n.grad.empty() || !n.backprop) continue;
            for (auto& p : n.parents)
                if (p->requires_grad) p->ensure_grad();
            n.backprop(n);
        }
    }

    void clear() {
        nodes_.clear();
        consumed_ = false;
    }

private:
    std::vector<NodePtr<Real>> nodes_;
    bool consumed_ = false;
};

/// RAII scope making `tape` the active recording target on this thread.
template <class Real>
class TapeScope {
public:
    explicit TapeScope(Tape<Real>& tape) { detail::TapeContext<Real>::stack().push_back(&tape); }
    ~TapeScope() { detail::TapeContext<Real>::stack().pop_back(); }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
};

template <class Real>
class NoGradScope {
public:
    NoGradScope() : prev_(detail::TapeContext<Real>::grad_enabled()) {
        detail::TapeContext<Real>::grad_enabled() = false;
    }
    ~NoGradScope() { detail::TapeContext<Real>::grad_enabled() = prev_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    bool prev_;
};

template <class Real>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr<Real> n) : node_(std::move(n)) {}

    Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false) {
        if (numel(shape) != values.size())
            throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
        node_ = std::make_shared<Node<Real>>();
        node_->shape = std::move(shape);
        node_->values = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<Real> v(numel(shape), Real(0));
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }
    static Tensor full(Shape shape, Real value, bool requires_grad = false) {
        std::vector<Real> v(numel(shape), value);
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }
    static Tensor scalar_of(Real value) { return Tensor({1}, {value}); }
    static Tensor randn(Shape shape, Rng& rng, Real stddev = Real(1), bool requires_grad = false) {
        std::vector<Real> v(numel(shape));
        for (auto& x : v) x = static_cast<Real>(rng.normal()) * stddev;
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    const std::vector<Real>& values() const { return node_->values; }
    std::vector<Real>& mutable_values() { return node_->values; }
    const std::vector<Real>& grad() const { return node_->grad; }
    std::vector<Real>& mutable_grad() { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    std::size_t size() const { return node_->values.size(); }
    const NodePtr<Real>& node() const { return node_; }

    Real scalar() const {
        if (node_->values.size() != 1)
            throw ShapeError("scalar() on tensor of shape " + shape_str(node_->shape));
        return node_->values[0];
    }

    void zero_grad() { node_->grad.clear(); }

private:
    NodePtr<Real> node_;
};

namespace detail {

template <class Real>
void check_finite(const char* op, const std::vector<Real>& v, long id) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(static_cast<double>(v[i])))
            throw NonFiniteError(std::string("non-finite output in op '") + op + "' (node " +
                                 std::to_string(id) + ", element " + std::to_string(i) + ")");
    }
}

/// Create an op result node, recording it on the active tape when any input
/// carries gradient and recording is enabled.
template <class Real>
Tensor<Real> make_op(const char* op, Shape shape, std::vector<Real> values,
                     std::vector<Tensor<Real>> parents,
                     std::function<void(Node<Real>&)> backprop) {
    auto n = std::make_shared<Node<Real>>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->op = op;
    bool needs = false;
    if (TapeContext<Real>::grad_enabled()) {
        for (const auto& p : parents)
            if (p.requires_grad()) needs = true;
    }
    Tape<Real>* tape = TapeContext<Real>::active();
    if (needs && tape) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
        tape->record(n);
    }
    check_finite(op, n->values, n->id);
    return Tensor<Real>(std::move(n));
}

template <class Real>
void require_same_shape(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (same shape; use broadcast() to align shapes first)
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape("add", a, b);
    std::vector<Real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return detail::make_op<Real>("add", a.shape(), std::move(out), {a, b}, [](Node<Real>& n) {
        auto& g0 = n.parents[0]->grad;
        auto& g1 = n.parents[1]->grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            if (!g0.empty()) g0[i] += n.grad[i];
            if (!g1.empty()) g1[i] += n.grad[i];
        }
    });
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape("sub", a, b);
    std::vector<Real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return detail::make_op<Real>("sub", a.shape(), std::move(out), {a, b}, [](Node<Real>& n) {
        auto& g0 = n.parents[0]->grad;
        auto& g1 = n.parents[1]->grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            if (!g0.empty()) g0[i] += n.grad[i];
            if (!g1.empty()) g1[i] -= n.grad[i];
        }
    });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape("mul", a, b);
    std::vector<Real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return detail::make_op<Real>("mul", a.shape(), std::move(out), {a, b}, [](Node<Real>& n) {
        auto& g0 = n.parents[0]->grad;
        auto& g1 = n.parents[1]->grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            if (!g0.empty()) g0[i] += n.grad[i] * n.parents[1]->values[i];
            if (!g1.empty()) g1[i] += n.grad[i] * n.parents[0]->values[i];
        }
    });
}

template <class Real>
Tensor<Real> minimum(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape("minimum", a, b);
    std::vector<Real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(a.values()[i], b.values()[i]);
    return detail::make_op<Real>("minimum", a.shape(), std::move(out), {a, b}, [](Node<Real>& n) {
        // subgradient: ties route to the first argument
        auto& g0 = n.parents[0]->grad;
        auto& g1 = n.parents[1]->grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            if (n.parents[0]->values[i] <= n.parents[1]->values[i]) {
                if (!g0.empty()) g0[i] += n.grad[i];
            } else {
                if (!g1.empty()) g1[i] += n.grad[i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> scalar_mul(const Tensor<Real>& a, Real s) {
    std::vector<Real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * s;
    return detail::make_op<Real>("scalar_mul", a.shape(), std::move(out), {a}, [s](Node<Real>& n) {
        auto& g0 = n.parents[0]->grad;
        if (g0.empty()) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) g0[i] += n.grad[i] * s;
    });
}

template <class Real>
Tensor<Real> scalar_add(const Tensor<Real>& a, Real s) {
    std::vector<Real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + s;
    return detail::make_op<Real>("scalar_add", a.shape(), std::move(out), {a}, [](Node<Real>& n) {
        auto& g0 = n.parents[0]->grad;
        if (g0.empty()) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) g0[i] += n.grad[i];
    });
}

template <class Real>
Tensor<Real> vtanh(const Tensor<Real>& a) {
    std::vector<Real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.values()[i]);
    return detail::make_op<Real>("tanh", a.shape(), std::move(out), {a}, [](Node<Real>& n) {
        auto& g0 = n.parents[0]->grad;
        if (g0.empty()) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            Real y = n.values[i];
            g0[i] += n.grad[i] * (Real(1) - y * y);
        }
    });
}

template <class Real>
Tensor<Real> silu(const Tensor<Real>& a) {
    std::vector<Real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        Real x = a.values()[i];
        out[i] = x / (Real(1) + std::exp(-x));
    }
    return detail::make_op<Real>("silu", a.shape(), std::move(out), {a}, [](Node<Real>& n) {
        auto& g0 = n.parents[0]->grad;
        if (g0.empty()) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            Real x = n.parents[0]->values[i];
            Real s = Real(1) / (Real(1) + std::exp(-x));
            g0[i] += n.grad[i] * (s + x * s * (Real(1) - s));
        }
    });
}

template <class Real>
Tensor<Real> vexp(const Tensor<Real>& a) {
    std::vector<Real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.values()[i]);
    return detail::make_op<Real>("exp", a.shape(), std::move(out), {a}, [](Node<Real>& n) {
        auto& g0 = n.parents[0]->grad;
        if (g0.empty()) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) g0[i] += n.grad[i] * n.values[i];
    });
}

template <class Real>
Tensor<Real> vlog(const Tensor<Real>& a) {
    std::vector<Real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.values()[i]);
    return detail::make_op<Real>("log", a.shape(), std::move(out), {a}, [](Node<Real>& n) {
        auto& g0 = n.parents[0]->grad;
        if (g0.empty()) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            g0[i] += n.grad[i] / n.parents[0]->values[i];
    });
}

template <class Real>
Tensor<Real> square(const Tensor<Real>& a) {
    std::vector<Real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * a.values()[i];
    return detail::make_op<Real>("square", a.shape(), std::move(out), {a}, [](Node<Real>& n) {
        auto& g0 = n.parents[0]->grad;
        if (g0.empty()) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            g0[i] += n.grad[i] * Real(2) * n.parents[0]->values[i];
    });
}

template <class Real>
Tensor<Real> vsqrt(const Tensor<Real>& a) {
    std::vector<Real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a.values()[i]);
    return detail::make_op<Real>("sqrt", a.shape(), std::move(out), {a}, [](Node<Real>& n) {
        auto& g0 = n.parents[0]->grad;
        if (g0.empty()) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            g0[i] += n.grad[i] / (Real(2) * n.values[i]);
    });
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
    std::vector<Real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = Real(1) / (Real(1) + std::exp(-a.values()[i]));
    return detail::make_op<Real>("sigmoid", a.shape(), std::move(out), {a}, [](Node<Real>& n) {
        auto& g0 = n.parents[0]->grad;
        if (g0.empty()) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            Real y = n.values[i];
            g0[i] += n.grad[i] * y * (Real(1) - y);
        }
    });
}

template <class Real>
Tensor<Real> clamp(const Tensor<Real>& a, Real lo, Real hi) {
    std::vector<Real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::min(hi, std::max(lo, a.values()[i]));
    return detail::make_op<Real>("clamp", a.shape(), std::move(out), {a}, [lo, hi](Node<Real>& n) {
        auto& g0 = n.parents[0]->grad;
        if (g0.empty()) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            Real x = n.parents[0]->values[i];
            if (x >= lo && x <= hi) g0[i] += n.grad[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> reduce_sum(const Tensor<Real>& a) {
    Real s = 0;
    for (Real x : a.values()) s += x;
    return detail::make_op<Real>("reduce_sum", {1}, {s}, {a}, [](Node<Real>& n) {
        auto& g0 = n.parents[0]->grad;
        Real g = n.grad[0];
        for (std::size_t i = 0; i < g0.size(); ++i) g0[i] += g;
    });
}

template <class Real>
Tensor<Real> reduce_mean(const Tensor<Real>& a) {
    Real s = 0;
    for (Real x : a.values()) s += x;
    const Real inv = Real(1) / static_cast<Real>(a.size());
    return detail::make_op<Real>("reduce_mean", {1}, {s * inv}, {a}, [inv](Node<Real>& n) {
        auto& g0 = n.parents[0]->grad;
        Real g = n.grad[0] * inv;
        for (std::size_t i = 0; i < g0.size(); ++i) g0[i] += g;
    });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

namespace detail {

// C[m,n] += A[m,k] * B[k,n]; ikj order for cache friendliness
template <class Real>
void gemm_acc(const Real* A, const Real* B, Real* C, std::size_t m, std::size_t k,
              std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* a = A + i * k;
        Real* c = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            Real av = a[p];
            if (av == Real(0)) continue;
            const Real* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C[m,n] += A^T[m,k_rows] ... helpers for backward
// dA[m,k] += dC[m,n] * B^T  (i.e. dA = dC * B^T)
template <class Real>
void gemm_nt_acc(const Real* dC, const Real* B, Real* dA, std::size_t m, std::size_t k,
                 std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* dc = dC + i * n;
        Real* da = dA + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const Real* b = B + p * n;
            Real acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += dc[j] * b[j];
            da[p] += acc;
        }
    }
}

// dB[k,n] += A^T * dC  (A is [m,k], dC is [m,n])
template <class Real>
void gemm_tn_acc(const Real* A, const Real* dC, Real* dB, std::size_t m, std::size_t k,
                 std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* a = A + i * k;
        const Real* dc = dC + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            Real av = a[p];
            if (av == Real(0)) continue;
            Real* db = dB + p * n;
            for (std::size_t j = 0; j < n; ++j) db[j] += av * dc[j];
        }
    }
}

}  // namespace detail

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<Real> out(m * n, Real(0));
    detail::gemm_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
    return detail::make_op<Real>(
        "matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<Real>& n_) {
            if (!n_.parents[0]->grad.empty())
                detail::gemm_nt_acc(n_.grad.data(), n_.parents[1]->values.data(),
                                    n_.parents[0]->grad.data(), m, k, n);
            if (!n_.parents[1]->grad.empty())
                detail::gemm_tn_acc(n_.parents[0]->values.data(), n_.grad.data(),
                                    n_.parents[1]->grad.data(), m, k, n);
        });
}

/// y = x * W + b with b broadcast over rows. Fused for speed.
template <class Real>
Tensor<Real> affine(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b) {
    if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[0])
        throw ShapeError("affine: incompatible shapes " + shape_str(x.shape()) + " x " +
                         shape_str(w.shape()));
    const std::size_t m = x.shape()[0], k = x.shape()[1], n = w.shape()[1];
    if (b.shape() != Shape{n})
        throw ShapeError("affine: bias shape " + shape_str(b.shape()) + " expected [" +
                         std::to_string(n) + "]");
    std::vector<Real> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        std::memcpy(out.data() + i * n, b.values().data(), n * sizeof(Real));
    detail::gemm_acc(x.values().data(), w.values().data(), out.data(), m, k, n);
    return detail::make_op<Real>(
        "affine", {m, n}, std::move(out), {x, w, b}, [m, k, n](Node<Real>& n_) {
            if (!n_.parents[0]->grad.empty())
                detail::gemm_nt_acc(n_.grad.data(), n_.parents[1]->values.data(),
                                    n_.parents[0]->grad.data(), m, k, n);
            if (!n_.parents[1]->grad.empty())
                detail::gemm_tn_acc(n_.parents[0]->values.data(), n_.grad.data(),
                                    n_.parents[1]->grad.data(), m, k, n);
            if (!n_.parents[2]->grad.empty()) {
                Real* db = n_.parents[2]->grad.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const Real* g = n_.grad.data() + i * n;
                    for (std::size_t j = 0; j < n; ++j) db[j] += g[j];
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

/// Broadcast `a` to `target`. Trailing-aligned, each source dim must equal the
/// target dim or be 1 (missing leading dims count as 1).
template <class Real>
Tensor<Real> broadcast(const Tensor<Real>& a, const Shape& target) {
    const Shape& s = a.shape();
    if (s.size() > target.size())
        throw ShapeError("broadcast: source rank exceeds target " + shape_str(s) + " -> " +
                         shape_str(target));
    Shape padded(target.size(), 1);
    std::copy(s.begin(), s.end(), padded.begin() + (target.size() - s.size()));
    for (std::size_t i = 0; i < target.size(); ++i)
        if (padded[i] != target[i] && padded[i] != 1)
            throw ShapeError("broadcast: dim " + std::to_string(i) + " of " + shape_str(s) +
                             " incompatible with " + shape_str(target));
    const std::size_t out_n = numel(target);
    std::vector<Real> out(out_n);
    // strides of the (padded) source within the target iteration space
    std::vector<std::size_t> sstride(target.size(), 0), tstride(target.size(), 1);
    for (std::size_t i = target.size(); i-- > 0;) {
        if (i + 1 < target.size()) tstride[i] = tstride[i + 1] * target[i + 1];
    }
    std::size_t acc = 1;
    for (std::size_t i = padded.size(); i-- > 0;) {
        sstride[i] = (padded[i] == 1) ? 0 : acc;
        acc *= padded[i];
    }
    for (std::size_t flat = 0; flat < out_n; ++flat) {
        std::size_t rem = flat, src = 0;
        for (std::size_t i = 0; i < target.size(); ++i) {
            std::size_t idx = rem / tstride[i];
            rem %= tstride[i];
            src += idx * sstride[i];
        }
        out[flat] = a.values()[src];
    }
    Shape tgt = target;
    return detail::make_op<Real>(
        "broadcast", tgt, std::move(out), {a},
        [tstride, sstride, tgt](Node<Real>& n) {
            if (n.parents[0]->grad.empty()) return;
            for (std::size_t flat = 0; flat < n.grad.size(); ++flat) {
                std::size_t rem = flat, src = 0;
                for (std::size_t i = 0; i < tgt.size(); ++i) {
                    std::size_t idx = rem / tstride[i];
                    rem %= tstride[i];
                    src += idx * sstride[i];
                }
                n.parents[0]->grad[src] += n.grad[flat];
            }
        });
}

/// Reinterpret values under a new shape (copying).
template <class Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
    if (numel(shape) != a.size())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    std::vector<Real> out = a.values();
    return detail::make_op<Real>("reshape", std::move(shape), std::move(out), {a},
                                 [](Node<Real>& n) {
                                     if (n.parents[0]->grad.empty()) return;
                                     for (std::size_t i = 0; i < n.grad.size(); ++i)
                                         n.parents[0]->grad[i] += n.grad[i];
                                 });
}

/// Slice rows [start, end) along axis 0 of a 2-D tensor (or elements of 1-D).
template <class Real>
Tensor<Real> slice_rows(const Tensor<Real>& a, std::size_t start, std::size_t end) {
    if (a.shape().empty()) throw ShapeError("slice: scalar input");
    const std::size_t rows = a.shape()[0];
    if (start >= end || end > rows)
        throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(end) +
                         ") out of " + std::to_string(rows) + " rows");
    const std::size_t stride = a.size() / rows;
    Shape oshape = a.shape();
    oshape[0] = end - start;
    std::vector<Real> out(a.values().begin() + static_cast<long>(start * stride),
                          a.values().begin() + static_cast<long>(end * stride));
    return detail::make_op<Real>("slice", std::move(oshape), std::move(out), {a},
                                 [start, stride](Node<Real>& n) {
                                     if (n.parents[0]->grad.empty()) return;
                                     for (std::size_t i = 0; i < n.grad.size(); ++i)
                                         n.parents[0]->grad[start * stride + i] += n.grad[i];
                                 });
}

/// Concatenate 2-D tensors along `axis` (0 or 1); 1-D allowed for axis 0.
template <class Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= std::max<std::size_t>(s0.size(), 1))
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s0));
    if (axis == 0) {
        Shape oshape = s0;
        std::size_t total_rows = 0;
        const std::size_t stride = s0.size() > 1 ? numel(s0) / s0[0] : 1;
        for (const auto& p : parts) {
            Shape ps = p.shape();
            if (ps.size() != s0.size() ||
                !std::equal(ps.begin() + 1, ps.end(), s0.begin() + 1))
                throw ShapeError("concat: trailing dims differ: " + shape_str(ps) + " vs " +
                                 shape_str(s0));
            total_rows += ps[0];
        }
        oshape[0] = total_rows;
        std::vector<Real> out;
        out.reserve(total_rows * stride);
        for (const auto& p : parts)
            out.insert(out.end(), p.values().begin(), p.values().end());
        std::vector<std::size_t> sizes;
        for (const auto& p : parts) sizes.push_back(p.size());
        return detail::make_op<Real>("concat", std::move(oshape), std::move(out), parts,
                                     [sizes](Node<Real>& n) {
                                         std::size_t off = 0;
                                         for (std::size_t k = 0; k < sizes.size(); ++k) {
                                             if (!n.parents[k]->grad.empty())
                                                 for (std::size_t i = 0; i < sizes[k]; ++i)
                                                     n.parents[k]->grad[i] += n.grad[off + i];
                                             off += sizes[k];
                                         }
                                     });
    }
    // axis == 1, all parts 2-D with equal row count
    const std::size_t rows = s0[0];
    std::size_t total_cols = 0;
    std::vector<std::size_t> cols;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.shape()[0] != rows)
            throw ShapeError("concat axis 1: row mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(s0));
        cols.push_back(p.shape()[1]);
        total_cols += p.shape()[1];
    }
    std::vector<Real> out(rows * total_cols);
    std::size_t coff = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& v = parts[k].values();
        for (std::size_t r = 0; r < rows; ++r)
            std::memcpy(out.data() + r * total_cols + coff, v.data() + r * cols[k],
                        cols[k] * sizeof(Real));
        coff += cols[k];
    }
    return detail::make_op<Real>(
        "concat", {rows, total_cols}, std::move(out), parts,
        [rows, total_cols, cols](Node<Real>& n) {
            std::size_t coff2 = 0;
            for (std::size_t k = 0; k < cols.size(); ++k) {
                if (!n.parents[k]->grad.empty())
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols[k]; ++c)
                            n.parents[k]->grad[r * cols[k] + c] +=
                                n.grad[r * total_cols + coff2 + c];
                coff2 += cols[k];
            }
        });
}

/// Gather rows of a 2-D table by index; backward scatter-adds into the table.
template <class Real>
Tensor<Real> gather_rows(const Tensor<Real>& table, const std::vector<std::size_t>& indices) {
    if (table.shape().size() != 2)
        throw ShapeError("gather_rows: table must be 2-D, got " + shape_str(table.shape()));
    const std::size_t rows = table.shape()[0], cols = table.shape()[1];
    for (std::size_t idx : indices)
        if (idx >= rows)
            throw ShapeError("gather_rows: index " + std::to_string(idx) + " out of " +
                             std::to_string(rows) + " rows");
    std::vector<Real> out(indices.size() * cols);
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::memcpy(out.data() + i * cols, table.values().data() + indices[i] * cols,
                    cols * sizeof(Real));
    return detail::make_op<Real>("gather_rows", {indices.size(), cols}, std::move(out), {table},
                                 [indices, cols](Node<Real>& n) {
                                     if (n.parents[0]->grad.empty()) return;
                                     for (std::size_t i = 0; i < indices.size(); ++i)
                                         for (std::size_t c = 0; c < cols; ++c)
                                             n.parents[0]->grad[indices[i] * cols + c] +=
                                                 n.grad[i * cols + c];
                                 });
}

/// Gather arbitrary flat elements; backward scatter-adds.
template <class Real>
Tensor<Real> take(const Tensor<Real>& a, const std::vector<std::size_t>& flat_indices) {
    std::vector<Real> out(flat_indices.size());
    for (std::size_t i = 0; i < flat_indices.size(); ++i) {
        if (flat_indices[i] >= a.size())
            throw ShapeError("take: index " + std::to_string(flat_indices[i]) + " out of " +
                             std::to_string(a.size()));
        out[i] = a.values()[flat_indices[i]];
    }
    return detail::make_op<Real>("take", {flat_indices.size()}, std::move(out), {a},
                                 [flat_indices](Node<Real>& n) {
                                     if (n.parents[0]->grad.empty()) return;
                                     for (std::size_t i = 0; i < flat_indices.size(); ++i)
                                         n.parents[0]->grad[flat_indices[i]] += n.grad[i];
                                 });
}

// ---------------------------------------------------------------------------
// Row-wise softmax family (last axis of a 2-D tensor; 1-D treated as one row)
// ---------------------------------------------------------------------------

namespace detail {
template <class Real>
std::pair<std::size_t, std::size_t> row_layout(const Tensor<Real>& a, const char* op) {
    if (a.shape().size() == 1) return {std::size_t(1), a.shape()[0]};
    if (a.shape().size() == 2) return {a.shape()[0], a.shape()[1]};
    throw ShapeError(std::string(op) + ": expected 1-D or 2-D, got " + shape_str(a.shape()));
}
}  // namespace detail

template <class Real>
Tensor<Real> softmax(const Tensor<Real>& a) {
    auto [rows, cols] = detail::row_layout(a, "softmax");
    std::vector<Real> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* x = a.values().data() + r * cols;
        Real* y = out.data() + r * cols;
        Real mx = x[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
        Real sum = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            y[c] = std::exp(x[c] - mx);
            sum += y[c];
        }
        for (std::size_t c = 0; c < cols; ++c) y[c] /= sum;
    }
    return detail::make_op<Real>(
        "softmax", a.shape(), std::move(out), {a}, [rows, cols](Node<Real>& n) {
            if (n.parents[0]->grad.empty()) return;
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* y = n.values.data() + r * cols;
                const Real* g = n.grad.data() + r * cols;
                Real dot = 0;
                for (std::size_t c = 0; c < cols; ++c) dot += y[c] * g[c];
                Real* px = n.parents[0]->grad.data() + r * cols;
                for (std::size_t c = 0; c < cols; ++c) px[c] += y[c] * (g[c] - dot);
            }
        });
}

template <class Real>
Tensor<Real> log_softmax(const Tensor<Real>& a) {
    auto [rows, cols] = detail::row_layout(a, "log_softmax");
    std::vector<Real> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* x = a.values().data() + r * cols;
        Real* y = out.data() + r * cols;
        Real mx = x[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
        Real sum = 0;
        for (std::size_t c = 0; c < cols; ++c) sum += std::exp(x[c] - mx);
        Real lse = mx + std::log(sum);
        for (std::size_t c = 0; c < cols; ++c) y[c] = x[c] - lse;
    }
    return detail::make_op<Real>(
        "log_softmax", a.shape(), std::move(out), {a}, [rows, cols](Node<Real>& n) {
            if (n.parents[0]->grad.empty()) return;
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* y = n.values.data() + r * cols;
                const Real* g = n.grad.data() + r * cols;
                Real gsum = 0;
                for (std::size_t c = 0; c < cols; ++c) gsum += g[c];
                Real* px = n.parents[0]->grad.data() + r * cols;
                for (std::size_t c = 0; c < cols; ++c) px[c] += g[c] - std::exp(y[c]) * gsum;
            }
        });
}

// ---------------------------------------------------------------------------
// Frame mixing: y = (I_B kron M) x for x holding B blocks of N rows
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> frame_mix(const Tensor<Real>& m, const Tensor<Real>& x, std::size_t block_rows) {
    if (m.shape().size() != 2 || m.shape()[0] != block_rows || m.shape()[1] != block_rows)
        throw ShapeError("frame_mix: mixing matrix must be " + std::to_string(block_rows) + "x" +
                         std::to_string(block_rows) + ", got " + shape_str(m.shape()));
    if (x.shape().size() != 2 || x.shape()[0] % block_rows != 0)
        throw ShapeError("frame_mix: rows of " + shape_str(x.shape()) + " not a multiple of " +
                         std::to_string(block_rows));
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    const std::size_t blocks = rows / block_rows;
    std::vector<Real> out(rows * cols, Real(0));
    for (std::size_t b = 0; b < blocks; ++b)
        detail::gemm_acc(m.values().data(), x.values().data() + b * block_rows * cols,
                         out.data() + b * block_rows * cols, block_rows, block_rows, cols);
    return detail::make_op<Real>(
        "frame_mix", x.shape(), std::move(out), {m, x},
        [blocks, block_rows, cols](Node<Real>& n) {
            for (std::size_t b = 0; b < blocks; ++b) {
                const std::size_t off = b * block_rows * cols;
                // dX_b += M^T dY_b
                if (!n.parents[1]->grad.empty())
                    detail::gemm_tn_acc(n.parents[0]->values.data(), n.grad.data() + off,
                                        n.parents[1]->grad.data() + off, block_rows,
                                        block_rows, cols);
                // dM += dY_b X_b^T
                if (!n.parents[0]->grad.empty())
                    detail::gemm_nt_acc(n.grad.data() + off, n.parents[1]->values.data() + off,
                                        n.parents[0]->grad.data(), block_rows, block_rows,
                                        cols);
            }
        });
}

// ---------------------------------------------------------------------------
// stop_grad / backward / checkpoint
// ---------------------------------------------------------------------------

/// Identical values, no gradient path to the input.
template <class Real>
Tensor<Real> stop_grad(const Tensor<Real>& a) {
    if (!a.requires_grad()) return a;  // idempotent; already a pure value
    return Tensor<Real>(a.shape(), a.values(), false);
}

/// Run `segment` storing only its inputs; recompute it during backward.
/// The recomputed forward must reproduce the stored values exactly.
template <class Real>
Tensor<Real> checkpoint(
    const std::function<Tensor<Real>(const std::vector<Tensor<Real>>&)>& segment,
    const std::vector<Tensor<Real>>& inputs) {
    std::vector<Real> out_values;
    Shape out_shape;
    {
        NoGradScope<Real> ng;
        Tensor<Real> out = segment(inputs);
        out_values = out.values();
        out_shape = out.shape();
    }
    auto seg = segment;  // captured by the backward closure
    return detail::make_op<Real>(
        "checkpoint", std::move(out_shape), std::move(out_values), inputs,
        [seg](Node<Real>& n) {
            Tape<Real> subtape;
            std::vector<Tensor<Real>> fresh;
            fresh.reserve(n.parents.size());
            for (auto& p : n.parents)
                fresh.emplace_back(p->shape, p->values, p->requires_grad);
            Tensor<Real> out;
            {
                TapeScope<Real> scope(subtape);
                out = seg(fresh);
            }
            if (out.values() != n.values)
                throw TapeError("checkpoint: segment recomputation differs from stored forward "
                                "(nondeterministic segment)");
            // seed output grad and run the sub-graph backward
            out.node()->ensure_grad();
            out.node()->grad = n.grad;
            subtape_backward(subtape, out);
            for (std::size_t i = 0; i < fresh.size(); ++i) {
                if (!fresh[i].requires_grad() || n.parents[i]->grad.empty()) continue;
                const auto& g = fresh[i].grad();
                if (g.empty()) continue;
                for (std::size_t j = 0; j < g.size(); ++j) n.parents[i]->grad[j] += g[j];
            }
        });
}

/// Backward over a sub-tape whose root grad has been seeded externally.
template <class Real>
void subtape_backward(Tape<Real>& tape, const Tensor<Real>& root) {
    (void)tape;
    if (root.node()->id < 0) return;
    std::vector<NodePtr<Real>> order;
    std::unordered_map<Node<Real>*, bool> seen;
    std::function<void(const NodePtr<Real>&)> visit = [&](const NodePtr<Real>& n) {
        if (!n || n->id < 0 || seen[n.get()]) return;
        seen[n.get()] = true;
        for (auto& p : n->parents) visit(p);
        order.push_back(n);
    };
    visit(root.node());
    std::sort(order.begin(), order.end(),
              [](const NodePtr<Real>& a, const NodePtr<Real>& b) { return a->id > b->id; });
    for (auto& n : order) {
        if (n->grad.empty() || !n->backprop) continue;
        for (auto& p : n->parents)
            if (p->requires_grad) p->ensure_grad();
        n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// Dynamic dispatch entry point
// ---------------------------------------------------------------------------

enum class OpKind {
    Add,
    Sub,
    Mul,
    ScalarMul,
    Matmul,
    Affine,
    Tanh,
    Silu,
    ReduceMean,
    ReduceSum,
    Slice,
    Concat,
    Softmax,
    Log,
    Square,
    Sqrt,
    Broadcast,
};

template <class Real>
struct OpAttrs {
    Real scalar = Real(0);       // ScalarMul
    std::size_t start = 0;       // Slice
    std::size_t end = 0;         // Slice
    std::size_t axis = 0;        // Concat
    Shape target;                // Broadcast
};

template <class Real>
Tensor<Real> apply(OpKind kind, const std::vector<Tensor<Real>>& inputs,
                   const OpAttrs<Real>& attrs = {}) {
    auto one = [&](const char* op) -> const Tensor<Real>& {
        if (inputs.size() != 1) throw ShapeError(std::string(op) + ": expects 1 input");
        return inputs[0];
    };
    auto two = [&](const char* op) {
        if (inputs.size() != 2) throw ShapeError(std::string(op) + ": expects 2 inputs");
    };
    switch (kind) {
        case OpKind::Add: two("add"); return add(inputs[0], inputs[1]);
        case OpKind::Sub: two("sub"); return sub(inputs[0], inputs[1]);
        case OpKind::Mul: two("mul"); return mul(inputs[0], inputs[1]);
        case OpKind::ScalarMul: return scalar_mul(one("scalar_mul"), attrs.scalar);
        case OpKind::Matmul: two("matmul"); return matmul(inputs[0], inputs[1]);
        case OpKind::Affine:
            if (inputs.size() != 3) throw ShapeError("affine: expects 3 inputs");
            return affine(inputs[0], inputs[1], inputs[2]);
        case OpKind::Tanh: return vtanh(one("tanh"));
        case OpKind::Silu: return silu(one("silu"));
        case OpKind::ReduceMean: return reduce_mean(one("reduce_mean"));
        case OpKind::ReduceSum: return reduce_sum(one("reduce_sum"));
        case OpKind::Slice: return slice_rows(one("slice"), attrs.start, attrs.end);
        case OpKind::Concat: return concat(inputs, attrs.axis);
        case OpKind::Softmax: return softmax(one("softmax"));
        case OpKind::Log: return vlog(one("log"));
        case OpKind::Square: return square(one("square"));
        case OpKind::Sqrt: return vsqrt(one("sqrt"));
        case OpKind::Broadcast: return broadcast(one("broadcast"), attrs.target);
    }
    throw ShapeError("apply: unknown op kind");
}

}  // namespace vidrl
