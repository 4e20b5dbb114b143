#pragma once

#include <map>

#include "vidrl/tensor.hpp"

namespace vidrl {

template <class Real>
struct Parameter {
    std::string name;
    Tensor<Real> tensor;  // requires_grad = true
    bool trainable = true;
};

template <class Real>
class ParamStore {
public:
    Tensor<Real>& add(const std::string& name, Tensor<Real> t, bool trainable = true) {
        if (index_.count(name)) throw TrainError("parameter '" + name + "' already exists");
        index_[name] = params_.size();
        params_.push_back(Parameter<Real>{name, std::move(t), trainable});
        return params_.back().tensor;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Parameter<Real>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw TrainError("unknown parameter '" + name + "'");
        return params_[it->second];
    }
    const Parameter<Real>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw TrainError("unknown parameter '" + name + "'");
        return params_[it->second];
    }

    std::vector<Parameter<Real>>& all() { return params_; }
    const std::vector<Parameter<Real>>& all() const { return params_; }

    void zero_grads() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    void set_all_trainable(bool v) {
        for (auto& p : params_) p.trainable = v;
    }

    std::size_t trainable_count() const {
        std::size_t n = 0;
        for (const auto& p : params_)
            if (p.trainable) n += p.tensor.size();
        return n;
    }

    /// Deep copy; fresh leaves (no shared nodes).
    ParamStore clone() const {
        ParamStore out;
        for (const auto& p : params_)
            out.add(p.name,
                    Tensor<Real>(p.tensor.shape(), p.tensor.values(), p.tensor.requires_grad()),
                    p.trainable);
        return out;
    }

private:
    std::vector<Parameter<Real>> params_;
    std::map<std::string, std::size_t> index_;
};

template <class Real>
using GradMap = std::map<std::string, Tensor<Real>>;

/// Run reverse sweep from a scalar loss; every parameter gets an entry,
/// zero-filled when unreachable from the loss.
template <class Real>
GradMap<Real> backward(Tape<Real>& tape, const Tensor<Real>& loss, const ParamStore<Real>& params) {
    if (loss.size() != 1) throw TapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    tape.backward_from(loss.node());
    GradMap<Real> out;
    for (const auto& p : params.all()) {
        const auto& g = p.tensor.grad();
        if (g.empty())
            out.emplace(p.name, Tensor<Real>::zeros(p.tensor.shape()));
        else
            out.emplace(p.name, Tensor<Real>(p.tensor.shape(), g));
    }
    return out;
}

/// Global-norm gradient clipping over the trainable parameters. Returns the
/// pre-clip norm.
template <class Real>
Real clip_grad_norm(ParamStore<Real>& params, Real max_norm) {
    double total = 0;
    for (auto& p : params.all()) {
        if (!p.trainable || p.tensor.grad().empty()) continue;
        for (Real g : p.tensor.grad()) total += double(g) * double(g);
    }
    const Real norm = static_cast<Real>(std::sqrt(total));
    if (max_norm > Real(0) && norm > max_norm) {
        const Real scale = max_norm / norm;
        for (auto& p : params.all()) {
            if (!p.trainable || p.tensor.grad().empty()) continue;
            for (Real& g : p.tensor.mutable_grad()) g *= scale;
        }
    }
    return norm;
}

template <class Real>
class Adam {
public:
    explicit Adam(Real lr, Real beta1 = Real(0.9), Real beta2 = Real(0.999),
                  Real eps = Real(1e-8))
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    Real lr() const { return lr_; }
    void set_lr(Real lr) { lr_ = lr; }

    /// One update over the trainable parameters using their accumulated grads.
    /// Parameters without grads are skipped (treated as zero gradient).
    void step(ParamStore<Real>& params) {
        ++t_;
        const Real bc1 = Real(1) - static_cast<Real>(std::pow(double(beta1_), double(t_)));
        const Real bc2 = Real(1) - static_cast<Real>(std::pow(double(beta2_), double(t_)));
        for (auto& p : params.all()) {
            if (!p.trainable) continue;
            const auto& g = p.tensor.grad();
            if (g.empty()) continue;
            auto& state = state_[p.name];
            if (state.m.size() != g.size()) {
                state.m.assign(g.size(), Real(0));
                state.v.assign(g.size(), Real(0));
            }
            auto& vals = p.tensor.mutable_values();
            for (std::size_t i = 0; i < g.size(); ++i) {
                state.m[i] = beta1_ * state.m[i] + (Real(1) - beta1_) * g[i];
                state.v[i] = beta2_ * state.v[i] + (Real(1) - beta2_) * g[i] * g[i];
                const Real mhat = state.m[i] / bc1;
                const Real vhat = state.v[i] / bc2;
                vals[i] -= lr_ * mhat / (static_cast<Real>(std::sqrt(double(vhat))) + eps_);
            }
        }
    }

private:
    struct State {
        std::vector<Real> m, v;
    };
    Real lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::map<std::string, State> state_;
};

}  // namespace vidrl
