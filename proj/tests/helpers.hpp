#pragma once

#include <functional>

#include "vidrl/tensor.hpp"

namespace testutil {

using vidrl::Rng;
using vidrl::Shape;
using vidrl::Tensor;

/// Input description for a finite-difference check: shape plus a uniform
/// init range (used to keep inputs away from non-smooth points).
struct FDInput {
    Shape shape;
    double lo = -1.0;
    double hi = 1.0;
};

inline std::vector<std::vector<double>> random_values(const std::vector<FDInput>& specs,
                                                      Rng& rng) {
    std::vector<std::vector<double>> out;
    for (const auto& s : specs) {
        std::vector<double> v(vidrl::numel(s.shape));
        for (auto& x : v) x = rng.uniform(s.lo, s.hi);
        out.push_back(std::move(v));
    }
    return out;
}

/// Builds a scalar loss from differentiable leaves; must be a pure function
/// of the leaf values.
using LossBuilder = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Maximum symmetric relative error between tape gradients and central
/// finite differences, over every element of every input.
inline double max_grad_rel_err(const std::vector<FDInput>& specs, const LossBuilder& build,
                               Rng& rng, double h = 1e-6) {
    auto vals = random_values(specs, rng);
    // analytic gradients
    std::vector<Tensor<double>> leaves;
    for (std::size_t i = 0; i < specs.size(); ++i)
        leaves.emplace_back(specs[i].shape, vals[i], /*requires_grad=*/true);
    vidrl::Tape<double> tape;
    std::vector<std::vector<double>> grads;
    {
        vidrl::TapeScope<double> scope(tape);
        Tensor<double> loss = build(leaves);
        if (loss.size() != 1) throw std::logic_error("fd check: loss must be scalar");
        tape.backward_from(loss.node());
    }
    for (auto& l : leaves)
        grads.push_back(l.grad().empty() ? std::vector<double>(l.size(), 0.0) : l.grad());

    auto eval = [&](const std::vector<std::vector<double>>& v) {
        vidrl::NoGradScope<double> ng;
        std::vector<Tensor<double>> ls;
        for (std::size_t i = 0; i < specs.size(); ++i) ls.emplace_back(specs[i].shape, v[i]);
        return build(ls).scalar();
    };

    double worst = 0;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        for (std::size_t j = 0; j < vals[i].size(); ++j) {
            const double step = h * std::max(1.0, std::abs(vals[i][j]));
            auto vp = vals, vm = vals;
            vp[i][j] += step;
            vm[i][j] -= step;
            const double num = (eval(vp) - eval(vm)) / (2 * step);
            const double ana = grads[i][j];
            const double denom = std::max(1e-6, std::abs(num) + std::abs(ana));
            worst = std::max(worst, std::abs(num - ana) / denom);
        }
    }
    return worst;
}

/// Fixed positive weights used to turn a tensor-valued op into a scalar loss
/// that exercises every output element.
inline Tensor<double> weighted_sum(const Tensor<double>& t, Rng& rng) {
    std::vector<double> w(t.size());
    for (auto& x : w) x = rng.uniform(0.5, 1.5);
    Tensor<double> wt(t.shape(), std::move(w));  // constant, no grad
    return vidrl::reduce_sum(vidrl::mul(t, wt));
}

}  // namespace testutil
