#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "treematch/tensor.hpp"

namespace treematch::ad {

// Central-finite-difference check of reverse-mode gradients.
//
// `fn` must be a pure function of the given inputs that produces a scalar
// through recorded ops. Returns the max over every input entry of
//   |analytic - numeric| / max(|analytic|, |numeric|, floor)
// with floor = 1e-8; the caller asserts a threshold.
template <typename S>
double grad_check(const std::function<Tensor<S>(Graph<S>&, std::span<const Tensor<S>>)>& fn,
                  std::vector<Tensor<S>> inputs, S epsilon) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.drop_grad();
    }

    Graph<S> g;
    auto loss = fn(g, inputs);
    g.backward(loss);

    std::vector<std::vector<S>> analytic;
    analytic.reserve(inputs.size());
    for (auto& t : inputs) {
        t.ensure_grad();
        analytic.emplace_back(t.grad().begin(), t.grad().end());
    }

    auto eval = [&]() -> double {
        Graph<S> quiet(false);
        return static_cast<double>(fn(quiet, inputs).scalar_value());
    };

    double worst = 0.0;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        auto vals = inputs[ti].values_mut();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const S keep = vals[i];
            vals[i] = keep + epsilon;
            const double up = eval();
            vals[i] = keep - epsilon;
            const double down = eval();
            vals[i] = keep;
            const double numeric = (up - down) / (2.0 * static_cast<double>(epsilon));
            const double exact = static_cast<double>(analytic[ti][i]);
            const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(exact - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace treematch::ad
