#ifndef MEMDEBLUR_TESTUTIL_HPP
#define MEMDEBLUR_TESTUTIL_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "memdeblur/autograd.hpp"
#include "memdeblur/rng.hpp"
#include "memdeblur/tensor.hpp"

namespace testutil {

using memdeblur::Rng;
using memdeblur::Tensor;
using memdeblur::Var;

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
    for (std::size_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    fill_uniform(t, rng, lo, hi);
    return t;
}

template <typename T>
Var<T> random_var(std::vector<int> shape, Rng& rng, bool requires_grad = true,
                  double lo = -1.0, double hi = 1.0) {
    return Var<T>(random_tensor<T>(std::move(shape), rng, lo, hi), requires_grad);
}

// Central-difference gradient check: rebuilds the graph through `fn` and
// compares analytic gradients of each leaf against finite differences on
// `samples` randomly chosen coordinates. Returns the max relative error.
inline double fd_check(const std::function<Var<double>()>& fn,
                       std::vector<Var<double>> leaves, Rng& rng, int samples = 12,
                       double h = 1e-5) {
    Var<double> loss = fn();
    memdeblur::backward(loss);
    std::vector<Tensor<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto& l : leaves) {
        analytic.push_back(l.has_grad() ? l.grad() : Tensor<double>::zeros(l.shape()));
        l.zero_grad();
    }

    const auto eval = [&]() {
        memdeblur::NoGradGuard ng;
        return fn().value()[0];
    };

    double max_rel = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        const std::size_t n = leaf.value().numel();
        const int k = std::min<std::size_t>(samples, n);
        for (int s = 0; s < k; ++s) {
            const std::size_t idx = rng.uniform_index(n);
            const double orig = leaf.value()[idx];
            leaf.value()[idx] = orig + h;
            const double fp = eval();
            leaf.value()[idx] = orig - h;
            const double fm = eval();
            leaf.value()[idx] = orig;
            const double fd = (fp - fm) / (2 * h);
            const double an = analytic[li][idx];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            max_rel = std::max(max_rel, std::abs(fd - an) / denom);
        }
    }
    return max_rel;
}

} // namespace testutil

#endif
