#pragma once

// Helpers shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "drm/netcore.hpp"
#include "drm/rng.hpp"

namespace drm::testing {

inline SubNetwork random_subnet(CounterRng& rng, std::size_t width, std::size_t depth, std::size_t d, double bound) {
    auto s = SubNetwork::zeros(width, depth, d);
    for (auto& layer : s.layers) {
        for (auto& v : layer.weights.data) v = rng.uniform(-bound, bound);
        for (auto& v : layer.bias) v = rng.uniform(-bound, bound);
    }
    return s;
}

inline ParallelNetwork random_net(CounterRng& rng, NetShape shape, double bound, double coeff_bound = 1.0) {
    ParallelNetwork net;
    for (std::size_t k = 0; k < shape.m; ++k) {
        net.subnets.push_back(random_subnet(rng, shape.width, shape.depth, shape.input_dim, bound));
        net.coefficients.push_back(rng.uniform(-coeff_bound, coeff_bound));
    }
    return net;
}

inline std::vector<double> random_point(CounterRng& rng, std::size_t d, double lo = 0.0, double hi = 1.0) {
    std::vector<double> x(d);
    for (auto& v : x) v = rng.uniform(lo, hi);
    return x;
}

/// |a - b| within `rel` of the larger magnitude, or within `floor` absolutely.
inline bool close(double a, double b, double rel, double floor = 1e-9) {
    const double diff = std::abs(a - b);
    return diff <= floor || diff <= rel * std::max(std::abs(a), std::abs(b));
}

/// Fourth-order central difference of f at t with step h.
template <class F>
double central_diff(F&& f, double t, double h) {
    return (8.0 * (f(t + h) - f(t - h)) - (f(t + 2 * h) - f(t - 2 * h))) / (12.0 * h);
}

}  // namespace drm::testing
