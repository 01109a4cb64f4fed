#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "drm/errors.hpp"
#include "drm/netcore.hpp"
#include "support.hpp"

using namespace drm;
using drm::testing::central_diff;
using drm::testing::close;
using drm::testing::random_net;
using drm::testing::random_point;

namespace {

// Straight-line evaluator written independently of the library.
double naive_subnet(const SubNetwork& s, const std::vector<double>& x) {
    std::vector<double> a = x;
    for (std::size_t l = 0; l < s.layers.size(); ++l) {
        const auto& A = s.layers[l].weights;
        std::vector<double> z(A.rows);
        for (std::size_t i = 0; i < A.rows; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < A.cols; ++j) acc += A.data[i * A.cols + j] * a[j];
            z[i] = acc + s.layers[l].bias[i];
        }
        if (l + 1 < s.layers.size())
            for (auto& v : z) v = std::tanh(v);
        a = z;
    }
    return a[0];
}

double naive(const ParallelNetwork& net, const std::vector<double>& x) {
    double u = 0.0;
    for (std::size_t k = 0; k < net.size(); ++k) u += net.coefficients[k] * naive_subnet(net.subnets[k], x);
    return u;
}

ParallelNetwork tanh_of_first(std::size_t d) {
    auto net = ParallelNetwork::zeros({1, 1, 2, d});
    net.subnets[0].layers[0].weights(0, 0) = 1.0;
    net.subnets[0].layers[1].weights(0, 0) = 1.0;
    net.coefficients[0] = 1.0;
    return net;
}

}  // namespace

TEST(Activation, ValuesAtZero) {
    auto v = activation_derivatives(0.0, 3);
    ASSERT_EQ(v.size(), 4u);
    EXPECT_EQ(v[0], 0.0);
    EXPECT_EQ(v[1], 1.0);
    EXPECT_EQ(v[2], 0.0);
    EXPECT_EQ(v[3], -2.0);
}

TEST(Activation, Saturates) {
    auto v = activation_derivatives(20.0, 0);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_GT(v[0], 1.0 - 1e-8);
    EXPECT_LE(v[0], 1.0);
}

TEST(Activation, MatchesFiniteDifferences) {
    auto v = activation_derivatives(0.5, 3);
    auto d1 = [](double t) { return std::tanh(t); };
    auto d2 = [](double t) { return activation_derivatives(t, 1)[1]; };
    auto d3 = [](double t) { return activation_derivatives(t, 2)[2]; };
    EXPECT_NEAR(v[1], central_diff(d1, 0.5, 1e-3), 1e-8);
    EXPECT_NEAR(v[2], central_diff(d2, 0.5, 1e-3), 1e-8);
    EXPECT_NEAR(v[3], central_diff(d3, 0.5, 1e-3), 1e-8);
    for (double x = -5; x <= 5; x += 0.25)
        for (double y : activation_derivatives(x, 3)) EXPECT_LE(std::abs(y), 2.0);
}

TEST(Activation, AgreesWithLibraryTanh) {
    CounterRng rng(21);
    for (int i = 0; i < 200000; ++i) {
        const double x = std::ldexp(rng.uniform(-1.0, 1.0), static_cast<int>(rng.uniform(-30.0, 6.0)));
        const double ref = std::tanh(x);
        EXPECT_LE(std::abs(activation_derivatives(x, 0)[0] - ref), 8e-16 * std::abs(ref)) << x;
    }
    EXPECT_EQ(activation_derivatives(1e300, 0)[0], 1.0);
    EXPECT_EQ(activation_derivatives(-1e300, 0)[0], -1.0);
    EXPECT_TRUE(std::isnan(activation_derivatives(std::nan(""), 0)[0]));
}

TEST(Activation, RejectsOrder) { EXPECT_THROW(activation_derivatives(0.0, 4), InputError); }

TEST(Forward, ZeroNetwork) {
    auto net = ParallelNetwork::zeros({3, 4, 3, 2});
    std::vector<double> x{0.2, 0.9};
    EXPECT_EQ(forward(net, x), 0.0);
    for (double g : input_gradient(net, x)) EXPECT_EQ(g, 0.0);
}

TEST(Forward, SingleNeuron) {
    auto net = tanh_of_first(3);
    std::vector<double> x{0.3, 0.7, 0.1};
    EXPECT_DOUBLE_EQ(forward(net, x), std::tanh(0.3));
    auto g = input_gradient(net, x);
    EXPECT_DOUBLE_EQ(g[0], 1.0 - std::tanh(0.3) * std::tanh(0.3));
    EXPECT_EQ(g[1], 0.0);
    EXPECT_EQ(g[2], 0.0);
}

TEST(Forward, MatchesNaiveEvaluator) {
    CounterRng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 1 + trial % 3, w = 1 + trial % 8, depth = 1 + trial % 4, m = 1 + trial % 5;
        auto net = random_net(rng, {m, w, depth, d}, 2.0);
        auto x = random_point(rng, d);
        EXPECT_NEAR(forward(net, x), naive(net, x), 1e-12 * std::max(1.0, std::abs(naive(net, x))));
    }
}

TEST(Forward, DimensionMismatch) {
    auto net = ParallelNetwork::zeros({1, 2, 2, 2});
    std::vector<double> x{0.1};
    EXPECT_THROW(forward(net, x), InputError);
    EXPECT_THROW(input_gradient(net, x), InputError);
    EXPECT_THROW(loss_primitives(net, x), InputError);
}

TEST(Forward, LinearInCoefficients) {
    CounterRng rng(5);
    auto a = random_net(rng, {4, 3, 3, 2}, 1.5);
    auto b = a;
    auto sum = a;
    for (std::size_t k = 0; k < a.size(); ++k) {
        b.coefficients[k] = rng.uniform(-1, 1);
        sum.coefficients[k] = a.coefficients[k] + b.coefficients[k];
    }
    for (int i = 0; i < 50; ++i) {
        auto x = random_point(rng, 2);
        const double lhs = forward(sum, x), rhs = forward(a, x) + forward(b, x);
        EXPECT_NEAR(lhs, rhs, 1e-14 * std::max(1.0, std::abs(lhs)));
    }
}

TEST(InputGradient, MatchesFiniteDifferences) {
    CounterRng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 1 + trial % 3;
        auto net = random_net(rng, {1 + trial % 4u, 2 + trial % 6u, 1 + trial % 4u, d}, 2.0);
        auto x = random_point(rng, d);
        auto g = input_gradient(net, x);
        for (std::size_t i = 0; i < d; ++i) {
            auto f = [&](double t) {
                auto y = x;
                y[i] = t;
                return forward(net, y);
            };
            const double fd = central_diff(f, x[i], 1e-5);
            EXPECT_TRUE(close(g[i], fd, 1e-6, 1e-8)) << g[i] << " vs " << fd;
        }
    }
}

TEST(Tape, ConsistentBitwise) {
    CounterRng rng(3);
    Tape tape;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t d = 1 + trial % 3;
        auto net = random_net(rng, {3, 5, 1 + trial % 4u, d}, 2.0);
        auto x = random_point(rng, d);
        loss_primitives(net, x, tape);
        EXPECT_EQ(tape.value(), forward(net, x));
        auto g = input_gradient(net, x);
        ASSERT_EQ(tape.gradient().size(), d);
        for (std::size_t i = 0; i < d; ++i) EXPECT_EQ(tape.gradient()[i], g[i]);
    }
}

TEST(Batch, ValuesMatchForwardBitwise) {
    CounterRng rng(31);
    BatchTape tape;
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t d = 1 + trial % 3;
        auto net = random_net(rng, {1 + trial % 4u, 1 + trial % 6u, 1 + trial % 4u, d}, 2.0);
        const std::size_t n = 1 + (trial * 7) % BatchTape::kBlock;
        std::vector<double> pts;
        for (std::size_t p = 0; p < n; ++p)
            for (double v : random_point(rng, d)) pts.push_back(v);
        batch_primitives(net, pts, tape);
        ASSERT_EQ(tape.size(), n);
        for (std::size_t p = 0; p < n; ++p) {
            std::span<const double> x(pts.data() + p * d, d);
            EXPECT_EQ(tape.values()[p], forward(net, x));
            auto g = input_gradient(net, x);
            for (std::size_t c = 0; c < d; ++c) EXPECT_EQ(tape.gradient(c)[p], g[c]);
        }
    }
}

TEST(Batch, AccumulateMatchesPointwiseBackward) {
    CounterRng rng(32);
    BatchTape tape;
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t d = 1 + trial % 3;
        const NetShape shape{1 + trial % 4u, 1 + trial % 6u, 1 + trial % 4u, d};
        auto net = random_net(rng, shape, 2.0);
        if (trial % 5 == 0) net.coefficients[0] = 0.0;
        const std::size_t n = 1 + (trial * 11) % BatchTape::kBlock;
        std::vector<double> pts, su(n), sg(n * d);
        for (std::size_t p = 0; p < n; ++p)
            for (double v : random_point(rng, d)) pts.push_back(v);
        for (auto& v : su) v = rng.uniform(-1, 1);
        for (auto& v : sg) v = rng.uniform(-1, 1);

        auto ref = flatten(net);
        std::fill(ref.inner.begin(), ref.inner.end(), 0.0);
        std::fill(ref.outer.begin(), ref.outer.end(), 0.0);
        auto got = ref;
        Tape t;
        for (std::size_t p = 0; p < n; ++p) {
            loss_primitives(net, std::span<const double>(pts.data() + p * d, d), t);
            std::vector<double> seed(d);
            for (std::size_t c = 0; c < d; ++c) seed[c] = sg[c * n + p];
            accumulate_backward(t, su[p], seed, 0.5, ref);
        }
        batch_primitives(net, pts, tape);
        batch_accumulate(tape, su, sg, 0.5, got);
        for (std::size_t i = 0; i < ref.inner.size(); ++i) EXPECT_TRUE(close(got.inner[i], ref.inner[i], 1e-12, 1e-13)) << i;
        for (std::size_t k = 0; k < ref.outer.size(); ++k) EXPECT_TRUE(close(got.outer[k], ref.outer[k], 1e-12, 1e-13)) << k;
    }
}

TEST(Batch, RejectsOversizedBlock) {
    auto net = ParallelNetwork::zeros({1, 2, 2, 1});
    std::vector<double> pts(BatchTape::kBlock + 1, 0.5);
    BatchTape tape;
    EXPECT_THROW(batch_primitives(net, pts, tape), InputError);
}

TEST(Backward, ZeroSeeds) {
    CounterRng rng(8);
    auto net = random_net(rng, {2, 3, 3, 2}, 1.0);
    std::vector<double> x{0.4, 0.6}, zero{0.0, 0.0};
    auto tape = loss_primitives(net, x);
    auto g = backward_from(tape, 0.0, zero);
    for (double v : g.inner) EXPECT_EQ(v, 0.0);
    for (double v : g.outer) EXPECT_EQ(v, 0.0);
}

TEST(Backward, OuterSlotIsSubnetValue) {
    CounterRng rng(9);
    auto net = random_net(rng, {4, 3, 3, 2}, 1.0);
    std::vector<double> x{0.4, 0.6}, zero{0.0, 0.0};
    auto tape = loss_primitives(net, x);
    auto g = backward_from(tape, 1.0, zero);
    for (std::size_t k = 0; k < net.size(); ++k) EXPECT_DOUBLE_EQ(g.outer[k], forward(net.subnets[k], x));
}

TEST(Backward, MatchesFiniteDifferences) {
    CounterRng rng(77);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t d = 1 + trial % 3;
        const NetShape shape{1 + trial % 3u, 1 + trial % 5u, 1 + trial % 4u, d};
        auto net = random_net(rng, shape, 2.0);
        auto x = random_point(rng, d);
        const double su = rng.uniform(-1, 1);
        auto sg = random_point(rng, d, -1, 1);
        auto tape = loss_primitives(net, x);
        auto g = backward_from(tape, su, sg);
        auto flat = flatten(net);
        auto objective = [&](const FlatParams& p) {
            auto n2 = unflatten(p, shape);
            auto t2 = loss_primitives(n2, x);
            double s = su * t2.value();
            for (std::size_t i = 0; i < d; ++i) s += sg[i] * t2.gradient()[i];
            return s;
        };
        auto lay = SlotLayout::make(shape.width, shape.depth, d);
        for (std::size_t i = 0; i < flat.inner.size(); ++i) {
            if (i % lay.slot >= lay.used) {
                EXPECT_EQ(g.inner[i], 0.0);
                continue;
            }
            auto f = [&](double t) {
                auto p = flat;
                p.inner[i] = t;
                return objective(p);
            };
            const double h = 1e-4 * std::max(1.0, std::abs(flat.inner[i]));
            const double fd = central_diff(f, flat.inner[i], h);
            EXPECT_TRUE(close(g.inner[i], fd, 1e-5)) << "inner " << i << ": " << g.inner[i] << " vs " << fd;
        }
        for (std::size_t k = 0; k < flat.outer.size(); ++k) {
            auto f = [&](double t) {
                auto p = flat;
                p.outer[k] = t;
                return objective(p);
            };
            const double fd = central_diff(f, flat.outer[k], 1e-4);
            EXPECT_TRUE(close(g.outer[k], fd, 1e-5)) << "outer " << k;
        }
    }
}

TEST(Flat, PaddedDimension) {
    EXPECT_EQ(padded_dimension(8, 4, 3), 180u);
    EXPECT_EQ(parameter_count(8, 4, 3), 8u * 4 + 2 * 8 * 9 + 9);
    EXPECT_EQ(padded_dimension(1, 1, 1), 2u);
    EXPECT_EQ(parameter_count(1, 1, 1), 2u);
    // 𝔇 exceeds the raw count by d - W, so it covers the network whenever W <= d.
    EXPECT_EQ(padded_dimension(2, 3, 5), parameter_count(2, 3, 5) + 3);
    EXPECT_EQ(SlotLayout::make(2, 3, 5).slot, padded_dimension(2, 3, 5));
    EXPECT_EQ(SlotLayout::make(8, 4, 3).slot, parameter_count(8, 4, 3));
}

TEST(Flat, ZeroRoundTrip) {
    const NetShape shape{3, 4, 3, 2};
    auto net = ParallelNetwork::zeros(shape);
    auto p = flatten(net);
    EXPECT_EQ(p.inner.size(), 3 * SlotLayout::make(4, 3, 2).slot);
    for (double v : p.inner) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(unflatten(p, shape), net);
}

TEST(Flat, RandomRoundTrip) {
    CounterRng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const NetShape shape{1 + trial % 4u, 1 + trial % 6u, 1 + trial % 4u, 1 + trial % 5u};
        auto net = random_net(rng, shape, 3.0);
        auto p = flatten(net);
        auto lay = SlotLayout::make(shape.width, shape.depth, shape.input_dim);
        for (std::size_t i = 0; i < p.inner.size(); ++i)
            if (i % lay.slot >= lay.used) EXPECT_EQ(p.inner[i], 0.0);
        EXPECT_EQ(unflatten(p, shape), net);
    }
}

TEST(Flat, CanonicalOrder) {
    // W=2, L=2, d=1: A0 (2x1), A1 (1x2), b0 (2), b1 (1).
    auto net = ParallelNetwork::zeros({1, 2, 2, 1});
    auto& s = net.subnets[0];
    s.layers[0].weights(0, 0) = 1;
    s.layers[0].weights(1, 0) = 2;
    s.layers[1].weights(0, 0) = 3;
    s.layers[1].weights(0, 1) = 4;
    s.layers[0].bias = {5, 6};
    s.layers[1].bias = {7};
    auto p = flatten(net);
    const std::vector<double> expect{1, 2, 3, 4, 5, 6, 7};
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(p.inner[i], expect[i]);
}

TEST(Flat, LengthMismatch) {
    FlatParams p{std::vector<double>(10, 0.0), std::vector<double>(1, 0.0)};
    EXPECT_THROW(unflatten(p, {1, 4, 3, 2}), InputError);
}

TEST(Json, RoundTripBitwise) {
    CounterRng rng(12);
    auto net = random_net(rng, {3, 4, 3, 2}, 2.0);
    auto text = network_to_json(net).dump();
    EXPECT_EQ(network_from_json(nlohmann::json::parse(text)), net);
}

TEST(Json, RejectsBadShape) {
    CounterRng rng(12);
    auto doc = network_to_json(random_net(rng, {2, 3, 2, 2}, 1.0));
    doc["subnets"][1]["A"][0][0].push_back(1.0);
    try {
        network_from_json(doc);
        FAIL();
    } catch (const InputError& e) {
        EXPECT_EQ(e.pointer().rfind("/subnets/1", 0), 0u) << e.pointer();
    }
}

// Sup-norm and Lipschitz bounds on single sub-networks.
TEST(Bounds, MagnitudeAndDerivative) {
    CounterRng rng(31);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t d = 1 + trial % 3, w = 1 + trial % 8, depth = 1 + trial % 4;
        const double bound = 1.0 + 2.0 * rng.uniform();
        auto s = drm::testing::random_subnet(rng, w, depth, d, bound);
        const double b = std::max(bound, s.max_abs_weight());
        auto x = random_point(rng, d);
        EXPECT_LE(std::abs(forward(s, x)), (w + 1) * b);
        for (double g : input_gradient(s, x))
            EXPECT_LE(std::abs(g), std::pow(double(w), double(depth) - 1) * std::pow(b, double(depth)));
    }
}

TEST(Bounds, ParameterLipschitz) {
    CounterRng rng(32);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t d = 1 + trial % 3, w = 1 + trial % 6, depth = 2 + trial % 3;
        const double bound = 1.0 + rng.uniform();
        auto a = drm::testing::random_subnet(rng, w, depth, d, bound);
        auto b = a;
        const double scale = std::pow(10.0, -3.0 * rng.uniform());
        double dist2 = 0.0;
        for (auto& layer : b.layers) {
            for (auto& v : layer.weights.data) {
                const double nv = std::clamp(v + scale * rng.uniform(-1, 1), -bound, bound);
                dist2 += (nv - v) * (nv - v);
                v = nv;
            }
            for (auto& v : layer.bias) {
                const double nv = std::clamp(v + scale * rng.uniform(-1, 1), -bound, bound);
                dist2 += (nv - v) * (nv - v);
                v = nv;
            }
        }
        auto x = random_point(rng, d);
        const double lhs = std::abs(forward(a, x) - forward(b, x));
        const double rhs = 2.0 * std::pow(double(w), double(depth)) * std::sqrt(double(depth)) *
                           std::pow(bound, double(depth) - 1) * std::sqrt(dist2);
        EXPECT_LE(lhs, rhs);
    }
}
