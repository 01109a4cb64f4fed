// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "drm/approxnet.hpp"
#include "drm/energy.hpp"
#include "drm/optdiag.hpp"
#include "drm/pgd.hpp"
#include "drm/statbound.hpp"
#include "support.hpp"

using namespace drm;
using drm::testing::central_diff;
using drm::testing::random_net;
using drm::testing::random_subnet;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

using AM = AnalyticField::Monomial;

// ---------------------------------------------------------------- 1

Verdict gradient_correctness() {
    CounterRng rng(101);
    const std::size_t configs = 120;
    std::size_t checked = 0, bad = 0;
    double worst = 0.0;
    for (std::size_t c = 0; c < configs; ++c) {
        const std::size_t d = 1 + rng.next_u64() % 3;
        const NetShape shape{1 + rng.next_u64() % 8, 1 + rng.next_u64() % 8, 1 + rng.next_u64() % 4, d};
        // x_1^2 + x_d / 2 has non-zero Neumann data, so the boundary term is exercised
        const AnalyticField u0 = AnalyticField::polynomial(d, {AM{1.0, {2}}, AM{0.5, std::vector<unsigned>(d, 0)}});
        std::vector<unsigned> last(d, 0);
        last[d - 1] = 1;
        const AnalyticField u0b = AnalyticField::polynomial(d, {AM{1.0, {2}}, AM{0.5, last}});
        const AnalyticField omega = AnalyticField::polynomial(d, {AM{1.0, {}}, AM{0.5, {2}}});
        const EllipticProblem problem = manufacture(c % 2 ? u0 : u0b, omega, Box::unit(d));
        const SampleSet samples = draw_samples(problem, 24, 12, 1000 + c);
        const ParallelNetwork net = random_net(rng, shape, 2.0, 2.0);
        const FlatParams grad = energy_gradient(net, samples, problem);
        FlatParams flat = flatten(net);

        auto check = [&](double& slot, double g) {
            const double saved = slot;
            auto f = [&](double t) {
                slot = t;
                return empirical_energy(unflatten(flat, shape), samples, problem);
            };
            // Richardson on the fourth-order stencil; h balances truncation against
            // rounding of energies in the hundreds
            const double h = 2e-3 * std::max(1.0, std::abs(saved));
            const double fd = (64.0 * central_diff(f, saved, h / 2) - central_diff(f, saved, h)) / 63.0;
            slot = saved;
            const double diff = std::abs(g - fd);
            const double scale = std::max(std::abs(g), std::abs(fd));
            ++checked;
            if (diff > 1e-9) {
                const double rel = diff / scale;
                worst = std::max(worst, rel);
                if (rel > 1e-5) {
                    ++bad;
                    if (std::getenv("DRM_AC_VERBOSE"))
                        std::fprintf(stderr, "  config %zu shape m=%zu W=%zu L=%zu d=%zu: g=%.12e fd=%.12e E=%.3e\n", c,
                                     shape.m, shape.width, shape.depth, shape.input_dim, g, fd,
                                     empirical_energy(net, samples, problem));
                }
            }
        };
        for (std::size_t i = 0; i < flat.inner.size(); ++i) check(flat.inner[i], grad.inner[i]);
        for (std::size_t k = 0; k < flat.outer.size(); ++k) check(flat.outer[k], grad.outer[k]);
    }
    return {bad == 0, fmt("%zu configs, %zu coordinates, %zu over tolerance, worst rel %.2e (past the 1e-9 floor)",
                          configs, checked, bad, worst)};
}

// ---------------------------------------------------------------- 2

// Threshold found by bisection on sum max(|v| - tau, 0) = radius.
Vec l1_oracle(const Vec& v, double radius) {
    double l1 = 0.0, hi = 0.0;
    for (double x : v) {
        l1 += std::abs(x);
        hi = std::max(hi, std::abs(x));
    }
    if (l1 <= radius) return v;
    double lo = 0.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        double s = 0.0;
        for (double x : v) s += std::max(std::abs(x) - mid, 0.0);
        (s > radius ? lo : hi) = mid;
    }
    const double tau = 0.5 * (lo + hi);
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::copysign(std::max(std::abs(v[i]) - tau, 0.0), v[i]);
    return out;
}

double dist(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

Verdict l1_projection() {
    CounterRng rng(202);
    double worst = 0.0;
    std::size_t beaten = 0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t n = 1 + rng.next_u64() % 8;
        Vec v(n);
        for (double& x : v) x = rng.uniform(-5.0, 5.0);
        const double radius = rng.uniform(0.05, 6.0);
        const Vec p = project_l1_ball(v, radius);
        const Vec o = l1_oracle(v, radius);
        for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(p[i] - o[i]));
        const double dp = dist(v, p);
        for (int r = 0; r < 10000; ++r) {
            // uniform direction on the l1 sphere, scaled into the ball
            Vec q(n);
            double s = 0.0;
            for (double& x : q) s += (x = -std::log(rng.uniform()));
            const double scale = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(n)) / s;
            for (double& x : q) x *= (rng.next_u64() & 1 ? scale : -scale);
            if (dist(v, q) < dp - 1e-12) ++beaten;
        }
    }
    return {worst <= 1e-10 && beaten == 0,
            fmt("1000 vectors, max |proj - oracle| %.2e, feasible points closer than the projection: %zu", worst,
                beaten)};
}

// ---------------------------------------------------------------- 3

Verdict energy_sandwich() {
    CounterRng rng(303);
    const QuadratureSpec quad = QuadratureSpec::gauss(32);
    std::size_t violations = 0;
    double tightest = INFINITY;
    for (std::size_t d : {1u, 2u}) {
        const AnalyticField u0 = AnalyticField::cosine_product(d, 1.0, 1.0);
        const AnalyticField omega = AnalyticField::polynomial(d, {AM{1.0, {}}, AM{0.5, {2}}});
        const EllipticProblem problem = manufacture(u0, omega, Box::unit(d));
        const double c0 = std::min(problem.omega_lower, 1.0), B0 = std::max(problem.data_bound, 1.0);
        const double l0 = continuous_energy(field_evaluator(u0), problem, quad);
        for (int t = 0; t < 50; ++t) {
            const ParallelNetwork net = random_net(rng, {4, 3, 3, d}, 1.0);
            const double gap = continuous_energy(network_evaluator(net), problem, quad) - l0;
            const double h1 = h1_error(network_evaluator(net), problem, quad);
            const double lower = 0.5 * c0 * h1 * h1, upper = 0.5 * B0 * h1 * h1;
            if (gap < lower * (1 - 1e-6) || gap > upper * (1 + 1e-6)) ++violations;
            tightest = std::min(tightest, gap / lower - 1.0);
        }
    }
    return {violations == 0, fmt("100 nets (d=1,2), violations %zu, smallest relative margin above the lower side %.2e",
                                 violations, tightest)};
}

// ---------------------------------------------------------------- 4

Verdict constraint_invariance() {
    const EllipticProblem problem =
        manufacture(AnalyticField::cosine_product(1, 1.0, 1.0), AnalyticField::constant(1, 1.0), Box::unit(1));
    const SampleSet samples = draw_samples(problem, 128, 128, 4);
    PGDConfig cfg;
    cfg.B = 1.0;
    cfg.eta = 0.5;   // small radii so both projections bind
    cfg.zeta = 0.5;
    cfg.lambda = 0.05;
    cfg.T = 10000;
    cfg.seed = 4;
    double worst2 = INFINITY, worst1 = INFINITY;
    std::size_t steps = 0, active2 = 0, active1 = 0;
    train(problem, {16, 4, 3, 1}, cfg, samples, [&](const TrainState& st) {
        if (st.iteration == 0) return;
        ++steps;
        const double s2 = st.l2_slack(cfg.eta), s1 = st.l1_slack(cfg.zeta);
        worst2 = std::min(worst2, s2 / cfg.eta);
        worst1 = std::min(worst1, s1 / cfg.zeta);
        if (s2 < 1e-9 * cfg.eta) ++active2;
        if (s1 < 1e-9 * cfg.zeta) ++active1;
    });
    return {steps == cfg.T && worst2 >= -1e-12 && worst1 >= -1e-12,
            fmt("%zu steps, min slack/radius l2 %.2e l1 %.2e, iterations on the l2 sphere %zu, on the l1 sphere %zu",
                steps, worst2, worst1, active2, active1)};
}

// ---------------------------------------------------------------- 5

Verdict builders() {
    bool ok = true;
    std::string detail;
    for (double eps : {0.1, 0.05, 0.025}) {
        const Calibration sq = calibrate_square(eps);
        const SubNetwork sq_net = build_square_net(eps, kDefaultAnchor, sq.constant);
        const double sq_err =
            measure_sobolev_error(AnalyticField::polynomial(1, {AM{1.0, {2}}}), sq_net, 1, 20001);
        const Calibration pr = calibrate_product(eps);
        const SubNetwork pr_net = build_product_net(eps, 0.0, 1.0, pr.constant);
        const double pr_err =
            measure_sobolev_error(AnalyticField::polynomial(2, {AM{1.0, {1, 1}}}), pr_net, 1, 201);
        ok = ok && sq.met && pr.met && sq_err <= eps && pr_err <= eps;
        detail += fmt("eps %.3g: square %.3g product %.3g; ", eps, sq_err, pr_err);
    }
    // partition of unity, d = 1, N = 8, s = 16
    double pu_dev = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double x = (i + 0.5) / 100.0;
        double sum = 0.0;
        for (std::size_t m = 0; m <= 8; ++m)
            sum += bump_value(BumpSpec{8, 16.0, {static_cast<unsigned>(m)}}, std::span<const double>(&x, 1));
        pu_dev = std::max(pu_dev, std::abs(sum - 1.0));
    }
    // tail at distance 2/N, s = 20
    double tail = 0.0;
    for (std::size_t m = 0; m <= 6; ++m) {
        const double x = static_cast<double>(m) / 8.0 + 2.0 / 8.0;
        tail = std::max(tail, bump_value(BumpSpec{8, 20.0, {static_cast<unsigned>(m)}}, std::span<const double>(&x, 1)));
    }
    ok = ok && pu_dev <= 1e-4 && tail < 1e-6;
    detail += fmt("PU max dev %.2e, tail %.2e", pu_dev, tail);
    return {ok, detail};
}

// ---------------------------------------------------------------- 6

Verdict magnitude_bounds() {
    CounterRng rng(606);
    std::size_t violations = 0;
    double worst_value = 0.0, worst_grad = 0.0;
    for (int t = 0; t < 10000; ++t) {
        const std::size_t d = 1 + rng.next_u64() % 3, W = 1 + rng.next_u64() % 8, L = 2 + rng.next_u64() % 3;
        const double B = rng.uniform(0.1, 3.0);
        const SubNetwork net = random_subnet(rng, W, L, d, B);
        const auto x = drm::testing::random_point(rng, d);
        const double value_bound = (static_cast<double>(W) + 1.0) * B;
        const double grad_bound = std::pow(static_cast<double>(W), static_cast<double>(L) - 1.0) * std::pow(B, L);
        const double v = forward(net, x);
        const Vec g = input_gradient(net, x);
        worst_value = std::max(worst_value, std::abs(v) / value_bound);
        if (std::abs(v) > value_bound) ++violations;
        for (double gi : g) {
            worst_grad = std::max(worst_grad, std::abs(gi) / grad_bound);
            if (std::abs(gi) > grad_bound) ++violations;
        }
    }
    return {violations == 0, fmt("10^4 pairs, violations %zu, max |phi|/bound %.3f, max |dphi|/bound %.3f", violations,
                                 worst_value, worst_grad)};
}

// ---------------------------------------------------------------- 7

Verdict end_to_end() {
    const AnalyticField u0 = AnalyticField::cosine_product(1, 1.0, 1.0);
    const EllipticProblem problem = manufacture(u0, AnalyticField::constant(1, 1.0), Box::unit(1));
    const SampleSet samples = draw_samples(problem, 2048, 2048, 7);
    PGDConfig cfg;
    cfg.B = 1.0;
    cfg.eta = 10.0;
    cfg.zeta = 10.0;
    cfg.lambda = 1e-3;
    cfg.T = 5000;
    cfg.seed = 1;
    const TrainState st = train(problem, {64, 4, 3, 1}, cfg, samples);
    const QuadratureSpec quad = QuadratureSpec::gauss();
    const ParallelNetwork net = st.network();
    const double rel = h1_error(network_evaluator(net), problem, quad) /
                       h1_norm(field_evaluator(u0), 1, problem.box, quad);
    const ParallelNetwork init = unflatten({st.init_inner, Vec(64, 0.0)}, st.shape);
    const double e_init = continuous_energy(network_evaluator(init), problem, quad);
    const double e_final = continuous_energy(network_evaluator(net), problem, quad);
    const double e_star = continuous_energy(field_evaluator(u0), problem, quad);
    const double drop = (e_init - e_final) / (e_init - e_star);
    return {rel <= 0.2 && drop >= 0.5,
            fmt("T=%zu, relative H1 error %.4f, energy %.4f -> %.4f (L(u0) = %.4f, %.1f%% of the gap closed)", cfg.T,
                rel, e_init, e_final, e_star, 100.0 * drop)};
}

// ---------------------------------------------------------------- 8

Verdict transition_norms_check() {
    CounterRng rng(808);
    std::size_t violations = 0;
    const double eps = std::numeric_limits<double>::epsilon();
    for (int t = 0; t < 200; ++t) {
        const std::size_t targets = 1 + rng.next_u64() % 5, R = 1 + rng.next_u64() % 8;
        const std::size_t m = targets * R + rng.next_u64() % 6;
        const ParallelNetwork init = random_net(rng, {m, 2, 2, 1}, 1.0, 0.0);
        const std::vector<Vec> vecs = subnet_vectors(init);
        // targets near disjoint groups of R initial sub-networks
        std::vector<Vec> tv(targets);
        for (std::size_t k = 0; k < targets; ++k) tv[k] = vecs[k * R];
        const MatchReport rep = match_initialization(vecs, tv, R, 2.0);
        if (!rep.success) {
            ++violations;
            continue;
        }
        Vec c(targets);
        for (double& v : c) v = rng.uniform(-3.0, 3.0);
        const TransitionNorms n = transition_norms(build_transition_network(init, rep, c), c, R);
        if (std::abs(n.l1 - n.target_l1) > 8.0 * static_cast<double>(targets * R) * eps * n.target_l1) ++violations;
        if (n.l2 > n.l2_bound * (1.0 + 1e-12)) ++violations;
    }
    return {violations == 0, fmt("200 constructions, violations %zu", violations)};
}

// ---------------------------------------------------------------- 9

Verdict event_probability() {
    const NetShape shape{20, 1, 1, 1};
    const double B = 1.0, delta = 0.2;
    const std::vector<Vec> targets{{0.3, -0.2}};
    const std::size_t trials = 10000;
    const EventEstimate est = estimate_event_probability(shape, B, targets, 1, delta, trials, 909);
    const double exact = single_target_event_probability(delta / B, 2, shape.m);
    const double sigma = std::sqrt(exact * (1.0 - exact) / static_cast<double>(trials));
    const double bound = event_probability_bound(1, 1, shape.m, delta, B, 1, 1);
    const bool ok = std::abs(est.frequency - exact) <= 4 * sigma && est.frequency >= bound - 4 * sigma;
    return {ok, fmt("frequency %.4f, exact %.4f, sigma %.4f, lemma bound %.4f", est.frequency, exact, sigma, bound)};
}

// ---------------------------------------------------------------- 10

Verdict gap_slope() {
    const EllipticProblem problem =
        manufacture(AnalyticField::cosine_product(1, 1.0, 1.0), AnalyticField::constant(1, 1.0), Box::unit(1));
    ClassSpec cls;
    cls.m = 16;
    cls.M = 1.0;
    cls.B_theta = 1.0;
    cls.W = 4;
    cls.L = 3;
    cls.d = 1;
    const std::vector<std::size_t> sizes{100, 1000, 10000, 100000};
    const auto rows = statistical_sweep(problem, cls, sizes, 64, 1);
    std::vector<double> x, y;
    std::string detail;
    for (const auto& r : rows) {
        x.push_back(static_cast<double>(r.N_s));
        y.push_back(r.gap);
        detail += fmt("N_s=%zu gap %.3g; ", r.N_s, r.gap);
    }
    const double slope = loglog_slope(x, y);
    return {slope >= -0.7 && slope <= -0.3, detail + fmt("slope %.3f", slope)};
}

// ---------------------------------------------------------------- 11

Verdict schedule_forms() {
    std::size_t bad = 0;
    double worst = 0.0;
    const double n = 3.0, mu = 0.5, beta = 1.0;
    for (std::size_t d = 1; d <= 10; ++d) {
        const ScheduleParams p = schedule(0.1, d, n, mu, beta);
        int k = 0;
        while ((std::size_t{1} << k) < d + 1) ++k;
        if (p.W != (std::size_t{1} << (k + 1)) || p.L != static_cast<std::size_t>(k + 2)) ++bad;
        const double dd = static_cast<double>(d);
        const double b0 = std::max(beta, 2.0 + 2.0 * dd / (n - mu - 1.0));
        const double c3 = 4.0 * b0 * std::log(dd + 1.0) + 6.0 * dd / (n - mu - 1.0) + 12.0 * b0 + 2.0;
        worst = std::max({worst, std::abs(p.beta0 - b0) / b0, std::abs(p.C3 - c3) / c3});
    }
    const ScheduleParams p3 = schedule(0.1, 3, n, mu, beta);
    return {bad == 0 && worst <= 1e-12 && p3.W == 8 && p3.L == 4,
            fmt("d=1..10 shape mismatches %zu, max relative beta0/C3 deviation %.1e, d=3 -> W=%zu L=%zu", bad, worst,
                p3.W, p3.L)};
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Verdict()> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> all{
        {1, "gradient correctness", 60, gradient_correctness},
        {2, "l1 projection exactness", 10, l1_projection},
        {3, "energy sandwich", 60, energy_sandwich},
        {4, "constraint invariance", 120, constraint_invariance},
        {5, "square/product builders, partition of unity, bump tail", 60, builders},
        {6, "sub-network magnitude bounds", 30, magnitude_bounds},
        {7, "end-to-end solve", 120, end_to_end},
        {8, "transition-network norms", 5, transition_norms_check},
        {9, "event probability", 30, event_probability},
        {10, "statistical-gap slope", 300, gap_slope},
        {11, "schedule calculator", 1, schedule_forms},
    };
    int failures = 0;
    for (const auto& c : all) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs <= c.budget_s;
        const bool pass = v.pass && in_time;
        if (!pass) ++failures;
        std::printf("AC%-2d %s  %s (%.2f s of %.0f s)%s :: %s\n", c.id, pass ? "PASS" : "FAIL", c.name, secs, c.budget_s,
                    in_time ? "" : " [over time budget]", v.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(all.size()) - failures, all.size());
    return failures == 0 ? 0 : 1;
}
