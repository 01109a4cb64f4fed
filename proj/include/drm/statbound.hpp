#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "drm/energy.hpp"
#include "drm/netcore.hpp"
#include "json.hpp"

namespace drm {

/// The class PNN(m, M, {W, L, B_theta}) plus the sampling and confidence data of the bound.
struct ClassSpec {
    std::size_t m = 1;
    double M = 1.0;        // l1 budget of the outer coefficients
    std::size_t W = 1;
    std::size_t L = 2;
    double B_theta = 1.0;  // sup-norm bound of the inner weights
    std::size_t N_s = 1;
    double xi = 0.05;      // failure probability
    double B0 = 1.0;
    std::size_t d = 1;
    double volume = 1.0;           // |Omega|
    double boundary_measure = 2.0; // |dOmega|

    /// Throws InputError (with a JSON pointer under `path`) on the first bad field.
    void validate(const std::string& path = "") const;
    NetShape shape() const { return {m, W, L, d}; }

    static ClassSpec from_json(const nlohmann::json& doc, const std::string& path = "");
    nlohmann::json to_json() const;
};

/// C M^2 B^{2L} N_s^{-1/2} (sqrt(log(B W L N_s)) + sqrt(log(1/xi))); the first log is floored at 0.
double statistical_bound(const ClassSpec& spec, double constant = 1.0);

/// Random member of the class: inner weights uniform on [-B, B], coefficients
/// uniform on the l1 sphere of radius M.
ParallelNetwork sample_class_member(const ClassSpec& spec, CounterRng& rng);

struct GapEstimate {
    double value = 0.0;            // max over the trials: a lower estimate of sup |L - L^|
    std::vector<double> running;   // running maximum after each trial
    std::size_t trials = 0;
    std::uint64_t seed = 0;
};
/// Trial t draws a class member and its own N_s interior and N_s boundary points
/// from seed stream t, and scores |L(u) - L^(u)| with L from quadrature.
GapEstimate empirical_gap(const EllipticProblem& problem, const ClassSpec& spec, std::size_t N_s, std::size_t trials,
                          std::uint64_t seed, const QuadratureSpec& quad = QuadratureSpec::gauss(),
                          const Exec& exec = {});

struct RademacherEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t trials = 0;
};
/// Each trial draws N fresh uniform points in `box` and fresh signs, and takes
/// max over the family of (1/N) sum_k sigma_k f(X_k); the trials are averaged.
RademacherEstimate empirical_rademacher(std::span<const ScalarField> family, const Box& box, std::size_t N,
                                        std::size_t trials, std::uint64_t seed);

struct SweepRow {
    std::size_t N_s = 0;
    double gap = 0.0;
    double bound = 0.0;
    std::size_t trials = 0;
    std::uint64_t seed = 0;
};
std::vector<SweepRow> statistical_sweep(const EllipticProblem& problem, const ClassSpec& spec,
                                        std::span<const std::size_t> sizes, std::size_t trials, std::uint64_t seed,
                                        double constant = 1.0, const QuadratureSpec& quad = QuadratureSpec::gauss(),
                                        const Exec& exec = {});
/// Smallest constant >= 1 with gap <= bound on every row (rows carry the bound at constant 1).
double calibrate_bound_constant(std::span<const SweepRow> rows);
/// Header "N_s,gap_estimate,bound_value,trials,seed" and one line per row.
std::string sweep_csv(std::span<const SweepRow> rows);

/// Least-squares slope of log y against log x.
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace drm
