#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drm/energy.hpp"
#include "drm/exec.hpp"
#include "drm/netcore.hpp"
#include "json.hpp"

namespace drm {

struct PGDConfig {
    double B = 1.0;        // half-width of the uniform initialization
    double eta = 10.0;     // l2 radius around the initial inner weights
    double zeta = 10.0;    // l1 radius for the outer coefficients
    double lambda = 1e-3;  // step size
    std::size_t T = 1000;
    std::uint64_t seed = 0;
    std::size_t log_every = 0;  // 0: max(1, T / 1000)
    bool track_h1 = false;      // H1 error in history rows (needs an exact solution)
    QuadratureSpec quad = QuadratureSpec::gauss();
    Exec exec;

    /// Throws InputError naming the offending field.
    void validate() const;
    std::size_t effective_log_every() const;
};

struct HistoryRow {
    std::size_t iter = 0;
    double energy = 0.0;
    double grad_norm = 0.0;
    double l2_slack = 0.0;
    double l1_slack = 0.0;
    std::optional<double> h1_error;
};

struct TrainState {
    NetShape shape;
    FlatParams params;
    Vec init_inner;
    std::size_t iteration = 0;
    std::vector<HistoryRow> history;
    // Energy and gradient at the current parameters, when known.
    std::optional<EnergyGradient> current;

    ParallelNetwork network() const { return unflatten(params, shape); }
    double l2_slack(double eta) const;
    double l1_slack(double zeta) const;
};

/// Outer coefficients zero, inner weights i.i.d. uniform on [-B, B] (padding stays zero).
TrainState initialize(const NetShape& shape, double B, std::uint64_t seed);

Vec project_l2_ball(std::span<const double> v, std::span<const double> center, double radius);
/// Euclidean projection onto {w : |w|_1 <= radius} by sorting and soft-thresholding.
Vec project_l1_ball(std::span<const double> v, double radius);

/// One projected step on the fixed sample set. Appends a history row when the
/// new iteration is a multiple of the logging cadence or equals config.T.
void pgd_step(TrainState& state, const EllipticProblem& problem, const SampleSet& samples, const PGDConfig& config);

using ProgressFn = std::function<void(const TrainState&)>;
/// initialize followed by config.T steps. History row 0 is the initialization.
TrainState train(const EllipticProblem& problem, const NetShape& shape, const PGDConfig& config,
                 const SampleSet& samples, const ProgressFn& progress = {});

std::string history_csv(const std::vector<HistoryRow>& history);

/// Unspecified universal constants of the schedule.
struct ScheduleConstants {
    double C = 1.0;
    double C0 = 1.0;
    double C0_prime = 1.0;
};

/// A possibly astronomically large quantity, kept in log10 form as well.
struct ScheduleValue {
    double value = 0.0;  // +inf when it overflows a double
    double log10 = 0.0;
    bool feasible = true;
};

struct ScheduleParams {
    double epsilon = 0.0;
    std::size_t d = 0;
    double n = 0.0;
    double mu = 0.0;
    double beta = 0.0;
    double beta0 = 0.0;
    double C1 = 0.0, C2 = 0.0, C3 = 0.0;
    std::size_t W = 0;
    std::size_t L = 0;
    ScheduleValue m, B, eta, zeta, T, lambda, N_s;
    ScheduleConstants constants;

    bool feasible() const;
    nlohmann::json to_json() const;
};

ScheduleParams schedule(double epsilon, std::size_t d, double n, double mu, double beta,
                        const ScheduleConstants& constants = {});

/// Clamps a raw step size to [1e-12, 1].
double clamp_step(double lambda_raw);

/// Inputs of the two-branch step rule min{1/T, 2 / (C2 m M^2 (B + eta)^{4L})}.
struct StepRule {
    double T = 1.0;
    double C2 = 1.0;
    double m = 1.0;
    double M = 1.0;
    double B = 1.0;
    double eta = 1.0;
    double L = 1.0;

    double iteration_branch() const { return 1.0 / T; }
    /// Evaluated through logarithms; may underflow to zero.
    double curvature_branch() const;
    double step() const;  // clamp_step(min of both branches)
};

}  // namespace drm
