#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "drm/energy.hpp"
#include "drm/netcore.hpp"
#include "drm/pgd.hpp"
#include "json.hpp"

namespace drm {

/// Slot-aligned weight vector of every sub-network (padding included).
std::vector<Vec> subnet_vectors(const FlatParams& params, const NetShape& shape);
std::vector<Vec> subnet_vectors(const ParallelNetwork& net);
std::vector<Vec> subnet_vectors(std::span<const double> inner, const NetShape& shape);

/// Assignment of R initial sub-networks to each target sub-network.
struct MatchReport {
    std::size_t targets = 0;
    std::size_t R = 0;
    /// Row-major targets x R, 0-based sub-network indices.
    std::vector<std::size_t> indices;
    double delta_used = 0.0;
    bool success = false;
    /// Largest sup-distance over the matched pairs (only meaningful on success).
    double max_distance = 0.0;

    std::size_t index(std::size_t k, std::size_t v) const { return indices[k * R + v]; }
    nlohmann::json to_json() const;
};

/// Greedy first fit in index order: target k takes the first R still-unused
/// sub-networks within sup-distance delta. When some target falls short, the
/// fallback indices k R + v are returned with success = false.
/// Throws InputError on mismatched vector lengths or fewer than targets * R candidates.
MatchReport match_initialization(std::span<const Vec> init, std::span<const Vec> targets, std::size_t R, double delta);

/// Init weights kept, outer coefficient target_coeffs[k] / R at every matched slot, zero elsewhere.
/// Throws InputError when the match failed or the sizes disagree.
ParallelNetwork build_transition_network(const ParallelNetwork& init, const MatchReport& match,
                                         std::span<const double> target_coeffs);

struct TransitionNorms {
    double l1 = 0.0;           // |theta_out|_1
    double l2 = 0.0;           // |theta_out|_2
    double target_l1 = 0.0;    // sum_k |c_k|, the budget M used below
    double l2_bound = 0.0;     // M / sqrt(R)
};
TransitionNorms transition_norms(const ParallelNetwork& transition, std::span<const double> target_coeffs,
                                 std::size_t R);

/// 1 - targets R [1 - (delta / 2B)^{W(W+1)L}]^Q, clamped to [0, 1].
/// Throws InputError unless 0 <= delta <= 2B and Q >= 1.
double event_probability_bound(std::size_t targets, std::size_t R, std::size_t Q, double delta, double B,
                               std::size_t W, std::size_t L);
/// Exact P(G) for one target and R = 1 when each weight matches with probability q: 1 - (1 - q^D)^m.
double single_target_event_probability(double q, std::size_t D, std::size_t m);

struct EventEstimate {
    std::size_t trials = 0;
    std::size_t successes = 0;
    double frequency = 0.0;
    double std_error = 0.0;  // binomial sqrt(p (1 - p) / trials) at the observed p
};
/// Monte Carlo frequency of a successful match under the training initialization.
/// Trial t draws its initialization from seed stream t.
EventEstimate estimate_event_probability(const NetShape& shape, double B, std::span<const Vec> targets,
                                         std::size_t R, double delta, std::size_t trials, std::uint64_t seed);

struct Decomposition {
    double e_app = 0.0;         // (B0 v 1)/2 |u_bar - u0|^2_H1
    double e_opt_minus = 0.0;   // L^(u_A) - L^(u_bar)
    double e_sta = 0.0;         // as supplied
    std::string e_sta_label;    // "bound" or "measured"
    double total_bound = 0.0;   // 2/(c0 ^ 1) (e_app + e_opt_minus + e_sta)
    double h1_sq_measured = 0.0;
    double c0 = 0.0;
    double B0 = 0.0;

    nlohmann::json to_json() const;
    static std::string csv_header();
    std::string csv_row() const;
};

/// Throws InputError when the problem has no exact solution.
Decomposition error_decomposition(const ParallelNetwork& trained, const ParallelNetwork& reference,
                                  const EllipticProblem& problem, const SampleSet& samples, double e_sta,
                                  const std::string& e_sta_label = "bound",
                                  const QuadratureSpec& quad = QuadratureSpec::gauss(), const Exec& exec = {});

/// |L - L^| at the trained network plus |L - L^| at the reference: the part of
/// the sup term the decomposition actually uses.
double measured_statistical_term(const ParallelNetwork& trained, const ParallelNetwork& reference,
                                 const EllipticProblem& problem, const SampleSet& samples,
                                 const QuadratureSpec& quad = QuadratureSpec::gauss(), const Exec& exec = {});

/// Stand-in for the empirical risk minimizer: the smallest empirical energy over
/// `restarts` independent trainings (seeds seed, seed+1, ...) and the extra candidates.
struct EnsembleMinimum {
    double value = 0.0;
    std::vector<double> restart_energies;
    bool attained_by_candidate = false;
};
EnsembleMinimum erm_ensemble_minimum(const EllipticProblem& problem, const NetShape& shape, const PGDConfig& config,
                                     const SampleSet& samples, std::size_t restarts,
                                     std::span<const ParallelNetwork> candidates = {});

}  // namespace drm
