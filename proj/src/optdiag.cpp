#include "drm/optdiag.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "drm/errors.hpp"
#include "drm/rng.hpp"

namespace drm {

std::vector<Vec> subnet_vectors(std::span<const double> inner, const NetShape& shape) {
    const std::size_t slot = SlotLayout::make(shape.width, shape.depth, shape.input_dim).slot;
    if (inner.size() != shape.m * slot)
        throw InputError("inner weight vector has " + std::to_string(inner.size()) + " entries, expected " +
                         std::to_string(shape.m * slot));
    std::vector<Vec> out(shape.m);
    for (std::size_t k = 0; k < shape.m; ++k) out[k].assign(inner.begin() + k * slot, inner.begin() + (k + 1) * slot);
    return out;
}

std::vector<Vec> subnet_vectors(const FlatParams& params, const NetShape& shape) {
    return subnet_vectors(params.inner, shape);
}

std::vector<Vec> subnet_vectors(const ParallelNetwork& net) { return subnet_vectors(flatten(net), net.shape()); }

// ---------------------------------------------------------------- matching

nlohmann::json MatchReport::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t k = 0; k < targets; ++k) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t v = 0; v < R; ++v) row.push_back(index(k, v));
        rows.push_back(std::move(row));
    }
    return {{"success", success}, {"delta", delta_used}, {"R", R}, {"targets", targets},
            {"max_distance", max_distance}, {"indices", std::move(rows)}};
}

namespace {

double sup_distance(const Vec& a, const Vec& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

}  // namespace

MatchReport match_initialization(std::span<const Vec> init, std::span<const Vec> targets, std::size_t R, double delta) {
    if (R == 0) throw InputError("R must be at least 1");
    if (!(delta >= 0.0)) throw InputError("delta must be non-negative");
    if (init.size() < targets.size() * R)
        throw InputError("need at least targets * R = " + std::to_string(targets.size() * R) +
                         " initial sub-networks, have " + std::to_string(init.size()));
    const std::size_t len = init.empty() ? 0 : init.front().size();
    for (const Vec& v : init)
        if (v.size() != len) throw InputError("initial weight vectors differ in length");
    for (const Vec& v : targets)
        if (v.size() != len) throw InputError("target weight vector length differs from the initial ones");

    MatchReport rep;
    rep.targets = targets.size();
    rep.R = R;
    rep.delta_used = delta;
    rep.indices.assign(targets.size() * R, 0);
    std::vector<char> used(init.size(), 0);
    bool ok = true;
    for (std::size_t k = 0; k < targets.size() && ok; ++k) {
        std::size_t found = 0;
        for (std::size_t i = 0; i < init.size() && found < R; ++i) {
            if (used[i]) continue;
            const double dist = sup_distance(init[i], targets[k]);
            if (dist <= delta) {
                used[i] = 1;
                rep.indices[k * R + found++] = i;
                rep.max_distance = std::max(rep.max_distance, dist);
            }
        }
        ok = found == R;
    }
    rep.success = ok;
    if (!ok) {
        rep.max_distance = 0.0;
        for (std::size_t j = 0; j < rep.indices.size(); ++j) rep.indices[j] = j;
    }
    return rep;
}

ParallelNetwork build_transition_network(const ParallelNetwork& init, const MatchReport& match,
                                         std::span<const double> target_coeffs) {
    if (!match.success) throw InputError("transition network needs a successful match");
    if (target_coeffs.size() != match.targets)
        throw InputError("got " + std::to_string(target_coeffs.size()) + " target coefficients for " +
                         std::to_string(match.targets) + " targets");
    ParallelNetwork out = init;
    std::fill(out.coefficients.begin(), out.coefficients.end(), 0.0);
    const double R = static_cast<double>(match.R);
    for (std::size_t k = 0; k < match.targets; ++k)
        for (std::size_t v = 0; v < match.R; ++v) {
            const std::size_t s = match.index(k, v);
            if (s >= out.size()) throw InputError("match index outside the network");
            out.coefficients[s] = target_coeffs[k] / R;
        }
    return out;
}

TransitionNorms transition_norms(const ParallelNetwork& transition, std::span<const double> target_coeffs,
                                 std::size_t R) {
    TransitionNorms n;
    double sq = 0.0;
    for (double c : transition.coefficients) {
        n.l1 += std::abs(c);
        sq += c * c;
    }
    n.l2 = std::sqrt(sq);
    for (double c : target_coeffs) n.target_l1 += std::abs(c);
    n.l2_bound = n.target_l1 / std::sqrt(static_cast<double>(R));
    return n;
}

// ---------------------------------------------------------------- event G

double event_probability_bound(std::size_t targets, std::size_t R, std::size_t Q, double delta, double B,
                               std::size_t W, std::size_t L) {
    if (!(B > 0.0)) throw InputError("B must be positive");
    if (!(delta >= 0.0 && delta <= 2.0 * B)) throw InputError("delta must lie in [0, 2B]");
    if (Q == 0) throw InputError("Q must be at least 1");
    const double exponent = static_cast<double>(W) * static_cast<double>(W + 1) * static_cast<double>(L);
    const double p = std::pow(delta / (2.0 * B), exponent);
    // [1 - p]^Q through log1p so tiny p is not lost.
    const double miss = p >= 1.0 ? 0.0 : std::exp(static_cast<double>(Q) * std::log1p(-p));
    const double bound = 1.0 - static_cast<double>(targets) * static_cast<double>(R) * miss;
    return std::clamp(bound, 0.0, 1.0);
}

double single_target_event_probability(double q, std::size_t D, std::size_t m) {
    const double p = std::pow(q, static_cast<double>(D));
    return p >= 1.0 ? 1.0 : -std::expm1(static_cast<double>(m) * std::log1p(-p));
}

EventEstimate estimate_event_probability(const NetShape& shape, double B, std::span<const Vec> targets,
                                         std::size_t R, double delta, std::size_t trials, std::uint64_t seed) {
    if (trials == 0) throw InputError("need at least one trial");
    const CounterRng root(seed);
    EventEstimate est;
    est.trials = trials;
    for (std::size_t t = 0; t < trials; ++t) {
        const TrainState state = initialize(shape, B, root.split(t).next_u64());
        const std::vector<Vec> init = subnet_vectors(state.init_inner, shape);
        if (match_initialization(init, targets, R, delta).success) ++est.successes;
    }
    est.frequency = static_cast<double>(est.successes) / static_cast<double>(trials);
    est.std_error = std::sqrt(est.frequency * (1.0 - est.frequency) / static_cast<double>(trials));
    return est;
}

// ---------------------------------------------------------------- decomposition

nlohmann::json Decomposition::to_json() const {
    return {{"e_app", e_app},
            {"e_opt_minus", e_opt_minus},
            {"e_sta", e_sta},
            {"e_sta_label", e_sta_label},
            {"total_bound", total_bound},
            {"h1_sq_measured", h1_sq_measured},
            {"c0", c0},
            {"B0", B0},
            {"labels",
             {{"e_app", "(B0 v 1)/2 * |u_bar - u0|_H1^2"},
              {"e_opt_minus", "L_hat(u_A) - L_hat(u_bar)"},
              {"e_sta", e_sta_label == "measured" ? "|L - L_hat|(u_A) + |L - L_hat|(u_bar)"
                                                  : "supplied bound on 2 sup |L - L_hat|"},
              {"total_bound", "2/(c0 ^ 1) * (e_app + e_opt_minus + e_sta)"}}}};
}

std::string Decomposition::csv_header() {
    return "e_app,e_opt_minus,e_sta,e_sta_label,total_bound,h1_sq_measured,c0,B0";
}

std::string Decomposition::csv_row() const {
    std::ostringstream os;
    os.precision(17);
    os << e_app << ',' << e_opt_minus << ',' << e_sta << ',' << e_sta_label << ',' << total_bound << ','
       << h1_sq_measured << ',' << c0 << ',' << B0;
    return os.str();
}

Decomposition error_decomposition(const ParallelNetwork& trained, const ParallelNetwork& reference,
                                  const EllipticProblem& problem, const SampleSet& samples, double e_sta,
                                  const std::string& e_sta_label, const QuadratureSpec& quad, const Exec& exec) {
    if (!problem.exact) throw InputError("error decomposition needs a problem with an exact solution");
    if (!std::isfinite(e_sta)) throw InputError("statistical term must be finite");
    Decomposition rep;
    rep.c0 = problem.omega_lower;
    rep.B0 = problem.data_bound;
    const double ref_h1 = h1_error(network_evaluator(reference), problem, quad);
    rep.e_app = 0.5 * std::max(rep.B0, 1.0) * ref_h1 * ref_h1;
    rep.e_opt_minus = empirical_energy(trained, samples, problem, exec) - empirical_energy(reference, samples, problem, exec);
    rep.e_sta = e_sta;
    rep.e_sta_label = e_sta_label;
    rep.total_bound = 2.0 / std::min(rep.c0, 1.0) * (rep.e_app + rep.e_opt_minus + rep.e_sta);
    const double h1 = h1_error(network_evaluator(trained), problem, quad);
    rep.h1_sq_measured = h1 * h1;
    return rep;
}

double measured_statistical_term(const ParallelNetwork& trained, const ParallelNetwork& reference,
                                 const EllipticProblem& problem, const SampleSet& samples, const QuadratureSpec& quad,
                                 const Exec& exec) {
    auto gap = [&](const ParallelNetwork& net) {
        return std::abs(continuous_energy(network_evaluator(net), problem, quad) -
                        empirical_energy(net, samples, problem, exec));
    };
    return gap(trained) + gap(reference);
}

EnsembleMinimum erm_ensemble_minimum(const EllipticProblem& problem, const NetShape& shape, const PGDConfig& config,
                                     const SampleSet& samples, std::size_t restarts,
                                     std::span<const ParallelNetwork> candidates) {
    if (restarts == 0 && candidates.empty()) throw InputError("ensemble needs at least one member");
    EnsembleMinimum out;
    out.value = INFINITY;
    for (std::size_t r = 0; r < restarts; ++r) {
        PGDConfig cfg = config;
        cfg.seed = config.seed + r;
        const TrainState state = train(problem, shape, cfg, samples);
        const double e = empirical_energy(state.network(), samples, problem, config.exec);
        out.restart_energies.push_back(e);
        out.value = std::min(out.value, e);
    }
    for (const ParallelNetwork& c : candidates) {
        const double e = empirical_energy(c, samples, problem, config.exec);
        if (e < out.value) {
            out.value = e;
            out.attained_by_candidate = true;
        }
    }
    return out;
}

}  // namespace drm
