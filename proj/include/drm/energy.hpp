#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drm/exec.hpp"
#include "drm/fields.hpp"
#include "drm/netcore.hpp"
#include "drm/rng.hpp"
#include "json.hpp"

namespace drm {

/// Axis-aligned box [lo, hi] inside [0,1]^d.
struct Box {
    Vec lo;
    Vec hi;

    static Box unit(std::size_t dim) { return {Vec(dim, 0.0), Vec(dim, 1.0)}; }

    std::size_t dim() const { return lo.size(); }
    double side(std::size_t i) const { return hi[i] - lo[i]; }
    double volume() const;
    /// (d-1)-measure of face `face` (= 2*axis + {0 lo, 1 hi}); 1 for d = 1.
    double face_measure(std::size_t face) const;
    double boundary_measure() const;
    std::size_t face_count() const { return 2 * dim(); }
    /// Throws InputError on mismatched corners or zero volume.
    void validate() const;
};

using ScalarField = std::function<double(std::span<const double>)>;
/// Neumann data g(y) at a boundary point on the given face.
using BoundaryField = std::function<double(std::span<const double>, std::size_t face)>;
/// Value and gradient of a candidate solution; `grad` has length d.
using Evaluator = std::function<double(std::span<const double> x, std::span<double> grad)>;

/// -Laplace(u) + omega u = h in the box, du/dn = g on its boundary.
struct EllipticProblem {
    Box box;
    ScalarField omega;
    ScalarField rhs;
    BoundaryField neumann;
    /// Declared lower bound c0 > 0 of omega.
    double omega_lower = 1.0;
    /// max{|h|, |g|, |omega|}.
    double data_bound = 1.0;
    /// True when g vanishes identically (boundary terms are skipped).
    bool neumann_zero = false;
    std::optional<AnalyticField> exact;
    std::vector<std::string> warnings;

    std::size_t dim() const { return box.dim(); }
};

/// Builds a problem from fields and probes c0, B0 on a grid. Declared bounds,
/// when given, override the probes; disagreements are recorded as warnings.
EllipticProblem make_problem(Box box, const AnalyticField& omega, const AnalyticField& rhs, const AnalyticField& g,
                             std::optional<double> declared_c0 = {}, std::optional<double> declared_b0 = {});

/// Chooses h = -Laplace(u0) + omega u0 and g = du0/dn, and attaches u0.
EllipticProblem manufacture(const AnalyticField& u0, const AnalyticField& omega, Box box,
                            std::optional<double> declared_c0 = {}, std::optional<double> declared_b0 = {});

/// Problem config: {d, box: {lo, hi}, omega, u0 | null, h, g, c0, B0}.
EllipticProblem problem_from_json(const nlohmann::json& doc, const std::string& path = "");

struct SampleSet {
    std::size_t dim = 0;
    Vec interior;                    // row-major, one point per row
    Vec boundary;
    std::vector<std::size_t> faces;  // face id per boundary point
    std::uint64_t seed = 0;
    std::string generator{CounterRng::kAlgorithm};

    std::size_t n_interior() const { return dim ? interior.size() / dim : 0; }
    std::size_t n_boundary() const { return dim ? boundary.size() / dim : 0; }
    std::span<const double> interior_point(std::size_t i) const { return {interior.data() + i * dim, dim}; }
    std::span<const double> boundary_point(std::size_t i) const { return {boundary.data() + i * dim, dim}; }

    std::string interior_csv() const;
    std::string boundary_csv() const;
};

/// N uniform points in the open box.
Vec sample_interior(const Box& box, std::size_t n, CounterRng rng);
struct BoundarySamples {
    Vec points;
    std::vector<std::size_t> faces;
};
/// Face chosen proportionally to its measure, then a uniform point on it.
BoundarySamples sample_boundary(const Box& box, std::size_t n, CounterRng rng);
/// Interior stream = split(1), boundary stream = split(2) of the seed.
SampleSet draw_samples(const EllipticProblem& problem, std::size_t n_interior, std::size_t n_boundary,
                       std::uint64_t seed);

struct QuadratureSpec {
    enum class Kind { TensorGauss, MonteCarlo };
    Kind kind = Kind::TensorGauss;
    std::size_t order = 32;  // nodes per axis, or point count for Monte Carlo
    std::uint64_t seed = 0x5eed;

    static QuadratureSpec gauss(std::size_t order = 32) { return {Kind::TensorGauss, order, 0x5eed}; }
    static QuadratureSpec monte_carlo(std::size_t count, std::uint64_t seed = 0x5eed) {
        return {Kind::MonteCarlo, count, seed};
    }
    /// Gauss order 32 for d <= 3, else 2^18 Monte Carlo points.
    static QuadratureSpec default_for(std::size_t dim);
};

/// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(std::size_t n, Vec& nodes, Vec& weights);

struct Estimate {
    double value = 0.0;
    double std_error = 0.0;  // zero for deterministic rules
};

Evaluator network_evaluator(const ParallelNetwork& net);
Evaluator field_evaluator(const AnalyticField& field);
/// Difference a - b of two evaluators.
Evaluator difference(Evaluator a, Evaluator b);

/// L(u) = integral of |grad u|^2/2 + omega u^2/2 - h u minus the boundary integral of g u.
Estimate continuous_energy_estimate(const Evaluator& u, const EllipticProblem& problem, const QuadratureSpec& quad);
double continuous_energy(const Evaluator& u, const EllipticProblem& problem, const QuadratureSpec& quad);
Estimate h1_error_estimate(const Evaluator& u, const EllipticProblem& problem, const QuadratureSpec& quad);
/// H1 distance to the attached exact solution.
double h1_error(const Evaluator& u, const EllipticProblem& problem, const QuadratureSpec& quad);
/// H1 norm of u itself.
double h1_norm(const Evaluator& u, std::size_t dim, const Box& box, const QuadratureSpec& quad);

/// Monte Carlo energy on a fixed sample set.
double empirical_energy(const ParallelNetwork& net, const SampleSet& samples, const EllipticProblem& problem,
                        const Exec& exec = {});

struct EnergyGradient {
    double energy = 0.0;
    FlatParams gradient;
};
/// Empirical energy and its exact parameter gradient in one pass.
EnergyGradient energy_and_gradient(const ParallelNetwork& net, const SampleSet& samples,
                                   const EllipticProblem& problem, const Exec& exec = {});
FlatParams energy_gradient(const ParallelNetwork& net, const SampleSet& samples, const EllipticProblem& problem,
                           const Exec& exec = {});

}  // namespace drm
