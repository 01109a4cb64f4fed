#pragma once

#include <cstddef>
#include <cstdint>
#include <cmath>
#include <functional>
#include <string>
#include <span>
#include <vector>

#include "drm/energy.hpp"
#include "drm/fields.hpp"
#include "drm/netcore.hpp"
#include "json.hpp"

namespace drm {

/// Anchor of the finite-difference constructions; tanh', tanh'' and tanh''' are all nonzero there.
inline constexpr double kDefaultAnchor = 0.5;

using MultiIndex = std::vector<unsigned>;

/// x^2 on [0, 1] from a second difference of tanh with step epsilon / C_cal.
/// Width 2, depth 2. Throws InputError when tanh''(x0) vanishes or epsilon is outside (0, 1).
SubNetwork build_square_net(double epsilon, double x0 = kDefaultAnchor, double C_cal = 1.0);

/// x y on [a, b]^2 by polarization, width 4, depth 2. The affine correction
/// a (x - a) + a (y - a) + a^2 is read off the existing hidden units.
SubNetwork build_product_net(double epsilon, double a = 0.0, double b = 1.0, double C_cal = 1.0,
                             double x0 = kDefaultAnchor);

/// x_1 ... x_d on [0, 1]^d as a binary tree of product blocks; missing leaves are the constant 1.
/// Width 2^{ceil(log2 d) + 1}, depth ceil(log2 d) + 1.
SubNetwork build_monomial_net(double epsilon, std::size_t d, double C_cal = 1.0, double x0 = kDefaultAnchor);

struct BumpSpec {
    std::size_t N = 1;
    double s = 1.0;
    MultiIndex m_index;

    /// Throws InputError unless s >= 1 and every index lies in 0..N.
    void validate() const;
};

/// psi^s(y) = (tanh(s (y + 3/2)) - tanh(s (y - 3/2))) / 2.
double bump_1d(double s, double y);
double bump_1d_derivative(double s, double y);
/// prod_l psi^s(3 N (x_l - m_l / N)).
double bump_value(const BumpSpec& spec, std::span<const double> x);
/// Value and gradient of bump_value.
double bump_value(const BumpSpec& spec, std::span<const double> x, std::span<double> grad);

/// First layer of the localized networks: 2d units, weights 3 N s and biases
/// -3 m_l s +- 3 s / 2, so that psi_l = (tanh(unit 2l) - tanh(unit 2l+1)) / 2.
Layer build_bump_first_layer(const BumpSpec& spec);

/// All alpha in N^d with |alpha|_1 <= degree, by total degree then lexicographically.
std::vector<MultiIndex> multi_indices(std::size_t d, std::size_t degree);

/// Local polynomial sum_alpha c_alpha x^alpha (monomial basis, not centred).
struct TaylorPatch {
    MultiIndex m_index;
    std::vector<MultiIndex> alphas;
    Vec coefficients;

    double value(std::span<const double> x) const;
    void gradient(std::span<const double> x, std::span<double> out) const;
};

/// D^alpha f at a point.
using DerivativeOracle = std::function<double(std::span<const double>, const MultiIndex&)>;
DerivativeOracle analytic_derivatives(const AnalyticField& f);
/// Nested central differences; order-k derivatives use step base_step^{1/k}.
DerivativeOracle finite_difference_derivatives(ScalarField f, double base_step);

/// Node Taylor polynomials of degree n - 1 at every m / N, m in {0..N}^d,
/// re-expanded in the monomial basis. Throws InputError on non-finite derivatives.
std::vector<TaylorPatch> taylor_coefficients(const DerivativeOracle& f, std::size_t N, std::size_t n, std::size_t d);

/// Network for Psi_m^s(x) x^alpha: bump layer, then ceil(log2(d + tree_leaves)) levels of
/// product blocks, padded to the given width. `tree_levels` fixes the depth (tree_levels + 2)
/// so that sub-networks for different alpha share a shape.
SubNetwork build_localized_monomial_net(const BumpSpec& bump, const MultiIndex& alpha, double epsilon, double C_cal,
                                        std::size_t tree_levels, std::size_t width, double x0 = kDefaultAnchor);

/// ceil(log2(v)) for v >= 1.
std::size_t ceil_log2(std::size_t v);

/// max over a tensor grid of |f - g| and, for k = 1, of every |d_i f - d_i g|.
double measure_sobolev_error(const Evaluator& f, const Evaluator& g, std::size_t dim, int k, std::size_t resolution,
                             const Box& box);
/// Field against network; an empty box means the unit cube. Runs on all hardware threads.
double measure_sobolev_error(const AnalyticField& f, const ParallelNetwork& net, int k, std::size_t resolution,
                             const Box& box = {});
double measure_sobolev_error(const AnalyticField& f, const SubNetwork& net, int k, std::size_t resolution,
                             const Box& box = {});
/// Same maximum over `count` uniform random points.
double measure_sobolev_error_random(const Evaluator& f, const Evaluator& g, std::size_t dim, int k, std::size_t count,
                                    std::uint64_t seed, const Box& box);

/// Result of a search for the smallest constant whose measured error meets a target.
struct Calibration {
    double constant = 0.0;
    double measured_error = 0.0;
    double target = 0.0;
    std::size_t evaluations = 0;
    bool met = false;
};

/// error_at(C) is expected to decrease in C until rounding takes over. Scans
/// C = lo, 4 lo, 16 lo, ... up to hi for the first C meeting the target, then
/// bisects in log C between it and its predecessor.
Calibration calibrate_constant(const std::function<double(double)>& error_at, double target, double lo = 0.25,
                               double hi = 1e8, std::size_t bisections = 20);
/// Calibrated W^{1,inf} builders on grids of `resolution` points per axis.
Calibration calibrate_square(double epsilon, double x0 = kDefaultAnchor, std::size_t resolution = 10000);
Calibration calibrate_product(double epsilon, double a = 0.0, double b = 1.0, double x0 = kDefaultAnchor,
                              std::size_t resolution = 101);
Calibration calibrate_monomial(double epsilon, std::size_t d, double target, double x0 = kDefaultAnchor,
                               std::size_t resolution = 11);

struct AssembleOptions {
    std::size_t k = 1;          // Sobolev order of the target error (0 or 1)
    double mu = 0.5;            // s = max(N^mu, s_floor)
    double s_floor = 6.0;       // keeps the partition of unity sharp at small N
    double p = INFINITY;        // integrability index; only reported
    double C_grid = 1.0;        // starting constant of the N rule
    std::size_t max_subnets = 100000;
    std::size_t resolution = 0;  // 0: 4001 in 1D, 101 in 2D, 21 in 3D, 9 beyond
    double x0 = kDefaultAnchor;
};

struct Approximant {
    ParallelNetwork net;
    std::size_t N = 0;
    double s = 0.0;
    std::size_t n = 0;
    std::size_t d = 0;
    double epsilon = 0.0;       // requested W^{k,inf} accuracy
    double epsilon_net = 0.0;   // accuracy of each product block
    double C_grid = 0.0;        // calibrated constant of the N rule
    Calibration net_calibration;
    double taylor_error = 0.0;  // measured ||f - f_N||
    double measured_error = 0.0;
    std::size_t width = 0;
    std::size_t depth = 0;
    double coefficient_l1 = 0.0;
    double max_weight = 0.0;
    AssembleOptions options;

    nlohmann::json provenance() const;
};

/// Localized Taylor approximant of f with one sub-network per (m, alpha).
/// Throws CapacityError when (N + 1)^d * #alpha exceeds options.max_subnets.
Approximant assemble_approximant(const AnalyticField& f, double epsilon, std::size_t n,
                                 const AssembleOptions& options = {});

/// f_N(x) = sum_m Psi_m^s(x) p_m(x), with gradient.
double localized_taylor_value(const std::vector<TaylorPatch>& patches, std::size_t N, double s,
                              std::span<const double> x, std::span<double> grad);

/// netcore JSON plus a provenance block.
nlohmann::json approximant_to_json(const Approximant& a);
nlohmann::json subnet_to_json_with_provenance(const SubNetwork& net, const std::string& construction, double epsilon,
                                              const Calibration& calibration);

}  // namespace drm
