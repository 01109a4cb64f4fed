#include "drm/energy.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <memory>
#include <numbers>
#include <sstream>

#include "drm/errors.hpp"

namespace drm {

// ---------------------------------------------------------------- box

double Box::volume() const {
    double v = 1.0;
    for (std::size_t i = 0; i < dim(); ++i) v *= side(i);
    return v;
}

double Box::face_measure(std::size_t face) const {
    const std::size_t axis = face / 2;
    double v = 1.0;
    for (std::size_t j = 0; j < dim(); ++j)
        if (j != axis) v *= side(j);
    return v;
}

double Box::boundary_measure() const {
    double s = 0.0;
    for (std::size_t f = 0; f < face_count(); ++f) s += face_measure(f);
    return s;
}

void Box::validate() const {
    if (lo.empty() || lo.size() != hi.size()) throw InputError("box corners must be non-empty and of equal length");
    for (std::size_t i = 0; i < dim(); ++i) {
        if (!std::isfinite(lo[i]) || !std::isfinite(hi[i])) throw InputError("box corners must be finite");
        if (!(hi[i] > lo[i])) throw InputError("box has zero volume along axis " + std::to_string(i));
    }
}

// ---------------------------------------------------------------- problems

namespace {

// Probe grid: up to 17 points per axis, at most ~2e4 points overall.
std::vector<Vec> probe_points(const Box& box) {
    const std::size_t d = box.dim();
    std::size_t per = 17;
    while (per > 2 && std::pow(double(per), double(d)) > 2e4) --per;
    std::vector<Vec> pts;
    std::vector<std::size_t> idx(d, 0);
    while (true) {
        Vec x(d);
        for (std::size_t i = 0; i < d; ++i) x[i] = box.lo[i] + box.side(i) * double(idx[i]) / double(per - 1);
        pts.push_back(std::move(x));
        std::size_t a = 0;
        while (a < d && ++idx[a] == per) idx[a++] = 0;
        if (a == d) break;
    }
    return pts;
}

struct Probe {
    double omega_min = INFINITY, omega_max = 0.0, h_max = 0.0, g_max = 0.0;
};

Probe probe(const EllipticProblem& p) {
    Probe r;
    for (const auto& x : probe_points(p.box)) {
        const double w = p.omega(x);
        r.omega_min = std::min(r.omega_min, w);
        r.omega_max = std::max(r.omega_max, std::abs(w));
        r.h_max = std::max(r.h_max, std::abs(p.rhs(x)));
        for (std::size_t f = 0; f < p.box.face_count(); ++f) {
            const std::size_t axis = f / 2;
            const double face_value = (f % 2 == 0) ? p.box.lo[axis] : p.box.hi[axis];
            if (x[axis] != p.box.lo[axis]) continue;  // visit each face point once
            Vec y = x;
            y[axis] = face_value;
            r.g_max = std::max(r.g_max, std::abs(p.neumann(y, f)));
        }
    }
    return r;
}

void finish_problem(EllipticProblem& p, std::optional<double> declared_c0, std::optional<double> declared_b0) {
    const Probe pr = probe(p);
    if (!(pr.omega_min > 0.0)) throw InputError("omega must be positive on the domain");
    if (declared_c0) {
        if (!(*declared_c0 > 0.0)) throw InputError("c0 must be positive");
        p.omega_lower = *declared_c0;
        if (*declared_c0 > pr.omega_min)
            p.warnings.push_back("declared c0 exceeds the probed minimum of omega (" + std::to_string(pr.omega_min) + ")");
    } else {
        p.omega_lower = pr.omega_min;
    }
    const double probed_b0 = std::max({pr.omega_max, pr.h_max, pr.g_max});
    if (declared_b0) {
        if (!(*declared_b0 > 0.0)) throw InputError("B0 must be positive");
        p.data_bound = *declared_b0;
        if (*declared_b0 < probed_b0)
            p.warnings.push_back("declared B0 is below the probed data bound (" + std::to_string(probed_b0) + ")");
    } else {
        p.data_bound = probed_b0;
    }
}

}  // namespace

EllipticProblem make_problem(Box box, const AnalyticField& omega, const AnalyticField& rhs, const AnalyticField& g,
                             std::optional<double> declared_c0, std::optional<double> declared_b0) {
    box.validate();
    const std::size_t d = box.dim();
    if (omega.dim() != d || rhs.dim() != d || g.dim() != d) throw InputError("field dimensions differ from the box");
    EllipticProblem p;
    p.box = std::move(box);
    p.omega = [omega](std::span<const double> x) { return omega.value(x); };
    p.rhs = [rhs](std::span<const double> x) { return rhs.value(x); };
    p.neumann = [g](std::span<const double> y, std::size_t) { return g.value(y); };
    p.neumann_zero = g.is_zero();
    finish_problem(p, declared_c0, declared_b0);
    return p;
}

EllipticProblem manufacture(const AnalyticField& u0, const AnalyticField& omega, Box box,
                            std::optional<double> declared_c0, std::optional<double> declared_b0) {
    box.validate();
    const std::size_t d = box.dim();
    if (u0.dim() != d || omega.dim() != d) throw InputError("field dimensions differ from the box");
    EllipticProblem p;
    p.box = std::move(box);
    p.omega = [omega](std::span<const double> x) { return omega.value(x); };
    p.rhs = [u0, omega](std::span<const double> x) { return -u0.laplacian(x) + omega.value(x) * u0.value(x); };
    p.neumann = [u0](std::span<const double> y, std::size_t face) {
        const std::size_t axis = face / 2;
        std::vector<unsigned> alpha(y.size(), 0);
        alpha[axis] = 1;
        const double dn = u0.derivative(y, alpha);
        return face % 2 == 0 ? -dn : dn;
    };
    p.exact = u0;

    // Normal derivatives that vanish up to rounding (cos(pi x) at x = 1) are treated as exact zeros.
    double g_max = 0.0, grad_max = 0.0;
    Vec grad(d);
    for (const auto& x : probe_points(p.box)) {
        u0.gradient(x, grad);
        for (double v : grad) grad_max = std::max(grad_max, std::abs(v));
        for (std::size_t f = 0; f < p.box.face_count(); ++f) {
            Vec y = x;
            y[f / 2] = (f % 2 == 0) ? p.box.lo[f / 2] : p.box.hi[f / 2];
            g_max = std::max(g_max, std::abs(p.neumann(y, f)));
        }
    }
    if (g_max <= 1e-13 * (1.0 + grad_max)) {
        p.neumann = [](std::span<const double>, std::size_t) { return 0.0; };
        p.neumann_zero = true;
    }
    finish_problem(p, declared_c0, declared_b0);
    return p;
}

namespace {

Vec vec_field(const nlohmann::json& v, std::size_t d, const std::string& path) {
    if (!v.is_array() || v.size() != d) throw InputError("expected an array of length d", path);
    Vec out;
    for (std::size_t i = 0; i < d; ++i) {
        if (!v[i].is_number()) throw InputError("expected a number", path + "/" + std::to_string(i));
        out.push_back(v[i].get<double>());
    }
    return out;
}

std::optional<double> opt_number(const nlohmann::json& doc, const char* key, const std::string& path) {
    if (!doc.contains(key) || doc.at(key).is_null()) return std::nullopt;
    if (!doc.at(key).is_number()) throw InputError(std::string("'") + key + "' must be a number", path + "/" + key);
    return doc.at(key).get<double>();
}

}  // namespace

EllipticProblem problem_from_json(const nlohmann::json& doc, const std::string& path) {
    if (!doc.is_object()) throw InputError("problem must be an object", path);
    if (!doc.contains("d") || !doc.at("d").is_number_unsigned() || doc.at("d").get<std::size_t>() < 1)
        throw InputError("'d' must be a positive integer", path + "/d");
    const std::size_t d = doc.at("d").get<std::size_t>();
    Box box = Box::unit(d);
    if (doc.contains("box")) {
        const auto& b = doc.at("box");
        if (!b.is_object()) throw InputError("'box' must be an object", path + "/box");
        if (b.contains("lo")) box.lo = vec_field(b.at("lo"), d, path + "/box/lo");
        if (b.contains("hi")) box.hi = vec_field(b.at("hi"), d, path + "/box/hi");
        for (std::size_t i = 0; i < d; ++i)
            if (box.lo[i] < 0.0 || box.hi[i] > 1.0) throw InputError("box must lie inside the unit cube", path + "/box");
        try {
            box.validate();
        } catch (const InputError& e) {
            throw InputError(e.what(), path + "/box");
        }
    }
    const auto omega = doc.contains("omega") ? AnalyticField::from_json(doc.at("omega"), d, path + "/omega")
                                             : AnalyticField::constant(d, 1.0);
    const auto c0 = opt_number(doc, "c0", path);
    const auto b0 = opt_number(doc, "B0", path);
    try {
        if (doc.contains("u0") && !doc.at("u0").is_null()) {
            if (doc.contains("h") || doc.contains("g"))
                throw InputError("h and g are derived from u0 and cannot be given with it", path + "/u0");
            return manufacture(AnalyticField::from_json(doc.at("u0"), d, path + "/u0"), omega, box, c0, b0);
        }
        const auto h = doc.contains("h") ? AnalyticField::from_json(doc.at("h"), d, path + "/h") : AnalyticField::constant(d, 0.0);
        const auto g = doc.contains("g") ? AnalyticField::from_json(doc.at("g"), d, path + "/g") : AnalyticField::constant(d, 0.0);
        return make_problem(box, omega, h, g, c0, b0);
    } catch (const InputError& e) {
        if (!e.pointer().empty()) throw;
        throw InputError(e.what(), path);
    }
}

// ---------------------------------------------------------------- sampling

Vec sample_interior(const Box& box, std::size_t n, CounterRng rng) {
    box.validate();
    if (n == 0) throw InputError("sample count must be positive");
    const std::size_t d = box.dim();
    Vec pts(n * d);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t i = 0; i < d; ++i) pts[p * d + i] = box.lo[i] + box.side(i) * rng.uniform();
    return pts;
}

BoundarySamples sample_boundary(const Box& box, std::size_t n, CounterRng rng) {
    box.validate();
    if (n == 0) throw InputError("sample count must be positive");
    const std::size_t d = box.dim();
    Vec cumulative;
    double total = 0.0;
    for (std::size_t f = 0; f < box.face_count(); ++f) cumulative.push_back(total += box.face_measure(f));
    BoundarySamples out;
    out.points.resize(n * d);
    out.faces.resize(n);
    for (std::size_t p = 0; p < n; ++p) {
        const double r = rng.uniform() * total;
        std::size_t f = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin());
        f = std::min(f, box.face_count() - 1);
        const std::size_t axis = f / 2;
        for (std::size_t i = 0; i < d; ++i) {
            if (i == axis)
                out.points[p * d + i] = (f % 2 == 0) ? box.lo[i] : box.hi[i];
            else
                out.points[p * d + i] = box.lo[i] + box.side(i) * rng.uniform();
        }
        out.faces[p] = f;
    }
    return out;
}

SampleSet draw_samples(const EllipticProblem& problem, std::size_t n_interior, std::size_t n_boundary,
                       std::uint64_t seed) {
    CounterRng root(seed);
    SampleSet s;
    s.dim = problem.dim();
    s.seed = seed;
    s.interior = sample_interior(problem.box, n_interior, root.split(1));
    auto b = sample_boundary(problem.box, n_boundary, root.split(2));
    s.boundary = std::move(b.points);
    s.faces = std::move(b.faces);
    return s;
}

namespace {

std::string points_csv(const Vec& pts, std::size_t d, const std::vector<std::size_t>* faces) {
    std::ostringstream os;
    os << std::setprecision(17);
    for (std::size_t i = 0; i < d; ++i) os << (i ? "," : "") << "x" << i;
    if (faces) os << ",face";
    os << '\n';
    const std::size_t n = d ? pts.size() / d : 0;
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t i = 0; i < d; ++i) os << (i ? "," : "") << pts[p * d + i];
        if (faces) os << ',' << (*faces)[p];
        os << '\n';
    }
    return os.str();
}

}  // namespace

std::string SampleSet::interior_csv() const { return points_csv(interior, dim, nullptr); }
std::string SampleSet::boundary_csv() const { return points_csv(boundary, dim, &faces); }

// ---------------------------------------------------------------- quadrature

QuadratureSpec QuadratureSpec::default_for(std::size_t dim) {
    return dim <= 3 ? gauss(32) : monte_carlo(std::size_t{1} << 18);
}

void gauss_legendre(std::size_t n, Vec& nodes, Vec& weights) {
    if (n == 0) throw InputError("Gauss-Legendre order must be positive");
    nodes.assign(n, 0.0);
    weights.assign(n, 0.0);
    for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(std::numbers::pi * (double(i) + 0.75) / (double(n) + 0.5));
        double dp = 1.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = x;
            for (std::size_t k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * double(k) - 1.0) * x * p1 - (double(k) - 1.0) * p0) / double(k);
                p0 = p1;
                p1 = p2;
            }
            dp = double(n) * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        // recompute derivative at the converged node
        double p0 = 1.0, p1 = x;
        for (std::size_t k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * double(k) - 1.0) * x * p1 - (double(k) - 1.0) * p0) / double(k);
            p0 = p1;
            p1 = p2;
        }
        dp = double(n) * (x * p1 - p0) / (x * x - 1.0);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) nodes[n / 2] = 0.0;
}

namespace {

struct Rule {
    std::size_t dim = 0;
    Vec points;  // row-major
    Vec weights;
    bool random = false;
};

// Tensor Gauss rule on the box restricted to `free` axes; fixed axes take `fixed` values.
Rule tensor_rule(const Box& box, std::size_t order, std::size_t fixed_axis, double fixed_value) {
    Vec nodes, weights;
    gauss_legendre(order, nodes, weights);
    const std::size_t d = box.dim();
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < d; ++i)
        if (i != fixed_axis) free.push_back(i);
    Rule r;
    r.dim = d;
    std::vector<std::size_t> idx(free.size(), 0);
    while (true) {
        double w = 1.0;
        Vec x(d);
        for (std::size_t a = 0; a < free.size(); ++a) {
            const std::size_t ax = free[a];
            x[ax] = box.lo[ax] + 0.5 * box.side(ax) * (nodes[idx[a]] + 1.0);
            w *= 0.5 * box.side(ax) * weights[idx[a]];
        }
        if (fixed_axis < d) x[fixed_axis] = fixed_value;
        r.points.insert(r.points.end(), x.begin(), x.end());
        r.weights.push_back(w);
        std::size_t a = 0;
        while (a < free.size() && ++idx[a] == order) idx[a++] = 0;
        if (a == free.size()) break;
    }
    return r;
}

Rule random_rule(const Box& box, std::size_t count, CounterRng rng, std::size_t fixed_axis, double fixed_value,
                 double measure) {
    const std::size_t d = box.dim();
    Rule r;
    r.dim = d;
    r.random = true;
    r.points.resize(count * d);
    for (std::size_t p = 0; p < count; ++p)
        for (std::size_t i = 0; i < d; ++i)
            r.points[p * d + i] = (i == fixed_axis) ? fixed_value : box.lo[i] + box.side(i) * rng.uniform();
    r.weights.assign(count, measure / double(count));
    return r;
}

void check_quad(const QuadratureSpec& quad, std::size_t d) {
    if (quad.order == 0) throw InputError("quadrature order must be positive");
    if (quad.kind == QuadratureSpec::Kind::TensorGauss && d > 3)
        throw InputError("tensor Gauss quadrature is limited to d <= 3");
}

Rule interior_rule(const Box& box, const QuadratureSpec& quad) {
    if (quad.kind == QuadratureSpec::Kind::TensorGauss) return tensor_rule(box, quad.order, box.dim(), 0.0);
    return random_rule(box, quad.order, CounterRng(quad.seed).split(1), box.dim(), 0.0, box.volume());
}

Rule face_rule(const Box& box, std::size_t face, const QuadratureSpec& quad) {
    const std::size_t axis = face / 2;
    const double v = (face % 2 == 0) ? box.lo[axis] : box.hi[axis];
    if (box.dim() == 1) {
        Rule r;
        r.dim = 1;
        r.points = {v};
        r.weights = {1.0};
        return r;
    }
    if (quad.kind == QuadratureSpec::Kind::TensorGauss) return tensor_rule(box, quad.order, axis, v);
    const std::size_t per_face = std::max<std::size_t>(1, quad.order / box.face_count());
    return random_rule(box, per_face, CounterRng(quad.seed).split(100 + face), axis, v, box.face_measure(face));
}

// Weighted sum and, for random rules, its standard error.
template <class F>
Estimate integrate(const Rule& rule, F&& f) {
    const std::size_t n = rule.weights.size();
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        const double v = f(std::span<const double>(rule.points.data() + p * rule.dim, rule.dim));
        sum += rule.weights[p] * v;
        sum_sq += rule.weights[p] * rule.weights[p] * v * v;
    }
    Estimate e{sum, 0.0};
    if (rule.random && n > 1) {
        // equal weights V/n: Var = V^2 s^2 / n
        const double var = (sum_sq - sum * sum / double(n)) * double(n) / double(n - 1);
        e.std_error = std::sqrt(std::max(0.0, var));
    }
    return e;
}

}  // namespace

Evaluator network_evaluator(const ParallelNetwork& net) {
    auto shared = std::make_shared<const ParallelNetwork>(net);
    auto tape = std::make_shared<Tape>();
    return [shared, tape](std::span<const double> x, std::span<double> grad) {
        loss_primitives(*shared, x, *tape);
        std::copy(tape->gradient().begin(), tape->gradient().end(), grad.begin());
        return tape->value();
    };
}

Evaluator field_evaluator(const AnalyticField& field) {
    return [field](std::span<const double> x, std::span<double> grad) {
        field.gradient(x, grad);
        return field.value(x);
    };
}

Evaluator difference(Evaluator a, Evaluator b) {
    return [a = std::move(a), b = std::move(b)](std::span<const double> x, std::span<double> grad) {
        Vec gb(grad.size());
        const double va = a(x, grad);
        const double vb = b(x, gb);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] -= gb[i];
        return va - vb;
    };
}

Estimate continuous_energy_estimate(const Evaluator& u, const EllipticProblem& problem, const QuadratureSpec& quad) {
    const std::size_t d = problem.dim();
    check_quad(quad, d);
    Vec grad(d);
    auto interior = integrate(interior_rule(problem.box, quad), [&](std::span<const double> x) {
        const double v = u(x, grad);
        double g2 = 0.0;
        for (double g : grad) g2 += g * g;
        return 0.5 * g2 + 0.5 * problem.omega(x) * v * v - problem.rhs(x) * v;
    });
    Estimate total = interior;
    double var = interior.std_error * interior.std_error;
    if (!problem.neumann_zero) {
        for (std::size_t f = 0; f < problem.box.face_count(); ++f) {
            auto b = integrate(face_rule(problem.box, f, quad),
                               [&](std::span<const double> y) { return problem.neumann(y, f) * u(y, grad); });
            total.value -= b.value;
            var += b.std_error * b.std_error;
        }
    }
    total.std_error = std::sqrt(var);
    return total;
}

double continuous_energy(const Evaluator& u, const EllipticProblem& problem, const QuadratureSpec& quad) {
    return continuous_energy_estimate(u, problem, quad).value;
}

Estimate h1_error_estimate(const Evaluator& u, const EllipticProblem& problem, const QuadratureSpec& quad) {
    if (!problem.exact) throw InputError("problem has no exact solution");
    const std::size_t d = problem.dim();
    check_quad(quad, d);
    const AnalyticField& u0 = *problem.exact;
    Vec grad(d), grad0(d);
    auto sq = integrate(interior_rule(problem.box, quad), [&](std::span<const double> x) {
        const double e = u(x, grad) - u0.value(x);
        u0.gradient(x, grad0);
        double s = e * e;
        for (std::size_t i = 0; i < d; ++i) s += (grad[i] - grad0[i]) * (grad[i] - grad0[i]);
        return s;
    });
    const double v = std::sqrt(std::max(0.0, sq.value));
    // delta method for the square root
    return {v, v > 0 ? sq.std_error / (2.0 * v) : 0.0};
}

double h1_error(const Evaluator& u, const EllipticProblem& problem, const QuadratureSpec& quad) {
    return h1_error_estimate(u, problem, quad).value;
}

double h1_norm(const Evaluator& u, std::size_t dim, const Box& box, const QuadratureSpec& quad) {
    check_quad(quad, dim);
    Vec grad(dim);
    auto sq = integrate(interior_rule(box, quad), [&](std::span<const double> x) {
        const double v = u(x, grad);
        double s = v * v;
        for (double g : grad) s += g * g;
        return s;
    });
    return std::sqrt(std::max(0.0, sq.value));
}

// ---------------------------------------------------------------- empirical energy

namespace {

void check_samples(const ParallelNetwork& net, const SampleSet& samples, const EllipticProblem& problem) {
    if (samples.n_interior() == 0 || samples.n_boundary() == 0) throw InputError("sample set is empty");
    if (samples.dim != problem.dim() || net.input_dim() != problem.dim())
        throw InputError("samples, network and problem disagree on the dimension");
}

// In one dimension the boundary is two points; coincident samples are merged with multiplicities.
struct BoundaryPlan {
    std::vector<std::size_t> index;  // representative sample
    Vec multiplicity;
};

BoundaryPlan boundary_plan(const SampleSet& s) {
    BoundaryPlan plan;
    const std::size_t n = s.n_boundary();
    if (s.dim == 1) {
        std::size_t first[2] = {n, n};
        double count[2] = {0, 0};
        for (std::size_t p = 0; p < n; ++p) {
            const std::size_t f = s.faces[p] % 2;
            if (first[f] == n) first[f] = p;
            count[f] += 1.0;
        }
        for (int f = 0; f < 2; ++f)
            if (first[f] < n) {
                plan.index.push_back(first[f]);
                plan.multiplicity.push_back(count[f]);
            }
        return plan;
    }
    plan.index.resize(n);
    for (std::size_t p = 0; p < n; ++p) plan.index[p] = p;
    plan.multiplicity.assign(n, 1.0);
    return plan;
}

}  // namespace

double empirical_energy(const ParallelNetwork& net, const SampleSet& samples, const EllipticProblem& problem,
                        const Exec& exec) {
    check_samples(net, samples, problem);
    const std::size_t n_in = samples.n_interior();
    const std::size_t d = samples.dim;
    Vec partial(chunk_count(n_in, exec), 0.0);
    for_each_chunk(n_in, exec, [&](std::size_t c, std::size_t begin, std::size_t end) {
        BatchTape tape;
        double s = 0.0;
        for (std::size_t b0 = begin; b0 < end; b0 += BatchTape::kBlock) {
            const std::size_t b1 = std::min(end, b0 + BatchTape::kBlock);
            batch_primitives(net, {samples.interior.data() + b0 * d, (b1 - b0) * d}, tape);
            for (std::size_t p = b0; p < b1; ++p) {
                auto x = samples.interior_point(p);
                const double u = tape.values()[p - b0];
                double g2 = 0.0;
                for (std::size_t i = 0; i < d; ++i) g2 += tape.gradient(i)[p - b0] * tape.gradient(i)[p - b0];
                s += 0.5 * g2 + 0.5 * problem.omega(x) * u * u - u * problem.rhs(x);
            }
        }
        partial[c] = s;
    });
    double interior = 0.0;
    for (double v : partial) interior += v;

    double boundary = 0.0;
    if (!problem.neumann_zero) {
        const auto plan = boundary_plan(samples);
        for (std::size_t q = 0; q < plan.index.size(); ++q) {
            const std::size_t p = plan.index[q];
            auto y = samples.boundary_point(p);
            boundary += plan.multiplicity[q] * forward(net, y) * problem.neumann(y, samples.faces[p]);
        }
    }
    return problem.box.volume() / double(n_in) * interior -
           problem.box.boundary_measure() / double(samples.n_boundary()) * boundary;
}

EnergyGradient energy_and_gradient(const ParallelNetwork& net, const SampleSet& samples,
                                   const EllipticProblem& problem, const Exec& exec) {
    check_samples(net, samples, problem);
    const std::size_t n_in = samples.n_interior();
    const std::size_t d = samples.dim;
    const std::size_t m = net.size();
    const double scale_in = problem.box.volume() / double(n_in);
    const double scale_b = problem.box.boundary_measure() / double(samples.n_boundary());
    const auto layout = SlotLayout::make(net.width(), net.depth(), d);

    const std::size_t chunks = chunk_count(n_in, exec);
    std::vector<FlatParams> parts(chunks);
    Vec partial(chunks, 0.0);
    for_each_chunk(n_in, exec, [&](std::size_t c, std::size_t begin, std::size_t end) {
        FlatParams& acc = parts[c];
        acc.inner.assign(m * layout.slot, 0.0);
        acc.outer.assign(m, 0.0);
        BatchTape tape;
        Vec seed_u(BatchTape::kBlock), seed_grad(BatchTape::kBlock * d);
        double s = 0.0;
        for (std::size_t b0 = begin; b0 < end; b0 += BatchTape::kBlock) {
            const std::size_t b1 = std::min(end, b0 + BatchTape::kBlock);
            const std::size_t n = b1 - b0;
            batch_primitives(net, {samples.interior.data() + b0 * d, n * d}, tape);
            for (std::size_t p = 0; p < n; ++p) {
                auto x = samples.interior_point(b0 + p);
                const double u = tape.values()[p];
                const double w = problem.omega(x);
                const double h = problem.rhs(x);
                double g2 = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    const double gi = tape.gradient(i)[p];
                    g2 += gi * gi;
                    seed_grad[i * n + p] = gi;
                }
                s += 0.5 * g2 + 0.5 * w * u * u - u * h;
                seed_u[p] = w * u - h;
            }
            batch_accumulate(tape, {seed_u.data(), n}, {seed_grad.data(), n * d}, scale_in, acc);
        }
        partial[c] = s;
    });

    EnergyGradient out;
    out.gradient.inner.assign(m * layout.slot, 0.0);
    out.gradient.outer.assign(m, 0.0);
    double interior = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) {
        interior += partial[c];
        for (std::size_t i = 0; i < out.gradient.inner.size(); ++i) out.gradient.inner[i] += parts[c].inner[i];
        for (std::size_t k = 0; k < m; ++k) out.gradient.outer[k] += parts[c].outer[k];
    }

    double boundary = 0.0;
    if (!problem.neumann_zero) {
        const auto plan = boundary_plan(samples);
        Tape tape;
        const Vec zero(d, 0.0);
        for (std::size_t q = 0; q < plan.index.size(); ++q) {
            const std::size_t p = plan.index[q];
            auto y = samples.boundary_point(p);
            loss_primitives(net, y, tape);
            const double g = problem.neumann(y, samples.faces[p]);
            boundary += plan.multiplicity[q] * tape.value() * g;
            accumulate_backward(tape, -g, zero, scale_b * plan.multiplicity[q], out.gradient);
        }
    }
    out.energy = scale_in * interior - scale_b * boundary;
    return out;
}

FlatParams energy_gradient(const ParallelNetwork& net, const SampleSet& samples, const EllipticProblem& problem,
                           const Exec& exec) {
    return energy_and_gradient(net, samples, problem, exec).gradient;
}

}  // namespace drm
