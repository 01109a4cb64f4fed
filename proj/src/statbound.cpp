#include "drm/statbound.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "drm/errors.hpp"
#include "drm/rng.hpp"

namespace drm {

void ClassSpec::validate(const std::string& path) const {
    auto at_least_one = [&](std::size_t v, const char* name) {
        if (v < 1) throw InputError(std::string(name) + " must be at least 1", path + "/" + name);
    };
    at_least_one(m, "m");
    at_least_one(W, "W");
    at_least_one(L, "L");
    at_least_one(N_s, "N_s");
    at_least_one(d, "d");
    if (!(M >= 0.0) || !std::isfinite(M)) throw InputError("M must be non-negative and finite", path + "/M");
    if (!(B_theta > 0.0) || !std::isfinite(B_theta))
        throw InputError("B_theta must be positive and finite", path + "/B_theta");
    if (!(xi > 0.0 && xi < 1.0)) throw InputError("xi must lie strictly between 0 and 1", path + "/xi");
    if (!(B0 > 0.0) || !std::isfinite(B0)) throw InputError("B0 must be positive and finite", path + "/B0");
    if (!(volume > 0.0)) throw InputError("volume must be positive", path + "/volume");
    if (!(boundary_measure > 0.0)) throw InputError("boundary_measure must be positive", path + "/boundary_measure");
}

ClassSpec ClassSpec::from_json(const nlohmann::json& doc, const std::string& path) {
    if (!doc.is_object()) throw InputError("class spec must be an object", path.empty() ? "/" : path);
    ClassSpec s;
    auto size_field = [&](const char* key, std::size_t& out) {
        if (!doc.contains(key)) return;
        const auto& v = doc.at(key);
        if (!v.is_number_integer() || v.get<long long>() < 0)
            throw InputError(std::string(key) + " must be a non-negative integer", path + "/" + key);
        out = v.get<std::size_t>();
    };
    auto real_field = [&](const char* key, double& out) {
        if (!doc.contains(key)) return;
        const auto& v = doc.at(key);
        if (!v.is_number()) throw InputError(std::string(key) + " must be a number", path + "/" + key);
        out = v.get<double>();
    };
    size_field("m", s.m);
    size_field("W", s.W);
    size_field("L", s.L);
    size_field("N_s", s.N_s);
    size_field("d", s.d);
    real_field("M", s.M);
    real_field("B_theta", s.B_theta);
    real_field("xi", s.xi);
    real_field("B0", s.B0);
    // unit cube measures unless told otherwise
    s.volume = 1.0;
    s.boundary_measure = 2.0 * static_cast<double>(s.d);
    real_field("volume", s.volume);
    real_field("boundary_measure", s.boundary_measure);
    s.validate(path);
    return s;
}

nlohmann::json ClassSpec::to_json() const {
    return {{"m", m},   {"M", M},   {"W", W},           {"L", L},   {"B_theta", B_theta}, {"N_s", N_s},
            {"xi", xi}, {"B0", B0}, {"volume", volume}, {"d", d},   {"boundary_measure", boundary_measure}};
}

double statistical_bound(const ClassSpec& spec, double constant) {
    spec.validate();
    if (!(constant >= 0.0)) throw InputError("bound constant must be non-negative");
    const double B = spec.B_theta;
    const double scale = constant * spec.M * spec.M * std::pow(B, 2.0 * static_cast<double>(spec.L)) /
                         std::sqrt(static_cast<double>(spec.N_s));
    const double log_cover =
        std::log(B * static_cast<double>(spec.W) * static_cast<double>(spec.L) * static_cast<double>(spec.N_s));
    return scale * (std::sqrt(std::max(0.0, log_cover)) + std::sqrt(std::log(1.0 / spec.xi)));
}

ParallelNetwork sample_class_member(const ClassSpec& spec, CounterRng& rng) {
    const NetShape shape = spec.shape();
    const auto lay = SlotLayout::make(shape.width, shape.depth, shape.input_dim);
    FlatParams p;
    p.inner.assign(shape.m * lay.slot, 0.0);
    for (std::size_t k = 0; k < shape.m; ++k)
        for (std::size_t i = 0; i < lay.used; ++i) p.inner[k * lay.slot + i] = rng.uniform(-spec.B_theta, spec.B_theta);
    // normalized exponentials are uniform on the simplex; random signs spread it over the sphere
    p.outer.resize(shape.m);
    double total = 0.0;
    for (double& c : p.outer) {
        c = -std::log(rng.uniform());
        total += c;
    }
    for (double& c : p.outer) {
        c *= spec.M / total;
        if (rng.next_u64() & 1u) c = -c;
    }
    return unflatten(p, shape);
}

GapEstimate empirical_gap(const EllipticProblem& problem, const ClassSpec& spec, std::size_t N_s, std::size_t trials,
                          std::uint64_t seed, const QuadratureSpec& quad, const Exec& exec) {
    spec.validate();
    if (spec.d != problem.dim()) throw InputError("class input dimension differs from the problem dimension");
    if (N_s == 0) throw InputError("N_s must be at least 1");
    if (trials == 0) throw InputError("need at least one trial");
    const CounterRng root(seed);
    GapEstimate out;
    out.trials = trials;
    out.seed = seed;
    out.running.reserve(trials);
    for (std::size_t t = 0; t < trials; ++t) {
        const CounterRng stream = root.split(t);
        CounterRng nets = stream.split(0);
        const ParallelNetwork u = sample_class_member(spec, nets);
        const SampleSet samples = draw_samples(problem, N_s, N_s, stream.split(1).next_u64());
        const double gap = std::abs(continuous_energy(network_evaluator(u), problem, quad) -
                                    empirical_energy(u, samples, problem, exec));
        out.value = std::max(out.value, gap);
        out.running.push_back(out.value);
    }
    return out;
}

RademacherEstimate empirical_rademacher(std::span<const ScalarField> family, const Box& box, std::size_t N,
                                        std::size_t trials, std::uint64_t seed) {
    if (family.empty()) throw InputError("function family is empty");
    if (N == 0) throw InputError("N must be at least 1");
    if (trials == 0) throw InputError("need at least one trial");
    box.validate();
    const std::size_t dim = box.dim();
    const CounterRng root(seed);
    std::vector<double> values(trials);
    Vec sums(family.size());
    for (std::size_t t = 0; t < trials; ++t) {
        const CounterRng stream = root.split(t);
        const Vec pts = sample_interior(box, N, stream.split(0));
        CounterRng signs = stream.split(1);
        std::fill(sums.begin(), sums.end(), 0.0);
        for (std::size_t k = 0; k < N; ++k) {
            const double sigma = (signs.next_u64() & 1u) ? 1.0 : -1.0;
            const std::span<const double> x(pts.data() + k * dim, dim);
            for (std::size_t f = 0; f < family.size(); ++f) sums[f] += sigma * family[f](x);
        }
        values[t] = *std::max_element(sums.begin(), sums.end()) / static_cast<double>(N);
    }
    RademacherEstimate est;
    est.trials = trials;
    est.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(trials);
    if (trials > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - est.mean) * (v - est.mean);
        est.std_error = std::sqrt(ss / static_cast<double>(trials - 1) / static_cast<double>(trials));
    }
    return est;
}

std::vector<SweepRow> statistical_sweep(const EllipticProblem& problem, const ClassSpec& spec,
                                        std::span<const std::size_t> sizes, std::size_t trials, std::uint64_t seed,
                                        double constant, const QuadratureSpec& quad, const Exec& exec) {
    std::vector<SweepRow> rows;
    for (std::size_t n : sizes) {
        ClassSpec at = spec;
        at.N_s = n;
        SweepRow row;
        row.N_s = n;
        row.gap = empirical_gap(problem, at, n, trials, seed, quad, exec).value;
        row.bound = statistical_bound(at, constant);
        row.trials = trials;
        row.seed = seed;
        rows.push_back(row);
    }
    return rows;
}

double calibrate_bound_constant(std::span<const SweepRow> rows) {
    double c = 1.0;
    for (const SweepRow& r : rows) {
        if (!(r.bound > 0.0)) throw InputError("calibration needs positive bound values");
        c = std::max(c, r.gap / r.bound);
    }
    return c;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
    std::ostringstream os;
    os.precision(17);
    os << "N_s,gap_estimate,bound_value,trials,seed\n";
    for (const SweepRow& r : rows) os << r.N_s << ',' << r.gap << ',' << r.bound << ',' << r.trials << ',' << r.seed << '\n';
    return os.str();
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw InputError("slope fit needs two or more matching points");
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0 && y[i] > 0.0)) throw InputError("slope fit needs positive data");
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw InputError("slope fit needs distinct x values");
    return (n * sxy - sx * sy) / denom;
}

}  // namespace drm
