#include "drm/pgd.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "drm/errors.hpp"
#include "drm/rng.hpp"

namespace drm {

void PGDConfig::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) throw InputError(std::string(name) + " must be positive and finite", std::string("/pgd/") + name);
    };
    positive(B, "B");
    positive(eta, "eta");
    positive(zeta, "zeta");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InputError("lambda must be non-negative and finite", "/pgd/lambda");
    if (eta < 1e-300) throw InputError("eta is too small for a meaningful projection", "/pgd/eta");
    if (zeta < 1e-300) throw InputError("zeta is too small for a meaningful projection", "/pgd/zeta");
}

std::size_t PGDConfig::effective_log_every() const {
    return log_every ? log_every : std::max<std::size_t>(1, T / 1000);
}

double TrainState::l2_slack(double eta) const {
    double s = 0.0;
    for (std::size_t i = 0; i < params.inner.size(); ++i) {
        const double d = params.inner[i] - init_inner[i];
        s += d * d;
    }
    return eta - std::sqrt(s);
}

double TrainState::l1_slack(double zeta) const {
    double s = 0.0;
    for (double c : params.outer) s += std::abs(c);
    return zeta - s;
}

TrainState initialize(const NetShape& shape, double B, std::uint64_t seed) {
    if (shape.m == 0 || shape.width == 0 || shape.depth == 0 || shape.input_dim == 0)
        throw InputError("network shape entries must be at least 1");
    if (!(B > 0.0)) throw InputError("initialization range B must be positive");
    const auto lay = SlotLayout::make(shape.width, shape.depth, shape.input_dim);
    TrainState st;
    st.shape = shape;
    st.params.inner.assign(shape.m * lay.slot, 0.0);
    st.params.outer.assign(shape.m, 0.0);
    CounterRng rng(seed);
    for (std::size_t k = 0; k < shape.m; ++k)
        for (std::size_t i = 0; i < lay.used; ++i) st.params.inner[k * lay.slot + i] = rng.uniform(-B, B);
    st.init_inner = st.params.inner;
    return st;
}

Vec project_l2_ball(std::span<const double> v, std::span<const double> center, double radius) {
    if (v.size() != center.size()) throw InputError("projection center has the wrong length");
    if (!(radius > 0.0)) throw InputError("projection radius must be positive");
    double n2 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) n2 += (v[i] - center[i]) * (v[i] - center[i]);
    Vec out(v.begin(), v.end());
    const double norm = std::sqrt(n2);
    if (norm <= radius) return out;
    const double f = radius / norm;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = center[i] + f * (v[i] - center[i]);
    return out;
}

Vec project_l1_ball(std::span<const double> v, double radius) {
    if (!(radius > 0.0)) throw InputError("projection radius must be positive");
    Vec out(v.begin(), v.end());
    double l1 = 0.0;
    for (double x : v) l1 += std::abs(x);
    if (l1 <= radius) return out;
    Vec mags(v.size());
    std::transform(v.begin(), v.end(), mags.begin(), [](double x) { return std::abs(x); });
    std::sort(mags.begin(), mags.end(), std::greater<>());
    double cum = 0.0, theta = 0.0;
    for (std::size_t j = 0; j < mags.size(); ++j) {
        cum += mags[j];
        const double t = (cum - radius) / double(j + 1);
        if (mags[j] - t > 0.0) theta = t;
        else break;
    }
    for (auto& x : out) {
        const double a = std::abs(x) - theta;
        x = a > 0.0 ? std::copysign(a, x) : 0.0;
    }
    return out;
}

namespace {

void record(TrainState& st, const EllipticProblem& problem, const PGDConfig& config, double grad_norm) {
    HistoryRow row;
    row.iter = st.iteration;
    row.energy = st.current->energy;
    row.grad_norm = grad_norm;
    row.l2_slack = st.l2_slack(config.eta);
    row.l1_slack = st.l1_slack(config.zeta);
    if (config.track_h1 && problem.exact) row.h1_error = h1_error(network_evaluator(st.network()), problem, config.quad);
    st.history.push_back(row);
}

void refresh(TrainState& st, const EllipticProblem& problem, const SampleSet& samples, const PGDConfig& config) {
    st.current = energy_and_gradient(st.network(), samples, problem, config.exec);
}

}  // namespace

void pgd_step(TrainState& st, const EllipticProblem& problem, const SampleSet& samples, const PGDConfig& config) {
    if (!st.current) refresh(st, problem, samples, config);
    const FlatParams& g = st.current->gradient;
    double g2 = 0.0;
    for (std::size_t i = 0; i < g.inner.size(); ++i) {
        if (!std::isfinite(g.inner[i]))
            throw NumericAbort("non-finite gradient at inner parameter " + std::to_string(i), static_cast<long long>(i));
        g2 += g.inner[i] * g.inner[i];
    }
    for (std::size_t k = 0; k < g.outer.size(); ++k) {
        if (!std::isfinite(g.outer[k]))
            throw NumericAbort("non-finite gradient at outer coefficient " + std::to_string(k),
                               static_cast<long long>(g.inner.size() + k));
        g2 += g.outer[k] * g.outer[k];
    }

    const auto lay = SlotLayout::make(st.shape.width, st.shape.depth, st.shape.input_dim);
    Vec inner(st.params.inner.size());
    for (std::size_t i = 0; i < inner.size(); ++i) inner[i] = st.params.inner[i] - config.lambda * g.inner[i];
    // Padding slots are not parameters; keep them pinned to the snapshot.
    for (std::size_t k = 0; k < st.shape.m; ++k)
        for (std::size_t i = lay.used; i < lay.slot; ++i) inner[k * lay.slot + i] = st.init_inner[k * lay.slot + i];
    Vec outer(st.params.outer.size());
    for (std::size_t k = 0; k < outer.size(); ++k) outer[k] = st.params.outer[k] - config.lambda * g.outer[k];

    st.params.inner = project_l2_ball(inner, st.init_inner, config.eta);
    st.params.outer = project_l1_ball(outer, config.zeta);
    ++st.iteration;

    refresh(st, problem, samples, config);
    if (!std::isfinite(st.current->energy)) throw NumericAbort("energy became non-finite at iteration " + std::to_string(st.iteration));
    if (st.iteration % config.effective_log_every() == 0 || st.iteration == config.T)
        record(st, problem, config, std::sqrt(g2));
}

TrainState train(const EllipticProblem& problem, const NetShape& shape, const PGDConfig& config,
                 const SampleSet& samples, const ProgressFn& progress) {
    config.validate();
    if (shape.input_dim != problem.dim()) throw InputError("network input dimension differs from the problem");
    TrainState st = initialize(shape, config.B, config.seed);
    refresh(st, problem, samples, config);
    double g2 = 0.0;
    for (double v : st.current->gradient.inner) g2 += v * v;
    for (double v : st.current->gradient.outer) g2 += v * v;
    record(st, problem, config, std::sqrt(g2));
    for (std::size_t t = 0; t < config.T; ++t) {
        pgd_step(st, problem, samples, config);
        if (progress) progress(st);
    }
    return st;
}

std::string history_csv(const std::vector<HistoryRow>& history) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "iter,energy,grad_norm,l2_slack,l1_slack,h1_error\n";
    for (const auto& r : history) {
        os << r.iter << ',' << r.energy << ',' << r.grad_norm << ',' << r.l2_slack << ',' << r.l1_slack << ',';
        if (r.h1_error) os << *r.h1_error;
        os << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------- schedule

namespace {

std::size_t ceil_log2(std::size_t v) {
    std::size_t k = 0;
    while ((std::size_t{1} << k) < v) ++k;
    return k;
}

// C * eps^exponent, optionally rounded up.
ScheduleValue power_value(double C, double epsilon, double exponent, bool round_up, double limit) {
    ScheduleValue v;
    v.log10 = std::log10(C) + exponent * std::log10(epsilon);
    v.value = v.log10 > 308.0 ? INFINITY : C * std::pow(epsilon, exponent);
    if (round_up && std::isfinite(v.value)) v.value = std::ceil(v.value);
    v.feasible = std::isfinite(v.value) && v.log10 <= std::log10(limit);
    return v;
}

nlohmann::json value_json(const ScheduleValue& v) {
    nlohmann::json j;
    if (std::isfinite(v.value)) j["value"] = v.value;
    else j["value"] = nullptr;
    j["log10"] = v.log10;
    j["feasible"] = v.feasible;
    return j;
}

}  // namespace

ScheduleParams schedule(double epsilon, std::size_t d, double n, double mu, double beta,
                        const ScheduleConstants& constants) {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw InputError("epsilon must lie in (0, 1)", "/epsilon");
    if (d < 1) throw InputError("d must be at least 1", "/d");
    if (!(n >= 2.0)) throw InputError("n must be at least 2", "/n");
    if (!(mu > 0.0 && mu < 1.0)) throw InputError("mu must lie in (0, 1)", "/mu");
    if (!(beta > 0.0)) throw InputError("beta must be positive", "/beta");
    const double gap = n - mu - 1.0;
    if (!(gap > 0.0)) throw InputError("n - mu - 1 must be positive", "/n");
    if (!(constants.C > 0.0) || !(constants.C0 > 0.0) || !(constants.C0_prime > 0.0))
        throw InputError("schedule constants must be positive", "/constants");

    ScheduleParams p;
    p.epsilon = epsilon;
    p.d = d;
    p.n = n;
    p.mu = mu;
    p.beta = beta;
    p.constants = constants;
    const double dd = static_cast<double>(d);
    const double lg = std::log(dd + 1.0);
    p.beta0 = std::max(beta, 2.0 + 2.0 * dd / gap);
    p.C1 = constants.C0 * dd * dd * dd * lg * lg / gap + 11.0 * p.beta0 * lg + 33.0 * p.beta0 + 3.0 * beta;
    p.C2 = constants.C0_prime * dd * dd * dd * lg * lg / gap + 15.0 * p.beta0 * lg + 45.0 * p.beta0 + 3.0 * beta;
    p.C3 = 4.0 * p.beta0 * lg + 6.0 * dd / gap + 12.0 * p.beta0 + 2.0;
    const std::size_t k = ceil_log2(d + 1);
    p.W = std::size_t{1} << (k + 1);
    p.L = k + 2;

    const double C = constants.C;
    p.m = power_value(C, epsilon, -p.C1, true, 1e8);
    p.B = power_value(C, epsilon, -2.0 - 2.0 * dd / gap, false, 1e300);
    p.eta = power_value(1.0, epsilon, -beta, false, 1e300);
    p.zeta = power_value(C, epsilon, -3.0 * dd / (2.0 * gap), false, 1e300);
    p.T = power_value(C, epsilon, -p.C2, false, 1e9);
    p.lambda = power_value(C, epsilon, p.C2, false, 1e300);
    p.lambda.feasible = p.lambda.log10 >= -300.0 && p.lambda.value > 0.0;
    p.N_s = power_value(C, epsilon, -p.C3, true, 1e8);
    return p;
}

bool ScheduleParams::feasible() const {
    for (const auto* v : {&m, &B, &eta, &zeta, &T, &lambda, &N_s})
        if (!v->feasible) return false;
    return true;
}

nlohmann::json ScheduleParams::to_json() const {
    nlohmann::json j;
    j["epsilon"] = epsilon;
    j["d"] = d;
    j["n"] = n;
    j["mu"] = mu;
    j["beta"] = beta;
    j["beta0"] = beta0;
    j["C1"] = C1;
    j["C2"] = C2;
    j["C3"] = C3;
    j["W"] = W;
    j["L"] = L;
    j["m"] = value_json(m);
    j["B"] = value_json(B);
    j["eta"] = value_json(eta);
    j["zeta"] = value_json(zeta);
    j["T"] = value_json(T);
    j["lambda"] = value_json(lambda);
    j["N_s"] = value_json(N_s);
    j["constants"] = {{"C", constants.C}, {"C0", constants.C0}, {"C0_prime", constants.C0_prime}};
    j["log"] = "natural";
    j["feasible"] = feasible();
    return j;
}

double clamp_step(double lambda_raw) { return std::clamp(lambda_raw, 1e-12, 1.0); }

double StepRule::curvature_branch() const {
    const double log_denominator =
        std::log(C2) + std::log(m) + 2.0 * std::log(M) + 4.0 * L * std::log(B + eta);
    return std::exp(std::log(2.0) - log_denominator);
}

double StepRule::step() const { return clamp_step(std::min(iteration_branch(), curvature_branch())); }

}  // namespace drm
