#include "drm/approxnet.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <limits>
#include <string>
#include <thread>

#include "drm/errors.hpp"
#include "drm/exec.hpp"
#include "drm/rng.hpp"
#include "kernels.hpp"

namespace drm {

namespace {

double rho(double z) { return kernel::activation(z); }

double second_derivative_at(double x0) {
    const double r2 = activation_derivatives(x0, 2)[2];
    if (!(std::abs(r2) > 1e-8))
        throw InputError("tanh'' vanishes at the anchor x0 = " + std::to_string(x0) + "; pick x0 away from 0");
    return r2;
}

// Affine form w . a + b over the units of some layer (or over the input).
struct Affine {
    Vec w;
    double b = 0.0;

    bool constant() const {
        return std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; });
    }
};

struct BlockScale {
    double h = 0.0;   // finite-difference step
    double x0 = 0.0;
    double K = 0.0;   // 1 / (4 h^2 rho''(x0))
};

BlockScale block_scale(double epsilon, double C_cal, double x0) {
    if (!(C_cal > 0.0) || !std::isfinite(C_cal)) throw InputError("calibration constant must be positive");
    const double r2 = second_derivative_at(x0);
    BlockScale s;
    s.h = epsilon / C_cal;
    s.x0 = x0;
    s.K = 1.0 / (4.0 * s.h * s.h * r2);
    return s;
}

// Pairs leaves (2j, 2j+1) into product blocks occupying rows 4j..4j+3 of a new
// layer with `width` rows over `src_units` inputs. Returns leaves over the new layer.
// pq = ((p + q)^2 - (p - q)^2) / 4 with t^2 ~ [rho(x0 + h t) - 2 rho(x0) + rho(x0 - h t)] / (h^2 rho'').
std::vector<Affine> product_level(const std::vector<Affine>& leaves, std::size_t src_units, std::size_t width,
                                  const BlockScale& sc, Layer& layer) {
    const std::size_t blocks = leaves.size() / 2;
    if (4 * blocks > width) throw InputError("product tree does not fit the requested width");
    layer.weights = Matrix(width, src_units);
    layer.bias.assign(width, 0.0);
    std::vector<Affine> out(blocks);
    for (std::size_t j = 0; j < blocks; ++j) {
        const Affine& p = leaves[2 * j];
        const Affine& q = leaves[2 * j + 1];
        Affine& r = out[j];
        r.w.assign(width, 0.0);
        if (p.constant() && q.constant()) {
            r.b = p.b * q.b;  // folded exactly, rows stay zero
            continue;
        }
        for (std::size_t i = 0; i < src_units; ++i) {
            const double sw = sc.h * (p.w[i] + q.w[i]);
            const double dw = sc.h * (p.w[i] - q.w[i]);
            layer.weights(4 * j, i) = sw;
            layer.weights(4 * j + 1, i) = -sw;
            layer.weights(4 * j + 2, i) = dw;
            layer.weights(4 * j + 3, i) = -dw;
        }
        const double sum_b = sc.h * (p.b + q.b);
        const double diff_b = sc.h * (p.b - q.b);
        layer.bias[4 * j] = sc.x0 + sum_b;
        layer.bias[4 * j + 1] = sc.x0 - sum_b;
        layer.bias[4 * j + 2] = sc.x0 + diff_b;
        layer.bias[4 * j + 3] = sc.x0 - diff_b;
        // The anchor terms of the two central differences cancel.
        r.w[4 * j] = sc.K;
        r.w[4 * j + 1] = sc.K;
        r.w[4 * j + 2] = -sc.K;
        r.w[4 * j + 3] = -sc.K;
    }
    return out;
}

Layer output_layer(const Affine& leaf) {
    Layer out;
    out.weights = Matrix(1, leaf.w.size());
    std::copy(leaf.w.begin(), leaf.w.end(), out.weights.data.begin());
    out.bias = {leaf.b};
    return out;
}

// Runs `levels` product levels on `leaves` (padded with constant 1 to 2^levels).
void product_tree(std::vector<Affine> leaves, std::size_t src_units, std::size_t levels, std::size_t width,
                  const BlockScale& sc, SubNetwork& net) {
    const std::size_t slots = std::size_t{1} << levels;
    if (leaves.size() > slots) throw InputError("too many leaves for the product tree depth");
    while (leaves.size() < slots) leaves.push_back(Affine{Vec(src_units, 0.0), 1.0});
    std::size_t units = src_units;
    for (std::size_t l = 0; l < levels; ++l) {
        Layer layer;
        leaves = product_level(leaves, units, width, sc, layer);
        net.layers.push_back(std::move(layer));
        units = width;
    }
    net.layers.push_back(output_layer(leaves.front()));
}

void check_epsilon(double epsilon) {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw InputError("epsilon must lie in (0, 1)");
}

Box unit_or(const Box& box, std::size_t dim) { return box.dim() == 0 ? Box::unit(dim) : box; }

std::size_t hardware_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

// Decodes linear index `idx` of a res^d tensor grid on `box`.
void grid_point(std::size_t idx, std::size_t res, const Box& box, std::span<double> x) {
    for (std::size_t i = x.size(); i-- > 0;) {
        const std::size_t j = idx % res;
        idx /= res;
        const double t = static_cast<double>(j) / static_cast<double>(res - 1);
        x[i] = box.lo[i] + t * box.side(i);
    }
}

double pointwise_error(double fv, std::span<const double> fg, double gv, std::span<const double> gg, int k) {
    double e = std::abs(fv - gv);
    if (k == 1)
        for (std::size_t i = 0; i < fg.size(); ++i) e = std::max(e, std::abs(fg[i] - gg[i]));
    return std::isnan(e) ? std::numeric_limits<double>::infinity() : e;
}

void check_measure_args(int k, std::size_t resolution) {
    if (k != 0 && k != 1) throw InputError("Sobolev order must be 0 or 1");
    if (resolution < 2) throw InputError("grid resolution must be at least 2 per axis");
}

double grid_count(std::size_t res, std::size_t dim) { return std::pow(static_cast<double>(res), static_cast<double>(dim)); }

double binomial(unsigned n, unsigned k) {
    double r = 1.0;
    for (unsigned i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
    return r;
}

double factorial(unsigned n) {
    double r = 1.0;
    for (unsigned i = 2; i <= n; ++i) r *= static_cast<double>(i);
    return r;
}

unsigned total_degree(const MultiIndex& a) {
    unsigned t = 0;
    for (unsigned v : a) t += v;
    return t;
}

}  // namespace

// ---------------------------------------------------------------- builders

SubNetwork build_square_net(double epsilon, double x0, double C_cal) {
    check_epsilon(epsilon);
    const BlockScale sc = block_scale(epsilon, C_cal, x0);
    // x^2 ~ [rho(x0 + h x) - 2 rho(x0) + rho(x0 - h x)] / (h^2 rho'').
    const double scale = 4.0 * sc.K;
    SubNetwork net;
    Layer hidden;
    hidden.weights = Matrix(2, 1);
    hidden.weights(0, 0) = sc.h;
    hidden.weights(1, 0) = -sc.h;
    hidden.bias = {x0, x0};
    Layer out;
    out.weights = Matrix(1, 2);
    out.weights(0, 0) = scale;
    out.weights(0, 1) = scale;
    // Built from the same product as the unit terms, so everything cancels exactly at x = 0.
    out.bias = {-2.0 * (scale * rho(x0))};
    net.layers = {std::move(hidden), std::move(out)};
    return net;
}

SubNetwork build_product_net(double epsilon, double a, double b, double C_cal, double x0) {
    if (!(a < b)) throw InputError("product interval needs a < b");
    const double len = b - a;
    if (!(epsilon > 0.0) || !(epsilon * len * len < 1.0))
        throw InputError("product net needs 0 < epsilon < (b - a)^-2");
    const BlockScale sc = block_scale(epsilon, C_cal, x0);
    // Leaves are the rescaled coordinates (x - a) / (b - a).
    std::vector<Affine> leaves{{{1.0 / len, 0.0}, -a / len}, {{0.0, 1.0 / len}, -a / len}};
    SubNetwork net;
    Layer layer;
    Affine prod = product_level(leaves, 2, 4, sc, layer).front();
    // xy = a^2 + a (b - a)(x^ + y^) + (b - a)^2 x^ y^; the sum x^ + y^ is a
    // central first difference of units 0 and 1.
    const double lin = a * len / (2.0 * activation_derivatives(x0, 1)[1] * sc.h);
    for (double& w : prod.w) w *= len * len;
    prod.w[0] += lin;
    prod.w[1] -= lin;
    prod.b = prod.b * len * len + a * a;
    net.layers.push_back(std::move(layer));
    net.layers.push_back(output_layer(prod));
    return net;
}

std::size_t ceil_log2(std::size_t v) {
    if (v == 0) throw InputError("ceil_log2 of zero");
    std::size_t k = 0;
    while ((std::size_t{1} << k) < v) ++k;
    return k;
}

SubNetwork build_monomial_net(double epsilon, std::size_t d, double C_cal, double x0) {
    if (d < 2) throw InputError("monomial net needs d >= 2");
    check_epsilon(epsilon);
    const BlockScale sc = block_scale(epsilon, C_cal, x0);
    const std::size_t levels = ceil_log2(d);
    const std::size_t width = std::size_t{1} << (levels + 1);
    std::vector<Affine> leaves;
    for (std::size_t i = 0; i < d; ++i) {
        Affine leaf{Vec(d, 0.0), 0.0};
        leaf.w[i] = 1.0;
        leaves.push_back(std::move(leaf));
    }
    SubNetwork net;
    product_tree(std::move(leaves), d, levels, width, sc, net);
    return net;
}

// ---------------------------------------------------------------- bumps

void BumpSpec::validate() const {
    if (N == 0) throw InputError("bump grid needs N >= 1");
    if (!(s >= 1.0) || !std::isfinite(s)) throw InputError("bump sharpness s must be >= 1");
    for (unsigned m : m_index)
        if (m > N) throw InputError("bump index " + std::to_string(m) + " outside 0.." + std::to_string(N));
}

double bump_1d(double s, double y) { return 0.5 * (std::tanh(s * (y + 1.5)) - std::tanh(s * (y - 1.5))); }

double bump_1d_derivative(double s, double y) {
    const double tp = std::tanh(s * (y + 1.5));
    const double tm = std::tanh(s * (y - 1.5));
    return 0.5 * s * ((1.0 - tp * tp) - (1.0 - tm * tm));
}

double bump_value(const BumpSpec& spec, std::span<const double> x) {
    double v = 1.0;
    const double scale = 3.0 * static_cast<double>(spec.N);
    for (std::size_t l = 0; l < spec.m_index.size(); ++l)
        v *= bump_1d(spec.s, scale * x[l] - 3.0 * spec.m_index[l]);
    return v;
}

double bump_value(const BumpSpec& spec, std::span<const double> x, std::span<double> grad) {
    const std::size_t d = spec.m_index.size();
    const double scale = 3.0 * static_cast<double>(spec.N);
    Vec f(d), df(d);
    for (std::size_t l = 0; l < d; ++l) {
        const double y = scale * x[l] - 3.0 * spec.m_index[l];
        f[l] = bump_1d(spec.s, y);
        df[l] = scale * bump_1d_derivative(spec.s, y);
    }
    double v = 1.0;
    for (double fl : f) v *= fl;
    for (std::size_t i = 0; i < d; ++i) {
        double g = df[i];
        for (std::size_t l = 0; l < d; ++l)
            if (l != i) g *= f[l];
        grad[i] = g;
    }
    return v;
}

Layer build_bump_first_layer(const BumpSpec& spec) {
    spec.validate();
    const std::size_t d = spec.m_index.size();
    Layer layer;
    layer.weights = Matrix(2 * d, d);
    layer.bias.assign(2 * d, 0.0);
    const double w = 3.0 * static_cast<double>(spec.N) * spec.s;
    for (std::size_t l = 0; l < d; ++l) {
        const double centre = -3.0 * spec.m_index[l] * spec.s;
        layer.weights(2 * l, l) = w;
        layer.weights(2 * l + 1, l) = w;
        layer.bias[2 * l] = centre + 1.5 * spec.s;
        layer.bias[2 * l + 1] = centre - 1.5 * spec.s;
    }
    return layer;
}

// ---------------------------------------------------------------- Taylor patches

std::vector<MultiIndex> multi_indices(std::size_t d, std::size_t degree) {
    std::vector<MultiIndex> out;
    MultiIndex cur(d, 0);
    // Fill coordinates left to right, spending `left` of the total degree.
    auto fill = [&](auto&& self, std::size_t i, unsigned left) -> void {
        if (i + 1 == d) {
            cur[i] = left;
            out.push_back(cur);
            return;
        }
        for (unsigned v = left + 1; v-- > 0;) {
            cur[i] = v;
            self(self, i + 1, left - v);
        }
    };
    if (d == 0) return out;
    for (unsigned t = 0; t <= degree; ++t) fill(fill, 0, t);
    return out;
}

double TaylorPatch::value(std::span<const double> x) const {
    double v = 0.0;
    for (std::size_t j = 0; j < alphas.size(); ++j) {
        double term = coefficients[j];
        for (std::size_t i = 0; i < alphas[j].size(); ++i)
            for (unsigned p = 0; p < alphas[j][i]; ++p) term *= x[i];
        v += term;
    }
    return v;
}

void TaylorPatch::gradient(std::span<const double> x, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t j = 0; j < alphas.size(); ++j) {
        const MultiIndex& a = alphas[j];
        for (std::size_t c = 0; c < a.size(); ++c) {
            if (a[c] == 0) continue;
            double term = coefficients[j] * a[c];
            for (std::size_t i = 0; i < a.size(); ++i) {
                const unsigned p = i == c ? a[i] - 1 : a[i];
                for (unsigned q = 0; q < p; ++q) term *= x[i];
            }
            out[c] += term;
        }
    }
}

DerivativeOracle analytic_derivatives(const AnalyticField& f) {
    return [f](std::span<const double> x, const MultiIndex& alpha) { return f.derivative(x, alpha); };
}

DerivativeOracle finite_difference_derivatives(ScalarField f, double base_step) {
    if (!(base_step > 0.0)) throw InputError("finite-difference step must be positive");
    return [f = std::move(f), base_step](std::span<const double> x, const MultiIndex& alpha) {
        const unsigned order = total_degree(alpha);
        if (order == 0) return f(x);
        // Balances truncation h^2 against rounding eps / h^order.
        const double h = std::max(base_step, std::pow(std::numeric_limits<double>::epsilon(), 1.0 / (order + 2)));
        Vec pt(x.begin(), x.end());
        MultiIndex a = alpha;
        auto diff = [&](auto&& self) -> double {
            std::size_t i = 0;
            while (i < a.size() && a[i] == 0) ++i;
            if (i == a.size()) return f(pt);
            --a[i];
            const double keep = pt[i];
            pt[i] = keep + h;
            const double up = self(self);
            pt[i] = keep - h;
            const double down = self(self);
            pt[i] = keep;
            ++a[i];
            return (up - down) / (2.0 * h);
        };
        return diff(diff);
    };
}

std::vector<TaylorPatch> taylor_coefficients(const DerivativeOracle& f, std::size_t N, std::size_t n, std::size_t d) {
    if (N == 0 || n == 0 || d == 0) throw InputError("Taylor patches need N, n, d >= 1");
    const std::vector<MultiIndex> alphas = multi_indices(d, n - 1);
    std::size_t nodes = 1;
    for (std::size_t i = 0; i < d; ++i) nodes *= N + 1;
    std::vector<TaylorPatch> patches;
    patches.reserve(nodes);
    Vec z(d), deriv(alphas.size());
    for (std::size_t idx = 0; idx < nodes; ++idx) {
        TaylorPatch patch;
        patch.m_index.assign(d, 0);
        std::size_t rest = idx;
        for (std::size_t i = d; i-- > 0;) {
            patch.m_index[i] = static_cast<unsigned>(rest % (N + 1));
            rest /= N + 1;
            z[i] = static_cast<double>(patch.m_index[i]) / static_cast<double>(N);
        }
        for (std::size_t j = 0; j < alphas.size(); ++j) {
            deriv[j] = f(z, alphas[j]);
            if (!std::isfinite(deriv[j]))
                throw InputError("non-finite derivative sample at node " + std::to_string(idx));
        }
        // sum_beta D^beta f(z) / beta! (x - z)^beta, expanded in powers of x.
        patch.coefficients.assign(alphas.size(), 0.0);
        for (std::size_t ja = 0; ja < alphas.size(); ++ja) {
            const MultiIndex& a = alphas[ja];
            double c = 0.0;
            for (std::size_t jb = 0; jb < alphas.size(); ++jb) {
                const MultiIndex& b = alphas[jb];
                double term = deriv[jb];
                bool dominates = true;
                for (std::size_t i = 0; i < d && dominates; ++i) {
                    if (b[i] < a[i]) {
                        dominates = false;
                        break;
                    }
                    term *= binomial(b[i], a[i]) * std::pow(-z[i], static_cast<double>(b[i] - a[i])) / factorial(b[i]);
                }
                if (dominates) c += term;
            }
            patch.coefficients[ja] = c;
        }
        patch.alphas = alphas;
        patches.push_back(std::move(patch));
    }
    return patches;
}

double localized_taylor_value(const std::vector<TaylorPatch>& patches, std::size_t N, double s,
                              std::span<const double> x, std::span<double> grad) {
    const std::size_t d = x.size();
    std::fill(grad.begin(), grad.end(), 0.0);
    Vec gb(d), gp(d);
    double v = 0.0;
    for (const TaylorPatch& patch : patches) {
        const BumpSpec spec{N, s, patch.m_index};
        const double b = bump_value(spec, x, gb);
        const double p = patch.value(x);
        patch.gradient(x, gp);
        v += b * p;
        for (std::size_t i = 0; i < d; ++i) grad[i] += gb[i] * p + b * gp[i];
    }
    return v;
}

// ---------------------------------------------------------------- localized sub-networks

SubNetwork build_localized_monomial_net(const BumpSpec& bump, const MultiIndex& alpha, double epsilon, double C_cal,
                                        std::size_t tree_levels, std::size_t width, double x0) {
    bump.validate();
    const std::size_t d = bump.m_index.size();
    if (alpha.size() != d) throw InputError("multi-index dimension differs from the bump dimension");
    if (!(epsilon > 0.0)) throw InputError("epsilon must be positive");
    const BlockScale sc = block_scale(epsilon, C_cal, x0);

    Layer first = build_bump_first_layer(bump);
    std::vector<std::size_t> coords;
    for (std::size_t i = 0; i < d; ++i)
        if (alpha[i] > 0) coords.push_back(i);
    if (2 * d + coords.size() > width) throw InputError("localized net does not fit the requested width");

    // Layer 0: 2d bump units, then one near-linear unit rho(h x_i) per coordinate in alpha.
    const double id_step = sc.h;
    Layer layer0;
    layer0.weights = Matrix(width, d);
    layer0.bias.assign(width, 0.0);
    for (std::size_t r = 0; r < 2 * d; ++r) {
        for (std::size_t c = 0; c < d; ++c) layer0.weights(r, c) = first.weights(r, c);
        layer0.bias[r] = first.bias[r];
    }
    for (std::size_t j = 0; j < coords.size(); ++j) layer0.weights(2 * d + j, coords[j]) = id_step;

    std::vector<Affine> leaves;
    for (std::size_t l = 0; l < d; ++l) {
        Affine psi{Vec(width, 0.0), 0.0};
        psi.w[2 * l] = 0.5;
        psi.w[2 * l + 1] = -0.5;
        leaves.push_back(std::move(psi));
    }
    for (std::size_t j = 0; j < coords.size(); ++j) {
        for (unsigned p = 0; p < alpha[coords[j]]; ++p) {
            Affine xi{Vec(width, 0.0), 0.0};
            xi.w[2 * d + j] = 1.0 / id_step;
            leaves.push_back(std::move(xi));
        }
    }
    SubNetwork net;
    net.layers.push_back(std::move(layer0));
    product_tree(std::move(leaves), width, tree_levels, width, sc, net);
    return net;
}

// ---------------------------------------------------------------- measurement

double measure_sobolev_error(const Evaluator& f, const Evaluator& g, std::size_t dim, int k, std::size_t resolution,
                             const Box& box_in) {
    check_measure_args(k, resolution);
    const Box box = unit_or(box_in, dim);
    const double total = grid_count(resolution, dim);
    if (total > 1e9) throw InputError("measurement grid too large");
    Vec x(dim), fg(dim), gg(dim);
    double worst = 0.0;
    for (std::size_t idx = 0; idx < static_cast<std::size_t>(total); ++idx) {
        grid_point(idx, resolution, box, x);
        const double fv = f(x, fg);
        const double gv = g(x, gg);
        worst = std::max(worst, pointwise_error(fv, fg, gv, gg, k));
    }
    return worst;
}

double measure_sobolev_error(const AnalyticField& f, const ParallelNetwork& net, int k, std::size_t resolution,
                             const Box& box_in) {
    check_measure_args(k, resolution);
    const std::size_t dim = net.input_dim();
    if (f.dim() != dim) throw InputError("field and network dimensions differ");
    const Box box = unit_or(box_in, dim);
    const double total_d = grid_count(resolution, dim);
    if (total_d > 1e9) throw InputError("measurement grid too large");
    const auto total = static_cast<std::size_t>(total_d);
    const Exec exec{static_cast<int>(hardware_threads()), 512};
    std::vector<double> worst(chunk_count(total, exec), 0.0);
    for_each_chunk(total, exec, [&](std::size_t c, std::size_t begin, std::size_t end) {
        Tape tape;
        Vec x(dim), fg(dim);
        double w = 0.0;
        for (std::size_t idx = begin; idx < end; ++idx) {
            grid_point(idx, resolution, box, x);
            loss_primitives(net, x, tape);
            f.gradient(x, fg);
            w = std::max(w, pointwise_error(f.value(x), fg, tape.value(), tape.gradient(), k));
        }
        worst[c] = w;
    });
    return *std::max_element(worst.begin(), worst.end());
}

double measure_sobolev_error(const AnalyticField& f, const SubNetwork& net, int k, std::size_t resolution,
                             const Box& box) {
    ParallelNetwork wrap;
    wrap.subnets = {net};
    wrap.coefficients = {1.0};
    return measure_sobolev_error(f, wrap, k, resolution, box);
}

double measure_sobolev_error_random(const Evaluator& f, const Evaluator& g, std::size_t dim, int k, std::size_t count,
                                    std::uint64_t seed, const Box& box_in) {
    check_measure_args(k, 2);
    const Box box = unit_or(box_in, dim);
    CounterRng rng(seed);
    Vec x(dim), fg(dim), gg(dim);
    double worst = 0.0;
    for (std::size_t p = 0; p < count; ++p) {
        for (std::size_t i = 0; i < dim; ++i) x[i] = rng.uniform(box.lo[i], box.hi[i]);
        const double fv = f(x, fg);
        const double gv = g(x, gg);
        worst = std::max(worst, pointwise_error(fv, fg, gv, gg, k));
    }
    return worst;
}

// ---------------------------------------------------------------- calibration

Calibration calibrate_constant(const std::function<double(double)>& error_at, double target, double lo, double hi,
                               std::size_t bisections) {
    if (!(lo > 0.0 && lo <= hi)) throw InputError("calibration range must satisfy 0 < lo <= hi");
    if (!(target > 0.0)) throw InputError("calibration target must be positive");
    Calibration cal;
    cal.target = target;
    double best_c = lo;
    double best_e = std::numeric_limits<double>::infinity();
    double failed = 0.0;  // largest constant known to miss
    double ok = 0.0;
    double ok_e = 0.0;
    for (double C = lo; C <= hi; C *= 4.0) {
        const double e = error_at(C);
        ++cal.evaluations;
        if (e < best_e) {
            best_e = e;
            best_c = C;
        }
        if (e <= target) {
            ok = C;
            ok_e = e;
            break;
        }
        failed = C;
        // Past the rounding floor the error only grows.
        if (e > 16.0 * best_e) break;
    }
    if (ok == 0.0) {
        cal.constant = best_c;
        cal.measured_error = best_e;
        return cal;
    }
    if (failed > 0.0) {
        for (std::size_t it = 0; it < bisections; ++it) {
            const double mid = std::sqrt(failed * ok);
            const double e = error_at(mid);
            ++cal.evaluations;
            if (e <= target) {
                ok = mid;
                ok_e = e;
            } else {
                failed = mid;
            }
        }
    }
    cal.constant = ok;
    cal.measured_error = ok_e;
    cal.met = true;
    return cal;
}

Calibration calibrate_square(double epsilon, double x0, std::size_t resolution) {
    const AnalyticField sq = AnalyticField::polynomial(1, {{1.0, {2}}});
    return calibrate_constant(
        [&](double C) { return measure_sobolev_error(sq, build_square_net(epsilon, x0, C), 1, resolution); }, epsilon);
}

Calibration calibrate_product(double epsilon, double a, double b, double x0, std::size_t resolution) {
    const AnalyticField xy = AnalyticField::polynomial(2, {{1.0, {1, 1}}});
    const Box box{{a, a}, {b, b}};
    const double target = (b - a) * (b - a) * epsilon;
    return calibrate_constant(
        [&](double C) { return measure_sobolev_error(xy, build_product_net(epsilon, a, b, C, x0), 1, resolution, box); },
        target);
}

Calibration calibrate_monomial(double epsilon, std::size_t d, double target, double x0, std::size_t resolution) {
    const AnalyticField prod = AnalyticField::polynomial(d, {{1.0, std::vector<unsigned>(d, 1)}});
    return calibrate_constant(
        [&](double C) { return measure_sobolev_error(prod, build_monomial_net(epsilon, d, C, x0), 1, resolution); },
        target);
}

// ---------------------------------------------------------------- assembly

namespace {

std::size_t default_resolution(std::size_t d) {
    switch (d) {
        case 1: return 4001;
        case 2: return 101;
        case 3: return 21;
        default: return 9;
    }
}

double subnet_count(std::size_t N, std::size_t d, std::size_t alphas) {
    return std::pow(static_cast<double>(N + 1), static_cast<double>(d)) * static_cast<double>(alphas);
}

}  // namespace

Approximant assemble_approximant(const AnalyticField& f, double epsilon, std::size_t n,
                                 const AssembleOptions& options) {
    const std::size_t d = f.dim();
    if (d == 0) throw InputError("target field has dimension 0");
    if (!(epsilon > 0.0)) throw InputError("epsilon must be positive");
    if (n == 0) throw InputError("Taylor order n must be >= 1");
    if (options.k > 1) throw InputError("only Sobolev orders 0 and 1 are measured");
    if (!(options.mu >= 0.0 && options.mu < 1.0)) throw InputError("mu must lie in [0, 1)");
    if (!(options.C_grid > 0.0)) throw InputError("grid constant must be positive");
    const double k = static_cast<double>(options.k);
    const double rate = static_cast<double>(n) - k - options.mu * k;
    if (!(rate > 0.0)) throw InputError("n - k - mu k must be positive for the grid rule");

    const std::vector<MultiIndex> alphas = multi_indices(d, n - 1);
    const std::size_t resolution = options.resolution ? options.resolution : default_resolution(d);
    const int korder = static_cast<int>(options.k);

    Approximant out;
    out.n = n;
    out.d = d;
    out.epsilon = epsilon;
    out.options = options;

    auto cap_check = [&](std::size_t N) {
        const double need = subnet_count(N, d, alphas.size());
        if (need > static_cast<double>(options.max_subnets)) {
            std::ostringstream count;
            count << std::setprecision(3) << need;
            throw CapacityError("approximant needs (N+1)^d * #alpha = " + count.str() +
                                    " sub-networks (N = " + std::to_string(N) + "), cap is " +
                                    std::to_string(options.max_subnets),
                                need);
        }
    };

    // Grid: start from the rate rule and refine until the smooth part meets epsilon / 2.
    auto N = static_cast<std::size_t>(std::max(1.0, std::ceil(std::pow(epsilon / (2.0 * options.C_grid), -1.0 / rate))));
    const DerivativeOracle oracle = analytic_derivatives(f);
    std::vector<TaylorPatch> patches;
    double s = 0.0;
    const Evaluator exact = field_evaluator(f);
    for (;;) {
        cap_check(N);
        patches = taylor_coefficients(oracle, N, n, d);
        s = std::max(std::pow(static_cast<double>(N), options.mu), options.s_floor);
        const Evaluator smooth = [&, N, s](std::span<const double> x, std::span<double> g) {
            return localized_taylor_value(patches, N, s, x, g);
        };
        out.taylor_error = measure_sobolev_error(exact, smooth, d, korder, resolution, Box{});
        if (out.taylor_error <= 0.5 * epsilon) break;
        N = std::max(N + 1, static_cast<std::size_t>(std::ceil(1.25 * static_cast<double>(N))));
    }
    out.N = N;
    out.s = s;
    out.C_grid = 0.5 * epsilon * std::pow(static_cast<double>(N), rate);

    const std::size_t levels = ceil_log2(d + (n - 1));
    out.width = std::size_t{1} << (levels + 1);
    out.depth = levels + 2;

    auto build = [&](double C) {
        ParallelNetwork net;
        net.subnets.reserve(patches.size() * alphas.size());
        for (const TaylorPatch& patch : patches) {
            const BumpSpec bump{N, s, patch.m_index};
            for (std::size_t j = 0; j < alphas.size(); ++j) {
                net.subnets.push_back(
                    build_localized_monomial_net(bump, alphas[j], epsilon, C, levels, out.width, options.x0));
                net.coefficients.push_back(patch.coefficients[j]);
            }
        }
        return net;
    };
    out.net_calibration = calibrate_constant(
        [&](double C) { return measure_sobolev_error(f, build(C), korder, resolution); }, epsilon, 1.0, 1e8, 8);
    out.net = build(out.net_calibration.constant);
    out.epsilon_net = epsilon / out.net_calibration.constant;
    out.measured_error = out.net_calibration.measured_error;
    out.coefficient_l1 = out.net.coefficient_l1();
    out.max_weight = out.net.max_abs_weight();
    return out;
}

// ---------------------------------------------------------------- JSON

nlohmann::json Approximant::provenance() const {
    return {{"lemma", "localized_taylor_sum"},
            {"epsilon", epsilon},
            {"N", N},
            {"s", s},
            {"n", n},
            {"calibrated_constants",
             {{"net", net_calibration.constant}, {"grid", C_grid}, {"net_target_met", net_calibration.met}}},
            {"measured_error", measured_error},
            {"taylor_error", taylor_error},
            {"sobolev_order", options.k},
            {"p", std::isfinite(options.p) ? nlohmann::json(options.p) : nlohmann::json("inf")},
            {"coefficient_l1", coefficient_l1},
            {"max_weight", max_weight}};
}

nlohmann::json approximant_to_json(const Approximant& a) {
    nlohmann::json doc = network_to_json(a.net);
    doc["provenance"] = a.provenance();
    return doc;
}

nlohmann::json subnet_to_json_with_provenance(const SubNetwork& net, const std::string& construction, double epsilon,
                                              const Calibration& calibration) {
    ParallelNetwork wrap;
    wrap.subnets = {net};
    wrap.coefficients = {1.0};
    nlohmann::json doc = network_to_json(wrap);
    doc["provenance"] = {{"lemma", construction},
                         {"epsilon", epsilon},
                         {"N", nullptr},
                         {"s", nullptr},
                         {"calibrated_constants", {{"net", calibration.constant}, {"target_met", calibration.met}}},
                         {"measured_error", calibration.measured_error}};
    return doc;
}

}  // namespace drm
