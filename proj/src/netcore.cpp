#include "drm/netcore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "drm/errors.hpp"
#include "kernels.hpp"

namespace drm {

namespace {

inline double affine_row(const Matrix& a, std::size_t row, double bias, const double* in) {
    return kernel::affine_row(a.data.data() + row * a.cols, a.cols, bias, in);
}

void check_point(std::size_t d, std::span<const double> x) {
    if (x.size() != d)
        throw InputError("point has dimension " + std::to_string(x.size()) + ", network expects " +
                         std::to_string(d));
}

}  // namespace

Vec activation_derivatives(double x, int max_order) {
    if (max_order < 0 || max_order > 3)
        throw InputError("activation derivative order must be in 0..3");
    const double t = kernel::activation(x);
    const double s = 1.0 - t * t;
    Vec out{t, s, -2.0 * t * s, (-2.0 + 6.0 * t * t) * s};
    out.resize(static_cast<std::size_t>(max_order) + 1);
    return out;
}

// ---------------------------------------------------------------- shapes

SubNetwork SubNetwork::zeros(std::size_t width, std::size_t depth, std::size_t input_dim) {
    if (width == 0 || depth == 0 || input_dim == 0) throw InputError("network shape entries must be positive");
    SubNetwork net;
    net.layers.reserve(depth);
    std::size_t in = input_dim;
    for (std::size_t l = 0; l < depth; ++l) {
        const std::size_t out = (l + 1 == depth) ? 1 : width;
        net.layers.push_back({Matrix(out, in), Vec(out, 0.0)});
        in = out;
    }
    return net;
}

std::size_t SubNetwork::width() const {
    std::size_t w = 0;
    for (const auto& layer : layers) w = std::max(w, layer.weights.rows);
    return w;
}

double SubNetwork::max_abs_weight() const {
    double m = 0.0;
    for (const auto& layer : layers) {
        for (double v : layer.weights.data) m = std::max(m, std::abs(v));
        for (double v : layer.bias) m = std::max(m, std::abs(v));
    }
    return m;
}

void SubNetwork::validate() const {
    if (layers.empty()) throw InputError("sub-network has no layers");
    if (input_dim() == 0) throw InputError("sub-network input dimension is zero");
    std::size_t in = input_dim();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        if (layer.weights.cols != in)
            throw InputError("layer " + std::to_string(l) + " expects " + std::to_string(layer.weights.cols) +
                             " inputs, previous layer gives " + std::to_string(in));
        if (layer.weights.rows == 0 || layer.weights.data.size() != layer.weights.rows * layer.weights.cols)
            throw InputError("layer " + std::to_string(l) + " has a malformed weight matrix");
        if (layer.bias.size() != layer.weights.rows)
            throw InputError("layer " + std::to_string(l) + " bias length does not match its rows");
        for (double v : layer.weights.data)
            if (!std::isfinite(v)) throw InputError("non-finite weight in layer " + std::to_string(l));
        for (double v : layer.bias)
            if (!std::isfinite(v)) throw InputError("non-finite bias in layer " + std::to_string(l));
        in = layer.weights.rows;
    }
    if (in != 1) throw InputError("sub-network output layer must have a single unit");
}

ParallelNetwork ParallelNetwork::zeros(const NetShape& shape) {
    ParallelNetwork net;
    net.subnets.assign(shape.m, SubNetwork::zeros(shape.width, shape.depth, shape.input_dim));
    net.coefficients.assign(shape.m, 0.0);
    return net;
}

std::size_t ParallelNetwork::width() const {
    std::size_t w = 0;
    for (const auto& s : subnets) w = std::max(w, s.width());
    return w;
}

std::size_t ParallelNetwork::depth() const { return subnets.empty() ? 0 : subnets.front().depth(); }

double ParallelNetwork::coefficient_l1() const {
    double s = 0.0;
    for (double c : coefficients) s += std::abs(c);
    return s;
}

double ParallelNetwork::max_abs_weight() const {
    double m = 0.0;
    for (const auto& s : subnets) m = std::max(m, s.max_abs_weight());
    return m;
}

bool ParallelNetwork::in_class(double coefficient_budget, double weight_bound) const {
    return coefficient_l1() <= coefficient_budget && max_abs_weight() <= weight_bound;
}

void ParallelNetwork::validate() const {
    if (subnets.empty()) throw InputError("parallel network has no sub-networks");
    if (coefficients.size() != subnets.size())
        throw InputError("coefficient count " + std::to_string(coefficients.size()) + " differs from m = " +
                         std::to_string(subnets.size()));
    const std::size_t d = input_dim();
    const std::size_t depth0 = depth();
    for (std::size_t k = 0; k < subnets.size(); ++k) {
        try {
            subnets[k].validate();
        } catch (const InputError& e) {
            throw InputError("sub-network " + std::to_string(k) + ": " + e.what());
        }
        if (subnets[k].input_dim() != d || subnets[k].depth() != depth0)
            throw InputError("sub-network " + std::to_string(k) + " does not share (L, d) with the first");
    }
    for (double c : coefficients)
        if (!std::isfinite(c)) throw InputError("non-finite outer coefficient");
}

// ---------------------------------------------------------------- flat layout

std::size_t padded_dimension(std::size_t width, std::size_t depth, std::size_t input_dim) {
    const long long w = static_cast<long long>(width);
    const long long inner = (static_cast<long long>(depth) - 2) * w + static_cast<long long>(input_dim) + 1;
    const long long v = (w + 1) * inner;
    return v > 0 ? static_cast<std::size_t>(v) : 0;
}

std::size_t parameter_count(std::size_t width, std::size_t depth, std::size_t input_dim) {
    return SlotLayout::make(width, depth, input_dim).used;
}

SlotLayout SlotLayout::make(std::size_t width, std::size_t depth, std::size_t input_dim) {
    if (width == 0 || depth == 0 || input_dim == 0) throw InputError("network shape entries must be positive");
    SlotLayout s;
    // A single affine layer has no hidden width.
    if (depth == 1) width = 1;
    s.width = width;
    s.depth = depth;
    s.input_dim = input_dim;
    std::size_t pos = 0;
    for (std::size_t l = 0; l < depth; ++l) {
        const std::size_t rows = (l + 1 == depth) ? 1 : width;
        const std::size_t cols = (l == 0) ? input_dim : width;
        s.weight_offset.push_back(pos);
        s.block_rows.push_back(rows);
        s.block_cols.push_back(cols);
        pos += rows * cols;
    }
    for (std::size_t l = 0; l < depth; ++l) {
        s.bias_offset.push_back(pos);
        pos += s.block_rows[l];
    }
    s.used = pos;
    s.slot = std::max(pos, padded_dimension(width, depth, input_dim));
    return s;
}

namespace {

void write_slot(const SubNetwork& net, const SlotLayout& lay, double* dst) {
    for (std::size_t l = 0; l < lay.depth; ++l) {
        const auto& layer = net.layers[l];
        if (layer.weights.rows > lay.block_rows[l] || layer.weights.cols > lay.block_cols[l])
            throw InputError("layer " + std::to_string(l) + " is wider than the declared width");
        for (std::size_t i = 0; i < layer.weights.rows; ++i)
            for (std::size_t j = 0; j < layer.weights.cols; ++j)
                dst[lay.weight_offset[l] + i * lay.block_cols[l] + j] = layer.weights(i, j);
        for (std::size_t i = 0; i < layer.bias.size(); ++i) dst[lay.bias_offset[l] + i] = layer.bias[i];
    }
}

}  // namespace

Vec flatten_subnet(const SubNetwork& net, std::size_t width, std::size_t depth) {
    if (net.depth() != depth) throw InputError("sub-network depth does not match the layout");
    const auto lay = SlotLayout::make(width, depth, net.input_dim());
    Vec out(lay.slot, 0.0);
    write_slot(net, lay, out.data());
    return out;
}

FlatParams flatten(const ParallelNetwork& net) {
    net.validate();
    const auto lay = SlotLayout::make(net.width(), net.depth(), net.input_dim());
    FlatParams p;
    p.inner.assign(net.size() * lay.slot, 0.0);
    for (std::size_t k = 0; k < net.size(); ++k) write_slot(net.subnets[k], lay, p.inner.data() + k * lay.slot);
    p.outer = net.coefficients;
    return p;
}

ParallelNetwork unflatten(const FlatParams& params, const NetShape& shape) {
    const auto lay = SlotLayout::make(shape.width, shape.depth, shape.input_dim);
    if (params.outer.size() != shape.m)
        throw InputError("outer length " + std::to_string(params.outer.size()) + " does not match m = " +
                         std::to_string(shape.m));
    if (params.inner.size() != shape.m * lay.slot)
        throw InputError("inner length " + std::to_string(params.inner.size()) + " does not match m * slot = " +
                         std::to_string(shape.m * lay.slot));
    auto net = ParallelNetwork::zeros(shape);
    for (std::size_t k = 0; k < shape.m; ++k) {
        const double* src = params.inner.data() + k * lay.slot;
        for (std::size_t l = 0; l < lay.depth; ++l) {
            auto& layer = net.subnets[k].layers[l];
            for (std::size_t i = 0; i < layer.weights.rows; ++i)
                for (std::size_t j = 0; j < layer.weights.cols; ++j)
                    layer.weights(i, j) = src[lay.weight_offset[l] + i * lay.block_cols[l] + j];
            for (std::size_t i = 0; i < layer.bias.size(); ++i) layer.bias[i] = src[lay.bias_offset[l] + i];
        }
    }
    net.coefficients = params.outer;
    return net;
}

// ---------------------------------------------------------------- evaluation

double forward(const SubNetwork& net, std::span<const double> x) {
    check_point(net.input_dim(), x);
    Vec cur(x.begin(), x.end()), next;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& layer = net.layers[l];
        next.resize(layer.weights.rows);
        const bool hidden = l + 1 < net.layers.size();
        for (std::size_t i = 0; i < layer.weights.rows; ++i) {
            const double z = affine_row(layer.weights, i, layer.bias[i], cur.data());
            next[i] = hidden ? kernel::activation(z) : z;
        }
        cur.swap(next);
    }
    return cur[0];
}

double forward(const ParallelNetwork& net, std::span<const double> x) {
    check_point(net.input_dim(), x);
    double u = 0.0;
    for (std::size_t k = 0; k < net.size(); ++k) u += net.coefficients[k] * forward(net.subnets[k], x);
    return u;
}

Vec input_gradient(const ParallelNetwork& net, std::span<const double> x) {
    Tape tape;
    loss_primitives(net, x, tape);
    return Vec(tape.gradient().begin(), tape.gradient().end());
}

Vec input_gradient(const SubNetwork& net, std::span<const double> x) {
    ParallelNetwork single;
    single.subnets.push_back(net);
    single.coefficients.push_back(1.0);
    return input_gradient(single, x);
}

Tape loss_primitives(const ParallelNetwork& net, std::span<const double> x) {
    Tape tape;
    loss_primitives(net, x, tape);
    return tape;
}

void loss_primitives(const ParallelNetwork& net, std::span<const double> x, Tape& tape) {
    const std::size_t d = net.input_dim();
    check_point(d, x);
    const std::size_t m = net.size();
    const std::size_t depth = net.depth();
    const std::size_t hidden = depth - 1;

    if (tape.net_ != &net || tape.records_.size() != m * hidden || tape.layout_.input_dim != d ||
        tape.layout_.depth != depth || tape.layout_.width != net.width()) {
        tape.layout_ = SlotLayout::make(net.width(), depth, d);
        tape.records_.resize(m * hidden);
        std::size_t pos = 0;
        for (std::size_t k = 0; k < m; ++k)
            for (std::size_t l = 0; l < hidden; ++l) {
                const std::size_t n = net.subnets[k].layers[l].weights.rows;
                tape.records_[k * hidden + l] = {pos, n};
                pos += n * (3 + 2 * d);
            }
        tape.store_.assign(pos, 0.0);
        const std::size_t w = std::max<std::size_t>(tape.layout_.width, d);
        for (auto* v : {&tape.act_bar_, &tape.z_bar_, &tape.next_act_bar_}) v->assign(w, 0.0);
        for (auto* v : {&tape.jac_bar_, &tape.p_bar_, &tape.next_jac_bar_}) v->assign(w * d, 0.0);
    }
    tape.net_ = &net;
    tape.depth_ = depth;
    tape.x_.assign(x.begin(), x.end());
    tape.phi_.resize(m);
    tape.grad_phi_.resize(m * d);
    tape.grad_u_.assign(d, 0.0);

    for (std::size_t k = 0; k < m; ++k) {
        const auto& sub = net.subnets[k];
        const double* a_prev = tape.x_.data();
        const double* j_prev = nullptr;  // identity at the input
        for (std::size_t l = 0; l < hidden; ++l) {
            const auto rec = tape.records_[k * hidden + l];
            const std::size_t n = rec.units;
            double* a = tape.store_.data() + rec.offset;
            double* d1 = a + n;
            double* d2 = d1 + n;
            double* p = d2 + n;
            double* jac = p + n * d;
            const auto& layer = sub.layers[l];
            const std::size_t n_in = layer.weights.cols;
            for (std::size_t i = 0; i < n; ++i) {
                const double t = kernel::activation(affine_row(layer.weights, i, layer.bias[i], a_prev));
                a[i] = t;
                d1[i] = 1.0 - t * t;
                d2[i] = -2.0 * t * d1[i];
                const double* w = layer.weights.data.data() + i * n_in;
                for (std::size_t c = 0; c < d; ++c) {
                    double s;
                    if (j_prev == nullptr) {
                        s = w[c];
                    } else {
                        s = 0.0;
                        for (std::size_t j = 0; j < n_in; ++j) s += w[j] * j_prev[j * d + c];
                    }
                    p[i * d + c] = s;
                    jac[i * d + c] = d1[i] * s;
                }
            }
            a_prev = a;
            j_prev = jac;
        }
        const auto& out = sub.layers[hidden];
        tape.phi_[k] = affine_row(out.weights, 0, out.bias[0], a_prev);
        const double* w = out.weights.data.data();
        for (std::size_t c = 0; c < d; ++c) {
            double s;
            if (j_prev == nullptr) {
                s = w[c];
            } else {
                s = 0.0;
                for (std::size_t j = 0; j < out.weights.cols; ++j) s += w[j] * j_prev[j * d + c];
            }
            tape.grad_phi_[k * d + c] = s;
        }
    }

    double u = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        const double c = net.coefficients[k];
        u += c * tape.phi_[k];
        for (std::size_t i = 0; i < d; ++i) tape.grad_u_[i] += c * tape.grad_phi_[k * d + i];
    }
    tape.u_ = u;
}

// ---------------------------------------------------------------- reverse pass

FlatParams backward_from(const Tape& tape, double seed_u, std::span<const double> seed_grad) {
    FlatParams out;
    out.inner.assign(tape.network().size() * tape.layout().slot, 0.0);
    out.outer.assign(tape.network().size(), 0.0);
    accumulate_backward(tape, seed_u, seed_grad, 1.0, out);
    return out;
}

void accumulate_backward(const Tape& tape, double seed_u, std::span<const double> seed_grad, double scale,
                         FlatParams& out) {
    const ParallelNetwork& net = *tape.net_;
    const SlotLayout& lay = tape.layout_;
    const std::size_t d = lay.input_dim;
    const std::size_t m = net.size();
    const std::size_t hidden = tape.depth_ - 1;
    if (seed_grad.size() != d) throw InputError("gradient seed has the wrong dimension");
    if (out.inner.size() != m * lay.slot || out.outer.size() != m)
        throw InputError("gradient accumulator does not match the network layout");

    for (std::size_t k = 0; k < m; ++k) {
        double dc = seed_u * tape.phi_[k];
        for (std::size_t i = 0; i < d; ++i) dc += seed_grad[i] * tape.grad_phi_[k * d + i];
        out.outer[k] += scale * dc;

        const double ck = net.coefficients[k];
        if (ck == 0.0) continue;
        const double sigma = scale * ck * seed_u;
        double* g = out.inner.data() + k * lay.slot;
        const auto& sub = net.subnets[k];

        auto record = [&](std::size_t l) {
            const auto rec = tape.records_[k * hidden + l];
            return std::pair{tape.store_.data() + rec.offset, rec.units};
        };
        // Input activations and Jacobian of layer l (identity Jacobian for l == 0).
        auto layer_input = [&](std::size_t l) -> std::pair<const double*, const double*> {
            if (l == 0) return {tape.x_.data(), nullptr};
            auto [base, n] = record(l - 1);
            return {base, base + 3 * n + n * d};
        };

        double* act_bar = tape.act_bar_.data();
        double* jac_bar = tape.jac_bar_.data();
        double* next_act = tape.next_act_bar_.data();
        double* next_jac = tape.next_jac_bar_.data();
        double* z_bar = tape.z_bar_.data();
        double* p_bar = tape.p_bar_.data();

        {
            const auto& out_layer = sub.layers[hidden];
            const std::size_t n_in = out_layer.weights.cols;
            auto [a_in, j_in] = layer_input(hidden);
            double* gw = g + lay.weight_offset[hidden];
            for (std::size_t j = 0; j < n_in; ++j) {
                double s = sigma * a_in[j];
                if (j_in == nullptr) {
                    s += scale * ck * seed_grad[j];
                } else {
                    for (std::size_t c = 0; c < d; ++c) s += scale * ck * seed_grad[c] * j_in[j * d + c];
                }
                gw[j] += s;
            }
            g[lay.bias_offset[hidden]] += sigma;
            if (hidden == 0) continue;
            for (std::size_t j = 0; j < n_in; ++j) {
                const double w = out_layer.weights(0, j);
                act_bar[j] = w * sigma;
                for (std::size_t c = 0; c < d; ++c) jac_bar[j * d + c] = w * scale * ck * seed_grad[c];
            }
        }

        for (std::size_t l = hidden; l-- > 0;) {
            auto [base, n] = record(l);
            const double* d1 = base + n;
            const double* d2 = d1 + n;
            const double* p = d2 + n;
            for (std::size_t i = 0; i < n; ++i) {
                double zb = act_bar[i] * d1[i];
                double curv = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    curv += jac_bar[i * d + c] * p[i * d + c];
                    p_bar[i * d + c] = d1[i] * jac_bar[i * d + c];
                }
                z_bar[i] = zb + curv * d2[i];
            }
            const auto& layer = sub.layers[l];
            const std::size_t n_in = layer.weights.cols;
            auto [a_in, j_in] = layer_input(l);
            double* gw = g + lay.weight_offset[l];
            const std::size_t stride = lay.block_cols[l];
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n_in; ++j) {
                    double s = z_bar[i] * a_in[j];
                    if (j_in == nullptr) {
                        s += p_bar[i * d + j];
                    } else {
                        for (std::size_t c = 0; c < d; ++c) s += p_bar[i * d + c] * j_in[j * d + c];
                    }
                    gw[i * stride + j] += s;
                }
                g[lay.bias_offset[l] + i] += z_bar[i];
            }
            if (l == 0) break;
            for (std::size_t j = 0; j < n_in; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) s += layer.weights(i, j) * z_bar[i];
                next_act[j] = s;
                for (std::size_t c = 0; c < d; ++c) {
                    double t = 0.0;
                    for (std::size_t i = 0; i < n; ++i) t += layer.weights(i, j) * p_bar[i * d + c];
                    next_jac[j * d + c] = t;
                }
            }
            std::swap(act_bar, next_act);
            std::swap(jac_bar, next_jac);
        }
    }
}

// ---------------------------------------------------------------- JSON

nlohmann::json network_to_json(const ParallelNetwork& net) {
    nlohmann::json doc;
    doc["m"] = net.size();
    doc["W"] = net.width();
    doc["L"] = net.depth();
    doc["d"] = net.input_dim();
    doc["coefficients"] = net.coefficients;
    auto subs = nlohmann::json::array();
    for (const auto& s : net.subnets) {
        auto mats = nlohmann::json::array();
        auto biases = nlohmann::json::array();
        for (const auto& layer : s.layers) {
            auto rows = nlohmann::json::array();
            for (std::size_t i = 0; i < layer.weights.rows; ++i)
                rows.push_back(Vec(layer.weights.data.begin() + static_cast<std::ptrdiff_t>(i * layer.weights.cols),
                                   layer.weights.data.begin() +
                                       static_cast<std::ptrdiff_t>((i + 1) * layer.weights.cols)));
            mats.push_back(std::move(rows));
            biases.push_back(layer.bias);
        }
        subs.push_back({{"A", std::move(mats)}, {"b", std::move(biases)}});
    }
    doc["subnets"] = std::move(subs);
    return doc;
}

namespace {

const nlohmann::json& field(const nlohmann::json& obj, const char* key, const std::string& path) {
    if (!obj.is_object() || !obj.contains(key)) throw InputError("missing field '" + std::string(key) + "'", path + "/" + key);
    return obj.at(key);
}

double number(const nlohmann::json& v, const std::string& path) {
    if (!v.is_number()) throw InputError("expected a number", path);
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw InputError("non-finite number", path);
    return x;
}

std::size_t count(const nlohmann::json& v, const std::string& path) {
    if (!v.is_number_integer() || v.get<long long>() < 1) throw InputError("expected a positive integer", path);
    return v.get<std::size_t>();
}

}  // namespace

ParallelNetwork network_from_json(const nlohmann::json& doc) {
    const std::size_t m = count(field(doc, "m", ""), "/m");
    const std::size_t width = count(field(doc, "W", ""), "/W");
    const std::size_t depth = count(field(doc, "L", ""), "/L");
    const std::size_t d = count(field(doc, "d", ""), "/d");
    const auto& coeffs = field(doc, "coefficients", "");
    if (!coeffs.is_array() || coeffs.size() != m) throw InputError("coefficients must be an array of length m", "/coefficients");
    const auto& subs = field(doc, "subnets", "");
    if (!subs.is_array() || subs.size() != m) throw InputError("subnets must be an array of length m", "/subnets");

    ParallelNetwork net;
    for (std::size_t k = 0; k < m; ++k) net.coefficients.push_back(number(coeffs[k], "/coefficients/" + std::to_string(k)));
    for (std::size_t k = 0; k < m; ++k) {
        const std::string sp = "/subnets/" + std::to_string(k);
        const auto& mats = field(subs[k], "A", sp);
        const auto& biases = field(subs[k], "b", sp);
        if (!mats.is_array() || mats.size() != depth) throw InputError("A must list L matrices", sp + "/A");
        if (!biases.is_array() || biases.size() != depth) throw InputError("b must list L vectors", sp + "/b");
        SubNetwork s;
        for (std::size_t l = 0; l < depth; ++l) {
            const std::string ap = sp + "/A/" + std::to_string(l);
            const auto& rows = mats[l];
            if (!rows.is_array() || rows.empty() || !rows[0].is_array()) throw InputError("expected a matrix", ap);
            Matrix a(rows.size(), rows[0].size());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (!rows[i].is_array() || rows[i].size() != a.cols) throw InputError("ragged matrix", ap + "/" + std::to_string(i));
                for (std::size_t j = 0; j < a.cols; ++j)
                    a(i, j) = number(rows[i][j], ap + "/" + std::to_string(i) + "/" + std::to_string(j));
            }
            const std::string bp = sp + "/b/" + std::to_string(l);
            if (!biases[l].is_array()) throw InputError("expected a vector", bp);
            Vec b;
            for (std::size_t i = 0; i < biases[l].size(); ++i) b.push_back(number(biases[l][i], bp + "/" + std::to_string(i)));
            s.layers.push_back({std::move(a), std::move(b)});
        }
        try {
            s.validate();
        } catch (const InputError& e) {
            throw InputError(e.what(), sp);
        }
        if (s.input_dim() != d) throw InputError("sub-network input dimension differs from d", sp);
        if (s.width() > width) throw InputError("sub-network is wider than W", sp);
        net.subnets.push_back(std::move(s));
    }
    return net;
}

}  // namespace drm
