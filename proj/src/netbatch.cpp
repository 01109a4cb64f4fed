#include <algorithm>
#include <string>

#include "drm/errors.hpp"
#include "drm/netcore.hpp"
#include "kernels.hpp"

namespace drm {

namespace {
constexpr std::size_t B = BatchTape::kBlock;
}

// Wider vectors where the CPU has them. Contraction stays off, so every clone
// rounds exactly like the scalar paths.
#define DRM_VECTOR_CLONES __attribute__((target_clones("avx2", "default")))

DRM_VECTOR_CLONES void batch_primitives(const ParallelNetwork& net, std::span<const double> points, BatchTape& tape) {
    const std::size_t d = net.input_dim();
    const std::size_t m = net.size();
    const std::size_t depth = net.depth();
    const std::size_t hidden = depth - 1;
    if (d == 0 || points.size() % d != 0) throw InputError("point block does not match the network input dimension");
    const std::size_t n = points.size() / d;
    if (n > B) throw InputError("point block holds " + std::to_string(n) + " points, at most " + std::to_string(B));

    if (tape.net_ != &net || tape.d_ != d || tape.offsets_.size() != m * hidden ||
        tape.layout_.depth != depth || tape.layout_.width != (depth == 1 ? 1 : net.width())) {
        tape.layout_ = SlotLayout::make(net.width(), depth, d);
        tape.d_ = d;
        tape.offsets_.resize(m * hidden);
        std::size_t pos = 0, units = d;
        for (std::size_t k = 0; k < m; ++k)
            for (std::size_t l = 0; l < hidden; ++l) {
                const std::size_t u = net.subnets[k].layers[l].weights.rows;
                units = std::max(units, u);
                tape.offsets_[k * hidden + l] = pos;
                pos += u * (3 + 2 * d) * B;
            }
        tape.units_ = units;
        tape.store_.assign(pos, 0.0);
        tape.phi_.assign(m * B, 0.0);
        tape.grad_phi_.assign(m * d * B, 0.0);
        tape.u_.assign(B, 0.0);
        tape.grad_u_.assign(d * B, 0.0);
        tape.x_.assign(d * B, 0.0);
        // act_bar, jac_bar, next pair, z_bar, p_bar, two per-point seeds
        tape.scratch_.assign((3 * units + 3 * units * d + 1 + d) * B, 0.0);
    }
    tape.net_ = &net;
    tape.n_ = n;
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t c = 0; c < d; ++c) tape.x_[c * B + p] = points[p * d + c];

    Vec z(B);
    for (std::size_t k = 0; k < m; ++k) {
        const auto& sub = net.subnets[k];
        const double* a_prev = tape.x_.data();
        const double* j_prev = nullptr;
        for (std::size_t l = 0; l < hidden; ++l) {
            const auto& layer = sub.layers[l];
            const std::size_t units = layer.weights.rows;
            const std::size_t n_in = layer.weights.cols;
            double* a = tape.store_.data() + tape.offsets_[k * hidden + l];
            double* d1 = a + units * B;
            double* d2 = d1 + units * B;
            double* P = d2 + units * B;
            double* J = P + units * d * B;
            for (std::size_t i = 0; i < units; ++i) {
                const double* w = layer.weights.data.data() + i * n_in;
                std::fill_n(z.data(), n, layer.bias[i]);
                for (std::size_t j = 0; j < n_in; ++j) {
                    const double wj = w[j];
                    const double* in = a_prev + j * B;
                    for (std::size_t p = 0; p < n; ++p) z[p] += wj * in[p];
                }
                double* ai = a + i * B;
                double* s1 = d1 + i * B;
                double* s2 = d2 + i * B;
                for (std::size_t p = 0; p < n; ++p) ai[p] = kernel::activation(z[p]);
                for (std::size_t p = 0; p < n; ++p) {
                    s1[p] = 1.0 - ai[p] * ai[p];
                    s2[p] = -2.0 * ai[p] * s1[p];
                }
                for (std::size_t c = 0; c < d; ++c) {
                    double* Pc = P + (i * d + c) * B;
                    double* Jc = J + (i * d + c) * B;
                    if (j_prev == nullptr) {
                        std::fill_n(Pc, n, w[c]);
                    } else {
                        std::fill_n(Pc, n, 0.0);
                        for (std::size_t j = 0; j < n_in; ++j) {
                            const double wj = w[j];
                            const double* in = j_prev + (j * d + c) * B;
                            for (std::size_t p = 0; p < n; ++p) Pc[p] += wj * in[p];
                        }
                    }
                    for (std::size_t p = 0; p < n; ++p) Jc[p] = s1[p] * Pc[p];
                }
            }
            a_prev = a;
            j_prev = J;
        }
        const auto& out = sub.layers[hidden];
        const std::size_t n_in = out.weights.cols;
        const double* w = out.weights.data.data();
        double* phi = tape.phi_.data() + k * B;
        std::fill_n(phi, n, out.bias[0]);
        for (std::size_t j = 0; j < n_in; ++j) {
            const double* in = a_prev + j * B;
            for (std::size_t p = 0; p < n; ++p) phi[p] += w[j] * in[p];
        }
        for (std::size_t c = 0; c < d; ++c) {
            double* g = tape.grad_phi_.data() + (k * d + c) * B;
            if (j_prev == nullptr) {
                std::fill_n(g, n, w[c]);
                continue;
            }
            std::fill_n(g, n, 0.0);
            for (std::size_t j = 0; j < n_in; ++j) {
                const double* in = j_prev + (j * d + c) * B;
                for (std::size_t p = 0; p < n; ++p) g[p] += w[j] * in[p];
            }
        }
    }

    std::fill_n(tape.u_.data(), n, 0.0);
    for (std::size_t c = 0; c < d; ++c) std::fill_n(tape.grad_u_.data() + c * B, n, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
        const double ck = net.coefficients[k];
        const double* phi = tape.phi_.data() + k * B;
        for (std::size_t p = 0; p < n; ++p) tape.u_[p] += ck * phi[p];
        for (std::size_t c = 0; c < d; ++c) {
            const double* g = tape.grad_phi_.data() + (k * d + c) * B;
            double* gu = tape.grad_u_.data() + c * B;
            for (std::size_t p = 0; p < n; ++p) gu[p] += ck * g[p];
        }
    }
}

DRM_VECTOR_CLONES void batch_accumulate(const BatchTape& tape, std::span<const double> seed_u, std::span<const double> seed_grad,
                      double scale, FlatParams& out) {
    const ParallelNetwork& net = *tape.net_;
    const SlotLayout& lay = tape.layout_;
    const std::size_t d = tape.d_;
    const std::size_t n = tape.n_;
    const std::size_t m = net.size();
    const std::size_t hidden = lay.depth - 1;
    const std::size_t W = tape.units_;
    if (seed_u.size() != n || seed_grad.size() != n * d) throw InputError("seed block has the wrong size");
    if (out.inner.size() != m * lay.slot || out.outer.size() != m)
        throw InputError("gradient accumulator does not match the network layout");

    double* act_bar = tape.scratch_.data();
    double* next_act = act_bar + W * B;
    double* z_bar = next_act + W * B;
    double* jac_bar = z_bar + W * B;
    double* next_jac = jac_bar + W * d * B;
    double* p_bar = next_jac + W * d * B;
    double* sig = p_bar + W * d * B;
    double* gs = sig + B;

    for (std::size_t k = 0; k < m; ++k) {
        double dc = kernel::dot(seed_u.data(), tape.phi_.data() + k * B, n);
        for (std::size_t c = 0; c < d; ++c)
            dc += kernel::dot(seed_grad.data() + c * n, tape.grad_phi_.data() + (k * d + c) * B, n);
        out.outer[k] += scale * dc;

        const double ck = net.coefficients[k];
        if (ck == 0.0) continue;
        const double f = scale * ck;
        for (std::size_t p = 0; p < n; ++p) sig[p] = f * seed_u[p];
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t p = 0; p < n; ++p) gs[c * B + p] = f * seed_grad[c * n + p];

        const auto& sub = net.subnets[k];
        double* g = out.inner.data() + k * lay.slot;
        auto input_of = [&](std::size_t l) -> std::pair<const double*, const double*> {
            if (l == 0) return {tape.x_.data(), nullptr};
            const std::size_t u = sub.layers[l - 1].weights.rows;
            const double* base = tape.store_.data() + tape.offsets_[k * hidden + l - 1];
            return {base, base + 3 * u * B + u * d * B};
        };

        {
            const auto& layer = sub.layers[hidden];
            const std::size_t n_in = layer.weights.cols;
            auto [a_in, j_in] = input_of(hidden);
            double* gw = g + lay.weight_offset[hidden];
            for (std::size_t j = 0; j < n_in; ++j) {
                double s = kernel::dot(sig, a_in + j * B, n);
                if (j_in == nullptr) {
                    s += kernel::sum(gs + j * B, n);
                } else {
                    for (std::size_t c = 0; c < d; ++c) s += kernel::dot(gs + c * B, j_in + (j * d + c) * B, n);
                }
                gw[j] += s;
            }
            g[lay.bias_offset[hidden]] += kernel::sum(sig, n);
            if (hidden == 0) continue;
            for (std::size_t j = 0; j < n_in; ++j) {
                const double w = layer.weights.data[j];
                for (std::size_t p = 0; p < n; ++p) act_bar[j * B + p] = w * sig[p];
                for (std::size_t c = 0; c < d; ++c)
                    for (std::size_t p = 0; p < n; ++p) jac_bar[(j * d + c) * B + p] = w * gs[c * B + p];
            }
        }

        for (std::size_t l = hidden; l-- > 0;) {
            const auto& layer = sub.layers[l];
            const std::size_t units = layer.weights.rows;
            const std::size_t n_in = layer.weights.cols;
            const double* a = tape.store_.data() + tape.offsets_[k * hidden + l];
            const double* d1 = a + units * B;
            const double* d2 = d1 + units * B;
            const double* P = d2 + units * B;
            for (std::size_t i = 0; i < units; ++i) {
                const double* s1 = d1 + i * B;
                const double* s2 = d2 + i * B;
                const double* ab = act_bar + i * B;
                double* zb = z_bar + i * B;
                for (std::size_t p = 0; p < n; ++p) zb[p] = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    const double* jb = jac_bar + (i * d + c) * B;
                    const double* Pc = P + (i * d + c) * B;
                    double* pb = p_bar + (i * d + c) * B;
                    for (std::size_t p = 0; p < n; ++p) {
                        zb[p] += jb[p] * Pc[p];
                        pb[p] = s1[p] * jb[p];
                    }
                }
                for (std::size_t p = 0; p < n; ++p) zb[p] = ab[p] * s1[p] + zb[p] * s2[p];
            }
            auto [a_in, j_in] = input_of(l);
            double* gw = g + lay.weight_offset[l];
            const std::size_t stride = lay.block_cols[l];
            for (std::size_t i = 0; i < units; ++i) {
                const double* zb = z_bar + i * B;
                for (std::size_t j = 0; j < n_in; ++j) {
                    double s = kernel::dot(zb, a_in + j * B, n);
                    if (j_in == nullptr) {
                        s += kernel::sum(p_bar + (i * d + j) * B, n);
                    } else {
                        for (std::size_t c = 0; c < d; ++c)
                            s += kernel::dot(p_bar + (i * d + c) * B, j_in + (j * d + c) * B, n);
                    }
                    gw[i * stride + j] += s;
                }
                g[lay.bias_offset[l] + i] += kernel::sum(zb, n);
            }
            if (l == 0) break;
            std::fill_n(next_act, n_in * B, 0.0);
            std::fill_n(next_jac, n_in * d * B, 0.0);
            for (std::size_t i = 0; i < units; ++i) {
                const double* w = layer.weights.data.data() + i * n_in;
                const double* zb = z_bar + i * B;
                for (std::size_t j = 0; j < n_in; ++j) {
                    const double wij = w[j];
                    double* na = next_act + j * B;
                    for (std::size_t p = 0; p < n; ++p) na[p] += wij * zb[p];
                    for (std::size_t c = 0; c < d; ++c) {
                        const double* pb = p_bar + (i * d + c) * B;
                        double* nj = next_jac + (j * d + c) * B;
                        for (std::size_t p = 0; p < n; ++p) nj[p] += wij * pb[p];
                    }
                }
            }
            std::swap(act_bar, next_act);
            std::swap(jac_bar, next_jac);
        }
    }
}

}  // namespace drm
