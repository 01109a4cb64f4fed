#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"

namespace drm {

using Vec = std::vector<double>;

/// tanh and its derivatives up to `max_order` (0..3), lowest order first.
Vec activation_derivatives(double x, int max_order);

/// Dense row-major matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    bool operator==(const Matrix&) const = default;
};

/// One affine map A x + b of a sub-network.
struct Layer {
    Matrix weights;  // N_{l+1} x N_l
    Vec bias;        // N_{l+1}

    bool operator==(const Layer&) const = default;
};

/// Fully connected tanh network R^d -> R. Layers 0..L-2 are followed by tanh,
/// the last layer is affine with a single output.
struct SubNetwork {
    std::vector<Layer> layers;

    /// Uniform-width network of depth L with all entries zero.
    static SubNetwork zeros(std::size_t width, std::size_t depth, std::size_t input_dim);

    std::size_t depth() const { return layers.size(); }
    std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().weights.cols; }
    /// max{N_1, ..., N_L}.
    std::size_t width() const;
    double max_abs_weight() const;

    /// Throws InputError unless N_0 = d, N_L = 1, consecutive shapes chain and all entries are finite.
    void validate() const;

    bool operator==(const SubNetwork&) const = default;
};

/// Shape of a uniform parallel network: m sub-networks of width W, depth L, input dimension d.
struct NetShape {
    std::size_t m = 0;
    std::size_t width = 0;
    std::size_t depth = 0;
    std::size_t input_dim = 0;

    bool operator==(const NetShape&) const = default;
};

/// u(x) = sum_k c_k phi_k(x).
struct ParallelNetwork {
    std::vector<SubNetwork> subnets;
    Vec coefficients;

    static ParallelNetwork zeros(const NetShape& shape);

    std::size_t size() const { return subnets.size(); }
    std::size_t input_dim() const { return subnets.empty() ? 0 : subnets.front().input_dim(); }
    std::size_t width() const;
    std::size_t depth() const;
    NetShape shape() const { return {size(), width(), depth(), input_dim()}; }

    double coefficient_l1() const;
    double max_abs_weight() const;
    /// Membership in PNN(m, M, {W, L, B_theta}).
    bool in_class(double coefficient_budget, double weight_bound) const;

    void validate() const;

    bool operator==(const ParallelNetwork&) const = default;
};

/// Flat parameter vector: inner = sub-network weights, outer = (c_1..c_m).
struct FlatParams {
    Vec inner;
    Vec outer;

    bool operator==(const FlatParams&) const = default;
};

/// (W+1)[(L-2)W + d + 1].
std::size_t padded_dimension(std::size_t width, std::size_t depth, std::size_t input_dim);
/// Number of entries of a uniform-width sub-network: W(d+1) + (L-2)W(W+1) + W + 1.
std::size_t parameter_count(std::size_t width, std::size_t depth, std::size_t input_dim);

/// Canonical per-sub-network slot of FlatParams.
///
/// Order inside a slot: A_0, ..., A_{L-1} (each row-major in a W-shaped block:
/// A_0 is W x d, hidden A_l are W x W, A_{L-1} is 1 x W), then b_0, ..., b_{L-1}
/// (W entries each, last one 1), then zeros up to `slot`. Sub-networks are
/// stored one slot after another. The slot length is
/// max(padded_dimension, parameter_count). Depth-1 layouts always use width 1.
struct SlotLayout {
    std::size_t width = 0;
    std::size_t depth = 0;
    std::size_t input_dim = 0;
    std::vector<std::size_t> weight_offset;
    std::vector<std::size_t> block_rows;
    std::vector<std::size_t> block_cols;
    std::vector<std::size_t> bias_offset;
    std::size_t used = 0;
    std::size_t slot = 0;

    static SlotLayout make(std::size_t width, std::size_t depth, std::size_t input_dim);
};

FlatParams flatten(const ParallelNetwork& net);
/// Throws InputError when the lengths do not match `shape`.
ParallelNetwork unflatten(const FlatParams& params, const NetShape& shape);

/// Aligned weight vector of a single sub-network (one slot).
Vec flatten_subnet(const SubNetwork& net, std::size_t width, std::size_t depth);

double forward(const ParallelNetwork& net, std::span<const double> x);
Vec input_gradient(const ParallelNetwork& net, std::span<const double> x);
double forward(const SubNetwork& net, std::span<const double> x);
Vec input_gradient(const SubNetwork& net, std::span<const double> x);

/// Record of one fused evaluation of u(x) and grad u(x), reusable across calls.
///
/// Holds a pointer to the network it was produced from; the network must outlive
/// any backward_from call on the tape.
class Tape {
public:
    double value() const { return u_; }
    std::span<const double> gradient() const { return grad_u_; }
    /// phi_k(x) for every sub-network.
    std::span<const double> subnet_values() const { return phi_; }
    const ParallelNetwork& network() const { return *net_; }
    const SlotLayout& layout() const { return layout_; }

private:
    friend void loss_primitives(const ParallelNetwork&, std::span<const double>, Tape&);
    friend void accumulate_backward(const Tape&, double, std::span<const double>, double, FlatParams&);

    struct LayerRecord {
        std::size_t offset = 0;  // into store_
        std::size_t units = 0;
    };

    const ParallelNetwork* net_ = nullptr;
    std::size_t depth_ = 0;
    SlotLayout layout_;
    Vec x_;
    // Per hidden layer: activations, rho', rho'' (units each), P = A J_prev and J (units*d each).
    Vec store_;
    std::vector<LayerRecord> records_;  // m * (L - 1)
    Vec phi_;
    Vec grad_phi_;
    double u_ = 0.0;
    Vec grad_u_;
    // Backward scratch.
    mutable Vec act_bar_, jac_bar_, z_bar_, p_bar_, next_act_bar_, next_jac_bar_;
};

Tape loss_primitives(const ParallelNetwork& net, std::span<const double> x);
void loss_primitives(const ParallelNetwork& net, std::span<const double> x, Tape& tape);

/// Exact parameter gradient of seed_u * u(x) + seed_grad . grad u(x).
FlatParams backward_from(const Tape& tape, double seed_u, std::span<const double> seed_grad);
/// Adds scale * backward_from(tape, seed_u, seed_grad) into `out`, which must
/// already have the layout of flatten(net).
void accumulate_backward(const Tape& tape, double seed_u, std::span<const double> seed_grad,
                         double scale, FlatParams& out);

/// Structure-of-arrays counterpart of Tape for a block of up to kBlock points.
///
/// Values agree bitwise with forward(); gradients agree with accumulate_backward
/// up to summation order.
class BatchTape {
public:
    static constexpr std::size_t kBlock = 64;

    std::size_t size() const { return n_; }
    std::span<const double> values() const { return {u_.data(), n_}; }
    /// Component c of grad u at every point of the block.
    std::span<const double> gradient(std::size_t c) const { return {grad_u_.data() + c * kBlock, n_}; }
    const ParallelNetwork& network() const { return *net_; }

private:
    friend void batch_primitives(const ParallelNetwork&, std::span<const double>, BatchTape&);
    friend void batch_accumulate(const BatchTape&, std::span<const double>, std::span<const double>, double,
                                 FlatParams&);

    const ParallelNetwork* net_ = nullptr;
    std::size_t n_ = 0;
    std::size_t d_ = 0;
    std::size_t units_ = 0;  // widest hidden layer
    SlotLayout layout_;
    Vec x_;        // d x kBlock
    Vec store_;    // per sub-network and hidden layer: a, rho', rho'', P, J
    std::vector<std::size_t> offsets_;
    Vec phi_;      // m x kBlock
    Vec grad_phi_; // m x d x kBlock
    Vec u_, grad_u_;
    mutable Vec scratch_;
};

/// Fills `tape` for the points stored row-major in `points` (at most kBlock of them).
void batch_primitives(const ParallelNetwork& net, std::span<const double> points, BatchTape& tape);
/// Adds scale * sum_p [seed_u[p] d u(x_p) + seed_grad(., p) . d grad u(x_p)] into `out`.
/// seed_grad is component-major: entry c * tape.size() + p.
void batch_accumulate(const BatchTape& tape, std::span<const double> seed_u, std::span<const double> seed_grad,
                      double scale, FlatParams& out);

nlohmann::json network_to_json(const ParallelNetwork& net);
ParallelNetwork network_from_json(const nlohmann::json& doc);

}  // namespace drm
